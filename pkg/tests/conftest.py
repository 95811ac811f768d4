import os

import pytest
from hypothesis import HealthCheck, settings

from appengage.core import Taxonomy, UsageEvent, UserProfile

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def small_taxonomy():
    return Taxonomy(["social", "weather", "news", "games", "tools", "music"])


@pytest.fixture
def profile():
    return UserProfile("u1", "18-24", "female", "phone", "android")


def make_events(taxonomy, spec, user="u1"):
    """Events from (timestamp, app, category, duration) tuples."""
    return [UsageEvent(user, t, app, taxonomy.by_name(cat), float(d)) for t, app, cat, d in spec]


def tiny_config(seed=7, **overrides):
    from appengage.synthgen import GeneratorConfig

    base = dict(categories=["social", "weather", "news", "games", "tools", "music"], n_users=6, days=3,
                seed=seed, sessions_per_day=4.0, mean_session_length=3.0)
    base.update(overrides)
    return GeneratorConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus():
    from appengage.synthgen import generate

    return generate(tiny_config())


def as_corpus(g):
    """Corpus view of a generated corpus with background events removed."""
    from appengage.ingest import Corpus

    flags = g.user_triggered or [True] * len(g.events)
    events = {}
    for e, keep in zip(g.events, flags):
        if keep:
            events.setdefault(e.user_id, []).append(e)
    return Corpus(g.taxonomy, {u: g.profiles[u] for u in events}, {u: tuple(v) for u, v in events.items()})


def mid_joint_config():
    """Smaller forests than the defaults so the mid-size corpus trains in seconds."""
    from appengage.learners import Learner
    from appengage.predictors import JointConfig

    return JointConfig(generic_learner=Learner("random_forest", {"n_trees": 30}),
                       residual_params={"n_trees": 20, "max_depth": 12, "min_samples_leaf": 10, "max_features": 0.33})


@pytest.fixture(scope="session")
def mid_prep():
    """About 4k instances from the benchmark world with 30 users over 8 days."""
    from appengage.pipeline import prepare
    from appengage.synthgen import benchmark_config, generate

    cfg = benchmark_config()
    cfg.n_users, cfg.days = 30, 8
    return prepare(as_corpus(generate(cfg)))


@pytest.fixture(scope="session")
def mid_result(mid_prep):
    from appengage.pipeline import evaluate

    return evaluate(mid_prep, mid_joint_config())
