"""Next-app, engagement-level and joint predictors plus baselines."""

from .baselines import BASELINES, BN, CPD, MFU, MRU, FrequencyTables, SVMContext, TupleMFU, TupleMRU, run_baselines
from .engagement import ConstantLevel, EngagementModelBank, train_engagement_bank
from .hybrid import HybridNextAppModel, PersonalModel, train_hybrid
from .joint import (
    GAMMA_GRID,
    STRATEGIES,
    JointConfig,
    JointModel,
    JointPredictions,
    boosted_scores,
    decode_scores,
    first_learner_vectors,
    load_bundle,
    out_of_fold,
    pseudo_residuals,
    save_bundle,
    search_gamma,
    train_boosting,
    train_joint,
    train_stacking,
)
