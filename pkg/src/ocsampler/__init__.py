"""One-step clip selection for video recognition on synthetic environments.

A policy scores T candidate frames once and picks an N-frame clip in a single
decision; an optional budget head picks N per video.
"""

from .budget import BudgetConfig, BudgetHead, adaptive_infer, budget_forward, build_budget_label, correctness_ratios, train_budget
from .classifier import CoverageOracle, LinearClassifier, classify, is_correct, train_classifier
from .core import CostModel, DatasetSpec, SyntheticVideo, clip_cost, generate_dataset, rng_stream
from .evalbench import Models, Strategy, evaluate, select, sweep_budget, transfer_selections
from .policy import ClipSelection, PolicyDistribution, PolicyParams, policy_forward, sample_clip, top_n
from .reinforce import Stage2Config, compute_reward, gradient_variance, stage2_train
from .skim import FeatureExtractorSpec, SkimFeatures, extract
from .subsetprob import chain_prob, exact_subset_prob, log_prob_grad, mc_subset_prob

__version__ = "0.1.0"
