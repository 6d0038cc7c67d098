"""Robust policy synthesis for uncertain parametric MDPs with scenario-based risk certificates."""

from .bench import builtin_gridworld, builtin_toy_model, per_sample_baseline, run_experiment
from .game import fictitious_play, mne_policy, stackelberg_policy
from .guarantees import certificate, classical_convex_bound, epsilon_bounds, mu_bound
from .imdp import build_interval_mdp, robust_value_iteration
from .mdp import BehaviouralPolicy, DeterministicPolicy, Mdp, MixedPolicy, solution
from .model import UpMdpTemplate, load_model, sample_scenarios
from .subgradient import SubgradientConfig, subgradient_ascent

__version__ = "0.1.0"
