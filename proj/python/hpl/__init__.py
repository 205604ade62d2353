"""Preference-based reward learning with hindsight future embeddings.

Thin wrappers over the native core. Results come back as plain dicts.
"""

import json as _json

from . import _core
from ._core import HplError, RewardModel, bt_prob, derive_seed

__all__ = [
    "HplError",
    "RewardModel",
    "bt_prob",
    "config_text",
    "derive_seed",
    "gambling_mdp",
    "random_mdp",
    "run_gambling",
    "run_pipeline",
]


def _overrides(overrides):
    if overrides is None:
        return []
    if isinstance(overrides, dict):
        return [f"{k}={v}" for k, v in overrides.items()]
    return list(overrides)


def config_text(preset="random", overrides=None, seed=None):
    """Resolved configuration as `section.key = value` lines."""
    return _core.config_text(preset, _overrides(overrides), seed)


def run_pipeline(preset="random", overrides=None, seed=None, out=None):
    """Run every stage. Returns eval stats, stage seeds, the greedy policy
    and, when `out` is given, the artifact manifest."""
    return _json.loads(_core.run_pipeline(preset, _overrides(overrides), seed, None if out is None else str(out)))


def run_gambling(seeds, overrides=None, seed=None):
    """Per-seed mr/hpl rewards at the gambling start state plus a summary."""
    return _json.loads(_core.run_gambling(seeds, _overrides(overrides), seed))


def gambling_mdp():
    return _json.loads(_core.gambling_mdp())


def random_mdp(seed, states=10, actions=3, branching=3, sparsity=0.5, horizon=20):
    return _json.loads(_core.random_mdp(seed, states, actions, branching, sparsity, horizon))
