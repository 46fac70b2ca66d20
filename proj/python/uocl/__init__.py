"""Unsupervised online continual learning on synthetic speech-like streams.

The heavy lifting lives in the native ``_core`` module; this wrapper only
turns JSON results into dicts.
"""

import json

from ._core import (
    ConfigError,
    DivergenceError,
    FormatError,
    MismatchError,
    aos_eta,
    ctc_loss,
    edit_distance,
    effective_config,
    greedy_decode,
    pretrain,
    wer,
    wilcoxon,
)
from . import _core

__all__ = [
    "ConfigError",
    "DivergenceError",
    "FormatError",
    "MismatchError",
    "aos_eta",
    "ctc_loss",
    "edit_distance",
    "effective_config",
    "greedy_decode",
    "pretrain",
    "run_stream",
    "wer",
    "wilcoxon",
]


def run_stream(config_text, overrides=(), checkpoint=None):
    """Run every configured seed from ``checkpoint`` (pretrains if None)."""
    overrides = list(overrides)
    if checkpoint is None:
        checkpoint = pretrain(config_text, overrides)["checkpoint"]
    return json.loads(_core.run_stream(config_text, overrides, checkpoint))
