"""Python bindings for the avr relationship-detection library."""

import json

from ._avr import (
    DataError,
    NumericError,
    config_hash,
    iou,
    normalize_attention,
    softmax,
    union_box,
    walk_closed_form,
    walk_iterative,
)
from . import _avr

__all__ = [
    "DataError",
    "NumericError",
    "build_prior",
    "config_hash",
    "evaluate",
    "iou",
    "normalize_attention",
    "parse_config",
    "softmax",
    "synth",
    "train",
    "union_box",
    "walk_closed_form",
    "walk_iterative",
]


def _text(config):
    # accept a dict or JSON text
    return config if isinstance(config, str) else json.dumps(config)


def parse_config(config):
    """Validated config with every default filled in, as a dict."""
    return json.loads(_avr.parse_config(_text(config)))


def synth(config):
    return _avr.synth(_text(config))


def build_prior(config):
    return _avr.build_prior(_text(config))


def train(config):
    """Returns ([(epoch, loss_p, loss_a), ...], log)."""
    return _avr.train(_text(config))


def evaluate(config, predictions_in=None):
    """Returns (rows, log); each row is a dict with task, k, n, recall, matched, total."""
    return _avr.evaluate(_text(config), predictions_in)
