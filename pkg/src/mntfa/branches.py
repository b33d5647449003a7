"""Branch recording for piecewise-linear ops (PReLU, absolute value).

Finite differences across a kink do not estimate the derivative. During a
gradient check the branch pattern of the base evaluation is recorded and
replayed for the perturbed evaluations, so the difference quotient is taken
on the smooth piece that contains the base point.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import torch

_state = threading.local()


def _mode():
    return getattr(_state, "mode", None)


@contextmanager
def record():
    log: list[torch.Tensor] = []
    _state.mode, _state.log = "record", log
    try:
        yield log
    finally:
        _state.mode, _state.log = None, None


@contextmanager
def replay(log: list[torch.Tensor]):
    _state.mode, _state.log, _state.pos = "replay", log, 0
    try:
        yield
        if _state.pos != len(log):
            raise RuntimeError(f"replayed {_state.pos} of {len(log)} recorded branches")
    finally:
        _state.mode, _state.log = None, None


def select(cond: torch.Tensor) -> torch.Tensor:
    """Returns ``cond``, or the recorded condition when replaying."""
    mode = _mode()
    if mode == "record":
        _state.log.append(cond.detach().clone())
    elif mode == "replay":
        recorded = _state.log[_state.pos]
        _state.pos += 1
        if recorded.shape != cond.shape:
            raise RuntimeError("branch replay shape mismatch; evaluation order changed")
        return recorded
    return cond


def prelu(x: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """PReLU over dim 1 (channels)."""
    slope = weight.reshape((1, -1) + (1,) * (x.dim() - 2))
    return torch.where(select(x >= 0), x, slope * x)


def abs_(x: torch.Tensor) -> torch.Tensor:
    return torch.where(select(x >= 0), x, -x)
