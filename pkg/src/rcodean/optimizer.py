"""Adam optimizer and plateau-triggered learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus the step counter.

    Buffers are keyed by parameter name and created lazily on the first
    step so one state object can serve any named parameter collection.
    """
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: list[tuple[str, np.ndarray]],
              grads: dict[str, np.ndarray]) -> None:
    """One bias-corrected Adam update, applied to the arrays in place.

    This is the package's only sanctioned in-place mutation of parameter
    arrays. All gradients are validated before anything is touched, so a
    bad gradient aborts the step without a partial update.
    """
    for name, p in params:
        g = grads.get(name)
        if g is None:
            raise TrainingError(f"missing gradient for parameter {name!r}")
        if g.shape != p.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter {name!r} "
                f"shape {p.shape}"
            )
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class PlateauScheduler:
    """Divides the learning rate when the training loss stops improving.

    An epoch counts as an improvement when its loss beats the best seen
    by more than ``threshold``. After ``patience`` consecutive stale
    epochs the rate is divided by ``factor``, never below ``min_lr``.
    """
    lr: float = 1e-3
    patience: int = 5
    factor: float = 10.0
    min_lr: float = 1e-6
    threshold: float = 1e-6
    best: float = float("inf")
    stale: int = 0

    def __post_init__(self):
        if self.patience < 1 or self.factor <= 1.0 or self.lr <= 0.0:
            raise ValueError("scheduler requires patience >= 1, factor > 1, lr > 0")


def scheduler_update(s: PlateauScheduler, epoch_loss: float) -> float:
    """Record one epoch's training loss; return the rate to use next."""
    if not np.isfinite(epoch_loss):
        raise TrainingError(f"non-finite epoch loss {epoch_loss}")
    if epoch_loss < s.best - s.threshold:
        s.best = epoch_loss
        s.stale = 0
    else:
        s.stale += 1
        if s.stale >= s.patience:
            s.lr = max(s.lr / s.factor, s.min_lr)
            s.stale = 0
    return s.lr
