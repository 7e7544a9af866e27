"""Reference attacks: DDN (l2 minimum-norm) and PGD (fixed-budget).

DDN decouples the perturbation direction from its norm: every iteration
takes a gradient step and then rescales the perturbation to exactly the
current l2 radius, which shrinks when the iterate is adversarial and grows
otherwise. This is a faithful-behavior baseline sharing this package's
logit-difference loss and cosine-annealed step size, not a bit-exact
reimplementation of the original attack.

PGD is the usual maximum-confidence attack inside a fixed lp ball: descend
the loss with a norm-appropriate steepest step, project, clip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fmn import AttackResult, AttackTrace, cosine_anneal
from .model import AttackGoal, DenseNetwork, Sample, UNTARGETED, loss_and_grad
from .projections import NormKind, clip_box, lp_norm, project


@dataclass(frozen=True, eq=False)
class DdnConfig:
    """DDN hyperparameters. ``gamma`` is the fixed norm adjustment factor."""

    eps0: float = 1.0
    steps: int = 1000
    gamma: float = 0.05
    alpha0: float = 1.0
    alphaK: float = 1e-5
    goal: AttackGoal = UNTARGETED

    def __post_init__(self):
        if self.eps0 <= 0.0:
            raise ValueError(f"eps0 must be > 0, got {self.eps0}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0.0 < self.alphaK <= self.alpha0:
            raise ValueError("need 0 < alphaK <= alpha0")


@dataclass(frozen=True, eq=False)
class PgdConfig:
    """PGD hyperparameters: fixed ball radius ``eps`` and step size ``alpha``."""

    p: NormKind
    eps: float
    steps: int = 100
    alpha: float = 0.1
    goal: AttackGoal = UNTARGETED
    random_start: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.p is NormKind.L0:
            raise ValueError("PGD supports l1, l2 and linf only")
        if self.eps < 0.0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


@dataclass
class PgdResult:
    """PGD outcome: success flag, the minimum-loss iterate, per-query trace."""

    success: bool
    delta: np.ndarray
    trace: AttackTrace


def rescale_to_norm(delta: np.ndarray, eps: float) -> np.ndarray:
    """Rescale ``delta`` to have l2 norm exactly ``eps`` (zero stays zero)."""
    n = float(np.linalg.norm(delta))
    if n == 0.0:
        return delta
    return delta * (eps / n)


def ddn_attack(
    model: DenseNetwork,
    sample: Sample,
    config: DdnConfig,
    on_iterate=None,
) -> AttackResult:
    """Decoupled direction-and-norm attack; same result shape as fmn_attack.

    ``on_iterate(k, delta_rescaled)`` is called with the perturbation right
    after the rescale (before box clipping); it exists so tests can check
    the exact-norm contract of the rescale step.
    """
    if config.goal.targeted and not 1 <= config.goal.target_class <= model.num_classes:
        raise ValueError(
            f"target class {config.goal.target_class} out of range 1..{model.num_classes}"
        )
    x0 = sample.x
    trace = AttackTrace()
    delta = np.zeros_like(x0)
    eps = config.eps0
    best_delta = None
    best_norm = math.inf
    found = False

    for k in range(1, config.steps + 1):
        loss, grad = loss_and_grad(model, x0 + delta, config.goal, sample.y)
        if k == 1 and loss < 0.0:
            trace.add(1, 0.0, loss, eps)
            return AttackResult(True, np.zeros_like(x0), 0.0, trace)
        if loss < 0.0:
            found = True
            dn = lp_norm(delta, NormKind.L2)
            if dn <= best_norm:
                best_delta = delta.copy()
                best_norm = dn
            eps *= 1.0 - config.gamma
        else:
            eps *= 1.0 + config.gamma
        trace.add(k, best_norm, loss, eps)
        alpha_k = cosine_anneal(config.alpha0, config.alphaK, k, config.steps)
        g2 = float(np.linalg.norm(grad))
        if g2 == 0.0:
            trace.zero_grad_events += 1
            continue
        delta = delta - (alpha_k / g2) * grad
        delta = rescale_to_norm(delta, eps)
        if on_iterate is not None:
            on_iterate(k, delta.copy())
        delta = clip_box(x0, delta)

    if not found:
        return AttackResult(False, None, math.inf, trace)
    return AttackResult(True, best_delta, best_norm, trace)


def _pgd_direction(grad: np.ndarray, p: NormKind) -> np.ndarray:
    """Unit steepest-descent direction for the given norm.

    linf: sign of the gradient. l2: the normalized gradient. l1: a single
    step on the largest-magnitude gradient coordinate (ties to the lowest
    index).
    """
    if p is NormKind.LINF:
        return np.sign(grad)
    if p is NormKind.L2:
        return grad / float(np.linalg.norm(grad))
    out = np.zeros_like(grad)
    i = int(np.argmax(np.abs(grad)))
    out[i] = math.copysign(1.0, grad[i])
    return out


def _random_start(x0: np.ndarray, p: NormKind, eps: float, seed: int) -> np.ndarray:
    """Seeded uniform draw from the eps-ball, clipped to the box."""
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(3,)))
    )
    d = x0.shape[0]
    if p is NormKind.LINF:
        delta = rng.uniform(-eps, eps, size=d)
    elif p is NormKind.L2:
        direction = rng.normal(size=d)
        direction /= max(float(np.linalg.norm(direction)), 1e-12)
        delta = direction * eps * rng.uniform() ** (1.0 / d)
    else:
        # Dirichlet-style draw: exponential magnitudes normalized to the
        # l1 sphere, then shrunk by a radial factor.
        mags = rng.exponential(size=d)
        mags /= mags.sum()
        delta = mags * np.where(rng.uniform(size=d) < 0.5, -1.0, 1.0)
        delta *= eps * rng.uniform() ** (1.0 / d)
    return clip_box(x0, delta)


def pgd_attack(model: DenseNetwork, sample: Sample, config: PgdConfig) -> PgdResult:
    """Projected gradient descent at a fixed budget.

    Success means any iterate (including the start) was adversarial; the
    returned perturbation is the one with minimum loss. Every iterate stays
    inside the eps-ball and the feature box.
    """
    if config.goal.targeted and not 1 <= config.goal.target_class <= model.num_classes:
        raise ValueError(
            f"target class {config.goal.target_class} out of range 1..{model.num_classes}"
        )
    x0 = sample.x
    trace = AttackTrace()
    if config.random_start:
        delta = _random_start(x0, config.p, config.eps, config.seed)
    else:
        delta = np.zeros_like(x0)
    success = False
    best_adv_norm = math.inf
    best_loss = math.inf
    best_loss_delta = delta.copy()

    for k in range(1, config.steps + 1):
        loss, grad = loss_and_grad(model, x0 + delta, config.goal, sample.y)
        if loss < best_loss:
            best_loss = loss
            best_loss_delta = delta.copy()
        if loss < 0.0:
            success = True
            best_adv_norm = min(best_adv_norm, lp_norm(delta, config.p))
        trace.add(k, best_adv_norm, loss, config.eps)
        g2 = float(np.linalg.norm(grad))
        if g2 == 0.0:
            trace.zero_grad_events += 1
            continue
        delta = delta - config.alpha * _pgd_direction(grad, config.p)
        delta = clip_box(x0, project(delta, config.p, config.eps))

    return PgdResult(success, best_loss_delta, trace)
