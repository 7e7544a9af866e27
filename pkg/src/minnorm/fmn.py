"""Fast minimum-norm (FMN) attack.

The attack alternates two phases: a constraint update that adapts the
radius eps of an lp ball toward the decision boundary, and a projected
normalized-gradient step on the perturbation inside that ball. Both step
sizes decay with cosine annealing. When no adversarial point has been seen
yet, eps jumps to a first-order estimate of the boundary distance, namely
the current perturbation norm plus loss over the dual-norm of the gradient;
afterwards eps oscillates multiplicatively around the boundary, contracting
onto the smallest adversarial perturbation found.

Runs are fully deterministic: identical model, sample and config produce
bit-identical traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    AttackGoal,
    DenseNetwork,
    Sample,
    UNTARGETED,
    attack_loss,
    loss_and_grad,
)
from .projections import NormKind, clip_box, dual_norm_of, lp_norm, project


class InitPointError(ValueError):
    """Raised when an adversarial-initialization point is not adversarial."""


@dataclass(frozen=True, eq=False)
class AttackConfig:
    """FMN hyperparameters.

    ``alpha0``/``alphaK`` bound the perturbation step size and
    ``gamma0``/``gammaK`` the relative eps updates; both decay with cosine
    annealing over ``steps`` iterations. ``init`` selects whether the attack
    starts from the input itself or from an adversarial point refined by a
    binary search; candidate starting points are tried in order until one
    is adversarial.
    """

    p: NormKind
    steps: int = 1000
    alpha0: float = 1.0
    alphaK: float = 1e-5
    gamma0: float = 0.05
    gammaK: float = 1e-4
    init: str = "input"
    init_points: tuple = ()
    goal: AttackGoal = UNTARGETED
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not (0.0 < self.gammaK <= self.gamma0 < 1.0):
            raise ValueError(
                f"need 0 < gammaK <= gamma0 < 1, got gamma0={self.gamma0}, gammaK={self.gammaK}"
            )
        if not (0.0 < self.alphaK <= self.alpha0):
            raise ValueError(
                f"need 0 < alphaK <= alpha0, got alpha0={self.alpha0}, alphaK={self.alphaK}"
            )
        if self.init not in ("input", "adversarial"):
            raise ValueError(f"init must be 'input' or 'adversarial', got {self.init!r}")


@dataclass
class TraceRecord:
    """State after one model query: best norm so far, loss and current eps."""

    query: int
    best_norm: float
    loss: float
    eps: float


@dataclass
class AttackTrace:
    """Per-query history of one attack execution."""

    records: list = field(default_factory=list)
    zero_grad_events: int = 0
    elapsed_ms: float = 0.0

    def add(self, query: int, best_norm: float, loss: float, eps: float) -> None:
        self.records.append(TraceRecord(query, best_norm, loss, eps))

    @property
    def queries(self) -> int:
        return len(self.records)


@dataclass
class AttackState:
    """Mutable per-iteration state of the attack loop."""

    delta: np.ndarray
    eps: float = 0.0
    best_delta: np.ndarray | None = None
    best_norm: float = math.inf
    found_adversarial: bool = False
    k: int = 0


@dataclass
class AttackResult:
    """Outcome of a run. ``best_delta`` is None when no adversarial was found."""

    found: bool
    best_delta: np.ndarray | None
    best_norm: float
    trace: AttackTrace

    @property
    def queries(self) -> int:
        return self.trace.queries


def cosine_anneal(v0: float, vK: float, k: int, K: int) -> float:
    """Cosine decay from v0 (k=0) to vK (k=K).

    Written as a convex combination so both endpoints are floating-point
    exact and the midpoint is the mean to within an ulp.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if not 0 <= k <= K:
        raise ValueError(f"step index {k} outside [0, {K}]")
    w = 0.5 * (1.0 + math.cos(math.pi * (k / K)))
    return w * v0 + (1.0 - w) * vK


def epsilon_step(
    state: AttackState,
    loss: float,
    grad: np.ndarray,
    p: NormKind,
    gamma_k: float,
    dual_norm_fn=dual_norm_of,
) -> float:
    """Constraint-radius update.

    Non-adversarial point with nothing found yet: jump to the first-order
    boundary-distance estimate ||delta||_p + L / ||g||_q with q the dual of
    p. Non-adversarial but an adversarial was seen before: grow eps by a
    small fraction. Adversarial: shrink multiplicatively, never below the
    best norm found (the caller updates the best solution first).

    The estimate branch exists to make eps grow quickly toward the
    boundary. On exactly-linear decision functions it is a tight lower
    bound, so iterates can land on (or creep toward) the boundary without
    ever crossing it, freezing the literal update. Whenever the estimate
    fails to increase eps, the multiplicative growth rule is applied
    instead, which escapes those fixed points without affecting the normal
    dynamics.

    A zero gradient in the estimate branch leaves eps unchanged; the caller
    records the zero-gradient event. ``dual_norm_fn`` is an injection point
    for verification (mutation testing of the dual-norm pairing).
    """
    if not 0.0 < gamma_k < 1.0:
        raise ValueError(f"gamma_k must be in (0, 1), got {gamma_k}")
    if loss >= 0.0:
        if state.found_adversarial:
            return state.eps * (1.0 + gamma_k)
        gq = lp_norm(grad, dual_norm_fn(p))
        if gq == 0.0:
            return state.eps
        estimate = lp_norm(state.delta, p) + loss / gq
        if estimate > state.eps:
            return estimate
        return state.eps * (1.0 + gamma_k)
    return min(state.eps * (1.0 - gamma_k), state.best_norm)


def delta_step(
    delta: np.ndarray,
    grad: np.ndarray,
    alpha_k: float,
    p: NormKind,
    eps: float,
    x0: np.ndarray,
) -> np.ndarray:
    """Normalized gradient step, then lp-ball projection, then box clip.

    ``grad`` already carries the attack direction (descent on the goal
    loss). A zero gradient freezes delta for this step.
    """
    if alpha_k <= 0.0:
        raise ValueError(f"alpha_k must be > 0, got {alpha_k}")
    g2 = float(np.linalg.norm(grad))
    if g2 == 0.0:
        return delta
    stepped = delta + (alpha_k / g2) * grad
    return clip_box(x0, project(stepped, p, eps))


def _bisect_toward(x0, diff, p, steps, evaluate):
    """Bisection on eps in [0, ||diff||_p] for the smallest adversarial radius.

    ``diff`` must point from x0 to a known adversarial point; the full
    radius is assumed adversarial and eps=0 not. Each midpoint is mapped
    through the same projection-then-clip composition as the attack loop
    and evaluated once via ``evaluate(eps, delta) -> loss``. Returns the
    smallest tested adversarial radius and its perturbation.
    """
    hi = lp_norm(diff, p)
    lo = 0.0
    best_delta = diff.copy()
    best_eps = hi
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        delta_mid = clip_box(x0, project(diff, p, mid))
        loss_mid = evaluate(mid, delta_mid)
        if loss_mid < 0.0:
            hi = mid
            best_delta = delta_mid
            best_eps = mid
        else:
            lo = mid
    return best_delta, best_eps


def binary_search_init(
    model: DenseNetwork,
    x: np.ndarray,
    x_init: np.ndarray,
    goal: AttackGoal,
    label: int,
    p: NormKind,
    steps: int = 10,
    on_eval=None,
):
    """Refine an adversarial starting point toward the boundary.

    Bisects the projection radius along the segment from ``x`` to the
    adversarial ``x_init`` and returns (delta, eps) for the smallest tested
    adversarial radius. If ``x`` itself is adversarial, returns (0, 0); if
    ``x_init`` is not adversarial, raises :class:`InitPointError` before
    searching. ``on_eval(eps, loss)`` is invoked once per model evaluation
    so callers can account for queries.
    """

    x = np.asarray(x, dtype=np.float64)
    x_init = np.asarray(x_init, dtype=np.float64)
    if np.any(x_init < 0.0) or np.any(x_init > 1.0):
        raise ValueError("x_init must lie in [0, 1]^d")

    def evaluate(eps, delta):
        loss = attack_loss(model, x + delta, goal, label)
        if on_eval is not None:
            on_eval(eps, loss)
        return loss

    if evaluate(0.0, np.zeros_like(x)) < 0.0:
        return np.zeros_like(x), 0.0
    diff = clip_box(x, x_init - x)
    hi = lp_norm(diff, p)
    if evaluate(hi, diff) >= 0.0:
        raise InitPointError("initialization point is not adversarial for this goal")
    return _bisect_toward(x, diff, p, steps, evaluate)


def fmn_attack(
    model: DenseNetwork,
    sample: Sample,
    config: AttackConfig,
    dual_norm_fn=dual_norm_of,
    on_iterate=None,
) -> AttackResult:
    """Run the attack for ``config.steps`` iterations.

    Returns the smallest adversarial perturbation found (failure is a
    normal result with best_norm = inf, never an exception). The trace
    records one entry per model query, including the initial check and any
    initialization queries. If the input is already adversarial the result
    is the zero perturbation after a single query.

    ``on_iterate(k, x, record)`` is called once per loop iteration with the
    point that was just evaluated; it exists for trajectory dumps and
    invariant checks and does not affect the run.
    """
    if config.goal.targeted and not 1 <= config.goal.target_class <= model.num_classes:
        raise ValueError(
            f"target class {config.goal.target_class} out of range 1..{model.num_classes}"
        )
    if config.init == "adversarial" and not config.init_points:
        raise ValueError("init='adversarial' requires at least one candidate init point")
    x0 = sample.x
    label = sample.y
    p = config.p
    trace = AttackTrace()
    state = AttackState(delta=np.zeros_like(x0))
    q = 0

    def record(loss):
        trace.add(q, state.best_norm, loss, state.eps)

    # Initial check doubles as the first loop evaluation when starting from
    # the input: an already-adversarial sample costs exactly one query.
    loss0, grad0 = loss_and_grad(model, x0, config.goal, label)
    q = 1
    if loss0 < 0.0:
        state.best_delta = np.zeros_like(x0)
        state.best_norm = 0.0
        state.found_adversarial = True
        record(loss0)
        return AttackResult(True, state.best_delta, 0.0, trace)

    def note_adversarial(delta, loss):
        """Track the best-so-far during initialization queries."""
        if loss < 0.0:
            dn = lp_norm(delta, p)
            if dn <= state.best_norm:
                state.best_delta = delta.copy()
                state.best_norm = dn
            state.found_adversarial = True

    reuse_first = True
    if config.init == "adversarial":
        # The reused first evaluation belongs to the loop only when the
        # attack starts from the input; here query 1 stands on its own.
        record(loss0)
        reuse_first = False
        chosen_diff = None
        for cand in config.init_points:
            delta_c = clip_box(x0, np.asarray(cand, dtype=np.float64) - x0)
            q += 1
            loss_c = attack_loss(model, x0 + delta_c, config.goal, label)
            note_adversarial(delta_c, loss_c)
            record(loss_c)
            if loss_c < 0.0:
                chosen_diff = delta_c
                break
        if chosen_diff is None:
            return AttackResult(False, None, math.inf, trace)

        def evaluate(eps_tested, delta_mid):
            nonlocal q
            q += 1
            loss = attack_loss(model, x0 + delta_mid, config.goal, label)
            note_adversarial(delta_mid, loss)
            trace.add(q, state.best_norm, loss, eps_tested)
            return loss

        delta0, eps0 = _bisect_toward(x0, chosen_diff, p, 10, evaluate)
        state.delta = delta0
        state.eps = eps0

    x = x0 + state.delta
    for k in range(1, config.steps + 1):
        state.k = k
        if reuse_first and k == 1:
            loss, grad = loss0, grad0
        else:
            q += 1
            loss, grad = loss_and_grad(model, x, config.goal, label)
        gamma_k = cosine_anneal(config.gamma0, config.gammaK, k, config.steps)
        if loss < 0.0:
            dn = lp_norm(state.delta, p)
            if dn <= state.best_norm:
                state.best_delta = state.delta.copy()
                state.best_norm = dn
            state.found_adversarial = True
        if float(np.linalg.norm(grad)) == 0.0:
            # flat region: freeze both the constraint and the perturbation
            trace.zero_grad_events += 1
            record(loss)
            if on_iterate is not None:
                on_iterate(k, x, trace.records[-1])
            continue
        state.eps = epsilon_step(state, loss, grad, p, gamma_k, dual_norm_fn)
        record(loss)
        if on_iterate is not None:
            on_iterate(k, x, trace.records[-1])
        alpha_k = cosine_anneal(config.alpha0, config.alphaK, k, config.steps)
        state.delta = delta_step(state.delta, -grad, alpha_k, p, state.eps, x0)
        x = x0 + state.delta

    if not state.found_adversarial:
        return AttackResult(False, None, math.inf, trace)
    return AttackResult(True, state.best_delta, state.best_norm, trace)
