"""Desk-scale datasets with models that are correct by construction.

Three dataset kinds are provided: linearly separable gaussian blobs paired
with the max-margin linear classifier, two interleaved moons paired with a
fixed piecewise-linear relu classifier, and a uniform 2D grid labeled by
the built-in curved-boundary demo model. All generation is deterministic
per seed via the Philox counter-based generator.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .model import DenseNetwork, Layer, Sample, predict, save_dataset, save_model

DATASET_KINDS = ("gaussian_blobs", "two_moons", "grid2d")

# Seed-stream identifiers; all randomness derives from a single user seed
# through Philox(SeedSequence(entropy=seed, spawn_key=(stream,))).
STREAM_DATASET = 0
STREAM_INIT_DRAW = 1


def rng_for(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """Philox generator for an independent, reproducible substream."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(stream, *extra))
    return np.random.Generator(np.random.Philox(seq))


def linear_model(w: np.ndarray, midpoint: np.ndarray) -> DenseNetwork:
    """2-class linear model: class 2 wherever w . (x - midpoint) > 0."""
    offset = float(w @ midpoint)
    layer = Layer(
        w=np.stack([-0.5 * w, 0.5 * w]),
        b=np.array([0.5 * offset, -0.5 * offset]),
        act="identity",
    )
    return DenseNetwork(input_dim=w.shape[0], num_classes=2, layers=(layer,))


def _uniform_ball(rng: np.random.Generator, d: int, radius: float) -> np.ndarray:
    z = rng.normal(size=d)
    z /= max(float(np.linalg.norm(z)), 1e-12)
    return z * radius * rng.uniform() ** (1.0 / d)


def _gaussian_blobs(n: int, d: int, seed: int):
    """Two balls of radius 0.12 with centers 0.5 apart: margin 0.13."""
    rng = rng_for(seed, STREAM_DATASET)
    direction = rng.normal(size=d)
    direction /= max(float(np.linalg.norm(direction)), 1e-12)
    center = 0.5 + rng.uniform(-0.03, 0.03, size=d)
    c1 = center - 0.25 * direction
    c2 = center + 0.25 * direction
    radius = 0.12
    samples = []
    for i in range(n):
        label = 1 if i < (n + 1) // 2 else 2
        base = c1 if label == 1 else c2
        samples.append(Sample(x=base + _uniform_ball(rng, d, radius), y=label))
    return samples, linear_model(c2 - c1, 0.5 * (c1 + c2))


# Piecewise-linear separating curve for the canonical moons, as polyline
# knots (x, y) in canonical coordinates. Class 1 (upper moon) lies above
# the curve, class 2 below; the clearance to either moon is > 0.09.
_MOON_KNOTS = ((-1.3, -0.3), (-0.6, -0.15), (0.0, 0.75), (1.0, -0.25), (2.2, 0.83))
# Affine map from canonical moon coordinates onto [0.1, 0.9]^2.
_MOON_XMAP = (0.8 / 3.0, 0.1 + 1.0 * 0.8 / 3.0)   # u = ax * x + bx
_MOON_YMAP = (0.8 / 1.5, 0.1 + 0.5 * 0.8 / 1.5)   # v = ay * y + by


def _polyline_boundary_model(knots, xmap, ymap) -> DenseNetwork:
    """Relu network classifying by the sign of y - polyline(x).

    The polyline is encoded with one relu hinge per interior knot; x and y
    reach the output layer through relu units shifted into their positive
    range (the layer format allows a single activation per layer).
    """
    ax, bx = xmap
    ay, by = ymap
    xs = [k[0] for k in knots]
    ys = [k[1] for k in knots]
    slopes = [(ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) for i in range(len(xs) - 1)]
    # phi(x) = ys[0] + slopes[0] * (x - xs[0]) + sum_j (s_{j+1}-s_j) relu(x - xs[j+1])
    hinge_xs = xs[1:-1]
    hinge_gains = [slopes[j + 1] - slopes[j] for j in range(len(hinge_xs))]
    x_shift, y_shift = 4.0, 4.0  # keeps the pass-through relu units positive

    rows = []
    biases = []
    for hx in hinge_xs:
        rows.append([1.0 / ax, 0.0])          # canonical x from mapped u
        biases.append(-bx / ax - hx)
    rows.append([1.0 / ax, 0.0])              # x pass-through
    biases.append(-bx / ax + x_shift)
    rows.append([0.0, 1.0 / ay])              # y pass-through
    biases.append(-by / ay + y_shift)
    layer1 = Layer(w=np.array(rows), b=np.array(biases), act="relu")

    # score = y - phi(x); fold the pass-through shifts into the bias
    w_score = np.array(
        [-g for g in hinge_gains] + [-slopes[0], 1.0]
    )
    const = -(ys[0] - slopes[0] * xs[0]) + slopes[0] * x_shift - y_shift
    layer2 = Layer(
        w=np.stack([0.5 * w_score, -0.5 * w_score]),
        b=np.array([0.5 * const, -0.5 * const]),
        act="identity",
    )
    return DenseNetwork(input_dim=2, num_classes=2, layers=(layer1, layer2))


def moons_model() -> DenseNetwork:
    """Fixed relu classifier separating the canonical moon clouds."""
    return _polyline_boundary_model(_MOON_KNOTS, _MOON_XMAP, _MOON_YMAP)


def _two_moons(n: int, d: int, seed: int):
    rng = rng_for(seed, STREAM_DATASET)
    ax, bx = _MOON_XMAP
    ay, by = _MOON_YMAP
    noise = 0.012
    samples = []
    n1 = (n + 1) // 2
    for i in range(n):
        label = 1 if i < n1 else 2
        t = rng.uniform(0.0, math.pi)
        if label == 1:
            cx, cy = math.cos(t), math.sin(t)
        else:
            cx, cy = 1.0 - math.cos(t), 0.5 - math.sin(t)
        u = ax * cx + bx + rng.normal(0.0, noise)
        v = ay * cy + by + rng.normal(0.0, noise)
        x = np.full(d, 0.5)
        x[:2] = (u, v)
        if d > 2:
            x[2:] = rng.uniform(0.45, 0.55, size=d - 2)
        samples.append(Sample(x=np.clip(x, 0.0, 1.0), y=label))
    model = moons_model() if d == 2 else _embed_first_two(moons_model(), d)
    return samples, model


def _embed_first_two(model2d: DenseNetwork, d: int) -> DenseNetwork:
    """Extend a 2-input model to d inputs, ignoring the extra features."""
    first = model2d.layers[0]
    w = np.zeros((first.w.shape[0], d))
    w[:, :2] = first.w
    layers = (Layer(w=w, b=first.b.copy(), act=first.act),) + model2d.layers[1:]
    return DenseNetwork(input_dim=d, num_classes=model2d.num_classes, layers=layers)


# Built-in 2D demo model: a hexagon-like region around the center of the
# box is class 2, everything else class 1. Each face contributes an
# outward hinge relu(d_i) and an inward hinge relu(-d_i); the inward
# hinges carry a small depth gain so the gradient never vanishes inside
# the region (a perfectly flat interior would freeze gradient-following
# iterates that overshoot into it), with one gain bumped to break the
# symmetry that would otherwise cancel the interior gradient. The boundary
# is curved at the scale of the attacks yet locally linear, so minimum-
# norm optima sit on flat faces where the loss gradient is exactly
# anti-parallel to the perturbation.
_DEMO_CENTER = np.array([0.5, 0.5])
_DEMO_SIDES = 6
_DEMO_RADIUS = 0.17
_DEMO_OFFSET = 0.04  # boundary height above the first face
_DEMO_DEPTH_GAIN = 0.25
_DEMO_DEPTH_SCALES = np.array([1.3, 1.0, 1.0, 1.0, 1.0, 1.0])


def demo2d_model() -> DenseNetwork:
    angles = 2.0 * math.pi * np.arange(_DEMO_SIDES) / _DEMO_SIDES
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    w1 = np.vstack([dirs, -dirs])
    b1 = np.concatenate(
        [-(dirs @ _DEMO_CENTER) - _DEMO_RADIUS, (dirs @ _DEMO_CENTER) + _DEMO_RADIUS]
    )
    layer1 = Layer(w=w1, b=b1, act="relu")
    # logit gap = sum relu(d_i) - gain * sum scale_i relu(-d_i) + C, with C
    # placing the boundary at height `offset` above the first face
    gap = np.concatenate(
        [np.ones(_DEMO_SIDES), -_DEMO_DEPTH_GAIN * _DEMO_DEPTH_SCALES]
    )
    c_bias = (
        _DEMO_SIDES * _DEMO_RADIUS * _DEMO_DEPTH_GAIN
        - (1.0 - _DEMO_DEPTH_GAIN) * _DEMO_OFFSET
    )
    layer2 = Layer(
        w=np.stack([0.5 * gap, -0.5 * gap]),
        b=np.array([0.5 * c_bias, -0.5 * c_bias]),
        act="identity",
    )
    return DenseNetwork(input_dim=2, num_classes=2, layers=(layer1, layer2))


def demo2d_face_points(heights=(0.1, 0.15, 0.22, 0.3), lateral_fracs=(0.0, -0.45, 0.45)):
    """Class-1 points opposite the demo region's face interiors.

    Each point sits ``h`` above a face along its outward normal with a
    lateral offset given as a fraction of the face half-width, so attack
    optima land in the interior of the nearest face. Used by the
    stationarity and baseline cross-checks.
    """
    angles = 2.0 * math.pi * np.arange(_DEMO_SIDES) / _DEMO_SIDES
    half_width = _DEMO_RADIUS * math.tan(math.pi / _DEMO_SIDES)
    points = []
    for ang in angles:
        normal = np.array([math.cos(ang), math.sin(ang)])
        tangent = np.array([-normal[1], normal[0]])
        for h in heights:
            for frac in lateral_fracs:
                pt = _DEMO_CENTER + (_DEMO_RADIUS + h) * normal + frac * half_width * tangent
                if np.all(pt >= 0.02) and np.all(pt <= 0.98):
                    points.append(pt)
    return points


def _grid2d(n: int, d: int, seed: int):
    if d != 2:
        raise ValueError(f"grid2d requires d=2, got {d}")
    side = math.isqrt(n)
    if side * side != n:
        raise ValueError(f"grid2d requires n to be a perfect square, got {n}")
    model = demo2d_model()
    coords = np.linspace(0.0, 1.0, side) if side > 1 else np.array([0.5])
    samples = []
    for v in coords:
        for u in coords:
            x = np.array([u, v])
            samples.append(Sample(x=x, y=predict(model, x)))
    return samples, model


def draw_init_candidates(samples, sample_idx: int, goal, seed: int) -> tuple:
    """Seeded candidate starting points for adversarial initialization.

    Candidates are other dataset samples, either from a different class
    (untargeted) or from the target class (targeted), in a per-sample
    shuffled order; the attack tries them until one is adversarial.
    """
    own = samples[sample_idx]
    if goal.targeted:
        eligible = [i for i, s in enumerate(samples) if s.y == goal.target_class]
    else:
        eligible = [i for i, s in enumerate(samples) if s.y != own.y]
    rng = rng_for(seed, STREAM_INIT_DRAW, sample_idx)
    order = rng.permutation(len(eligible))
    return tuple(samples[eligible[j]].x for j in order)


def generate_dataset(kind: str, n: int, d: int, seed: int, out_dir=None):
    """Create a dataset and its paired model; optionally write both to disk.

    Files land at ``<out_dir>/data.csv`` and ``<out_dir>/model.json``.
    """
    if n < 1 or d < 2:
        raise ValueError(f"need n >= 1 and d >= 2, got n={n}, d={d}")
    if kind == "gaussian_blobs":
        samples, model = _gaussian_blobs(n, d, seed)
    elif kind == "two_moons":
        samples, model = _two_moons(n, d, seed)
    elif kind == "grid2d":
        samples, model = _grid2d(n, d, seed)
    else:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(samples, out / "data.csv")
        save_model(model, out / "model.json")
    return samples, model
