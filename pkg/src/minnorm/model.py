"""Minimal differentiable feed-forward classifier.

A :class:`DenseNetwork` is an immutable stack of dense layers with relu or
identity activations. It supports a forward pass to logits, prediction by
argmax, and the logit-difference attack loss together with its analytic
gradient w.r.t. the input. Models round-trip through a JSON file format and
datasets through CSV; both formats are documented in the README.

Class labels are 1-based throughout (classes 1..c), matching the on-disk
dataset format.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_ACTIVATIONS = ("relu", "identity")


class ModelFormatError(ValueError):
    """Raised when a model file is malformed or violates structural invariants."""


class DimensionError(ValueError):
    """Raised when an input does not match the model's expected dimension."""

    def __init__(self, expected: int, actual: int, what: str = "input"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} dimension mismatch: expected {expected}, got {actual}")


@dataclass(frozen=True, eq=False)
class Layer:
    """One dense layer: out = act(w @ x + b), with w of shape (out, in)."""

    w: np.ndarray
    b: np.ndarray
    act: str = "identity"


@dataclass(frozen=True, eq=False)
class DenseNetwork:
    """Immutable dense classifier mapping R^d to c logits."""

    input_dim: int
    num_classes: int
    layers: tuple

    def __post_init__(self):
        if self.num_classes < 2:
            raise ModelFormatError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.layers:
            raise ModelFormatError("model has no layers")
        prev = self.input_dim
        frozen = []
        for i, layer in enumerate(self.layers, start=1):
            w = np.asarray(layer.w, dtype=np.float64)
            b = np.asarray(layer.b, dtype=np.float64)
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ModelFormatError(
                    f"layer {i}: weight shape {w.shape} does not match bias shape {b.shape}"
                )
            if w.shape[1] != prev:
                raise ModelFormatError(
                    f"layer {i}: expected input dim {prev}, got {w.shape[1]}"
                )
            if layer.act not in _ACTIVATIONS:
                raise ModelFormatError(f"layer {i}: unknown activation {layer.act!r}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ModelFormatError(f"layer {i}: non-finite weight or bias")
            w.setflags(write=False)
            b.setflags(write=False)
            frozen.append(Layer(w=w, b=b, act=layer.act))
            prev = w.shape[0]
        if prev != self.num_classes:
            raise ModelFormatError(
                f"final layer outputs {prev} values, expected num_classes={self.num_classes}"
            )
        object.__setattr__(self, "layers", tuple(frozen))


@dataclass(frozen=True, eq=False)
class Sample:
    """A feature vector in [0, 1]^d with its 1-based class label."""

    x: np.ndarray
    y: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"sample features must be a vector, got shape {x.shape}")
        if not np.all(np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
            raise ValueError("sample features must lie in [0, 1]")
        if self.y < 1:
            raise ValueError(f"class label must be >= 1, got {self.y}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class AttackGoal:
    """Untargeted (evade the true class) or targeted (reach target_class)."""

    targeted: bool = False
    target_class: int | None = None

    def __post_init__(self):
        if self.targeted and (self.target_class is None or self.target_class < 1):
            raise ValueError("targeted goal requires a target_class >= 1")
        if not self.targeted and self.target_class is not None:
            raise ValueError("untargeted goal must not carry a target_class")

    @classmethod
    def untargeted(cls) -> "AttackGoal":
        return cls(targeted=False)

    @classmethod
    def targeted(cls, target_class: int) -> "AttackGoal":
        return cls(targeted=True, target_class=target_class)


UNTARGETED = AttackGoal.untargeted()


def _check_input(model: DenseNetwork, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise DimensionError(model.input_dim, x.shape[-1] if x.ndim else 0)
    if not np.all(np.isfinite(x)):
        raise ValueError("model input contains non-finite values")
    return x


def _forward_cached(model: DenseNetwork, x: np.ndarray):
    """Forward pass returning logits and per-layer pre-activations."""
    a = x
    pre = []
    for layer in model.layers:
        z = layer.w @ a + layer.b
        pre.append(z)
        a = np.maximum(z, 0.0) if layer.act == "relu" else z
    return a, pre


def forward(model: DenseNetwork, x: np.ndarray) -> np.ndarray:
    """Logits of the model at ``x``. Deterministic, no mutation."""
    x = _check_input(model, x)
    logits, _ = _forward_cached(model, x)
    return logits


def predict(model: DenseNetwork, x: np.ndarray) -> int:
    """1-based class of the highest logit; ties go to the lowest class index."""
    return int(np.argmax(forward(model, x))) + 1


def _loss_class(goal: AttackGoal, label: int, num_classes: int) -> int:
    """0-based index of the class the loss is anchored to."""
    cls = goal.target_class if goal.targeted else label
    if not 1 <= cls <= num_classes:
        raise ValueError(f"class {cls} out of range 1..{num_classes}")
    return cls - 1


def _logit_margin(logits: np.ndarray, idx: int):
    """logits[idx] - max over other logits, plus the maximizing rival index."""
    rival = logits.copy()
    rival[idx] = -np.inf
    j = int(np.argmax(rival))  # lowest index wins ties
    return float(logits[idx] - logits[j]), j


def attack_loss(model: DenseNetwork, x: np.ndarray, goal: AttackGoal, label: int) -> float:
    """Goal-adjusted logit-difference loss; negative iff the goal is met.

    Untargeted: logit of ``label`` minus the best other logit. Targeted:
    the negation, anchored to the target class, so success is still L < 0.
    """
    x = _check_input(model, x)
    logits, _ = _forward_cached(model, x)
    idx = _loss_class(goal, label, model.num_classes)
    margin, _ = _logit_margin(logits, idx)
    return -margin if goal.targeted else margin


def loss_and_grad(model: DenseNetwork, x: np.ndarray, goal: AttackGoal, label: int):
    """Attack loss and its analytic input gradient (one forward + backward).

    The inner max is differentiated through the single maximizing rival
    class at the current point (lowest index on ties); relu uses the zero
    subgradient at its kink. One call counts as one model query.
    """
    x = _check_input(model, x)
    logits, pre = _forward_cached(model, x)
    idx = _loss_class(goal, label, model.num_classes)
    margin, j = _logit_margin(logits, idx)
    cot = np.zeros(model.num_classes)
    cot[idx] = 1.0
    cot[j] = -1.0
    for layer, z in zip(reversed(model.layers), reversed(pre)):
        dz = cot * (z > 0.0) if layer.act == "relu" else cot
        cot = layer.w.T @ dz
    if goal.targeted:
        return -margin, -cot
    return margin, cot


# ---------------------------------------------------------------------------
# On-disk formats


def save_model(model: DenseNetwork, path) -> None:
    """Write a model as JSON; weights serialize as shortest round-trip decimals."""
    payload = {
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "layers": [
            {"w": layer.w.tolist(), "b": layer.b.tolist(), "act": layer.act}
            for layer in model.layers
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_model(path) -> DenseNetwork:
    """Load a model JSON file, validating structure and finiteness."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file {path}: invalid JSON ({exc})") from None
    for key in ("input_dim", "num_classes", "layers"):
        if key not in payload:
            raise ModelFormatError(f"model file {path}: missing field {key!r}")
    layers = []
    for i, spec in enumerate(payload["layers"], start=1):
        try:
            w = np.asarray(spec["w"], dtype=np.float64)
            b = np.asarray(spec["b"], dtype=np.float64)
            act = spec.get("act", "identity")
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"layer {i}: malformed entry ({exc})") from None
        layers.append(Layer(w=w, b=b, act=act))
    return DenseNetwork(
        input_dim=int(payload["input_dim"]),
        num_classes=int(payload["num_classes"]),
        layers=tuple(layers),
    )


def save_dataset(samples, path) -> None:
    """Write samples as CSV with header f0,...,f{d-1},label."""
    samples = list(samples)
    if not samples:
        raise ValueError("cannot save an empty dataset")
    d = samples[0].x.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(d)] + ["label"])
        for s in samples:
            writer.writerow([repr(float(v)) for v in s.x] + [s.y])


def load_dataset(path) -> list:
    """Load a CSV dataset; validates the header, feature range and labels."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"dataset file {path}: empty") from None
        d = len(header) - 1
        if d < 1 or header != [f"f{i}" for i in range(d)] + ["label"]:
            raise ValueError(f"dataset file {path}: bad header {header!r}")
        samples = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ValueError(f"dataset file {path}: line {lineno}: expected {d + 1} columns")
            try:
                x = np.array([float(v) for v in row[:d]])
                y = int(row[d])
            except ValueError as exc:
                raise ValueError(f"dataset file {path}: line {lineno}: {exc}") from None
            samples.append(Sample(x=x, y=y))
    return samples
