"""Branch and node constitutive relations.

Resistive laws map a potential difference ``W`` across a branch to the flow
``F`` through it. Capacitive laws map a node potential ``w`` to the inventory
``Z`` stored at the node. All laws pass through the origin.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RESISTIVE_FORMS = ("linear", "relu", "tanh", "tabulated")
CAPACITIVE_FORMS = ("linear", "tabulated")


class LawError(ValueError):
    """Invalid law parameters or evaluation outside a law's domain."""


class ExtrapolationError(LawError):
    """Tabulated law evaluated outside its table."""


def _as_points(points) -> tuple[tuple[float, float], ...]:
    pts = tuple((float(x), float(y)) for x, y in points)
    if len(pts) < 2:
        raise LawError("tabulated law needs at least two points")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
        raise LawError("tabulated law must be strictly increasing")
    return pts


def _table_lookup(xs: np.ndarray, ys: np.ndarray, x: float, what: str) -> float:
    if not np.isfinite(x):
        raise LawError(f"non-finite {what}: {x}")
    if x < xs[0] or x > xs[-1]:
        raise ExtrapolationError(f"{what}={x} outside table range [{xs[0]}, {xs[-1]}]")
    return float(np.interp(x, xs, ys))


def _table_segment(xs: np.ndarray, x: float) -> int:
    # right-continuous segment index, clipped to a valid segment
    i = int(np.searchsorted(xs, x, side="right")) - 1
    return min(max(i, 0), len(xs) - 2)


@dataclass(frozen=True)
class ResistiveLaw:
    """Flow as a function of potential difference.

    Forms:
      * ``linear``: ``F = K W``
      * ``relu``: ``F = K max(W, 0)``
      * ``tanh``: ``F = K tanh(scale W)``
      * ``tabulated``: piecewise linear through ``points`` (W, F), no extrapolation
    """

    form: str
    K: float = 1.0
    scale: float = 1.0
    points: tuple[tuple[float, float], ...] = field(default=())
    # False skips sign checks so non-passive laws can be loaded and diagnosed
    validate: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if self.form == "inductive":
            raise LawError("inductive laws are not supported")
        if self.form not in RESISTIVE_FORMS:
            raise LawError(f"unknown resistive form {self.form!r}")
        if self.form == "tabulated":
            pts = _as_points(self.points)
            if not any(x == 0.0 and y == 0.0 for x, y in pts):
                raise LawError("tabulated resistive law must pass through (0, 0)")
            object.__setattr__(self, "points", pts)
        else:
            if not np.isfinite(self.K):
                raise LawError("conductance must be finite")
            if self.validate and self.form == "linear" and self.K <= 0:
                raise LawError(f"linear conductance must be positive, got {self.K}")
            if self.form == "tanh" and self.scale <= 0:
                raise LawError("tanh scale must be positive")

    @classmethod
    def linear(cls, K: float) -> "ResistiveLaw":
        return cls("linear", K=float(K))

    @property
    def is_linear(self) -> bool:
        return self.form == "linear"

    @property
    def _table(self):
        xs = np.array([p[0] for p in self.points])
        ys = np.array([p[1] for p in self.points])
        return xs, ys

    def with_conductance(self, K: float) -> "ResistiveLaw":
        return ResistiveLaw(self.form, K=float(K), scale=self.scale, points=self.points,
                            validate=self.validate)


@dataclass(frozen=True)
class CapacitiveLaw:
    """Inventory as a function of potential: ``Z = C w`` or tabulated (w, Z)."""

    form: str
    C: float = 1.0
    points: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        if self.form not in CAPACITIVE_FORMS:
            raise LawError(f"unknown capacitive form {self.form!r}")
        if self.form == "tabulated":
            object.__setattr__(self, "points", _as_points(self.points))
        elif not (np.isfinite(self.C) and self.C > 0):
            raise LawError(f"capacitance must be positive, got {self.C}")

    @classmethod
    def linear(cls, C: float) -> "CapacitiveLaw":
        return cls("linear", C=float(C))

    @property
    def is_linear(self) -> bool:
        return self.form == "linear"

    @property
    def _table(self):
        xs = np.array([p[0] for p in self.points])
        ys = np.array([p[1] for p in self.points])
        return xs, ys


def eval_resistive(law: ResistiveLaw, W: float) -> float:
    """Flow through a branch with potential difference ``W``."""
    if law.form == "linear":
        return law.K * W
    if law.form == "relu":
        return law.K * max(W, 0.0)
    if law.form == "tanh":
        return law.K * float(np.tanh(law.scale * W))
    xs, ys = law._table
    return _table_lookup(xs, ys, W, "potential difference")


def slope_resistive(law: ResistiveLaw, W: float) -> float:
    """dF/dW; right derivative at kinks (relu at 0, table breakpoints)."""
    if law.form == "linear":
        return law.K
    if law.form == "relu":
        return law.K if W >= 0.0 else 0.0
    if law.form == "tanh":
        return law.K * law.scale / float(np.cosh(law.scale * W)) ** 2
    xs, ys = law._table
    if W < xs[0] or W > xs[-1]:
        raise ExtrapolationError(f"potential difference {W} outside table range")
    i = _table_segment(xs, W)
    return float((ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))


def invert_resistive(law: ResistiveLaw, F: float) -> float:
    """Potential difference that carries flow ``F``.

    Raises LawError where the law is not invertible at ``F``.
    """
    if law.form == "linear":
        return F / law.K
    if law.form == "relu":
        if law.K <= 0 or F < 0:
            raise LawError(f"relu law cannot carry flow {F}")
        return F / law.K
    if law.form == "tanh":
        if law.K <= 0 or abs(F) >= law.K:
            raise LawError(f"tanh law saturates before flow {F}")
        return float(np.arctanh(F / law.K)) / law.scale
    xs, ys = law._table
    return _table_lookup(ys, xs, F, "flow")


def cocontent_branch(law: ResistiveLaw, W: float) -> float:
    """Integral of F dW from 0 to ``W`` for one branch."""
    if law.form == "linear":
        return 0.5 * law.K * W * W
    if law.form == "relu":
        return 0.5 * law.K * max(W, 0.0) ** 2
    if law.form == "tanh":
        # log(cosh(x)) computed stably for large |x|
        x = abs(law.scale * W)
        return law.K / law.scale * (x + np.log1p(np.exp(-2.0 * x)) - np.log(2.0))
    xs, ys = law._table
    return _table_integral(xs, ys, W)


def content_branch(law: ResistiveLaw, F: float) -> float:
    """Integral of W dF from 0 to ``F`` for one branch."""
    if law.form == "linear":
        return F * F / (2.0 * law.K)
    if law.form == "tabulated":
        xs, ys = law._table
        return _table_integral(ys, xs, F)
    # Legendre pairing: content(F) + cocontent(W) = W F at W = inverse(F)
    W = invert_resistive(law, F)
    return W * F - cocontent_branch(law, W)


def _table_integral(xs: np.ndarray, ys: np.ndarray, x: float) -> float:
    # exact integral of the interpolant from 0 to x
    if x < xs[0] or x > xs[-1]:
        raise ExtrapolationError(f"{x} outside table range [{xs[0]}, {xs[-1]}]")
    lo, hi = (0.0, x) if x >= 0 else (x, 0.0)
    knots = np.concatenate(([lo], xs[(xs > lo) & (xs < hi)], [hi]))
    vals = np.interp(knots, xs, ys)
    total = float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(knots)))
    return total if x >= 0 else -total


def eval_capacitive(law: CapacitiveLaw, w: float) -> float:
    """Inventory held at potential ``w``."""
    if law.form == "linear":
        return law.C * w
    xs, ys = law._table
    return _table_lookup(xs, ys, w, "potential")


def invert_capacitive(law: CapacitiveLaw, Z: float) -> float:
    """Potential at which the node holds inventory ``Z``."""
    if law.form == "linear":
        return Z / law.C
    xs, ys = law._table
    return _table_lookup(ys, xs, Z, "inventory")


def slope_capacitive(law: CapacitiveLaw, w: float) -> float:
    """dZ/dw, right derivative at table breakpoints."""
    if law.form == "linear":
        return law.C
    xs, ys = law._table
    i = _table_segment(xs, w)
    return float((ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))


def is_passive(law: ResistiveLaw, grid=None) -> bool:
    """True if ``W * F(W) >= 0`` on a grid of potential differences."""
    if grid is None:
        if law.form == "tabulated":
            xs, _ = law._table
            grid = np.linspace(xs[0], xs[-1], 201)
        else:
            grid = np.linspace(-10.0, 10.0, 201)
    return all(W * eval_resistive(law, W) >= 0.0 for W in grid)
