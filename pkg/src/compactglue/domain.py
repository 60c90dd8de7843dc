"""Masked uniform grids, defining functions, weights and cutoffs.

Cells are indexed with ``indexing="ij"`` and carry their values at cell
centers.  A :class:`Domain` is an analytic shape (ball, annulus, difference
of balls) rasterised onto a :class:`Grid`; its defining function ``x`` is the
exact Euclidean distance to the boundary, evaluated at cell centers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import (
    InvalidCollars,
    OutsideDomain,
    ShapeTooLarge,
    UnsupportedDimension,
)

MARGIN_CELLS = 2


@dataclass(frozen=True)
class Grid:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))
        if not (len(self.lower) == len(self.upper) == len(self.cells)):
            raise ValueError("lower, upper and cells must have one entry per axis")
        if self.n not in (1, 2, 3):
            raise UnsupportedDimension(f"dimension {self.n} not in {{1, 2, 3}}")
        for lo, hi, c in zip(self.lower, self.upper, self.cells):
            if c < 1 or not hi > lo:
                raise ValueError(f"degenerate axis [{lo}, {hi}] with {c} cells")

    @classmethod
    def cube(cls, n: int, half_width: float, cells: int, center: float = 0.0) -> "Grid":
        """Grid on ``[center - half_width, center + half_width]^n``."""
        if n not in (1, 2, 3):
            raise UnsupportedDimension(f"dimension {n} not in {{1, 2, 3}}")
        return cls((center - half_width,) * n, (center + half_width,) * n, (cells,) * n)

    @property
    def n(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def h(self) -> tuple[float, ...]:
        return tuple((hi - lo) / c for lo, hi, c in zip(self.lower, self.upper, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axes(self) -> list[np.ndarray]:
        return [lo + (np.arange(c) + 0.5) * hh
                for lo, c, hh in zip(self.lower, self.cells, self.h)]

    def centers(self) -> np.ndarray:
        """Cell-center coordinates, shape ``(n, *cells)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))


def _radius(points: np.ndarray, center) -> np.ndarray:
    c = np.asarray(center, dtype=float).reshape((-1,) + (1,) * (points.ndim - 1))
    return np.sqrt(np.sum((points - c) ** 2, axis=0))


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float
    kind = "BALL"

    def distance(self, points):
        return self.radius - _radius(points, self.center)

    def coordinate(self, points):
        return _radius(points, self.center)

    def bounding_box(self):
        return ([c - self.radius for c in self.center],
                [c + self.radius for c in self.center])

    def boundary_split(self):
        return {"outer sphere": "d2"}


@dataclass(frozen=True)
class Annulus:
    center: tuple[float, ...]
    r_in: float
    r_out: float
    kind = "ANNULUS"

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise ValueError("annulus needs 0 < r_in < r_out")

    def distance(self, points):
        r = _radius(points, self.center)
        return np.minimum(r - self.r_in, self.r_out - r)

    def coordinate(self, points):
        return _radius(points, self.center)

    def bounding_box(self):
        return ([c - self.r_out for c in self.center],
                [c + self.r_out for c in self.center])

    def boundary_split(self):
        return {"inner sphere": "d1", "outer sphere": "d2"}


@dataclass(frozen=True)
class Difference:
    """``outer`` minus the closure of ``inner``; ``inner`` must sit inside ``outer``."""

    outer: Ball
    inner: Ball
    kind = "DIFFERENCE"

    def __post_init__(self):
        gap = self.outer.radius - self.inner.radius - math.dist(self.outer.center, self.inner.center)
        if gap <= 0:
            raise ValueError("inner ball must lie strictly inside the outer ball")

    def distance(self, points):
        return np.minimum(self.outer.distance(points), -self.inner.distance(points))

    def coordinate(self, points):
        return _radius(points, self.inner.center)

    def bounding_box(self):
        return self.outer.bounding_box()

    def boundary_split(self):
        return {"inner sphere": "d1", "outer sphere": "d2"}


Shape = Union[Ball, Annulus, Difference]


def shape_from_dict(spec: dict) -> Shape:
    """Parse ``{"kind": "BALL", "center": [...], "radius": r}`` style shape specs."""
    kind = str(spec.get("kind", "")).upper()
    if kind == "BALL":
        return Ball(tuple(spec["center"]), float(spec["radius"]))
    if kind == "ANNULUS":
        return Annulus(tuple(spec["center"]), float(spec["r_in"]), float(spec["r_out"]))
    if kind == "DIFFERENCE":
        return Difference(shape_from_dict({"kind": "BALL", **spec["outer"]}),
                          shape_from_dict({"kind": "BALL", **spec["inner"]}))
    raise ValueError(f"unknown shape kind {spec.get('kind')!r}")


@dataclass(frozen=True, eq=False)
class Domain:
    grid: Grid
    shape: Shape
    mask: np.ndarray
    x: np.ndarray
    boundary_split: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.grid.n

    def coordinate(self) -> np.ndarray:
        """Radial coordinate used by cutoffs (distance from the shape's center)."""
        if self.shape is None:
            raise ValueError("a plain region has no analytic coordinate")
        return self.shape.coordinate(self.grid.centers())


def region(grid: Grid, mask: np.ndarray) -> Domain:
    """A masked region with no analytic shape, e.g. where an input field is defined.

    Regions carry no defining function (``x`` is zero) and cannot be used
    for weighted solves.
    """
    mask = np.asarray(mask, dtype=bool).copy()
    if mask.shape != grid.shape:
        raise ValueError("mask shape differs from grid shape")
    mask.setflags(write=False)
    x = np.zeros(grid.shape)
    x.setflags(write=False)
    return Domain(grid, None, mask, x, {})


def build_domain(shape: Shape, grid: Grid) -> Domain:
    if grid.n not in (1, 2, 3):
        raise UnsupportedDimension(f"dimension {grid.n} not in {{1, 2, 3}}")
    lo, hi = shape.bounding_box()
    if len(lo) != grid.n:
        raise UnsupportedDimension(
            f"shape has dimension {len(lo)} but grid has dimension {grid.n}")
    for axis in range(grid.n):
        margin = MARGIN_CELLS * grid.h[axis]
        if lo[axis] - margin < grid.lower[axis] or hi[axis] + margin > grid.upper[axis]:
            raise ShapeTooLarge(
                f"shape does not keep {MARGIN_CELLS} cells of margin on axis {axis}")
    dist = shape.distance(grid.centers())
    mask = dist > 0
    x = np.where(mask, dist, 0.0)
    mask.setflags(write=False)
    x.setflags(write=False)
    return Domain(grid, shape, mask, x, shape.boundary_split())


@dataclass(frozen=True)
class WeightConfig:
    a: int
    s: float = 1.0
    m: int = 1
    underflow_floor: float = 1e-300

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("decay rate s must be positive")
        if int(self.a) != self.a or self.a < 1:
            raise ValueError("a must be a natural number >= 1")
        if self.m != 1:
            raise ValueError("only first-order operators (m = 1) are supported")
        if not self.underflow_floor > 0:
            raise ValueError("underflow_floor must be positive")

    @classmethod
    def default(cls, n: int, s: float = 1.0) -> "WeightConfig":
        return cls(a=math.ceil(n / 2), s=s)


def _clamped_power_exp(x, power, s, floor):
    # x**power * exp(-s/x), computed in log space and clamped below floor
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    with np.errstate(divide="ignore"):
        logv = power * np.log(x[pos]) - s / x[pos]
    vals = np.exp(np.maximum(logv, -745.0))
    vals[logv < math.log(floor)] = 0.0
    out[pos] = vals
    return out


@dataclass(frozen=True, eq=False)
class Weights:
    """Per-cell weight arrays; all vanish on unmasked cells."""

    phi: np.ndarray
    psi: np.ndarray
    varphi: np.ndarray

    @property
    def active(self) -> np.ndarray:
        """Cells carrying unknowns: masked and not clamped."""
        return self.psi > 0


def weight_arrays(domain: Domain, config: WeightConfig) -> Weights:
    n = domain.n
    x = domain.x
    phi = np.where(domain.mask, x ** 2, 0.0)
    phi[phi < config.underflow_floor] = 0.0
    psi = _clamped_power_exp(x, 2 * (config.a - n / 2), config.s, config.underflow_floor)
    varphi = _clamped_power_exp(x, 2 * config.a, config.s, config.underflow_floor)
    for arr in (phi, psi, varphi):
        arr.setflags(write=False)
    return Weights(phi, psi, varphi)


def eval_weights(domain: Domain, config: WeightConfig, cell) -> tuple[float, float, float]:
    """Return ``(phi, psi, varphi)`` at one cell index."""
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    if not domain.mask[cell]:
        raise OutsideDomain(f"cell {cell} is not inside the domain")
    return weights_at(float(domain.x[cell]), domain.n, config)


def weights_at(x: float, n: int, config: WeightConfig) -> tuple[float, float, float]:
    """Weights for a single value of the defining function."""
    arr = np.array([x])
    phi = x * x if x * x >= config.underflow_floor else 0.0
    psi = _clamped_power_exp(arr, 2 * (config.a - n / 2), config.s, config.underflow_floor)[0]
    varphi = _clamped_power_exp(arr, 2 * config.a, config.s, config.underflow_floor)[0]
    return phi, float(psi), float(varphi)


def smoothstep5(t):
    """Quintic smoothstep, C^2 with peak slope 15/8 at t = 1/2."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


@dataclass(frozen=True)
class CollarSpec:
    """Cutoff is 1 for coordinate <= ``start`` and 0 for coordinate >= ``end``."""

    start: float
    end: float


@dataclass(frozen=True, eq=False)
class CutoffField:
    values: np.ndarray
    transition_width: float
    collar: CollarSpec


def build_cutoff(domain: Domain, collar: CollarSpec) -> CutoffField:
    """Smooth cutoff equal to 1 near the inner boundary and 0 near the outer one.

    Values are defined on every grid cell, not only on the mask: inside the
    inner hole the cutoff is 1, beyond the outer sphere it is 0.
    """
    if not collar.end > collar.start:
        raise InvalidCollars("collars overlap: transition end must exceed its start")
    shape = domain.shape
    if isinstance(shape, Annulus):
        inner, outer = shape.r_in, shape.r_out
    elif isinstance(shape, Difference):
        inner = shape.inner.radius
        outer = shape.outer.radius - math.dist(shape.outer.center, shape.inner.center)
    else:
        inner, outer = 0.0, shape.radius
    if not (inner < collar.start and collar.end < outer):
        raise InvalidCollars(
            f"transition [{collar.start}, {collar.end}] must lie strictly inside ({inner}, {outer})")
    width = collar.end - collar.start
    coord = domain.coordinate()
    values = 1.0 - smoothstep5((coord - collar.start) / width)
    values.setflags(write=False)
    return CutoffField(values, width, collar)
