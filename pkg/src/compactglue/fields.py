"""Tensor fields on masked grids and the discrete operator pairs.

Each operator kind comes as a pair ``(P, P*)``.  ``P*`` is discretised with
second-order centered differences on zero-extended fields; ``P`` is its
exact transpose under the unweighted L2 pairing, so summation by parts holds
to rounding error.  Symmetric 2-tensors are paired with the full Frobenius
contraction (off-diagonal entries count twice).
"""
from __future__ import annotations

import enum
import math
import functools
from dataclasses import dataclass

import numpy as np

from .domain import Domain, Grid, WeightConfig, Weights, smoothstep5, weight_arrays
from .errors import (
    BundleMismatch,
    DomainMismatch,
    IndicatorTooSharp,
    UnsupportedOperator,
    UnsupportedOrder,
)


class BundleKind(enum.Enum):
    SCALAR = "SCALAR"
    ONE_FORM = "ONE_FORM"
    SYM2 = "SYM2"
    SYM2_TRACEFREE = "SYM2_TRACEFREE"


class OperatorKind(enum.Enum):
    GRAD = "GRAD"
    KILLING = "KILLING"
    CONF_KILLING = "CONF_KILLING"


@dataclass(frozen=True)
class BundleType:
    kind: BundleKind
    n: int

    @property
    def component_count(self) -> int:
        n = self.n
        return {
            BundleKind.SCALAR: 1,
            BundleKind.ONE_FORM: n,
            BundleKind.SYM2: n * (n + 1) // 2,
            BundleKind.SYM2_TRACEFREE: n * (n + 1) // 2 - 1,
        }[self.kind]

    @property
    def full_shape(self) -> tuple[int, ...]:
        if self.kind is BundleKind.SCALAR:
            return ()
        if self.kind is BundleKind.ONE_FORM:
            return (self.n,)
        return (self.n, self.n)

    def index_pairs(self) -> list[tuple[int, int]]:
        """Stored (i, j) entries, i <= j, lexicographic; trace-free drops (n-1, n-1)."""
        pairs = [(i, j) for i in range(self.n) for j in range(i, self.n)]
        if self.kind is BundleKind.SYM2_TRACEFREE:
            pairs.remove((self.n - 1, self.n - 1))
        return pairs


@functools.lru_cache(maxsize=None)
def _pair_lookup(bundle: BundleType):
    return bundle.index_pairs()


def expand(components: np.ndarray, bundle: BundleType) -> np.ndarray:
    """Stored components ``(ncomp, *cells)`` -> full array ``(*full_shape, *cells)``."""
    kind = bundle.kind
    if kind is BundleKind.SCALAR:
        return components[0]
    if kind is BundleKind.ONE_FORM:
        return components
    n = bundle.n
    full = np.zeros((n, n) + components.shape[1:])
    for c, (i, j) in enumerate(_pair_lookup(bundle)):
        full[i, j] = components[c]
        full[j, i] = components[c]
    if kind is BundleKind.SYM2_TRACEFREE:
        full[n - 1, n - 1] = -sum(full[i, i] for i in range(n - 1))
    return full


def reduce(full: np.ndarray, bundle: BundleType) -> np.ndarray:
    """Inverse of :func:`expand`; symmetric input is assumed."""
    kind = bundle.kind
    if kind is BundleKind.SCALAR:
        return full[np.newaxis]
    if kind is BundleKind.ONE_FORM:
        return np.array(full, copy=True)
    return np.stack([full[i, j] for i, j in _pair_lookup(bundle)])


def _contract(a: np.ndarray, b: np.ndarray, rank: int) -> np.ndarray:
    """Pointwise full contraction of two full-form arrays of the given tensor rank."""
    prod = a * b
    for _ in range(rank):
        prod = prod.sum(axis=0)
    return prod


_RANK = {BundleKind.SCALAR: 0, BundleKind.ONE_FORM: 1,
         BundleKind.SYM2: 2, BundleKind.SYM2_TRACEFREE: 2}


@dataclass(frozen=True, eq=False)
class TensorField:
    bundle: BundleType
    components: np.ndarray
    domain: Domain

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        expected = (self.bundle.component_count,) + self.domain.grid.shape
        if comps.shape != expected:
            raise ValueError(f"components have shape {comps.shape}, expected {expected}")
        if self.bundle.n != self.domain.n:
            raise BundleMismatch("bundle dimension differs from domain dimension")
        object.__setattr__(self, "components", np.where(self.domain.mask, comps, 0.0))

    @classmethod
    def zeros(cls, bundle: BundleType, domain: Domain) -> "TensorField":
        return cls(bundle, np.zeros((bundle.component_count,) + domain.grid.shape), domain)

    @classmethod
    def from_full(cls, full: np.ndarray, bundle: BundleType, domain: Domain) -> "TensorField":
        return cls(bundle, reduce(full, bundle), domain)

    def full(self) -> np.ndarray:
        return expand(self.components, self.bundle)

    def with_components(self, components: np.ndarray) -> "TensorField":
        return TensorField(self.bundle, components, self.domain)

    def __add__(self, other: "TensorField") -> "TensorField":
        _check_compatible(self, other)
        return self.with_components(self.components + other.components)

    def __sub__(self, other: "TensorField") -> "TensorField":
        _check_compatible(self, other)
        return self.with_components(self.components - other.components)

    def __mul__(self, scalar) -> "TensorField":
        return self.with_components(self.components * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "TensorField":
        return self.with_components(-self.components)

    def pointwise_norm(self) -> np.ndarray:
        full = self.full()
        return np.sqrt(_contract(full, full, _RANK[self.bundle.kind]))


def _check_compatible(u: TensorField, v: TensorField):
    if u.bundle != v.bundle:
        raise BundleMismatch(f"{u.bundle.kind.value} vs {v.bundle.kind.value}")
    if u.domain.grid != v.domain.grid:
        raise DomainMismatch("fields live on different grids")


@dataclass(frozen=True)
class OperatorSpec:
    kind: OperatorKind
    n: int
    m: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", OperatorKind(self.kind))
        if self.m != 1:
            raise UnsupportedOperator("only first-order operators are supported")
        if self.kind is OperatorKind.CONF_KILLING and self.n < 3:
            raise UnsupportedOperator(
                "CONF_KILLING requires n >= 3: for n = 2 the divergence on trace-free "
                "tensors is determined elliptic and its adjoint has an infinite-dimensional kernel")

    @property
    def source_bundle(self) -> BundleType:
        """Bundle of the unknown U (domain of P)."""
        kind = {
            OperatorKind.GRAD: BundleKind.ONE_FORM,
            OperatorKind.KILLING: BundleKind.SYM2,
            OperatorKind.CONF_KILLING: BundleKind.SYM2_TRACEFREE,
        }[self.kind]
        return BundleType(kind, self.n)

    @property
    def target_bundle(self) -> BundleType:
        """Bundle of PU, of f, and of the kernel elements of P*."""
        if self.kind is OperatorKind.GRAD:
            return BundleType(BundleKind.SCALAR, self.n)
        return BundleType(BundleKind.ONE_FORM, self.n)


def centered_diff(u: np.ndarray, axis: int, h: float, grid_ndim: int) -> np.ndarray:
    """Centered difference along grid axis ``axis``, zero-extended past the grid edge.

    The trailing ``grid_ndim`` axes of ``u`` are grid axes; leading ones are
    tensor components.
    """
    ax = u.ndim - grid_ndim + axis
    lead = (slice(None),) * ax
    out = np.zeros_like(u)
    out[lead + (slice(0, -1),)] += u[lead + (slice(1, None),)]
    out[lead + (slice(1, None),)] -= u[lead + (slice(0, -1),)]
    return out * (1.0 / (2.0 * h))


class _Stencil:
    """Raw full-form operator pair on plain arrays for one operator spec."""

    def __init__(self, spec: OperatorSpec, grid: Grid):
        self.spec = spec
        self.n = grid.n
        self.h = grid.h

    def d(self, u, k):
        return centered_diff(u, k, self.h[k], self.n)

    def adjoint(self, u):
        """Full-form P* of a full-form argument (no masking)."""
        kind, n = self.spec.kind, self.n
        if kind is OperatorKind.GRAD:
            return np.stack([self.d(u, k) for k in range(n)])
        grads = np.stack([np.stack([self.d(u[j], i) for j in range(n)]) for i in range(n)])
        # grads[i, j] = d_i u_j
        sym = grads + np.swapaxes(grads, 0, 1)
        if kind is OperatorKind.KILLING:
            return sym
        out = 0.5 * sym
        div = sum(grads[k, k] for k in range(n))
        for i in range(n):
            out[i, i] -= div / n
        return out

    def forward(self, w):
        """Full-form P of a full-form argument (no masking); transpose of ``adjoint``."""
        kind, n = self.spec.kind, self.n
        if kind is OperatorKind.GRAD:
            return -sum(self.d(w[k], k) for k in range(n))
        wsym = w + np.swapaxes(w, 0, 1)
        if kind is OperatorKind.KILLING:
            return -np.stack([sum(self.d(wsym[i, j], i) for i in range(n)) for j in range(n)])
        trace = sum(w[k, k] for k in range(n))
        return np.stack([
            -0.5 * sum(self.d(wsym[i, j], i) for i in range(n)) + self.d(trace, j) / n
            for j in range(n)
        ])


@functools.lru_cache(maxsize=64)
def stencil(spec: OperatorSpec, grid: Grid) -> _Stencil:
    return _Stencil(spec, grid)


def _check_bundle(field: TensorField, expected: BundleType):
    if field.bundle != expected:
        raise BundleMismatch(
            f"expected a {expected.kind.value} field, got {field.bundle.kind.value}")


def adjoint_full(spec: OperatorSpec, u_full: np.ndarray, grid: Grid,
                 mask_in: np.ndarray | None, mask_out: np.ndarray | None) -> np.ndarray:
    st = stencil(spec, grid)
    if mask_in is not None:
        u_full = u_full * mask_in
    out = st.adjoint(u_full)
    if mask_out is not None:
        out = out * mask_out
    return out


def forward_full(spec: OperatorSpec, w_full: np.ndarray, grid: Grid,
                 mask_in: np.ndarray | None, mask_out: np.ndarray | None) -> np.ndarray:
    st = stencil(spec, grid)
    if mask_in is not None:
        w_full = w_full * mask_in
    out = st.forward(w_full)
    if mask_out is not None:
        out = out * mask_out
    return out


def apply_adjoint(spec: OperatorSpec, field: TensorField) -> TensorField:
    """P*_h applied to a zero-extended field; output masked to the field's domain."""
    _check_bundle(field, spec.target_bundle)
    mask = field.domain.mask
    out = adjoint_full(spec, field.full(), field.domain.grid, mask, mask)
    return TensorField.from_full(out, spec.source_bundle, field.domain)


def apply_forward(spec: OperatorSpec, field: TensorField) -> TensorField:
    """P_h, the exact L2 transpose of :func:`apply_adjoint`."""
    _check_bundle(field, spec.source_bundle)
    mask = field.domain.mask
    out = forward_full(spec, field.full(), field.domain.grid, mask, mask)
    return TensorField.from_full(out, spec.target_bundle, field.domain)


def l2_inner(u: TensorField, v: TensorField) -> float:
    """Unweighted discrete L2 pairing."""
    _check_compatible(u, v)
    rank = _RANK[u.bundle.kind]
    return float(np.sum(_contract(u.full(), v.full(), rank)) * u.domain.grid.cell_volume)


@functools.lru_cache(maxsize=64)
def cached_weights(domain: Domain, config: WeightConfig) -> Weights:
    return weight_arrays(domain, config)


def weighted_inner(u: TensorField, v: TensorField, config: WeightConfig, power: int = 0) -> float:
    """sum over cells of phi^(2 power) <u, v> psi^2 h^n."""
    if u.domain is not v.domain:
        if u.domain.grid != v.domain.grid or not np.array_equal(u.domain.mask, v.domain.mask):
            raise DomainMismatch("fields live on different domains")
    _check_compatible(u, v)
    w = cached_weights(u.domain, config)
    weight = w.psi ** 2
    if power:
        weight = weight * w.phi ** (2 * power)
    pointwise = _contract(u.full(), v.full(), _RANK[u.bundle.kind])
    return float(np.sum(weight * pointwise) * u.domain.grid.cell_volume)


def weighted_norm(u: TensorField, config: WeightConfig) -> float:
    return float(np.sqrt(weighted_inner(u, u, config)))


def sobolev_norm(u: TensorField, config: WeightConfig, k: int = 1) -> float:
    """Weighted H^k norm with k in {0, 1}; derivatives are centered differences."""
    if k not in (0, 1):
        raise UnsupportedOrder(f"only k in {{0, 1}} is supported, got {k}")
    total = weighted_inner(u, u, config, power=0)
    if k == 1:
        w = cached_weights(u.domain, config)
        grid = u.domain.grid
        weight = (w.psi ** 2) * w.phi ** 2
        full = u.full() * u.domain.mask
        grad_sq = np.zeros(grid.shape)
        for idx in np.ndindex(*u.bundle.full_shape):
            for axis in range(grid.n):
                g = centered_diff(full[idx], axis, grid.h[axis], grid.n) * u.domain.mask
                grad_sq += g * g
        total += float(np.sum(weight * grad_sq) * grid.cell_volume)
    return float(np.sqrt(total))


MIN_TRANSITION_CELLS = 4


def shell_indicator(grid: Grid, center, radius: float, width: float) -> np.ndarray:
    """1 inside the sphere, 0 outside, quintic transition of the given width."""
    centers = grid.centers()
    c = np.asarray(center, dtype=float).reshape((-1,) + (1,) * grid.n)
    r = np.sqrt(np.sum((centers - c) ** 2, axis=0))
    return 1.0 - smoothstep5((r - (radius - width / 2)) / width)


def _check_indicator(indicator: np.ndarray):
    # a quintic ramp over 4 cells moves by at most 15/32 per cell
    limit = 15.0 / (8.0 * MIN_TRANSITION_CELLS) + 1e-9
    for axis in range(indicator.ndim):
        if indicator.shape[axis] > 1 and np.max(np.abs(np.diff(indicator, axis=axis))) > limit:
            raise IndicatorTooSharp(
                f"indicator changes by more than {limit:.3f} between adjacent cells")


def surface_flux(W: TensorField, v: TensorField, spec: OperatorSpec, indicator: np.ndarray) -> float:
    """Boundary pairing through the indicator's transition shell.

    Returns sum(indicator * (<P W, v> - <W, P* v>)) h^n.  With centered
    differences the summand is an exact discrete divergence, so only the cells
    where the indicator varies contribute.
    """
    _check_bundle(W, spec.source_bundle)
    _check_bundle(v, spec.target_bundle)
    if W.domain.grid != v.domain.grid:
        raise DomainMismatch("fields live on different grids")
    _check_indicator(indicator)
    grid = W.domain.grid
    Wf, vf = W.full(), v.full()
    PW = forward_full(spec, Wf, grid, None, None)
    Pv = adjoint_full(spec, vf, grid, None, None)
    rank_t = _RANK[spec.target_bundle.kind]
    rank_s = _RANK[spec.source_bundle.kind]
    density = _contract(PW, vf, rank_t) - _contract(Wf, Pv, rank_s)
    return float(np.sum(indicator * density) * grid.cell_volume)


def write_field_dump(field: TensorField, path) -> None:
    """Write ``field`` in the plain-text dump format.

    Header: ``n cells... h... bundle_kind component_count``; then one
    comma-separated row ``i [j [k]] x comp0 comp1 ...`` per masked cell in
    lexicographic order.  ``x`` is the defining function at the cell.
    """
    domain = field.domain
    grid = domain.grid
    header = [str(grid.n)] + [str(c) for c in grid.cells] + [repr(h) for h in grid.h]
    header += [field.bundle.kind.value, str(field.bundle.component_count)]
    lines = [" ".join(header)]
    comps = field.components
    for idx in zip(*np.nonzero(domain.mask)):
        row = [str(int(i)) for i in idx] + [repr(float(domain.x[idx]))]
        row += [repr(float(c)) for c in comps[(slice(None),) + idx]]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field_dump(path) -> tuple[dict, np.ndarray]:
    """Parse a dump back into ``(header, rows)``; rows hold index, x and components."""
    with open(path) as fh:
        head = fh.readline().split()
        n = int(head[0])
        info = {
            "n": n,
            "cells": tuple(int(v) for v in head[1:1 + n]),
            "h": tuple(float(v) for v in head[1 + n:1 + 2 * n]),
            "bundle_kind": head[1 + 2 * n],
            "component_count": int(head[2 + 2 * n]),
        }
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    return info, rows


def random_compact_field(bundle: BundleType, domain: Domain, rng,
                         inset_cells: int = 2) -> TensorField:
    """Gaussian-random components, zero within ``inset_cells`` of the mask edge."""
    inner = domain.mask.copy()
    for axis in range(domain.n):
        for shift in range(1, inset_cells + 1):
            for sign in (1, -1):
                rolled = np.roll(domain.mask, sign * shift, axis=axis)
                edge = [slice(None)] * domain.n
                edge[axis] = slice(0, shift) if sign > 0 else slice(-shift, None)
                rolled[tuple(edge)] = False
                inner &= rolled
    comps = rng.standard_normal((bundle.component_count,) + domain.grid.shape) * inner
    return TensorField(bundle, comps, domain)


def adjointness_defect(spec: OperatorSpec, domain: Domain, pairs: int = 5,
                       seed: int = 0) -> float:
    """max |<P_h w, u> - <w, P*_h u>| / (||u|| ||w||) over random compact pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        u = random_compact_field(spec.target_bundle, domain, rng)
        w = random_compact_field(spec.source_bundle, domain, rng)
        lhs = l2_inner(apply_forward(spec, w), u)
        rhs = l2_inner(w, apply_adjoint(spec, u))
        scale = math.sqrt(l2_inner(u, u) * l2_inner(w, w))
        if scale > 0:
            worst = max(worst, abs(lhs - rhs) / scale)
    return worst
