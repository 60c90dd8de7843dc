"""Manufactured sources and reference solutions used by the CLI scenarios and tests."""
from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad

from .domain import Ball, Domain, Grid, build_domain
from .fields import OperatorKind, OperatorSpec, TensorField
from .kernel import KernelBasis


def bump(z) -> np.ndarray:
    """C-infinity bump exp(1 - 1/(1 - z^2)) on |z| < 1, peak value 1."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    inside = np.abs(z) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - z[inside] ** 2))
    return out


def bump_slope(z) -> np.ndarray:
    """d/dz of :func:`bump`."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    inside = np.abs(z) < 1
    zi = z[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - zi ** 2)) * (-2.0 * zi / (1.0 - zi ** 2) ** 2)
    return out


def poly_bump(z, power: int = 6) -> np.ndarray:
    """(1 - z^2)^power on |z| < 1; C^(power-1) with gentle derivatives."""
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) < 1, (1.0 - np.minimum(z * z, 1.0)) ** power, 0.0)


def poly_bump_slope(z, power: int = 6) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) < 1,
                    -2.0 * power * z * (1.0 - np.minimum(z * z, 1.0)) ** (power - 1), 0.0)


# --- one dimension: -U' = f on (0, 1) ---------------------------------------

def interval_domain(cells: int, margin_cells: int = 4) -> Domain:
    """The unit interval resolved by ``cells`` cells, padded on both sides."""
    h = 1.0 / cells
    grid = Grid((-margin_cells * h,), (1.0 + margin_cells * h,), (cells + 2 * margin_cells,))
    return build_domain(Ball((0.5,), 0.5), grid)


def interval_bump_problem(domain: Domain, center: float = 0.5, half_width: float = 0.3):
    """Source f = b' for a bump b; the compactly supported solution of -U' = f is -b.

    Returns ``(f, U_exact)`` as scalar source and one-form reference.
    """
    t = domain.grid.centers()[0]
    z = (t - center) / half_width
    b = bump(z)
    db = bump_slope(z) / half_width
    spec = OperatorSpec(OperatorKind.GRAD, 1)
    f = TensorField(spec.target_bundle, db[None], domain)
    exact = TensorField(spec.source_bundle, -b[None], domain)
    return f, exact


# --- two dimensions: radial zero-mean source on a disk ----------------------

class RadialOracle:
    """Zero-mean radial source (1 - c r^2) beta(r / rho) and its radial solution.

    The reference one-form is u(r) dr with u(r) = -(1/r) int_0^r t f(t) dt,
    integrated by the trapezoid rule on a fine radial mesh.
    """

    def __init__(self, rho: float = 0.7, samples: int = 200001):
        self.rho = rho
        num = quad(lambda r: float(bump(r / rho)) * r, 0.0, rho)[0]
        den = quad(lambda r: float(bump(r / rho)) * r ** 3, 0.0, rho)[0]
        self.c = num / den
        rr = np.linspace(0.0, rho, samples)
        g = rr * self.profile(rr)
        self._r = rr
        self._integral = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(rr))])

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        return (1.0 - self.c * r ** 2) * bump(r / self.rho)

    def radial_solution(self, r):
        r = np.asarray(r, dtype=float)
        return -np.interp(r, self._r, self._integral, right=0.0) / np.maximum(r, 1e-300)

    def problem(self, domain: Domain):
        """``(f, U_exact)`` on a disk centred at the origin.

        The source's discrete mean is removed with a multiple of the bump, so
        it is compatible to rounding on every grid.
        """
        pts = domain.grid.centers()
        r = np.sqrt(np.sum(pts ** 2, axis=0))
        mask = domain.mask
        beta = bump(r / self.rho) * mask
        f = self.profile(r) * mask
        f = f - f.sum() / beta.sum() * beta
        spec = OperatorSpec(OperatorKind.GRAD, 2)
        safe = np.maximum(r, 1e-300)
        u = self.radial_solution(r)
        exact = np.stack([u * pts[k] / safe for k in range(2)])
        return (TensorField(spec.target_bundle, f[None], domain),
                TensorField(spec.source_bundle, exact, domain))


# --- three dimensions: trace-free seed for TT-tensors -----------------------

def _random_tracefree(rng, n):
    a = rng.standard_normal((n, n))
    a = 0.5 * (a + a.T)
    return a - np.trace(a) / n * np.eye(n)


def tracefree_seed(domain: Domain, center, radius: float, seed: int = 0):
    """Smooth, compactly supported trace-free W0 and f = div W0 (analytic).

    W0 = (1 - |x - c|^2 / radius^2)^6 (A0 + sum_k A_k (x - c)_k) with random
    trace-free symmetric A's.  Since P W0 = -div W0 for the conformal Killing
    adjoint, ``f = -P W0`` up to discretisation.  Returns ``(W0, f)``.
    """
    n = domain.n
    rng = np.random.default_rng(seed)
    A0 = _random_tracefree(rng, n)
    A1 = [_random_tracefree(rng, n) for _ in range(n)]
    pts = domain.grid.centers() - np.asarray(center, dtype=float).reshape((n,) + (1,) * n)
    r = np.sqrt(np.sum(pts ** 2, axis=0))
    z = r / radius
    beta = poly_bump(z)
    dbeta = poly_bump_slope(z) / radius
    A = A0.reshape(n, n, *([1] * n)) + sum(A1[k].reshape(n, n, *([1] * n)) * pts[k]
                                          for k in range(n))
    W0 = beta * A
    radial = np.where(r > 0, dbeta / np.maximum(r, 1e-300), 0.0)
    div = np.einsum("i...,ij...->j...", pts, A) * radial
    div += beta * np.stack([sum(A1[i][i, j] for i in range(n)) for j in range(n)]).reshape(
        (n,) + (1,) * n)
    spec = OperatorSpec(OperatorKind.CONF_KILLING, n)
    return (TensorField.from_full(W0, spec.source_bundle, domain),
            TensorField(spec.target_bundle, div, domain))


def remove_kernel_pairings(f: TensorField, basis: KernelBasis, profile: np.ndarray) -> TensorField:
    """Make ``f`` pair to zero with the kernel by subtracting ``profile * v_k`` terms.

    Quadrature of a continuum-compatible source leaves small kernel pairings;
    the correction keeps the support of ``profile``.
    """
    dv = f.domain.grid.cell_volume
    members = [v.full() for v in basis.members]
    rank = members[0].ndim - f.domain.n
    full = f.full()

    def pair(a, b):
        prod = a * b
        for _ in range(rank):
            prod = prod.sum(axis=0)
        return float(np.sum(prod) * dv)

    M = np.array([[pair(profile * vk, vi) for vk in members] for vi in members])
    rhs = np.array([pair(full, vi) for vi in members])
    coeffs = np.linalg.solve(M, rhs)
    corrected = full - sum(c * profile * vk for c, vk in zip(coeffs, members))
    return TensorField.from_full(corrected, f.bundle, f.domain)


def relative_l2(a: TensorField, b: TensorField) -> float:
    """||a - b|| / ||b|| over stored components (full form for symmetric tensors)."""
    diff = a.full() - b.full()
    ref = b.full()
    return math.sqrt(float(np.sum(diff ** 2)) / float(np.sum(ref ** 2)))


def manufacture_tt(domain: Domain, config, seed_radius: float, seed: int = 0,
                   solve_config=None):
    """Trace-free, divergence-free tensor ``W0 + U`` on a ball centred at the origin.

    Returns ``(TT, report, residual)`` where ``residual`` is the L2 norm of
    the discrete divergence over the ball.
    """
    from .fields import forward_full
    from .solver import NormalOperator, SolveConfig, solve_compact_support
    spec = OperatorSpec(OperatorKind.CONF_KILLING, domain.n)
    W0, f = tracefree_seed(domain, (0.0,) * domain.n, seed_radius, seed)
    op = NormalOperator(spec, domain, config)
    r = np.sqrt(np.sum(domain.grid.centers() ** 2, axis=0))
    f = remove_kernel_pairings(f, op.basis, poly_bump(r / seed_radius))
    U, rep = solve_compact_support(spec, config, f, solve_config or SolveConfig(), op)
    TT = W0 + U
    res = forward_full(spec, TT.full(), domain.grid, None, domain.mask)
    return TT, rep, float(np.sqrt(np.sum(res ** 2) * domain.grid.cell_volume))
