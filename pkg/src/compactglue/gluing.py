"""Gluing two kernel elements of P across an annular region.

Given V (defined near the inner boundary component) and W (near the outer
one), the interpolant T = chi V + (1 - chi) W is corrected by a compactly
supported U on the gluing region so that P(T + U) = 0 there.  Away from the
region the glued field coincides with the inputs bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .domain import (
    Annulus,
    CollarSpec,
    CutoffField,
    Difference,
    Domain,
    WeightConfig,
    build_cutoff,
    region,
)
from .errors import BundleMismatch, DomainMismatch, FamilyDegenerate, MissingData
from .fields import (
    MIN_TRANSITION_CELLS,
    OperatorSpec,
    TensorField,
    _RANK,
    _contract,
    forward_full,
    shell_indicator,
)
from .kernel import FluxReport, KernelBasis, build_kernel_basis, flux_functionals
from .solver import NormalOperator, SolveConfig, SolveReport, solve_projected

FAMILY_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class GluingProblem:
    op_spec: OperatorSpec
    V: TensorField
    W: TensorField
    domain: Domain
    chi: CutoffField
    basis: KernelBasis

    def __post_init__(self):
        bundle = self.op_spec.source_bundle
        for name, fld in (("V", self.V), ("W", self.W)):
            if fld.bundle != bundle:
                raise BundleMismatch(f"{name} is a {fld.bundle.kind.value} field, "
                                     f"expected {bundle.kind.value}")
            if fld.domain.grid != self.domain.grid:
                raise DomainMismatch(f"{name} lives on a different grid")


@dataclass
class GluingReport:
    flux_V: FluxReport
    flux_W: FluxReport
    flux_mismatch: list
    solve_report: SolveReport
    glued_divergence_residual: float

    def to_dict(self) -> dict:
        """Flat key-value form; the solve report's keys are merged in."""
        d = self.solve_report.to_dict()
        d.update({
            "flux_V": list(self.flux_V.coefficients),
            "flux_W": list(self.flux_W.coefficients),
            "flux_mismatch": list(self.flux_mismatch),
            "flux_surface": self.flux_V.surface_label,
            "glued_divergence_residual": self.glued_divergence_residual,
        })
        return d


def _radial_bounds(domain: Domain) -> tuple[float, float]:
    shape = domain.shape
    if isinstance(shape, Annulus):
        return shape.r_in, shape.r_out
    if isinstance(shape, Difference):
        offset = math.dist(shape.outer.center, shape.inner.center)
        return shape.inner.radius, shape.outer.radius - offset
    raise ValueError("gluing needs an annulus or a difference of balls")


def _center(domain: Domain):
    shape = domain.shape
    return shape.inner.center if isinstance(shape, Difference) else shape.center


def make_problem(op_spec: OperatorSpec, V: TensorField, W: TensorField, domain: Domain,
                 collar: CollarSpec, weight_config: WeightConfig,
                 basis: KernelBasis | None = None) -> GluingProblem:
    chi = build_cutoff(domain, collar)
    if basis is None:
        basis = build_kernel_basis(op_spec, domain, weight_config)
    return GluingProblem(op_spec, V, W, domain, chi, basis)


def interpolate(problem: GluingProblem) -> TensorField:
    """T = chi V + (1 - chi) W, exact copies of V (W) where chi is 1 (0)."""
    chi = problem.chi.values
    V, W = problem.V, problem.W
    in_v, in_w = V.domain.mask, W.domain.mask
    transition = (chi > 0) & (chi < 1)
    missing = transition & ~(in_v & in_w)
    if np.any(missing):
        cell = tuple(int(i) for i in np.argwhere(missing)[0])
        raise MissingData(f"V or W undefined at cell {cell} inside the transition collar")
    defined = (in_v | in_w) & ((chi <= 0) | in_v) & ((chi >= 1) | in_w)
    comps = np.where(chi == 1.0, V.components,
                     np.where(chi == 0.0, W.components,
                              chi * V.components + (1.0 - chi) * W.components))
    return TensorField(V.bundle, comps, region(problem.domain.grid, defined))


def flux_shell(problem: GluingProblem) -> tuple[np.ndarray, str]:
    """Smeared sphere centred in the cutoff's transition collar, at least 4 cells wide."""
    collar = problem.chi.collar
    h = max(problem.domain.grid.h)
    width = max(collar.end - collar.start, MIN_TRANSITION_CELLS * h * 1.01)
    mid = 0.5 * (collar.start + collar.end)
    ind = shell_indicator(problem.domain.grid, _center(problem.domain), mid, width)
    return ind, f"shell r={mid:.6g} width={width:.6g}"


def _fluxes(field: TensorField, problem: GluingProblem, shell) -> FluxReport:
    indicator, label = shell
    return flux_functionals(field, problem.basis, problem.op_spec, indicator, label)


def gluing_source(problem: GluingProblem) -> TensorField:
    """Right-hand side f = -[P_h, chi](V - W) on the gluing region.

    For exact kernel elements this is -P(T).  Using the commutator keeps the
    inputs' own discretisation residuals out of the source, so the kernel
    pairings of f measure only the flux mismatch.
    """
    dom = problem.domain
    grid = dom.grid
    chi = problem.chi.values
    X = problem.V.full() - problem.W.full()
    spec = problem.op_spec
    comm = forward_full(spec, chi * X, grid, None, dom.mask) - chi * forward_full(
        spec, X, grid, None, dom.mask)
    return TensorField.from_full(-comm, spec.target_bundle, dom)


def divergence_residual(field: TensorField, spec: OperatorSpec, domain: Domain) -> float:
    """||P_h field||_{L2} over the domain's cells."""
    out = forward_full(spec, field.full(), domain.grid, None, domain.mask)
    rank = _RANK[spec.target_bundle.kind]
    return math.sqrt(float(np.sum(_contract(out, out, rank))) * domain.grid.cell_volume)


def glue(problem: GluingProblem, weight_config: WeightConfig,
         solve_config: SolveConfig = SolveConfig(),
         operator: NormalOperator | None = None) -> tuple[TensorField, GluingReport]:
    """Glue V to W; a flux mismatch is reported, never raised."""
    spec = problem.op_spec
    dom = problem.domain
    T = interpolate(problem)
    shell = flux_shell(problem)
    flux_V = _fluxes(problem.V, problem, shell)
    flux_W = _fluxes(problem.W, problem, shell)
    mismatch = [w - v for v, w in zip(flux_V.coefficients, flux_W.coefficients)]
    op = operator or NormalOperator(spec, dom, weight_config, problem.basis)
    f = gluing_source(problem)
    _, U, report = solve_projected(spec, weight_config, f, solve_config, op)
    comps = np.where(dom.mask, T.components + U.components, T.components)
    glued = T.with_components(comps)
    residual = divergence_residual(glued, spec, dom)
    return glued, GluingReport(flux_V, flux_W, mismatch, report, residual)


def default_collar(domain: Domain) -> CollarSpec:
    """Middle third of the region's radial extent."""
    lo, hi = _radial_bounds(domain)
    third = (hi - lo) / 3.0
    return CollarSpec(lo + third, lo + 2.0 * third)


def truncate(op_spec: OperatorSpec, V: TensorField, domain: Domain,
             weight_config: WeightConfig, solve_config: SolveConfig = SolveConfig(),
             collar: CollarSpec | None = None,
             basis: KernelBasis | None = None) -> tuple[TensorField, GluingReport]:
    """Glue V with the zero field beyond the gluing region."""
    lo, _ = _radial_bounds(domain)
    coord = domain.coordinate()
    W = TensorField.zeros(op_spec.source_bundle, region(domain.grid, coord > lo))
    problem = make_problem(op_spec, V, W, domain, collar or default_collar(domain),
                           weight_config, basis)
    return glue(problem, weight_config, solve_config)


@dataclass(frozen=True)
class FluxMatchParameters:
    coefficients: list
    residual: float
    condition: float


def _combine(family: list[TensorField], coeffs) -> TensorField:
    first = family[0]
    mask = np.logical_and.reduce([m.domain.mask for m in family])
    comps = sum(c * m.components for c, m in zip(coeffs, family))
    return TensorField(first.bundle, comps, region(first.domain.grid, mask))


def flux_match(problem: GluingProblem,
               family: list[TensorField]) -> tuple[FluxMatchParameters, GluingProblem]:
    """Choose W in span(family) whose fluxes match those of V (least squares)."""
    if not family:
        raise FamilyDegenerate("empty family")
    shell = flux_shell(problem)
    M = np.array([_fluxes(w, problem, shell).coefficients for w in family]).T
    b = np.asarray(_fluxes(problem.V, problem, shell).coefficients)
    sv = np.linalg.svd(M, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if not cond <= FAMILY_COND_LIMIT:
        raise FamilyDegenerate(f"flux matrix condition number {cond:.3e} exceeds "
                               f"{FAMILY_COND_LIMIT:.0e}")
    coeffs, *_ = np.linalg.lstsq(M, b, rcond=None)
    residual = float(np.linalg.norm(M @ coeffs - b))
    params = FluxMatchParameters([float(c) for c in coeffs], residual, cond)
    return params, replace(problem, W=_combine(family, coeffs))


# --- charges, for the electrostatic examples -------------------------------

def _enclosed_fraction(t: np.ndarray, n: int) -> np.ndarray:
    # share of a (1 - t^2)^2 radial profile inside radius t (t in [0, 1])
    if n == 3:
        return (105.0 / 8.0) * (t ** 3 / 3.0 - 2.0 * t ** 5 / 5.0 + t ** 7 / 7.0)
    if n == 2:
        return 1.0 - (1.0 - t * t) ** 3
    raise ValueError("charges are available in two and three dimensions")


def charge_field(grid, position, charge: float, smoothing: float) -> np.ndarray:
    """Electric field of a charge smeared over a ball of radius ``smoothing``.

    Outside that ball it is exactly the Coulomb field ``Q d / (|S^{n-1}| r^n)``,
    which is divergence free.  Returns a full-form array ``(n, *cells)``.
    """
    n = grid.n
    pts = grid.centers()
    d = pts - np.asarray(position, dtype=float).reshape((n,) + (1,) * n)
    r = np.sqrt(np.sum(d ** 2, axis=0))
    t = np.minimum(r / smoothing, 1.0)
    area = 4.0 * math.pi if n == 3 else 2.0 * math.pi
    with np.errstate(divide="ignore", invalid="ignore"):
        E = charge * _enclosed_fraction(t, n) / (area * r ** n) * d
    E[:, r == 0] = 0.0
    return E


def charges_field(grid, charges, smoothing: float) -> np.ndarray:
    """Superposition of ``(position, charge)`` pairs."""
    total = np.zeros((grid.n,) + grid.shape)
    for pos, q in charges:
        total += charge_field(grid, pos, q, smoothing)
    return total


def coulomb_problem(op_spec: OperatorSpec, domain: Domain, inner_charges, outer_charge: float,
                    collar: CollarSpec, weight_config: WeightConfig, smoothing: float = 0.2,
                    basis: KernelBasis | None = None) -> GluingProblem:
    """Inner field of several charges glued to a single charge at the centre.

    V lives on ``{core < r < r_out}`` where ``core`` clears every smeared
    charge; W lives on ``{r > r_in}``.
    """
    grid = domain.grid
    lo, hi = _radial_bounds(domain)
    center = np.asarray(_center(domain), dtype=float)
    coord = domain.coordinate()
    reach = max(float(np.linalg.norm(np.asarray(p, dtype=float) - center))
                for p, _ in inner_charges) + smoothing
    if reach >= lo:
        raise ValueError("inner charges must stay inside the inner boundary")
    bundle = op_spec.source_bundle
    V = TensorField.from_full(charges_field(grid, inner_charges, smoothing), bundle,
                              region(grid, (coord > reach) & (coord < hi)))
    W = TensorField.from_full(charge_field(grid, center, outer_charge, smoothing), bundle,
                              region(grid, coord > max(lo, smoothing)))
    return make_problem(op_spec, V, W, domain, collar, weight_config, basis)
