"""Kernels of P* on flat domains: analytic bases, projection and flux functionals."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.linalg

from .domain import Domain, WeightConfig
from .errors import DegenerateBasis, UnsupportedOperator
from .fields import (
    OperatorKind,
    OperatorSpec,
    TensorField,
    adjoint_full,
    cached_weights,
    surface_flux,
    weighted_inner,
)

GRAM_RANK_TOL = 1e-10


def kernel_dimension(spec: OperatorSpec) -> int:
    n = spec.n
    return {
        OperatorKind.GRAD: 1,
        OperatorKind.KILLING: n * (n + 1) // 2,
        OperatorKind.CONF_KILLING: (n + 1) * (n + 2) // 2,
    }[spec.kind]


def _shape_center(domain: Domain) -> np.ndarray:
    shape = domain.shape
    center = getattr(shape, "center", None)
    if center is None:
        center = shape.outer.center
    return np.asarray(center, dtype=float)


def generator_fields(spec: OperatorSpec, domain: Domain) -> list[tuple[str, np.ndarray]]:
    """Flat-space kernel generators as ``(label, full_array)`` pairs.

    Coordinates are taken relative to the shape center, which keeps the
    Gram matrix well conditioned without changing the span.
    """
    n = domain.n
    pts = domain.grid.centers() - _shape_center(domain).reshape((n,) + (1,) * n)
    ones = np.ones(domain.grid.shape)
    if spec.kind is OperatorKind.GRAD:
        return [("constant", ones)]
    if spec.kind is OperatorKind.CONF_KILLING and n < 3:
        raise UnsupportedOperator("CONF_KILLING requires n >= 3")
    gens = []
    for k in range(n):
        v = np.zeros((n,) + domain.grid.shape)
        v[k] = ones
        gens.append((f"translation_{k}", v))
    for i, j in combinations(range(n), 2):
        v = np.zeros((n,) + domain.grid.shape)
        v[i] = -pts[j]
        v[j] = pts[i]
        gens.append((f"rotation_{i}{j}", v))
    if spec.kind is OperatorKind.CONF_KILLING:
        gens.append(("dilation", pts.copy()))
        r2 = np.sum(pts ** 2, axis=0)
        for k in range(n):
            # 2 (b.x) x - |x|^2 b with b = e_k
            v = 2.0 * pts[k] * pts
            v[k] -= r2
            gens.append((f"special_conformal_{k}", v))
    return gens


@dataclass(frozen=True, eq=False)
class KernelBasis:
    op_spec: OperatorSpec
    members: list
    weight_config: WeightConfig
    labels: list = field(default_factory=list)
    gram_log: np.ndarray | None = None

    def __len__(self):
        return len(self.members)

    @property
    def domain(self) -> Domain:
        return self.members[0].domain


def build_kernel_basis(spec: OperatorSpec, domain: Domain, config: WeightConfig) -> KernelBasis:
    """psi-orthonormal basis of ker P* restricted to the domain."""
    bundle = spec.target_bundle
    gens = generator_fields(spec, domain)
    fields = [TensorField.from_full(g, bundle, domain) for _, g in gens]
    k = len(fields)
    gram = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            gram[i, j] = gram[j, i] = weighted_inner(fields[i], fields[j], config)
    eig = np.linalg.eigvalsh(gram)
    if eig[0] < GRAM_RANK_TOL * eig[-1]:
        raise DegenerateBasis(
            f"kernel Gram matrix is numerically singular (eigenvalues {eig[0]:.3e} .. {eig[-1]:.3e})")
    members = []
    for f in fields:
        comps = f.components.copy()
        # modified Gram-Schmidt, two passes for orthogonality at the 1e-10 level
        for _ in range(2):
            for q in members:
                comps -= weighted_inner(f.with_components(comps), q, config) * q.components
        norm = np.sqrt(weighted_inner(f.with_components(comps), f.with_components(comps), config))
        members.append(f.with_components(comps / norm))
    return KernelBasis(spec, members, config, [label for label, _ in gens], gram)


def project_off(f: TensorField, basis: KernelBasis) -> tuple[TensorField, list[float]]:
    """Remove the psi-orthogonal projection of ``f`` onto the kernel."""
    config = basis.weight_config
    coeffs = []
    comps = f.components.copy()
    for v in basis.members:
        c = weighted_inner(f, v, config)
        coeffs.append(c)
        comps -= c * v.components
    return f.with_components(comps), coeffs


def _smooth_random_fields(spec: OperatorSpec, domain: Domain, count: int, seed: int):
    """Random trig fields oscillating on the scale of the domain's inradius."""
    rng = np.random.default_rng(seed)
    n = domain.n
    bundle = spec.target_bundle
    center = _shape_center(domain).reshape((n,) + (1,) * n)
    pts = (domain.grid.centers() - center) / float(np.max(domain.x))
    out = []
    for _ in range(count):
        full_shape = (bundle.component_count if bundle.component_count > 1 else 1,)
        comps = np.zeros(full_shape + domain.grid.shape)
        for c in range(comps.shape[0]):
            for _term in range(4):
                wave = rng.integers(-2, 3, size=n).astype(float)
                if not np.any(wave):
                    wave[rng.integers(n)] = 1.0
                phase = rng.uniform(0, 2 * np.pi)
                amp = rng.standard_normal()
                arg = np.tensordot(wave, pts, axes=1) * np.pi + phase
                comps[c] += amp * np.cos(arg)
        out.append(TensorField(bundle, comps, domain))
    return out


def rayleigh_spectrum(spec: OperatorSpec, domain: Domain, config: WeightConfig,
                      candidate_count: int, seed: int = 0) -> np.ndarray:
    """Ritz values of ||phi P* v||^2_psi / ||v||^2_psi on generators plus random fields."""
    bundle = spec.target_bundle
    gens = [TensorField.from_full(g, bundle, domain) for _, g in generator_fields(spec, domain)]
    extra = max(candidate_count - len(gens), 0)
    cands = gens + _smooth_random_fields(spec, domain, extra, seed)
    w = cached_weights(domain, config)
    weight = (w.psi * w.phi) ** 2
    grid = domain.grid
    images = []
    for c in cands:
        images.append(adjoint_full(spec, c.full(), grid, domain.mask, domain.mask))
    k = len(cands)
    gram = np.empty((k, k))
    stiff = np.empty((k, k))
    rank = images[0].ndim - grid.n
    for i in range(k):
        for j in range(i, k):
            gram[i, j] = gram[j, i] = weighted_inner(cands[i], cands[j], config)
            prod = images[i] * images[j]
            for _ in range(rank):
                prod = prod.sum(axis=0)
            stiff[i, j] = stiff[j, i] = float(np.sum(weight * prod) * grid.cell_volume)
    # orthonormalise the candidate span first; drop directions the Gram matrix cannot resolve
    evals, evecs = np.linalg.eigh(gram)
    keep = evals > 1e-12 * evals[-1]
    basis = evecs[:, keep] / np.sqrt(evals[keep])
    reduced = basis.T @ stiff @ basis
    return np.sort(scipy.linalg.eigvalsh(0.5 * (reduced + reduced.T)))


def kernel_threshold(domain: Domain) -> float:
    return 10.0 * max(domain.grid.h) ** 2


def numeric_kernel_dim(spec: OperatorSpec, domain: Domain, config: WeightConfig,
                       candidate_count: int | None = None, seed: int = 0) -> int:
    """Count Ritz values below 10 h^2."""
    if candidate_count is None:
        candidate_count = kernel_dimension(spec) + 8
    if candidate_count < kernel_dimension(spec) + 5:
        raise ValueError("candidate_count must exceed the analytic dimension by at least 5")
    spectrum = rayleigh_spectrum(spec, domain, config, candidate_count, seed)
    return int(np.sum(spectrum < kernel_threshold(domain)))


@dataclass(frozen=True)
class FluxReport:
    coefficients: list
    surface_label: str

    def to_dict(self):
        return {"coefficients": list(self.coefficients), "surface_label": self.surface_label}


def flux_functionals(T: TensorField, basis: KernelBasis, spec: OperatorSpec,
                     indicator: np.ndarray, label: str = "shell") -> FluxReport:
    return FluxReport([surface_flux(T, v, spec, indicator) for v in basis.members], label)
