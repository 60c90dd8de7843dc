"""Weighted variational solves for P U = f with U vanishing on the boundary.

The unknown ``u`` lives in the bundle of ``P*``; the physical solution is
``U = psi^2 phi^2 P* u``.  We minimise

    1/2 ||phi P* u||^2_psi - <u, f>_{L2}

over the psi-orthogonal complement of ker P* by projected preconditioned CG.
All CG algebra runs in the unweighted (dual) pairing, where the normal
operator is the symmetric matrix ``A = P W P*`` with ``W = psi^2 phi^2``.
CG in the psi-inner product corresponds to the preconditioner ``psi^-2``;
the DIAGONAL option uses the exact diagonal of ``A`` instead.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg as spla

from .domain import Domain, WeightConfig
from .errors import EmptyCollar, IncompatibleSource, InsufficientDecayData, NoConvergence
from .fields import (
    OperatorSpec,
    TensorField,
    _RANK,
    _contract,
    adjoint_full,
    cached_weights,
    forward_full,
)
from .kernel import KernelBasis, build_kernel_basis

PRECONDITIONERS = ("NONE", "DIAGONAL")


@dataclass(frozen=True)
class SolveConfig:
    rel_tolerance: float = 1e-8
    max_iterations: int | None = None
    preconditioner: str = "DIAGONAL"

    def __post_init__(self):
        if not 0 < self.rel_tolerance < 1:
            raise ValueError("rel_tolerance must lie in (0, 1)")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}")


@dataclass
class SolveReport:
    iterations: int
    final_rel_residual: float
    kernel_coefficients: list
    forward_residual: float = float("nan")
    decay_slope: float | None = None
    energy_history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("energy_history")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class NormalOperator:
    """The discrete normal operator for one (operator, domain, weights) triple."""

    def __init__(self, spec: OperatorSpec, domain: Domain, config: WeightConfig,
                 basis: KernelBasis | None = None):
        self.spec = spec
        self.domain = domain
        self.config = config
        self.grid = domain.grid
        weights = cached_weights(domain, config)
        self.psi = weights.psi
        self.active = weights.active
        self.weight = (weights.psi * weights.phi ** config.m) ** 2
        self.basis = basis if basis is not None else build_kernel_basis(spec, domain, config)
        self.dv = self.grid.cell_volume
        self.rank = _RANK[spec.target_bundle.kind]
        self._kernel = [v.full() * self.active for v in self.basis.members]
        self._diag = None
        self._twisted_gram = None

    # --- raw array operations; u arrays are full-form in the target bundle ---

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """P*_h u restricted to the domain."""
        return adjoint_full(self.spec, u, self.grid, self.active, self.domain.mask)

    def physical(self, u: np.ndarray) -> np.ndarray:
        """U = psi^2 phi^2 P*_h u (full form in the source bundle)."""
        return self.weight * self.gradient(u)

    def matvec(self, u: np.ndarray) -> np.ndarray:
        """A u = P_h W P*_h u on active cells."""
        return forward_full(self.spec, self.physical(u), self.grid, None, self.active)

    def pair(self, a: np.ndarray, b: np.ndarray) -> float:
        """Unweighted pairing without the cell volume."""
        return float(np.sum(_contract(a, b, self.rank)))

    def psi_pair(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(self.psi ** 2 * _contract(a, b, self.rank)) * self.dv)

    def project(self, u: np.ndarray) -> np.ndarray:
        """psi-orthogonal projection off the kernel (primal side)."""
        for v in self._kernel:
            u = u - self.psi_pair(u, v) * v
        return u

    def project_dual(self, r: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`project`, acting on residual-like arrays."""
        w2 = self.psi ** 2
        for v in self._kernel:
            r = r - self.pair(r, v) * self.dv * w2 * v
        return r

    def _component_signs(self, sigma) -> np.ndarray:
        lead = self.spec.target_bundle.full_shape
        if not lead:
            return np.ones(())
        signs = np.array([(-1.0) ** sigma[j] for j in range(lead[0])])
        return signs.reshape(lead + (1,) * self.grid.n)

    def _parity(self, sigma) -> np.ndarray:
        idx = np.indices(self.grid.shape)
        return (-1.0) ** np.tensordot(np.asarray(sigma), idx, axes=1)

    def discrete_kernel(self):
        """Yield the genuine kernel members, then their parity twists.

        Centered differences decouple cells of different index parity, so for
        every sigma in {0,1}^n the field (-1)^(sigma . idx + sigma_j) v_j is
        annihilated by P*_h in the interior whenever v is.  These twists have
        no continuum counterpart; they are projected out of right-hand sides
        so the discrete normal equations stay consistent.
        """
        yield from self._kernel
        for sigma in itertools.product((0, 1), repeat=self.grid.n):
            if not any(sigma):
                continue
            twist = self._parity(sigma) * self._component_signs(sigma)
            for v in self._kernel:
                yield twist * v

    def discrete_kernel_size(self) -> int:
        return len(self._kernel) * 2 ** self.grid.n

    def project_dual_discrete(self, r: np.ndarray) -> np.ndarray:
        """Dual projection of ``r`` off the full discrete kernel (psi-orthogonal)."""
        if self._twisted_gram is None:
            k = self.discrete_kernel_size()
            gram = np.empty((k, k))
            members = list(self.discrete_kernel()) if k <= 16 else None
            for i, qi in enumerate(members or self.discrete_kernel()):
                for j, qj in enumerate(members or self.discrete_kernel()):
                    if j < i:
                        continue
                    gram[i, j] = gram[j, i] = self.psi_pair(qi, qj)
            self._twisted_gram = gram
        rhs = np.array([self.pair(r, q) * self.dv for q in self.discrete_kernel()])
        coeffs = np.linalg.lstsq(self._twisted_gram, rhs, rcond=1e-12)[0]
        w2 = self.psi ** 2
        out = r.copy()
        for c, q in zip(coeffs, self.discrete_kernel()):
            out -= c * w2 * q
        return out

    def diagonal(self) -> np.ndarray:
        """Exact diagonal of A by probing with cells three apart in every axis."""
        if self._diag is None:
            n = self.grid.n
            lead = self.spec.target_bundle.full_shape
            diag = np.zeros(lead + self.grid.shape)
            for comp in np.ndindex(*lead) if lead else [()]:
                for offset in itertools.product(range(3), repeat=n):
                    probe = np.zeros(lead + self.grid.shape)
                    sl = comp + tuple(slice(o, None, 3) for o in offset)
                    probe[sl] = 1.0
                    probe *= self.active
                    out = self.matvec(probe)
                    diag[sl] = out[sl]
            self._diag = diag
        return self._diag

    def psi_norm_dual(self, r: np.ndarray) -> float:
        """psi-norm of the primal residual psi^-2 r, evaluated without dividing by psi^2."""
        scaled = np.zeros_like(r)
        act = np.broadcast_to(self.active, r.shape)
        psi = np.broadcast_to(self.psi, r.shape)
        scaled[act] = r[act] / psi[act]
        return math.sqrt(float(np.sum(_contract(scaled, scaled, self.rank))) * self.dv)


def apply_normal_operator(spec: OperatorSpec, config: WeightConfig, u: TensorField,
                          operator: NormalOperator | None = None) -> TensorField:
    """L_h u = psi^-2 P_h(psi^2 phi^2 P*_h u), returned on active cells (zero elsewhere)."""
    op = operator or NormalOperator(spec, u.domain, config)
    au = op.matvec(u.full())
    out = np.zeros_like(au)
    act = np.broadcast_to(op.active, au.shape)
    psi = np.broadcast_to(op.psi, au.shape)
    out[act] = (au[act] / psi[act]) / psi[act]
    return TensorField.from_full(out, spec.target_bundle, u.domain)


def psi_adjoint_pairing(op: NormalOperator, u: TensorField, w: TensorField) -> float:
    """<L_h u, w>_psi computed as the L2 pairing of A u with w."""
    return op.pair(op.matvec(u.full()), w.full()) * op.dv


def _default_max_iterations(op: NormalOperator) -> int:
    unknowns = int(np.sum(op.active)) * max(1, int(np.prod(op.spec.target_bundle.full_shape)))
    return 10 * unknowns


def projected_cg(op: NormalOperator, b: np.ndarray, config: SolveConfig,
                 x0: np.ndarray | None = None):
    """Projected PCG for Pi^T A Pi u = b on the psi-complement of the kernel.

    ``b`` must already be dual-projected.  Returns ``(u, iterations,
    rel_residual, energy_history, converged)``.
    """
    max_it = config.max_iterations or _default_max_iterations(op)
    if config.preconditioner == "DIAGONAL":
        d = op.diagonal()
        inv = np.zeros_like(d)
        inv[d > 0] = 1.0 / d[d > 0]
    else:
        inv = np.zeros(op.psi.shape)
        act = op.active
        inv[act] = 1.0 / (op.psi[act] * op.psi[act])
        inv = np.broadcast_to(inv, b.shape)

    def dual_norm(res):
        return math.sqrt(max(op.pair(res, inv * res), 0.0))

    b_norm = dual_norm(b)
    u = np.zeros_like(b) if x0 is None else op.project(x0 * op.active)
    if b_norm == 0.0:
        return u, 0, 0.0, [0.0], True
    r = b - op.project_dual(op.matvec(u)) if x0 is not None else b.copy()
    rel = dual_norm(r) / b_norm
    energy = [-0.5 * op.pair(u, b + r) * op.dv]
    if rel <= config.rel_tolerance:
        return u, 0, rel, energy, True
    z = op.project(inv * r)
    p = z
    rz = op.pair(r, z)
    for it in range(1, max_it + 1):
        q = op.project_dual(op.matvec(p))
        pq = op.pair(p, q)
        if pq <= 0.0:
            # numerical breakdown inside the near-kernel
            return u, it - 1, rel, energy, False
        alpha = rz / pq
        u = op.project(u + alpha * p)
        r = r - alpha * q
        rel = dual_norm(r) / b_norm
        energy.append(-0.5 * op.pair(u, b + r) * op.dv)
        if rel <= config.rel_tolerance:
            return u, it, rel, energy, True
        z = op.project(inv * r)
        rz_new = op.pair(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return u, max_it, rel, energy, False


def _kernel_pairings(op: NormalOperator, f_full: np.ndarray) -> list[float]:
    """<psi^-2 f, v_i>_psi, which is the plain L2 pairing <f, v_i>."""
    return [op.pair(f_full, v.full()) * op.dv for v in op.basis.members]


def solve_projected(spec: OperatorSpec, config: WeightConfig, f: TensorField,
                    solve_config: SolveConfig = SolveConfig(),
                    operator: NormalOperator | None = None):
    """Solve the projected normal equations; returns ``(u, U, report)``."""
    domain = f.domain
    op = operator or NormalOperator(spec, domain, config)
    f_full = f.full()
    coeffs = _kernel_pairings(op, f_full)
    f_act = f_full * op.active
    b = op.project_dual_discrete(f_act) * op.active
    # what survives projecting a pure kernel source is roundoff; do not chase it
    if op.pair(b, b) <= (1e-13) ** 2 * op.pair(f_act, f_act):
        b = np.zeros_like(b)
    u, iters, rel, energy, ok = projected_cg(op, b, solve_config)
    U_full = op.physical(u)
    PU = forward_full(spec, U_full, domain.grid, None, domain.mask)
    f_norm = math.sqrt(op.pair(f_full, f_full))
    diff = PU - f_full
    fwd = math.sqrt(op.pair(diff, diff)) / f_norm if f_norm > 0 else 0.0
    report = SolveReport(iters, rel, coeffs, fwd, None, energy)
    u_field = TensorField.from_full(u, spec.target_bundle, domain)
    U_field = TensorField.from_full(U_full, spec.source_bundle, domain)
    if not ok:
        raise NoConvergence(
            f"CG stopped after {iters} iterations at relative residual {rel:.3e}", report)
    return u_field, U_field, report


def compatibility_tolerance(f: TensorField, basis: KernelBasis) -> float:
    """1e-8 ||f|| ||v_i||, both in unweighted L2."""
    dv = f.domain.grid.cell_volume
    rank = _RANK[f.bundle.kind]
    f_norm = math.sqrt(float(np.sum(_contract(f.full(), f.full(), rank))) * dv)
    v_norm = max(math.sqrt(float(np.sum(_contract(v.full(), v.full(), rank))) * dv)
                 for v in basis.members)
    return 1e-8 * f_norm * v_norm


def solve_compact_support(spec: OperatorSpec, config: WeightConfig, f: TensorField,
                          solve_config: SolveConfig = SolveConfig(),
                          operator: NormalOperator | None = None):
    """Compactly supported U with P_h U = f; ``f`` must pair to zero with ker P*."""
    op = operator or NormalOperator(spec, f.domain, config)
    pairings = _kernel_pairings(op, f.full())
    tol = compatibility_tolerance(f, op.basis)
    bad = [p for p in pairings if abs(p) > tol]
    if bad:
        raise IncompatibleSource(
            f"source pairs with the kernel of P* (max |<f, v_i>| = {max(map(abs, bad)):.3e}, "
            f"tolerance {tol:.3e})", pairings)
    _, U, report = solve_projected(spec, config, f, solve_config, op)
    try:
        report.decay_slope = decay_fit(U, f.domain, config)
    except InsufficientDecayData:
        report.decay_slope = None
    return U, report


def decay_fit(U: TensorField, domain: Domain, config: WeightConfig,
              x_max: float | None = None) -> float:
    """Fit the exponential rate s in |U| <~ x^(2(a-n+m)) exp(-s/x) over boundary level sets.

    Levels are bands ``[x_l, x_l + h)``; only levels with maximum above 1e-250
    and below ``x_max`` (default: half the largest ``x``) take part.
    """
    h = max(domain.grid.h)
    x = domain.x
    mag = U.pointwise_norm()
    if not np.any(mag > 0):
        raise InsufficientDecayData("U vanishes identically")
    if x_max is None:
        x_max = 0.5 * float(np.max(x))
    power = 2 * (config.a - domain.n + config.m)
    xs, ys = [], []
    level = 0
    while level * h < x_max:
        band = domain.mask & (x >= level * h) & (x < (level + 1) * h)
        level += 1
        if not np.any(band):
            continue
        M = float(np.max(mag[band]))
        if M <= 1e-250:
            continue
        xl = float(np.mean(x[band][mag[band] == M]))
        xs.append(xl)
        ys.append(math.log(M) - power * math.log(xl))
    if len(xs) < 4:
        raise InsufficientDecayData(f"only {len(xs)} usable level sets")
    X = -1.0 / np.asarray(xs)
    slope, _ = np.polyfit(X, np.asarray(ys), 1)
    return float(slope)


API_PSI_FLOOR = 1e-100
DENSE_API_LIMIT = 2000
API_DIAG_RANGE = 1e8


def estimate_api_constant(op_spec: OperatorSpec, domain: Domain, weight_config: WeightConfig,
                          collar_width: float, sample_count: int = 20, seed: int = 0,
                          tol: float = 1e-6, max_iterations: int = 400) -> float:
    """Smallest Rayleigh quotient ||phi P*_h u||^2_psi / ||u||^2_psi over the collar.

    Admissible ``u`` vanish on K = {x >= collar_width} and are psi-orthogonal
    to the restrictions of every discrete kernel member (parity twists
    included).  The problem is posed in the psi-orthonormal unknowns
    ``y = psi u`` and solved by shift-invert Lanczos with a Krylov space of
    ``sample_count`` vectors grown from one random start.
    The (API) constant is roughly ``lambda ** -0.5``.
    """
    if sample_count < 20:
        raise ValueError("sample_count must be at least 20")
    op = NormalOperator(op_spec, domain, weight_config)
    collar = op.active & (domain.x < collar_width) & (op.psi >= API_PSI_FLOOR)
    if collar_width <= 0 or not np.any(collar):
        raise EmptyCollar(f"no active cells with x < {collar_width}")
    lead = op_spec.target_bundle.full_shape
    sel_full = np.broadcast_to(collar, lead + collar.shape)
    S_all, index = _collar_matrix(op, sel_full)
    psi_all = np.broadcast_to(op.psi, sel_full.shape)[sel_full]
    # cells whose single-cell Rayleigh quotient is enormous only pollute the
    # eigensolver's roundoff; pinning them to zero barely moves the minimum
    scaled = S_all.diagonal() / psi_all ** 2
    keep = scaled <= API_DIAG_RANGE * np.min(scaled)
    sel = np.zeros(sel_full.shape, dtype=bool)
    sel[sel_full] = keep
    psi = psi_all[keep]
    D = scipy.sparse.diags(1.0 / psi)
    S = (D @ S_all[keep][:, keep] @ D).tocsc()
    S = 0.5 * (S + S.T)
    size = psi.size

    constraints = []
    for q in op.discrete_kernel():
        col = (np.broadcast_to(op.psi, sel.shape) * q)[sel]
        if np.any(col):
            constraints.append(col)
    if len(constraints) >= size:
        raise EmptyCollar(f"collar has only {size} unknowns")
    Y = np.linalg.qr(np.array(constraints).T)[0] if constraints else None
    if size <= DENSE_API_LIMIT or len(constraints) + 5 * sample_count >= size:
        # small collars: exact minimum over the whole constrained space
        dense = S.toarray()
        if Y is not None:
            Q = scipy.linalg.null_space(Y.T)
            dense = Q.T @ dense @ Q
        return float(scipy.linalg.eigvalsh(dense)[0])
    # Inverse iteration, Lanczos-accelerated: the constrained inverse is
    # S^-1 - Z G^-1 Z^T with Z = S^-1 Y, G = Y^T Z (u vanishes on K, so S is
    # nonsingular); its largest eigenvalue is 1 / lambda_min.
    lu = spla.splu(S)
    if Y is None:
        Z, G = np.zeros((size, 0)), np.zeros((0, 0))
    else:
        Z = lu.solve(np.ascontiguousarray(Y))
        G = Y.T @ Z
        G = 0.5 * (G + G.T)

    def inverse(b):
        x = lu.solve(np.asarray(b, dtype=float).ravel())
        if Z.shape[1]:
            x -= Z @ np.linalg.solve(G, Z.T @ b.ravel())
        return x

    T = spla.LinearOperator((size, size), matvec=inverse, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(size)
    if Y is not None:
        v0 -= Y @ (Y.T @ v0)
    top = spla.eigsh(T, k=1, which="LA", v0=v0, ncv=min(size - 1, max(sample_count, 20)),
                     tol=tol, maxiter=max_iterations)[0]
    return float(1.0 / top[0])


def _collar_matrix(op: NormalOperator, sel: np.ndarray):
    """Sparse matrix of A restricted to the selected entries, by stencil probing.

    A couples cells at most two apart per axis, so probes spaced five apart
    never overlap.  Returns the matrix and the flat index of every entry.
    """
    n = op.grid.n
    lead = sel.shape[:sel.ndim - n]
    index = -np.ones(sel.shape, dtype=np.int64)
    index[sel] = np.arange(int(sel.sum()))
    gshape = np.array(op.grid.shape)
    rows, cols, vals = [], [], []
    target = np.argwhere(sel)
    t_cell = target[:, len(lead):]
    for comp in np.ndindex(*lead) if lead else [()]:
        for offset in itertools.product(range(5), repeat=n):
            probe = np.zeros(sel.shape)
            sl = comp + tuple(slice(o, None, 5) for o in offset)
            probe[sl] = 1.0
            probe *= sel
            if not probe.any():
                continue
            out = op.matvec(probe)
            d = (t_cell - np.array(offset)) % 5
            d[d > 2] -= 5
            src = t_cell - d
            ok = np.all((src >= 0) & (src < gshape), axis=1)
            src_idx = np.full(len(target), -1, dtype=np.int64)
            src_idx[ok] = index[comp + tuple(src[ok].T)]
            ok &= src_idx >= 0
            value = out[tuple(target.T)]
            ok &= value != 0.0
            rows.append(index[tuple(target[ok].T)])
            cols.append(src_idx[ok])
            vals.append(value[ok])
    size = int(sel.sum())
    mat = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size)).tocsr()
    return mat, index
