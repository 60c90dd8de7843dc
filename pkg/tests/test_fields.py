import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compactglue.domain import Annulus, Ball, Grid, WeightConfig, build_domain, weight_arrays
from compactglue.errors import (
    BundleMismatch,
    DomainMismatch,
    IndicatorTooSharp,
    UnsupportedOperator,
    UnsupportedOrder,
)
from compactglue.fields import (
    BundleKind,
    BundleType,
    OperatorKind,
    OperatorSpec,
    TensorField,
    adjointness_defect,
    apply_adjoint,
    apply_forward,
    expand,
    l2_inner,
    random_compact_field,
    read_field_dump,
    reduce,
    shell_indicator,
    sobolev_norm,
    surface_flux,
    weighted_inner,
    weighted_norm,
    write_field_dump,
)
from compactglue.gluing import charge_field
from compactglue.problems import interval_domain, poly_bump, poly_bump_slope

CASES = [("GRAD", 1), ("GRAD", 2), ("GRAD", 3), ("KILLING", 2), ("KILLING", 3),
         ("CONF_KILLING", 3)]


def ball(n, cells=16, radius=1.0, half=1.5):
    return build_domain(Ball((0.0,) * n, radius), Grid.cube(n, half, cells))


def interior(domain, depth=2):
    """Cells whose full stencil (``depth`` cells) stays inside the mask."""
    inner = domain.mask.copy()
    for axis in range(domain.n):
        for s in range(1, depth + 1):
            inner &= np.roll(domain.mask, s, axis) & np.roll(domain.mask, -s, axis)
    return inner


def test_component_counts():
    assert BundleType(BundleKind.SCALAR, 3).component_count == 1
    assert BundleType(BundleKind.ONE_FORM, 3).component_count == 3
    assert BundleType(BundleKind.SYM2, 3).component_count == 6
    assert BundleType(BundleKind.SYM2_TRACEFREE, 3).component_count == 5
    assert BundleType(BundleKind.SYM2_TRACEFREE, 2).component_count == 2


def test_expand_reduce_roundtrip():
    rng = np.random.default_rng(3)
    for kind in BundleKind:
        b = BundleType(kind, 3)
        comps = rng.standard_normal((b.component_count, 4, 4, 4))
        assert np.array_equal(reduce(expand(comps, b), b), comps)
    b = BundleType(BundleKind.SYM2_TRACEFREE, 3)
    full = expand(rng.standard_normal((5, 4, 4, 4)), b)
    assert np.max(np.abs(np.einsum("ii...->...", full))) <= 1e-14
    assert np.array_equal(full, np.swapaxes(full, 0, 1))


def test_tensorfield_zeroed_off_mask():
    d = ball(2)
    f = TensorField(BundleType(BundleKind.ONE_FORM, 2), np.ones((2,) + d.grid.shape), d)
    assert np.all(f.components[:, ~d.mask] == 0)
    assert np.all(f.components[:, d.mask] == 1)


def test_conf_killing_rejects_n2():
    with pytest.raises(UnsupportedOperator, match="n = 2"):
        OperatorSpec("CONF_KILLING", 2)


def test_bundle_mismatch():
    d = ball(3)
    spec = OperatorSpec("GRAD", 3)
    with pytest.raises(BundleMismatch):
        apply_adjoint(spec, TensorField.zeros(spec.source_bundle, d))
    with pytest.raises(BundleMismatch):
        apply_forward(spec, TensorField.zeros(spec.target_bundle, d))


def test_grad_constant_annihilated():
    d = ball(3, 20)
    spec = OperatorSpec("GRAD", 3)
    u = TensorField(spec.target_bundle, np.full((1,) + d.grid.shape, 2.5), d)
    out = apply_adjoint(spec, u).components
    assert np.max(np.abs(out[:, interior(d, 1)])) == 0.0


def test_dilation_is_conformal_killing():
    d = ball(3, 20)
    spec = OperatorSpec("CONF_KILLING", 3)
    w = TensorField(spec.target_bundle, d.grid.centers(), d)
    out = apply_adjoint(spec, w).full()
    assert np.max(np.abs(out[..., interior(d, 1)])) <= 1e-13


@pytest.mark.parametrize("n", [2, 3])
def test_rotation_is_killing(n):
    d = ball(n, 20)
    spec = OperatorSpec("KILLING", n)
    p = d.grid.centers()
    v = np.zeros_like(p)
    v[0], v[1] = -p[1], p[0]
    out = apply_adjoint(spec, TensorField(spec.target_bundle, v, d)).full()
    assert np.max(np.abs(out[..., interior(d, 1)])) <= 1e-13


def test_conf_killing_output_tracefree():
    d = ball(3)
    spec = OperatorSpec("CONF_KILLING", 3)
    u = random_compact_field(spec.target_bundle, d, np.random.default_rng(0))
    full = apply_adjoint(spec, u).full()
    assert np.max(np.abs(np.einsum("ii...->...", full))) <= 1e-12


@pytest.mark.parametrize("kind,n", CASES)
def test_zero_field(kind, n):
    spec = OperatorSpec(kind, n)
    d = ball(n, 12)
    assert np.all(apply_forward(spec, TensorField.zeros(spec.source_bundle, d)).components == 0)


@pytest.mark.parametrize("kind,n", CASES)
def test_adjointness(kind, n):
    spec = OperatorSpec(kind, n)
    cells = {1: 64, 2: 24, 3: 14}[n]
    assert adjointness_defect(spec, ball(n, cells), pairs=4, seed=n) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), case=st.sampled_from(CASES),
       cells=st.integers(14, 18))
def test_adjointness_property(seed, case, cells):
    kind, n = case
    spec = OperatorSpec(kind, n)
    assert adjointness_defect(spec, ball(n, cells), pairs=1, seed=seed) <= 1e-12


def test_coulomb_divergence_second_order():
    spec = OperatorSpec("GRAD", 3)
    errs = []
    for cells in (32, 64):
        g = Grid.cube(3, 3.0, cells)
        d = build_domain(Annulus((0.0, 0.0, 0.0), 1.0, 2.0), g)
        r = np.sqrt(np.sum(g.centers() ** 2, axis=0))
        E = charge_field(g, (0.0, 0.0, 0.0), 1.0, 0.2)
        div = apply_forward(spec, TensorField(spec.source_bundle, E, d)).components[0]
        # boundary cells see the mask cut, so measure away from both spheres
        errs.append(np.max(np.abs(div[(r > 1.2) & (r < 1.8)])))
    h = 6.0 / 64
    assert errs[1] <= 2.0 * h ** 2
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_interval_forward_matches_derivative():
    spec = OperatorSpec("GRAD", 1)
    errs = []
    for cells in (256, 512):
        d = interval_domain(cells)
        t = d.grid.centers()[0]
        z = (t - 0.5) / 0.3
        U = TensorField(spec.source_bundle, poly_bump(z)[None], d)
        out = apply_forward(spec, U).components[0]
        errs.append(np.max(np.abs(out + poly_bump_slope(z) / 0.3)))
    assert errs[1] <= 500 * (1 / 512) ** 2
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_weighted_inner_single_cell():
    # a = 1, n = 2 makes psi = exp(-s/x); pick s so psi = 0.5 at one cell
    g = Grid((0.0, 0.0), (2.0, 2.0), (20, 20))
    d = build_domain(Ball((1.0, 1.0), 0.75), g)
    cell = (10, 10)
    s = d.x[cell] * math.log(2.0)
    cfg = WeightConfig(a=1, s=s)
    comps = np.zeros((1,) + g.shape)
    comps[(0,) + cell] = 1.0
    u = TensorField(BundleType(BundleKind.SCALAR, 2), comps, d)
    assert weighted_inner(u, u, cfg) == pytest.approx(0.0025, rel=1e-12)


def test_weighted_inner_symmetry_and_positivity():
    d = ball(2, 20)
    cfg = WeightConfig.default(2)
    rng = np.random.default_rng(1)
    b = BundleType(BundleKind.SYM2, 2)
    u, v = (random_compact_field(b, d, rng) for _ in range(2))
    assert weighted_inner(u, v, cfg) == pytest.approx(weighted_inner(v, u, cfg), rel=1e-14)
    assert weighted_inner(u, u, cfg) > 0
    assert weighted_inner(u, u, cfg, power=1) > 0


def test_weighted_inner_domain_mismatch():
    b = BundleType(BundleKind.SCALAR, 2)
    u = TensorField.zeros(b, ball(2, 20))
    v = TensorField.zeros(b, ball(2, 20, radius=0.8))
    with pytest.raises(DomainMismatch):
        weighted_inner(u, v, WeightConfig.default(2))


def test_sobolev_norm():
    d = ball(2, 20)
    cfg = WeightConfig.default(2)
    u = random_compact_field(BundleType(BundleKind.ONE_FORM, 2), d, np.random.default_rng(2))
    assert sobolev_norm(u, cfg, 0) == pytest.approx(weighted_norm(u, cfg), rel=1e-14)
    assert sobolev_norm(u * 2.0, cfg, 1) == pytest.approx(2 * sobolev_norm(u, cfg, 1), rel=1e-14)
    assert sobolev_norm(u, cfg, 1) > sobolev_norm(u, cfg, 0)
    with pytest.raises(UnsupportedOrder):
        sobolev_norm(u, cfg, 2)


def test_sobolev_norm_vanishes_on_clamped_region():
    # with a huge s every psi underflows
    d = ball(2, 20)
    cfg = WeightConfig(a=1, s=1e4)
    assert not np.any(weight_arrays(d, cfg).psi)
    u = TensorField(BundleType(BundleKind.SCALAR, 2), np.ones((1,) + d.grid.shape), d)
    assert sobolev_norm(u, cfg, 1) == 0.0


class TestSurfaceFlux:
    @classmethod
    def setup_class(cls):
        g = Grid.cube(3, 2.5, 64)
        cls.grid = g
        cls.domain = build_domain(Annulus((0.0, 0.0, 0.0), 1.0, 2.0), g)
        cls.spec = OperatorSpec("GRAD", 3)
        cls.E = TensorField(cls.spec.source_bundle, charge_field(g, (0.0, 0.0, 0.0), 1.0, 0.2),
                            cls.domain)
        cls.one = TensorField(cls.spec.target_bundle, np.ones((1,) + g.shape), cls.domain)
        cls.width = 4.2 * g.h[0]

    def flux(self, W, radius=1.5):
        ind = shell_indicator(self.grid, (0.0, 0.0, 0.0), radius, self.width)
        return surface_flux(W, self.one, self.spec, ind)

    def test_gauss_law(self):
        assert self.flux(self.E) == pytest.approx(-1.0, rel=0.02)

    def test_shell_placement(self):
        assert self.flux(self.E, 1.4) == pytest.approx(self.flux(self.E, 1.6), abs=1e-3)

    def test_linearity(self):
        rng = np.random.default_rng(4)
        W2 = random_compact_field(self.spec.source_bundle, self.domain, rng)
        total = self.flux(self.E + W2)
        assert total == pytest.approx(self.flux(self.E) + self.flux(W2), rel=1e-12, abs=1e-14)

    def test_disjoint_support(self):
        r = np.sqrt(np.sum(self.grid.centers() ** 2, axis=0))
        far = TensorField(self.spec.source_bundle, self.E.components * (r > 1.85), self.domain)
        assert self.flux(far) == 0.0

    def test_sharp_indicator_rejected(self):
        ind = shell_indicator(self.grid, (0.0, 0.0, 0.0), 1.5, 2 * self.grid.h[0])
        with pytest.raises(IndicatorTooSharp):
            surface_flux(self.E, self.one, self.spec, ind)


def test_field_dump_roundtrip(tmp_path):
    d = ball(2, 14)
    b = BundleType(BundleKind.ONE_FORM, 2)
    f = random_compact_field(b, d, np.random.default_rng(5), inset_cells=0)
    path = tmp_path / "f.csv"
    write_field_dump(f, path)
    header = path.read_text().splitlines()[0].split()
    assert header[0] == "2" and header[1:3] == ["14", "14"]
    assert header[-2:] == ["ONE_FORM", "2"]
    info, rows = read_field_dump(path)
    assert rows.shape == (int(d.mask.sum()), 2 + 1 + 2)
    idx = rows[:, :2].astype(int)
    assert np.array_equal(idx, np.argwhere(d.mask))
    assert np.array_equal(rows[:, 2], d.x[d.mask])
    assert np.array_equal(rows[:, 3:].T, f.components[:, d.mask])


def test_l2_inner_matches_manual():
    d = ball(1, 40)
    b = BundleType(BundleKind.SCALAR, 1)
    rng = np.random.default_rng(6)
    u, v = (random_compact_field(b, d, rng) for _ in range(2))
    manual = float(np.sum(u.components * v.components)) * d.grid.h[0]
    assert l2_inner(u, v) == pytest.approx(manual, rel=1e-14)
    assert OperatorSpec("GRAD", 1).kind is OperatorKind.GRAD
