import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compactglue.domain import (
    Annulus,
    Ball,
    CollarSpec,
    Difference,
    Grid,
    WeightConfig,
    build_cutoff,
    build_domain,
    eval_weights,
    region,
    shape_from_dict,
    smoothstep5,
    weight_arrays,
    weights_at,
)
from compactglue.errors import InvalidCollars, OutsideDomain, ShapeTooLarge, UnsupportedDimension
from compactglue.problems import interval_domain


def test_grid_spacing_and_centers():
    g = Grid((0.0, -1.0), (1.0, 1.0), (10, 4))
    assert g.n == 2
    assert g.h == pytest.approx((0.1, 0.5))
    c = g.centers()
    assert c.shape == (2, 10, 4)
    assert c[0, 0, 0] == pytest.approx(0.05)
    assert c[1, 0, -1] == pytest.approx(0.75)


def test_grid_rejects_bad_dimension():
    with pytest.raises(UnsupportedDimension):
        Grid((0,) * 4, (1,) * 4, (4,) * 4)
    with pytest.raises(UnsupportedDimension):
        Grid.cube(5, 1.0, 8)


def test_ball_mask_matches_definition():
    g = Grid.cube(3, 2.0, 64)
    d = build_domain(Ball((0.0, 0.0, 0.0), 1.0), g)
    r = np.sqrt(np.sum(g.centers() ** 2, axis=0))
    assert np.array_equal(d.mask, r < 1.0)
    assert np.all(d.x[d.mask] > 0)
    assert np.all(d.x[~d.mask] == 0)


def test_annulus_distance_and_labels():
    g = Grid.cube(3, 3.0, 32)
    d = build_domain(Annulus((0.0, 0.0, 0.0), 1.0, 2.0), g)
    r = np.sqrt(np.sum(g.centers() ** 2, axis=0))
    expected = np.minimum(r - 1.0, 2.0 - r)
    assert np.allclose(d.x[d.mask], expected[d.mask], atol=1e-14)
    assert d.boundary_split == {"inner sphere": "d1", "outer sphere": "d2"}


def test_interval_distance():
    d = interval_domain(512)
    p = d.grid.centers()[0]
    assert np.allclose(d.x[d.mask], np.minimum(p, 1 - p)[d.mask], atol=1e-15)
    assert int(d.mask.sum()) == 512


def test_difference_of_balls():
    g = Grid.cube(2, 2.0, 40)
    shape = Difference(Ball((0.0, 0.0), 1.5), Ball((0.2, 0.0), 0.5))
    d = build_domain(shape, g)
    p = g.centers()
    r_in = np.sqrt((p[0] - 0.2) ** 2 + p[1] ** 2)
    r_out = np.sqrt(np.sum(p ** 2, axis=0))
    assert np.array_equal(d.mask, (r_in > 0.5) & (r_out < 1.5))


def test_shape_too_large():
    with pytest.raises(ShapeTooLarge):
        build_domain(Ball((0.0, 0.0), 1.0), Grid.cube(2, 1.05, 40))


def test_dimension_mismatch():
    with pytest.raises(UnsupportedDimension):
        build_domain(Ball((0.0, 0.0), 1.0), Grid.cube(3, 2.0, 8))


def test_shape_from_dict():
    s = shape_from_dict({"kind": "annulus", "center": [0, 0], "r_in": 1, "r_out": 2})
    assert isinstance(s, Annulus) and s.r_out == 2.0
    s = shape_from_dict({"kind": "DIFFERENCE", "outer": {"center": [0, 0], "radius": 2},
                         "inner": {"center": [0, 0], "radius": 1}})
    assert isinstance(s, Difference)
    with pytest.raises(ValueError):
        shape_from_dict({"kind": "torus"})


def test_region_has_no_coordinate():
    g = Grid.cube(2, 1.0, 8)
    r = region(g, np.ones(g.shape, bool))
    with pytest.raises(ValueError):
        r.coordinate()


def test_weight_examples():
    phi, psi, varphi = weights_at(0.5, 3, WeightConfig(a=2, s=1.0))
    assert phi == pytest.approx(0.25)
    assert psi == pytest.approx(0.5 * math.exp(-2.0), rel=1e-14)
    assert psi == pytest.approx(0.06767, abs=1e-5)
    assert varphi == pytest.approx(0.5 ** 4 * math.exp(-2.0), rel=1e-14)
    for a in (1, 2, 3):
        assert weights_at(1.0, 3, WeightConfig(a=a))[1] == pytest.approx(math.exp(-1.0), rel=1e-14)


def test_weight_clamp():
    cfg = WeightConfig(a=2, s=1.0)
    # e^{-1/x} < 1e-300 once x < 1/690.8
    assert weights_at(1.0 / 700.0, 3, cfg)[1] == 0.0
    assert weights_at(1.0 / 600.0, 3, cfg)[1] > 0.0


def test_eval_weights_outside():
    d = build_domain(Ball((0.0,), 0.5), Grid((-1.0,), (1.0,), (20,)))
    with pytest.raises(OutsideDomain):
        eval_weights(d, WeightConfig.default(1), (0,))
    phi, psi, _ = eval_weights(d, WeightConfig.default(1), (10,))
    assert phi == pytest.approx(d.x[10] ** 2)


def test_weight_config_validation():
    for bad in ({"a": 1, "s": 0.0}, {"a": 0}, {"a": 1, "m": 2}, {"a": 1, "underflow_floor": 0.0}):
        with pytest.raises(ValueError):
            WeightConfig(**bad)
    assert WeightConfig.default(3).a == 2
    assert WeightConfig.default(2).a == 1


def test_weight_identity():
    # psi^2 / varphi * phi^m = x^{2(a-n+m)} e^{-s/x}
    g = Grid.cube(3, 1.25, 24)
    d = build_domain(Ball((0.0, 0.0, 0.0), 1.0), g)
    cfg = WeightConfig(a=2, s=0.7)
    w = weight_arrays(d, cfg)
    x = d.x[d.mask]
    lhs = w.psi[d.mask] ** 2 / w.varphi[d.mask] * w.phi[d.mask]
    rhs = x ** (2 * (2 - 3 + 1)) * np.exp(-0.7 / x)
    assert np.allclose(lhs, rhs, rtol=1e-13, atol=0)


def test_distance_is_lipschitz():
    g = Grid.cube(2, 3.0, 60)
    d = build_domain(Annulus((0.0, 0.0), 1.0, 2.5), g)
    for axis in range(2):
        jump = np.abs(np.diff(d.x, axis=axis))
        assert np.all(jump <= g.h[axis] * (1 + 1e-12))


class TestCutoff:
    def setup_method(self):
        g = Grid.cube(3, 3.0, 48)
        self.domain = build_domain(Annulus((0.0, 0.0, 0.0), 1.0, 2.0), g)
        self.r = np.sqrt(np.sum(g.centers() ** 2, axis=0))
        self.chi = build_cutoff(self.domain, CollarSpec(1.4, 1.6))

    def test_collar_values(self):
        v = self.chi.values
        assert np.all(v[self.r <= 1.4] == 1.0)
        assert np.all(v[self.r >= 1.6] == 0.0)
        assert np.all((v >= 0) & (v <= 1))

    def test_midpoint_and_slope(self):
        assert float(smoothstep5(0.5)) == 0.5
        t = np.linspace(0, 1, 100001)
        slope = np.max(np.gradient(smoothstep5(t), t))
        assert slope == pytest.approx(1.875, rel=1e-6)

    def test_gradient_bound(self):
        w = self.chi.transition_width
        h = self.domain.grid.h[0]
        grads = np.gradient(self.chi.values, h)
        mag = np.sqrt(sum(gc ** 2 for gc in grads))
        assert mag.max() <= 1.875 / w + 10 * h

    def test_monotone_in_radius(self):
        order = np.argsort(self.r.ravel(), kind="stable")
        vals = self.chi.values.ravel()[order]
        assert np.all(np.diff(vals) <= 1e-15)

    def test_overlap_rejected(self):
        with pytest.raises(InvalidCollars):
            build_cutoff(self.domain, CollarSpec(1.6, 1.4))
        with pytest.raises(InvalidCollars):
            build_cutoff(self.domain, CollarSpec(0.9, 1.5))


@settings(max_examples=40, deadline=None)
@given(x=st.floats(1e-3, 5.0), a=st.integers(1, 4), s=st.floats(0.1, 3.0), n=st.integers(1, 3))
def test_weight_formula_property(x, a, s, n):
    cfg = WeightConfig(a=a, s=s)
    phi, psi, varphi = weights_at(x, n, cfg)
    log_psi = 2 * (a - n / 2) * math.log(x) - s / x
    expected = math.exp(log_psi) if log_psi > math.log(1e-300) else 0.0
    assert psi == pytest.approx(expected, rel=1e-12, abs=1e-300)
    assert phi == pytest.approx(x * x)
