import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compactglue.domain import Annulus, Ball, Grid, WeightConfig, build_domain
from compactglue.errors import BundleMismatch, DegenerateBasis
from compactglue.fields import (
    OperatorSpec,
    TensorField,
    random_compact_field,
    shell_indicator,
    weighted_inner,
    weighted_norm,
)
from compactglue.gluing import charge_field
from compactglue.kernel import (
    build_kernel_basis,
    flux_functionals,
    kernel_dimension,
    numeric_kernel_dim,
    project_off,
)

ORIGIN = (0.0, 0.0, 0.0)


def ball(n, cells=16, half=1.5):
    return build_domain(Ball((0.0,) * n, 1.0), Grid.cube(n, half, cells))


def gram_defect(basis):
    k = len(basis)
    g = np.array([[weighted_inner(basis.members[i], basis.members[j], basis.weight_config)
                   for j in range(k)] for i in range(k)])
    return np.max(np.abs(g - np.eye(k)))


@pytest.mark.parametrize("kind,n,dim", [
    ("GRAD", 1, 1), ("GRAD", 3, 1), ("KILLING", 2, 3), ("KILLING", 3, 6),
    ("CONF_KILLING", 3, 10),
])
def test_basis_size_and_orthonormality(kind, n, dim):
    spec = OperatorSpec(kind, n)
    basis = build_kernel_basis(spec, ball(n, {1: 64, 2: 32, 3: 20}[n]), WeightConfig.default(n))
    assert kernel_dimension(spec) == dim
    assert len(basis) == dim
    assert gram_defect(basis) <= 1e-10
    assert basis.gram_log.shape == (dim, dim)


def test_grad_member_is_normalized_constant():
    d = ball(2, 32)
    basis = build_kernel_basis(OperatorSpec("GRAD", 2), d, WeightConfig.default(2))
    vals = basis.members[0].components[0][d.mask]
    assert np.ptp(vals) <= 1e-12 * abs(vals[0])
    assert weighted_norm(basis.members[0], WeightConfig.default(2)) == pytest.approx(1.0, abs=1e-12)


def test_degenerate_basis_on_tiny_grid():
    # a single cell cannot carry six independent Killing fields
    d = build_domain(Ball((0.05, 0.05, 0.05), 0.06), Grid.cube(3, 1.0, 20))
    assert int(d.mask.sum()) == 1
    with pytest.raises(DegenerateBasis):
        build_kernel_basis(OperatorSpec("KILLING", 3), d, WeightConfig.default(3))


class TestProjectOff:
    @classmethod
    def setup_class(cls):
        cls.spec = OperatorSpec("KILLING", 3)
        cls.domain = ball(3, 16)
        cls.cfg = WeightConfig.default(3)
        cls.basis = build_kernel_basis(cls.spec, cls.domain, cls.cfg)

    def random(self, seed):
        return random_compact_field(self.spec.target_bundle, self.domain,
                                    np.random.default_rng(seed))

    def test_member_projects_to_zero(self):
        out, coeffs = project_off(self.basis.members[0], self.basis)
        assert coeffs[0] == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(coeffs[1:])) <= 1e-12
        assert weighted_norm(out, self.cfg) <= 1e-10

    def test_orthogonal_input_unchanged(self):
        f, _ = project_off(self.random(1), self.basis)
        g, coeffs = project_off(f, self.basis)
        scale = weighted_norm(f, self.cfg)
        assert np.max(np.abs(coeffs)) <= 1e-12 * scale
        assert weighted_norm(g - f, self.cfg) <= 1e-12 * scale

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1))
    def test_result_orthogonal(self, seed):
        f = self.random(seed)
        out, _ = project_off(f, self.basis)
        scale = weighted_norm(f, self.cfg)
        for v in self.basis.members:
            assert abs(weighted_inner(out, v, self.cfg)) <= 1e-10 * scale

    def test_bundle_mismatch(self):
        wrong = TensorField.zeros(self.spec.source_bundle, self.domain)
        with pytest.raises(BundleMismatch):
            project_off(wrong, self.basis)


def test_numeric_dim_grad_annulus():
    g = Grid.cube(2, 2.5, 48)
    d = build_domain(Annulus((0.0, 0.0), 1.0, 2.0), g)
    assert numeric_kernel_dim(OperatorSpec("GRAD", 2), d, WeightConfig.default(2)) == 1


def test_numeric_dim_killing_2d():
    assert numeric_kernel_dim(OperatorSpec("KILLING", 2), ball(2, 40), WeightConfig.default(2)) == 3


@pytest.mark.parametrize("kind,dim", [("GRAD", 1), ("KILLING", 6), ("CONF_KILLING", 10)])
def test_numeric_dim_stable_under_refinement(kind, dim):
    spec = OperatorSpec(kind, 3)
    cfg = WeightConfig.default(3)
    counts = [numeric_kernel_dim(spec, ball(3, cells), cfg) for cells in (16, 24)]
    assert counts == [dim, dim]


def test_numeric_dim_requires_candidates():
    with pytest.raises(ValueError):
        numeric_kernel_dim(OperatorSpec("GRAD", 2), ball(2, 20), WeightConfig.default(2), 3)


class TestFluxFunctionals:
    @classmethod
    def setup_class(cls):
        cls.grid = Grid.cube(3, 2.5, 48)
        cls.domain = build_domain(Annulus(ORIGIN, 1.0, 2.0), cls.grid)
        cls.spec = OperatorSpec("GRAD", 3)
        cls.basis = build_kernel_basis(cls.spec, cls.domain, WeightConfig.default(3))
        cls.width = 4.2 * cls.grid.h[0]

    def field(self, charge):
        return TensorField(self.spec.source_bundle,
                           charge_field(self.grid, ORIGIN, charge, 0.2), self.domain)

    def flux(self, T, radius=1.5):
        ind = shell_indicator(self.grid, ORIGIN, radius, self.width)
        return flux_functionals(T, self.basis, self.spec, ind).coefficients

    def test_zero_field(self):
        assert self.flux(TensorField.zeros(self.spec.source_bundle, self.domain)) == [0.0]

    def test_charge_ratio(self):
        assert self.flux(self.field(2.0))[0] / self.flux(self.field(1.0))[0] == pytest.approx(
            2.0, rel=0.01)

    def test_shell_independence(self):
        a, b = self.flux(self.field(1.0), 1.35)[0], self.flux(self.field(1.0), 1.65)[0]
        h = self.grid.h[0]
        assert abs(a - b) <= 10 * h ** 2 * abs(a)

    def test_report_length(self):
        ind = shell_indicator(self.grid, ORIGIN, 1.5, self.width)
        rep = flux_functionals(self.field(1.0), self.basis, self.spec, ind, "r=1.5")
        assert len(rep.coefficients) == len(self.basis)
        assert rep.to_dict()["surface_label"] == "r=1.5"
