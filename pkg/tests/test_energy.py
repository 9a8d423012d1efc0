import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from strongloc.energy import (Problem, assemble_energy, bar_collocation, boundary_loss, element_forces,
                              elastic_strain, gated_loss, plastic_measures, postprocess,
                              shear_collocation, total_strain)
from strongloc.errors import ConfigError
from strongloc.fields import BandGeometry, FieldModel, RegularField1D, RegularField2D, band_activation
from strongloc.material import MaterialSpec, ShearYieldProfile
from strongloc.oracle import solve_bar

BAR = MaterialSpec(E=2.0, sigma_p=1.0, Hbar=-2.0 / 11.0, h=1.0)
SHEAR = MaterialSpec(E=5.6, sigma_p=ShearYieldProfile(), Hbar=-1.0, h=0.1, N=2, nu=0.4)
ONES = lambda x: np.ones_like(np.asarray(x, dtype=float))


def bar_model(values=None, n_nodes=11, y_p=5.0, jump=0.0, c=1.0, beta=100.0):
    reg = RegularField1D.uniform(10.0, n_nodes, values)
    return FieldModel(reg, BandGeometry(dim=1, y_p=y_p, c=c, beta=beta, jump=jump))


def shear_model(seed=0, alpha=math.pi / 2, y_p=0.5, jump=0.0, zero=False):
    reg = RegularField2D() if zero else RegularField2D.glorot(seed=seed)
    return FieldModel(reg, BandGeometry(dim=2, alpha=alpha, y_p=y_p, c=0.1, jump=jump))


def oracle_displacement(knots):
    # elastic state at unit force: u(x) = int_0^x ds / (E A(s))
    return 2.5 * (np.arctan((knots - 5.0) / 5.0) + math.pi / 4)


class TestPlasticMeasures:
    def test_no_jump(self):
        eps_p, p = plastic_measures(shear_model(), np.array([[0.5, 0.5], [0.1, 0.9]]))
        assert np.all(eps_p == 0) and np.all(p == 0)

    def test_outside_band(self):
        m = bar_model(jump=2.0, c=0.1)
        _, p = plastic_measures(m, [5.0 + 10 * 0.1 + 0.01, 5.0 - 10 * 0.1 - 0.01])
        assert np.all(p <= 1e-8 * 2.0)

    def test_midpoint_sharp_limit(self):
        m = bar_model(jump=2.0, c=0.5, beta=1e4)
        _, p = plastic_measures(m, [5.0])
        assert p[0] == pytest.approx(2.0 / 0.5, rel=1e-12)

    @given(st.floats(-2, 2), st.floats(0, math.pi))
    def test_nonnegative(self, jump, alpha):
        xs = np.linspace(0, 1, 21)
        X = np.stack(np.meshgrid(xs, xs), -1).reshape(-1, 2)
        _, p = plastic_measures(shear_model(alpha=alpha, jump=jump), X)
        assert np.all(p >= 0)

    def test_tensor_measure_scales_2d(self):
        X = np.array([[0.5, 0.5]])
        m = shear_model(jump=0.3)
        _, pj = plastic_measures(m, X, "jump")
        _, pt = plastic_measures(m, X, "tensor")
        assert pt[0] == pytest.approx(pj[0] / math.sqrt(2), rel=1e-14)

    @pytest.mark.parametrize("alpha", [0.0, 0.4, math.pi / 2])
    def test_strain_split_matches_finite_differences(self, alpha, rng):
        # eps_e + eps_p must equal the symmetric gradient of u_R + u_J
        m = shear_model(seed=4, alpha=alpha, y_p=0.5, jump=0.2)
        X = rng.uniform(0.2, 0.8, (20, 2))
        h = 1e-6
        G = np.zeros((20, 2, 2))
        for d in range(2):
            e = np.zeros(2)
            e[d] = h
            G[:, :, d] = (m.displacement(X + e) - m.displacement(X - e)) / (2 * h)
        sym = 0.5 * (G + np.swapaxes(G, 1, 2))
        np.testing.assert_allclose(total_strain(m, X), sym, atol=1e-6)

    def test_strain_split_1d(self, rng):
        m = bar_model(rng.normal(size=11), jump=1.3, y_p=4.7, c=0.8)
        x = rng.uniform(0.5, 9.5, 30)
        # stay away from knots, where the regular strain jumps
        x = x[np.abs(x - np.round(x)) > 1e-3]
        h = 1e-7
        fd = (m.displacement(x + h) - m.displacement(x - h)) / (2 * h)
        eps_p, _ = plastic_measures(m, x)
        np.testing.assert_allclose(elastic_strain(m, x) + eps_p, fd, atol=1e-6)


class TestAssembly:
    def test_zero_fields(self):
        br = assemble_energy(bar_model(), BAR, bar_collocation())
        assert (br.elastic, br.plastic_quadratic, br.plastic_linear, br.total) == (0, 0, 0, 0)

    @pytest.mark.parametrize("delta", [0.5, 4.5])
    def test_uniform_bar_closed_form(self, delta):
        m = bar_model(np.linspace(0.0, delta, 11))
        expected = 0.5 * 2.0 * (delta / 10) ** 2 * 10
        trap = assemble_energy(m, BAR, bar_collocation(area=ONES, trapezoid=True))
        assert trap.elastic == pytest.approx(expected, rel=1e-13)
        riemann = assemble_energy(m, BAR, bar_collocation(area=ONES))
        # end points each carry a full cell under the Riemann rule
        assert riemann.elastic == pytest.approx(expected * 1001 / 1000, rel=1e-13)
        assert riemann.plastic_linear == 0.0 and riemann.plastic_quadratic == 0.0

    def test_tapered_bar_oracle(self):
        k = np.linspace(0, 10, 1001)
        m = bar_model(oracle_displacement(k), n_nodes=1001)
        expected = 0.25 * 5 * math.pi / 2
        assert expected == pytest.approx(1.9635, abs=5e-5)
        trap = assemble_energy(m, BAR, bar_collocation(trapezoid=True))
        assert trap.elastic == pytest.approx(expected, rel=2e-6)
        assert assemble_energy(m, BAR, bar_collocation()).elastic == pytest.approx(expected, rel=1e-3)

    def test_trapezoid_rule_is_second_order(self):
        f = lambda x: np.cos(0.3 * x) ** 2
        exact = 5.0 + math.sin(6.0) / 1.2
        errs = []
        for n in (226, 451, 901):
            q = bar_collocation(n=n, trapezoid=True)
            errs.append(abs(np.sum(q.weights / q.area * f(q.points)) - exact))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
        assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)

    def test_breakdown_sums(self, rng):
        m = bar_model(rng.normal(size=11), jump=1.5, c=1.0)
        br = assemble_energy(m, BAR, bar_collocation())
        assert br.total == br.elastic + br.plastic_quadratic + br.plastic_linear
        assert br.plastic_quadratic < 0 < br.plastic_linear

    def test_collocation_points_nearby_insensitive(self, rng):
        m = bar_model(oracle_displacement(np.linspace(0, 10, 11)), jump=1.0)
        vals = [assemble_energy(m, BAR, bar_collocation(n=n, trapezoid=True)).total for n in (901, 1001, 1101)]
        assert max(vals) - min(vals) <= 1e-3 * abs(vals[1])

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            Problem(bar_model(), SHEAR, bar_collocation())


class TestBoundaryLoss:
    def test_satisfied(self):
        m = bar_model(np.linspace(0, 4.5, 11))
        assert boundary_loss(m, bar_collocation(delta=4.5)) == 0.0

    def test_bar_zero_field(self):
        assert boundary_loss(bar_model(), bar_collocation(delta=4.5)) == pytest.approx(10.125, rel=1e-15)

    def test_shear_zero_field(self):
        q = shear_collocation(delta=0.4)
        assert boundary_loss(shear_model(zero=True), q, SHEAR) == pytest.approx(0.08, rel=1e-14)

    def test_periodic_mismatch_counts(self):
        m = shear_model(seed=2)
        free = boundary_loss(m, shear_collocation(lateral="free"), SHEAR)
        tied = boundary_loss(m, shear_collocation(lateral="periodic"), SHEAR)
        assert tied > free

    def test_gradient_matches_finite_differences(self, rng):
        m = shear_model(seed=5, alpha=1.3, y_p=0.45, jump=0.2)
        # nonzero biases keep the corner points off the ReLU kinks
        m = m.with_theta(m.theta() + 0.05 * rng.normal(size=m.n_params))
        prob = Problem(m, SHEAR, shear_collocation(21, 21, delta=0.4))
        theta = m.theta()
        _, g = prob.bc_loss(theta)
        for k in rng.choice(theta.size, 12, replace=False).tolist() + [theta.size - 3, theta.size - 2, theta.size - 1]:
            e = np.zeros_like(theta)
            e[k] = 1e-6
            fd = (prob.bc_loss(theta + e, False)[0] - prob.bc_loss(theta - e, False)[0]) / 2e-6
            assert g[k] == pytest.approx(fd, rel=1e-5, abs=1e-8)


class TestEnergyGradient:
    @pytest.mark.parametrize("dim", [1, 2])
    def test_matches_finite_differences(self, dim, rng):
        if dim == 1:
            m = bar_model(rng.normal(size=11), y_p=4.6, jump=1.2, c=1.0)
            prob = Problem(m, BAR, bar_collocation(delta=4.5))
        else:
            m = shear_model(seed=6, alpha=1.4, y_p=0.48, jump=0.3)
            m = m.with_theta(m.theta() + 0.05 * rng.normal(size=m.n_params))
            prob = Problem(m, SHEAR, shear_collocation(21, 21, delta=0.55))
        theta = m.theta()
        _, g = prob.energy(theta)
        idx = list(range(theta.size - m.band.n_trainable, theta.size))
        idx += rng.choice(theta.size - m.band.n_trainable, 8, replace=False).tolist()
        for k in idx:
            e = np.zeros_like(theta)
            e[k] = 1e-6
            fd = (prob.energy(theta + e, False)[0].total - prob.energy(theta - e, False)[0].total) / 2e-6
            assert g[k] == pytest.approx(fd, rel=1e-4, abs=1e-7)


class TestGatedLoss:
    def test_gate_active(self):
        assert gated_loss(bar_model(), BAR, bar_collocation(delta=4.5), lam=1e-4) == pytest.approx(10.125)

    def test_gate_open(self):
        k = np.linspace(0, 10, 1001)
        m = bar_model(oracle_displacement(k), n_nodes=1001)
        q = bar_collocation(delta=float(oracle_displacement(np.array([10.0]))[0]), trapezoid=True)
        assert gated_loss(m, BAR, q) == pytest.approx(1.9635, abs=1e-4)

    def test_guard(self):
        # a large jump makes the softening term dominate; the regular part
        # cancels it at the knots so the boundary conditions hold
        band = BandGeometry(dim=1, y_p=5.0, c=1.0, jump=30.0)
        k = np.linspace(0, 10, 11)
        phi = band_activation(k, band)
        m = FieldModel(RegularField1D(k, -30.0 * phi), band)
        soft = MaterialSpec(E=2.0, sigma_p=1.0, Hbar=-10.0, h=1.0)
        q = bar_collocation(delta=0.0)
        prob = Problem(m, soft, q)
        raw = prob.energy(m.theta(), False)[0].total
        bc = prob.bc_loss(m.theta(), False)[0]
        assert bc == pytest.approx(0.0, abs=1e-20) and raw < 0
        assert gated_loss(m, soft, q, abs_energy_guard=True) == pytest.approx(-raw)
        assert gated_loss(m, soft, q) == pytest.approx(raw)

    def test_lambda_positive(self):
        with pytest.raises(ConfigError):
            gated_loss(bar_model(), BAR, bar_collocation(), lam=0.0)


class TestPostprocess:
    def test_zero_fields(self):
        out = postprocess(bar_model(), BAR, bar_collocation())
        for key in ("u", "eps", "eps_p", "p", "sigma", "force"):
            assert np.all(out[key] == 0)

    def test_oracle_force_uniform(self):
        k = np.linspace(0, 10, 11)
        s = solve_bar(4.5, BAR)
        m = bar_model(s.P * oracle_displacement(k), y_p=5.0, jump=0.0)
        _, f = element_forces(m, BAR)
        # element strains are secants of the exact field; force error is O(h^2)
        np.testing.assert_allclose(f, s.P, rtol=5e-3)

    def test_2d_uniform_shear(self):
        # exact simple shear: u = (gamma_e y, 0) plus the band jump
        # one hidden unit carrying y + 1, read out as gamma_e (y + 1) - gamma_e
        theta = np.array([0.0, 1.0, 1.0, 0.15, 0.0, -0.15, 0.0])
        reg = RegularField2D((2, 1, 2), theta)
        m = FieldModel(reg, BandGeometry(dim=2, alpha=math.pi / 2, y_p=0.5, c=0.1, jump=-0.35))
        out = postprocess(m, SHEAR, shear_collocation(21, 21, delta=0.55))
        np.testing.assert_allclose(out["sigma_12"], SHEAR.mu * 0.15, rtol=1e-12)
        # tangent is (-1, 0) for a horizontal band, so the jump points along +x
        phi = band_activation(np.stack([out["x"], out["y"]], 1), m.band)
        np.testing.assert_allclose(out["u"], 0.15 * out["y"] + 0.35 * phi, atol=1e-15)
        np.testing.assert_allclose(out["v"], 0.0, atol=1e-16)

    def test_element_forces_1d_only(self):
        with pytest.raises(ConfigError):
            element_forces(shear_model(), SHEAR)
