import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from mpinv import solver
from mpinv.ensemble import build_ensemble
from mpinv.spectra import EntryLaw, PopulationSpectrum

ISO = PopulationSpectrum.isotropic(1.0)
TWO = PopulationSpectrum((1.0, 3.0), (0.5, 0.5))


def _upper_points(k, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(-3, 6, k) + 1j * rng.uniform(0.05, 3, k)


class TestCompanion:
    def test_closed_form_at_i(self):
        m = solver.solve_m_companion(1j, 2.0, ISO)
        assert abs(m - solver.closed_form_companion(1j, 2.0, 1.0)) < 1e-10
        assert solver.companion_residual(m, 1j, 2.0, ISO) < 1e-12
        assert m.imag > 0

    def test_large_w(self):
        w = 1e6j
        m = solver.solve_m_companion(w, 2.0, TWO)
        assert abs(m + 1 / w) < 1e-3 / abs(w)

    def test_real_axis_needs_boundary(self):
        with pytest.raises(ValueError):
            solver.solve_m_companion(1.0, 2.0, ISO)
        m = solver.solve_m_companion(1.0, 2.0, ISO, boundary=True)
        assert m.imag > 0

    @settings(max_examples=40, deadline=None)
    @given(
        st.floats(-5, 10),
        st.floats(1e-3, 5),
        st.floats(0.2, 6),
        st.sampled_from([ISO, TWO, PopulationSpectrum((0.5, 1.0, 4.0), (0.2, 0.3, 0.5))]),
    )
    def test_herglotz_and_residual(self, x, y, c, H):
        w = complex(x, y)
        m = solver.solve_m_companion(w, c, H)
        assert m.imag > 0
        assert solver.companion_residual(m, w, c, H) < 1e-12 * max(1.0, abs(m))
        assert abs(m) <= 1.0 / y + 1e-12

    def test_lower_half_plane_conjugate(self):
        w = 0.7 - 0.4j
        assert solver.solve_m_companion(w, 3.0, TWO) == pytest.approx(np.conj(solver.solve_m_companion(np.conj(w), 3.0, TWO)), abs=1e-14)

    def test_vectorised(self):
        ws = _upper_points(50, 1)
        ms = solver.solve_m_companion(ws, 2.5, TWO)
        for w, m in zip(ws[:5], ms[:5]):
            assert m == pytest.approx(solver.solve_m_companion(w, 2.5, TWO), abs=1e-12)

    def test_nonconvergence_reported(self):
        with pytest.raises(solver.ConvergenceError) as info:
            solver.solve_m_companion(1.0 + 1e-12j, 2.0, ISO, max_iter=3, newton_after=10)
        assert info.value.residual > 0
        assert info.value.location is not None


class TestRelations:
    def test_round_trip(self):
        w = 1j
        m = solver.solve_m_companion(w, 2.0, ISO)
        mf = solver.companion_to_primary(m, w, 2.0)
        assert abs(solver.primary_to_companion(mf, w, 2.0) - m) < 1e-14

    def test_c_one_identity(self):
        assert solver.companion_to_primary(0.3 + 0.2j, 1.5j, 1.0) == 0.3 + 0.2j
        with pytest.raises(ValueError):
            solver.companion_to_primary(1.0, 1j, 0.0)

    def test_primary_matches_sample(self):
        ens = build_ensemble(EntryLaw("gaussian"), ISO, 2000, 1000, seed=4)
        ev = np.linalg.eigvalsh(ens.S)
        emp = np.mean(1.0 / (ev - 1j))
        assert abs(emp - solver.solve_m_F(1j, 2.0, ISO)) < 0.02


class TestMP:
    def test_mp_residual(self):
        z = 1 + 1j
        m = solver.solve_m_P(z, 2.0, ISO)
        assert solver.mp_residual(z, m, 2.0, ISO) < 1e-10
        assert m.imag > 0

    def test_closed_form_random_points(self):
        zs = _upper_points(20, 7)
        diff = np.abs(solver.solve_m_P(zs, 2.0, ISO) - solver.closed_form_mP(zs, 2.0, 1.0))
        assert diff.max() < 1e-8

    @pytest.mark.parametrize("c, s2", [(4.0, 0.5), (1.3, 2.0), (10.0, 1.0)])
    def test_closed_form_other_parameters(self, c, s2):
        zs = np.concatenate([_upper_points(10, 2), np.conj(_upper_points(10, 3))])
        H = PopulationSpectrum.isotropic(s2)
        assert np.max(np.abs(solver.solve_m_P(zs, c, H) - solver.closed_form_mP(zs, c, s2))) < 1e-8

    def test_closed_form_at_i(self):
        assert abs(solver.closed_form_mP(1j, 2.0, 1.0) - solver.solve_m_P(1j, 2.0, ISO)) < 1e-8

    @pytest.mark.parametrize("H", [ISO, TWO])
    def test_mass_identities(self, H):
        c = 3.0
        y = 1e7
        assert abs(-1j * y * solver.solve_m_P(1j * y, c, H) - 1.0) < 1e-6
        y = 1e-6
        assert abs(1j * y * solver.solve_m_P(1j * y, c, H) + (1 - 1 / c)) < 1e-4

    def test_atom_closed_form(self):
        y = 1e-6
        assert abs(1j * y * solver.closed_form_mP(1j * y, 2.0, 1.0) + 0.5) < 1e-4
        z = 1e6 + 1e6j
        assert abs(z * solver.closed_form_mP(z, 2.0, 1.0) + 1.0) < 1e-5

    def test_needs_c_above_one(self):
        with pytest.raises(ValueError):
            solver.solve_m_P(1j, 0.5, ISO)


class TestDensity:
    def test_isotropic_values(self):
        assert solver.density_isotropic(1.0, 2.0, 1.0) == pytest.approx(1 / (2 * math.pi), abs=1e-12)
        lo, hi = solver.isotropic_edges(2.0, 1.0)
        assert solver.density_isotropic(lo, 2.0, 1.0) == pytest.approx(0.0, abs=1e-6)
        assert solver.density_isotropic(hi, 2.0, 1.0) == pytest.approx(0.0, abs=1e-6)
        assert solver.density_isotropic(6.0, 2.0, 1.0) == 0.0
        assert hi == pytest.approx(3 + 2 * math.sqrt(2))

    @pytest.mark.parametrize("c, s2", [(2.0, 1.0), (4.0, 1.0), (1.5, 0.7)])
    def test_isotropic_mass(self, c, s2):
        lo, hi = solver.isotropic_edges(c, s2)
        mass, _ = integrate.quad(solver.density_isotropic, lo, hi, args=(c, s2), epsabs=1e-12, limit=200)
        assert mass == pytest.approx(1 / c, abs=1e-6)

    def test_pushforward_of_mp_density(self):
        # density of P at x equals f_F(1/x)/x^2 with f_F the MP density of S
        c = 2.0
        a, b = (1 - math.sqrt(c)) ** 2, (1 + math.sqrt(c)) ** 2

        def f_F(lam):
            return math.sqrt(max((b - lam) * (lam - a), 0.0)) / (2 * math.pi * c * lam)

        lo, hi = solver.isotropic_edges(c, 1.0)
        lhs, _ = integrate.quad(lambda x: x * solver.density_isotropic(x, c, 1.0), lo, hi, epsabs=1e-12, limit=200)
        rhs, _ = integrate.quad(lambda lam: f_F(lam) / lam, a, b, epsabs=1e-12, limit=200)
        assert lhs == pytest.approx(rhs, abs=1e-6)
        for x in (0.3, 1.0, 4.0):
            assert solver.density_isotropic(x, c, 1.0) == pytest.approx(f_F(1 / x) / x**2, abs=1e-12)

    def test_from_stieltjes(self):
        prov = lambda z: solver.solve_m_P(z, 2.0, ISO)  # noqa: E731
        val = solver.density_from_stieltjes(1.0, 1e-5, prov)
        assert val == pytest.approx(0.1592, abs=1e-3)
        assert solver.density_from_stieltjes(20.0, 1e-5, prov) < 1e-3
        exact = 1 / (2 * math.pi)
        errs = [abs(solver.density_from_stieltjes(1.0, e, prov) - exact) for e in (1e-2, 1e-3, 1e-4)]
        assert errs[0] > errs[1] > errs[2]
        rich = solver.density_from_stieltjes(1.0, 1e-5, prov, richardson=True)
        assert abs(rich - exact) < 1e-6
        with pytest.raises(ValueError):
            solver.density_from_stieltjes(1.0, 0.0, prov)

    def test_density_P_matches_closed_form(self):
        x = np.linspace(0.2, 5.7, 30)
        np.testing.assert_allclose(solver.density_P(x, 2.0, ISO), solver.density_isotropic(x, 2.0, 1.0), atol=1e-7)


class TestDerivative:
    @pytest.mark.parametrize("w", [1j, 0.5 + 0.3j, -2 + 0.1j])
    def test_finite_difference(self, w):
        h = 1e-6
        fd = (solver.solve_m_companion(w + h, 2.0, TWO) - solver.solve_m_companion(w - h, 2.0, TWO)) / (2 * h)
        an = solver.stieltjes_derivative(w, 2.0, TWO)
        assert abs(an - fd) < 1e-6 * abs(an)

    def test_large_w(self):
        w = 1e5j
        assert abs(solver.stieltjes_derivative(w, 2.0, ISO) * w**2 - 1.0) < 1e-4

    def test_companion_relation(self):
        c, w, h = 2.5, 0.4 + 0.9j, 1e-6
        mF = lambda u: solver.solve_m_F(u, c, TWO)  # noqa: E731
        dF = (mF(w + h) - mF(w - h)) / (2 * h)
        assert solver.stieltjes_derivative(w, c, TWO) == pytest.approx((1 - c) / w**2 + c * dF, abs=1e-6)

    def test_edge_reported(self):
        # at the right edge of the MP support the denominator vanishes
        w = (1 + math.sqrt(2.0)) ** 2
        m_edge = -(w - 1.0) / (2.0 * w) + 0j
        assert abs(solver.stability_denominator(m_edge, 2.0, ISO)) < 1e-12
        with pytest.raises(solver.ConvergenceError):
            solver.stieltjes_derivative(w, 2.0, ISO, m=m_edge)


class TestProxy:
    def test_isotropic(self):
        lim = solver.finite_sample_proxy(200, 100, ISO)
        assert lim.atom_mass == 0.5
        assert lim.total_mass() == pytest.approx(1.0, abs=1e-3)
        assert lim.functional(lambda x: x) == pytest.approx(0.5, rel=1e-3)

    def test_two_atoms(self):
        lim = solver.finite_sample_proxy(300, 100, TWO)
        assert lim.total_mass() == pytest.approx(1.0, abs=1e-3)
        # int x dP = (1/c) int lambda^{-1} dF_ = m_F_(0)/c
        m0 = solver.solve_m_companion(-1e-9 + 1e-30j, 3.0, TWO).real
        assert lim.functional(lambda x: x) == pytest.approx(m0 / 3.0, rel=1e-3)

    def test_trace_monte_carlo(self):
        lim = solver.finite_sample_proxy(200, 100, ISO)
        traces = [np.trace(np.linalg.inv(build_ensemble(EntryLaw("gaussian"), ISO, 200, 100, s).gram)) / 200 for s in range(200)]
        assert lim.functional(lambda x: x) == pytest.approx(np.mean(traces), rel=0.02)

    def test_needs_p_above_n(self):
        with pytest.raises(ValueError):
            solver.finite_sample_proxy(100, 100, ISO)
