import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpinv.spectra import (
    AspectRatio,
    DimensionMismatchWarning,
    EmpiricalSpectrum,
    EntryLaw,
    PopulationSpectrum,
    RectContour,
    SpectralLimit,
    TestFunction,
    edf_evaluate,
    entry_sample,
    ks_distance,
    mix_seed,
    pairwise_sum,
)


def test_aspect_ratio():
    r = AspectRatio(200, 100)
    assert r.c == 2.0
    with pytest.raises(ValueError):
        AspectRatio(0, 3)


class TestPopulationSpectrum:
    def test_canonicalises(self):
        h = PopulationSpectrum((3.0, 1.0, 3.0), (0.25, 0.5, 0.25))
        assert h.taus == (1.0, 3.0)
        assert h.weights == (0.5, 0.5)

    @pytest.mark.parametrize(
        "taus, weights",
        [((1.0,), (0.9,)), ((0.0, 1.0), (0.5, 0.5)), ((-1.0,), (1.0,)), ((1.0, 2.0), (1.2, -0.2))],
    )
    def test_rejects_invalid(self, taus, weights):
        with pytest.raises(ValueError):
            PopulationSpectrum(taus, weights)

    def test_text_round_trip(self, tmp_path):
        h = PopulationSpectrum((1.0, 3.0), (0.5, 0.5))
        path = tmp_path / "h.txt"
        h.write(path)
        assert PopulationSpectrum.read(path) == h
        text = "# two atoms\n1 0.5\n\n3 0.5  # heavy\n"
        assert PopulationSpectrum.from_text(text) == h

    def test_expand(self):
        h = PopulationSpectrum((1.0, 3.0), (0.25, 0.75))
        ev = h.expand(8)
        assert list(ev) == [1.0, 1.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0]
        with pytest.raises(ValueError):
            h.expand(6)

    def test_from_eigenvalues(self):
        h = PopulationSpectrum.from_eigenvalues([2.0, 1.0, 2.0, 2.0])
        assert h.taus == (1.0, 2.0)
        assert h.weights == (0.25, 0.75)


class TestEmpiricalSpectrum:
    def test_edf_examples(self):
        assert edf_evaluate(EmpiricalSpectrum([0, 0, 1, 1]), 0.0) == 0.5
        assert edf_evaluate(EmpiricalSpectrum([2.0]), 1.9) == 0.0

    def test_zero_atom_of_pinv(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal((5, 2))
        s_plus = np.linalg.pinv(y @ y.T / 2)
        spec = EmpiricalSpectrum.from_matrix(s_plus)
        assert edf_evaluate(spec, 0.0) == pytest.approx(3 / 5)
        assert spec.zero_count() == 3

    def test_csv_round_trip(self):
        spec = EmpiricalSpectrum([0.0, 0.5, 2.25, 7.0])
        text = spec.to_csv()
        assert text.splitlines()[0] == "index,eigenvalue"
        back = EmpiricalSpectrum.from_csv(text)
        np.testing.assert_array_equal(back.eigenvalues, spec.eigenvalues)

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.lists(st.floats(-12, 12), min_size=2, max_size=20))
    def test_edf_monotone(self, ev, ts):
        spec = EmpiricalSpectrum(ev)
        ts = sorted(ts)
        vals = [edf_evaluate(spec, t) for t in ts]
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        assert edf_evaluate(spec, min(ev) - 1) == 0.0
        assert edf_evaluate(spec, max(ev)) == 1.0


class TestKS:
    def test_examples(self):
        a = EmpiricalSpectrum([0.0, 1.0, 2.0])
        assert ks_distance(a, a) == 0.0
        assert ks_distance(EmpiricalSpectrum([0.0]), EmpiricalSpectrum([1.0])) == 1.0

    def test_mismatch_warns(self):
        with pytest.warns(DimensionMismatchWarning):
            d = ks_distance(EmpiricalSpectrum([0.0, 1.0]), EmpiricalSpectrum([0.0]))
        assert d == 0.5

    spectra = st.lists(st.integers(-5, 5).map(float), min_size=4, max_size=4)

    @given(spectra, spectra, spectra)
    def test_metric(self, x, y, z):
        a, b, c = (EmpiricalSpectrum(v) for v in (x, y, z))
        assert ks_distance(a, b) == ks_distance(b, a)
        assert ks_distance(a, c) <= ks_distance(a, b) + ks_distance(b, c) + 1e-15
        assert 0.0 <= ks_distance(a, b) <= 1.0

    def test_uses_left_limits(self):
        # sup is attained just below a shared jump point
        a = EmpiricalSpectrum([1.0, 1.0])
        b = EmpiricalSpectrum([0.5, 1.0])
        assert ks_distance(a, b) == 0.5


class TestEntryLaw:
    def test_fourth_moments(self):
        assert EntryLaw("gaussian").fourth_moment == 3.0
        assert EntryLaw("rademacher").fourth_moment == 1.0
        assert EntryLaw("three_point", 0.125).fourth_moment == pytest.approx(4.0)
        assert EntryLaw("rademacher").kurtosis_excess == -2.0

    @pytest.mark.parametrize("q", [0.0, 0.6, -0.1])
    def test_bad_q(self, q):
        with pytest.raises(ValueError):
            EntryLaw("three_point", q)

    def test_rademacher_squares(self):
        x = entry_sample(EntryLaw("rademacher"), 7, 9, seed=1)
        assert np.all(x**2 == 1.0)

    def test_deterministic(self):
        law = EntryLaw("three_point", 0.2)
        np.testing.assert_array_equal(entry_sample(law, 5, 4, 11), entry_sample(law, 5, 4, 11))

    @pytest.mark.parametrize("law", [EntryLaw("gaussian"), EntryLaw("rademacher"), EntryLaw("three_point", 0.125)])
    def test_moments(self, law):
        N = 1_000_000
        x = entry_sample(law, 1000, 1000, seed=5).ravel()
        assert abs(x.mean()) < 5 / math.sqrt(N)
        assert abs(x.var() - 1.0) < 10 / math.sqrt(N)
        if law.family == "three_point":
            assert np.mean(x**4) == pytest.approx(4.0, abs=0.05)


class TestSpectralLimit:
    def test_mass_check(self):
        x = np.linspace(0.0, 1.0, 1001)
        SpectralLimit(0.5, x, np.full_like(x, 0.5), (0.0, 1.0))
        with pytest.raises(ValueError):
            SpectralLimit(0.5, x, np.full_like(x, 0.8), (0.0, 1.0))

    def test_zero_outside_support_and_csv(self):
        x = np.linspace(0.0, 2.0, 2001)
        lim = SpectralLimit(0.0, x, np.where(x <= 1.0, 1.0, 0.0), (0.0, 1.0))
        assert lim.total_mass() == pytest.approx(1.0, abs=1e-3)
        text = lim.to_csv()
        assert text.startswith("# atom_at_zero=0.0")
        assert "x,nu" in text.splitlines()[:3]


class TestRectContour:
    def test_cauchy(self):
        ct = RectContour(-1.0, 6.0, 0.2, 2048)
        for z0 in (0.5 + 0.05j, 5.9 - 0.1j, -0.9 + 0.0j):
            val = ct.integrate(lambda z: 1.0 / (z - z0))
            assert abs(val - 2j * math.pi) < 1e-6
        for z0 in (7.0 + 0.0j, 1.0 + 0.5j):
            assert abs(ct.integrate(lambda z: 1.0 / (z - z0))) < 1e-6

    def test_nodes_off_axis_and_proportional(self):
        ct = RectContour(-1.0, 9.0, 0.5, 256)
        z, dz = ct.nodes()
        assert np.all(z.imag != 0.0)
        assert abs(np.sum(np.abs(dz)) - 2 * (10.0 + 1.0)) < 1e-10
        assert z.size == pytest.approx(4 * 256, rel=0.05)

    def test_validation(self):
        with pytest.raises(ValueError):
            RectContour(1.0, 2.0, 0.1)
        with pytest.raises(ValueError):
            RectContour(-1.0, 2.0, 0.0)


class TestTestFunction:
    def test_parse_and_eval(self):
        g = TestFunction.parse("1,0,2")
        assert g(3.0) == 19.0
        assert g.derivative().coefficients == (0.0, 4.0)
        assert TestFunction.monomial(3).degree == 3
        assert TestFunction((0.0, 0.0)).is_zero

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=6))
    def test_label_round_trip(self, coef):
        g = TestFunction(tuple(coef))
        assert TestFunction.parse(g.label) == g


def test_mix_seed_and_pairwise_sum():
    assert mix_seed(7, 3) == mix_seed(7, 3)
    assert len({mix_seed(7, i) for i in range(1000)}) == 1000
    assert 0 <= mix_seed(2**64 - 1, 5) < 2**64
    vals = np.random.default_rng(0).standard_normal(1001)
    assert pairwise_sum(vals) == pytest.approx(math.fsum(vals), abs=1e-12)
    assert pairwise_sum(vals) == pairwise_sum(vals.copy())
