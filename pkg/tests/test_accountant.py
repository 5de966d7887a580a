import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedmtl import accountant as acc
from fedmtl.mechanism import perturb
from fedmtl.rng import RngStream

from oracles import (
    brute_lower_envelope,
    clt_mu,
    delta_of_epsilon,
    empirical_lr_roc,
    gaussian_tradeoff,
    subsampled_gaussian,
)

COARSE = np.linspace(0.0, 1.0, 513)


class TestGrid:
    def test_default_grid_shape(self):
        g = acc.default_grid()
        assert g[0] == 0.0 and g[-1] == 1.0
        assert np.all(np.diff(g) > 0)
        assert g[1] <= 1e-6 * 1.0001

    def test_rejects_small_grid(self):
        with pytest.raises(ValueError):
            acc.default_grid(100)
        with pytest.raises(acc.CurveError):
            acc.TradeoffCurve(np.linspace(0, 1, 10), np.linspace(1, 0, 10))

    def test_rejects_bad_curves(self):
        with pytest.raises(acc.CurveError):
            acc.TradeoffCurve(np.linspace(0.1, 1, 300), np.zeros(300))
        with pytest.raises(acc.CurveError):
            acc.TradeoffCurve(COARSE, np.full(COARSE.size, np.nan))


class TestGaussianTradeoff:
    @pytest.mark.parametrize("mu", [0.0, 0.1, 0.5, 1.0, 2.0, 3.0])
    def test_matches_reference(self, mu):
        g = acc.default_grid()
        np.testing.assert_allclose(acc.gaussian_tradeoff(mu).values, gaussian_tradeoff(mu, g), atol=1e-12)

    def test_known_value(self):
        assert float(acc.gaussian_tradeoff(1.0)(0.5)) == pytest.approx(0.158655, abs=1e-6)

    @pytest.mark.parametrize("mu", [0.1, 0.5, 1.0, 2.0, 3.0])
    def test_symmetric(self, mu):
        f = acc.gaussian_tradeoff(mu)
        assert f.sup_distance(f.inverse()) < 1e-6

    @pytest.mark.parametrize("mu", [0.0, 0.5, 2.0])
    def test_is_valid_tradeoff(self, mu):
        f = acc.gaussian_tradeoff(mu)
        assert f.violations() == []
        assert np.all(f.values <= 1 - f.grid + 1e-15)

    def test_concave_curve_flagged(self):
        assert acc.TradeoffCurve(COARSE, np.sqrt(1 - COARSE)).violations() == ["not convex"]
        assert "not non-increasing" in acc.TradeoffCurve(COARSE, COARSE).violations()

    def test_monotone_in_mu(self):
        vals = [acc.gaussian_tradeoff(mu).values for mu in (0.0, 0.3, 1.0, 3.0)]
        for a, b in zip(vals, vals[1:]):
            assert np.all(b <= a + 1e-15)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            acc.gaussian_tradeoff(-0.1)


class TestEnvelope:
    @given(st.lists(st.floats(0, 1), min_size=3, max_size=40), st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_matches_brute_force(self, ys, seed):
        rng = np.random.default_rng(seed)
        x = np.sort(rng.uniform(0, 1, len(ys)))
        x = np.unique(x)
        y = np.array(ys[: x.size])
        np.testing.assert_allclose(acc.lower_convex_envelope(x, y), brute_lower_envelope(x, y), atol=1e-12)

    def test_convex_input_unchanged(self):
        x = np.linspace(0, 1, 50)
        np.testing.assert_allclose(acc.lower_convex_envelope(x, (x - 0.3) ** 2), (x - 0.3) ** 2, atol=1e-15)


class TestInverse:
    def test_identity_is_self_inverse(self):
        f = acc.identity_curve()
        np.testing.assert_allclose(f.inverse().values, f.values, atol=1e-15)

    def test_flat_segments_take_infimum(self):
        g = COARSE
        # beta = 0.5 on [0, 0.5], then linear to 0
        vals = np.where(g <= 0.5, 0.5, 1.0 - g)
        inv = acc.TradeoffCurve(g, vals).inverse()
        assert float(inv(0.5)) == pytest.approx(0.0)
        assert float(inv(0.25)) == pytest.approx(0.75)
        assert float(inv(0.75)) == pytest.approx(0.0)

    def test_double_inverse_of_strict_curve(self):
        f = acc.gaussian_tradeoff(1.2)
        assert f.sup_distance(f.inverse().inverse()) < 1e-6


class TestSubsample:
    @pytest.mark.parametrize("mu,p", [(1.0, 0.3), (2.0, 0.05), (0.5, 0.9), (3.0, 0.5)])
    def test_matches_root_finding_oracle(self, mu, p):
        ref = subsampled_gaussian(mu, p, COARSE)
        got = acc.subsample(acc.gaussian_tradeoff(mu), p)
        np.testing.assert_allclose(got(COARSE), ref, atol=1e-5)

    def test_endpoints(self):
        g = acc.gaussian_tradeoff(1.5)
        assert acc.subsample(g, 1.0).sup_distance(g) < 1e-6
        assert acc.subsample(g, 0.0).sup_distance(acc.identity_curve()) < 1e-15

    def test_monotone_in_p(self):
        g = acc.gaussian_tradeoff(2.0)
        curves = [acc.subsample(g, p).values for p in (0.0, 0.05, 0.2, 0.5, 0.8, 1.0)]
        for a, b in zip(curves, curves[1:]):
            assert np.all(b <= a + 1e-12)

    @pytest.mark.parametrize("p", [0.01, 0.3, 0.7])
    def test_result_is_symmetric_tradeoff(self, p):
        c = acc.subsample(acc.gaussian_tradeoff(1.0), p)
        assert c.violations(slack=1e-7) == []
        assert c.sup_distance(c.inverse()) < 1e-5

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            acc.subsample(acc.identity_curve(), 1.5)


class TestComposition:
    @pytest.mark.parametrize(
        "p,t,sigma,expected", [(3 / 174, 1000, 9.69, 0.0564), (20 / 9343, 400, 0.65, 0.1331)]
    )
    def test_reference_budgets(self, p, t, sigma, expected):
        b = acc.compose_clt(p, t, sigma)
        assert b.mu == pytest.approx(expected, abs=1e-4)
        assert b.mu == pytest.approx(clt_mu(p, t, sigma), rel=1e-12)

    @given(st.floats(1e-4, 1.0), st.integers(1, 10**6), st.floats(0.3, 50))
    def test_matches_oracle(self, p, t, sigma):
        assert acc.compose_clt(p, t, sigma).mu == pytest.approx(clt_mu(p, t, sigma), rel=1e-10)

    def test_literal_formula_carries_extra_root_t(self):
        a = acc.compose_clt(0.1, 400, 1.0, "clt")
        b = acc.compose_clt(0.1, 400, 1.0, "paper")
        assert b.mu == pytest.approx(20 * a.mu)

    def test_zero_noise_has_no_finite_budget(self):
        b = acc.compose_clt(0.5, 10, 0.0)
        assert not b.finite
        with pytest.raises(ValueError, match="no finite budget"):
            b.curve()
        assert acc.to_eps_delta(b, 1.0) == 1.0

    def test_tiny_sigma_overflows_to_infinity(self):
        assert not acc.compose_clt(0.5, 10, 0.01).finite

    def test_budget_grows_with_steps_and_rate(self):
        assert acc.compose_clt(0.1, 100, 1.0).mu < acc.compose_clt(0.1, 200, 1.0).mu
        assert acc.compose_clt(0.1, 100, 1.0).mu < acc.compose_clt(0.2, 100, 1.0).mu
        assert acc.compose_clt(0.1, 100, 2.0).mu < acc.compose_clt(0.1, 100, 1.0).mu

    def test_rejects_bad_arguments(self):
        for args in [(0.0, 10, 1.0), (0.5, 0, 1.0), (0.5, 10, -1.0)]:
            with pytest.raises(ValueError):
                acc.compose_clt(*args)
        with pytest.raises(ValueError):
            acc.compose_clt(0.5, 10, 1.0, "other")

    def test_sequential_composition_by_monte_carlo(self):
        """G_a composed with G_b is the trade-off of N(0, I) vs N((a, b), I)."""
        a, b = 0.6, 0.8
        mu = acc.PrivacyBudget(a).then(acc.PrivacyBudget(b)).mu
        assert mu == pytest.approx(1.0)
        rng = RngStream(5, "compose").generator()
        n = 200_000
        null = rng.standard_normal((n, 2)) @ np.array([a, b])
        alt = (rng.standard_normal((n, 2)) + np.array([a, b])) @ np.array([a, b])
        alphas = np.linspace(0.05, 0.95, 10)
        emp = empirical_lr_roc(null, alt, alphas)
        np.testing.assert_allclose(emp, gaussian_tradeoff(mu, alphas), atol=5e-3)


class TestEpsDelta:
    @pytest.mark.parametrize("mu", [0.05, 0.5, 1.0, 2.0, 4.0])
    @pytest.mark.parametrize("eps", [0.0, 0.1, 1.0, 3.0])
    def test_matches_reference(self, mu, eps):
        assert acc.to_eps_delta(mu, eps) == pytest.approx(delta_of_epsilon(mu, eps), rel=1e-9, abs=1e-15)

    def test_known_value(self):
        assert acc.to_eps_delta(1.0, 1.0) == pytest.approx(0.126937, abs=1e-6)

    def test_deep_tail_stays_in_range(self):
        d = acc.to_eps_delta(0.05, 2.0)
        assert 0.0 <= d < 1e-200

    def test_decreasing_in_epsilon(self):
        ds = [acc.to_eps_delta(1.5, e) for e in np.linspace(0, 6, 30)]
        assert all(x >= y for x, y in zip(ds, ds[1:]))

    def test_primal_dual_round_trip(self):
        """The (eps, delta) family recovers G_mu as its upper envelope."""
        mu = 1.0
        eps = np.linspace(0, 8, 400)
        f = acc.tradeoff_from_eps_delta([(e, acc.to_eps_delta(mu, e)) for e in eps])
        g = acc.gaussian_tradeoff(mu)
        assert np.all(f.values <= g.values + 1e-9)
        assert f.sup_distance(g) < 2e-3

    def test_table(self):
        rows = acc.delta_table(acc.PrivacyBudget(1.0), [0.5, 1.0])
        assert [r[0] for r in rows] == [0.5, 1.0]


class TestEmpiricalPrivacy:
    @pytest.mark.parametrize("sigma", [0.65, 2.42])
    def test_lr_test_cannot_beat_bound(self, sigma):
        sens, n = 0.4, 20_000
        null = perturb(np.zeros(n), sens, sigma, RngStream(1, "null"))
        alt = perturb(np.full(n, sens), sens, sigma, RngStream(1, "alt"))
        alphas = np.linspace(0.02, 0.98, 20)
        emp = empirical_lr_roc(null, alt, alphas)
        bound = gaussian_tradeoff(1.0 / sigma, alphas)
        se = np.sqrt(np.maximum(bound * (1 - bound), 1e-12) / n)
        assert np.all(emp >= bound - 3 * se - 1.0 / n)


class TestEmit:
    def test_csv_round_trip(self, tmp_path):
        f = acc.gaussian_tradeoff(0.7)
        path = acc.emit_curve(f, tmp_path / "c.csv")
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert path.read_text().splitlines()[0] == "alpha,beta"
        np.testing.assert_array_equal(data[:, 0], f.grid)
        np.testing.assert_array_equal(data[:, 1], f.values)

    def test_svg_deterministic_with_reference_line(self, tmp_path):
        f = acc.gaussian_tradeoff(0.7)
        a = acc.emit_curve(f, tmp_path / "a.svg").read_bytes()
        b = acc.emit_curve(f, tmp_path / "b.svg").read_bytes()
        assert a == b
        assert b"identity" in a and b'viewBox="0 0 800 600"' in a

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            acc.emit_curve(acc.identity_curve(), tmp_path / "c.png")


def test_budget_requires_nonnegative_mu():
    with pytest.raises(ValueError):
        acc.PrivacyBudget(-1.0)
    assert math.isinf(acc.PrivacyBudget(math.inf).mu)
