import numpy as np
import pytest

from carlevel.diagnostics import (DiagnosticsReport, diagnose_chains,
                                  effective_sample_size, gelman_rubin, geweke,
                                  heidelberger_welch, spectral_density_at_zero)
from carlevel.errors import ValidationError


class TestGeweke:
    def test_identical_window_means_give_zero(self):
        chain = np.tile([1.0, -1.0], 5000)  # every even-length window has mean 0
        assert geweke(chain) == 0.0

    def test_iid_calibration(self):
        rng = np.random.default_rng(2)
        flags = 0
        reps = 1000
        for _ in range(reps):
            z = geweke(rng.standard_normal(10_000))
            flags += abs(z) > 1.96
        rate = flags / reps
        assert 0.03 <= rate <= 0.07

    def test_linear_trend_flagged(self):
        chain = np.arange(1.0, 10_001.0)
        assert abs(geweke(chain)) > 10.0

    def test_constant_chain_rejected(self):
        with pytest.raises(ValidationError, match="degenerate"):
            geweke(np.ones(1000))

    def test_short_chain_rejected(self):
        with pytest.raises(ValidationError):
            geweke(np.arange(50.0))

    def test_overlapping_windows_rejected(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValidationError):
            geweke(rng.standard_normal(1000), frac_a=0.6, frac_b=0.6)

    def test_affine_invariance(self):
        rng = np.random.default_rng(3)
        chain = rng.standard_normal(5000)
        z = geweke(chain)
        assert np.isclose(geweke(3.0 * chain + 7.0), z, atol=1e-8)


class TestGelmanRubin:
    def test_identical_chains_floor(self):
        chain = np.random.default_rng(4).standard_normal(500)
        r = gelman_rubin([chain, chain.copy()])
        assert np.isclose(r, np.sqrt(499 / 500))

    def test_separated_chains(self):
        rng = np.random.default_rng(5)
        a = rng.normal(0.0, 1.0, 1000)
        b = rng.normal(10.0, 1.0, 1000)
        assert gelman_rubin([a, b]) > 5.0

    def test_four_iid_chains_converged(self):
        rng = np.random.default_rng(6)
        chains = [rng.standard_normal(5000) for _ in range(4)]
        assert gelman_rubin(chains) < 1.02

    def test_unequal_lengths_rejected(self):
        with pytest.raises(ValidationError):
            gelman_rubin([np.zeros(100), np.zeros(99)])

    def test_single_chain_rejected(self):
        with pytest.raises(ValidationError):
            gelman_rubin([np.arange(100.0)])

    def test_offset_monotonicity(self):
        rng = np.random.default_rng(7)
        base = [rng.standard_normal(1000) for _ in range(2)]
        r_prev = gelman_rubin(base)
        for offset in (0.5, 1.0, 2.0, 4.0):
            shifted = [base[0], base[1] + offset]
            r = gelman_rubin(shifted)
            assert r >= r_prev - 1e-12
            r_prev = r

    def test_affine_invariance(self):
        rng = np.random.default_rng(8)
        chains = [rng.standard_normal(800) for _ in range(3)]
        r = gelman_rubin(chains)
        assert np.isclose(gelman_rubin([5.0 * c - 2.0 for c in chains]), r)


class TestHeidelbergerWelch:
    def test_iid_calibration(self):
        rng = np.random.default_rng(9)
        passes = sum(heidelberger_welch(rng.standard_normal(10_000))[0]
                     for _ in range(200))
        assert passes >= 180

    def test_level_shift_fails(self):
        rng = np.random.default_rng(10)
        chain = np.concatenate([rng.standard_normal(5000),
                                rng.standard_normal(5000) + 5.0])
        stationary, _, _ = heidelberger_welch(chain)
        assert not stationary

    def test_constant_chain_rejected(self):
        with pytest.raises(ValidationError, match="degenerate"):
            heidelberger_welch(np.full(1000, 2.5))

    def test_halfwidth_logic(self):
        rng = np.random.default_rng(11)
        tight = rng.normal(100.0, 0.5, 10_000)  # tiny relative halfwidth
        stat, hw, _ = heidelberger_welch(tight)
        assert stat and hw
        noisy = rng.normal(0.001, 5.0, 10_000)  # mean near zero: relative test fails
        stat, hw, _ = heidelberger_welch(noisy)
        assert stat and not hw

    def test_burnin_discard_reported(self):
        rng = np.random.default_rng(12)
        chain = np.concatenate([np.full(1500, 8.0) + rng.standard_normal(1500) * 0.1,
                                rng.standard_normal(8500)])
        stationary, _, discard = heidelberger_welch(chain)
        if stationary:
            assert discard > 0.0


class TestEffectiveSampleSize:
    def test_iid_near_n(self):
        rng = np.random.default_rng(13)
        n = 10_000
        ess = effective_sample_size(rng.standard_normal(n))
        assert abs(ess - n) < 0.1 * n

    def test_ar1_analytic(self):
        rng = np.random.default_rng(14)
        n = 20_000
        phi = 0.9
        x = np.empty(n)
        x[0] = rng.standard_normal() / np.sqrt(1 - phi**2)
        for i in range(1, n):
            x[i] = phi * x[i - 1] + rng.standard_normal()
        expected = n * (1 - phi) / (1 + phi)
        assert abs(effective_sample_size(x) - expected) < 0.2 * expected

    def test_alternating_chain_superefficient(self):
        chain = np.tile([1.0, -1.0], 500)
        ess = effective_sample_size(chain)
        assert ess > chain.size  # allowed, must not error

    def test_constant_chain_rejected(self):
        with pytest.raises(ValidationError):
            effective_sample_size(np.zeros(500))

    def test_affine_invariance(self):
        rng = np.random.default_rng(15)
        chain = np.cumsum(rng.standard_normal(2000)) * 0.1 + rng.standard_normal(2000)
        a = effective_sample_size(chain)
        b = effective_sample_size(-2.0 * chain + 3.0)
        assert np.isclose(a, b, rtol=1e-10)


class TestSpectralDensity:
    def test_iid_matches_variance(self):
        rng = np.random.default_rng(16)
        x = rng.standard_normal(20_000)
        assert abs(spectral_density_at_zero(x) - 1.0) < 0.1

    def test_ar1_closed_form(self):
        # S(0) = sigma^2 / (1-phi)^2 for an AR(1)
        rng = np.random.default_rng(17)
        n, phi = 50_000, 0.6
        x = np.empty(n)
        x[0] = 0.0
        for i in range(1, n):
            x[i] = phi * x[i - 1] + rng.standard_normal()
        expected = 1.0 / (1 - phi) ** 2
        assert abs(spectral_density_at_zero(x) / expected - 1.0) < 0.15


class TestReport:
    def test_all_converged_logic(self):
        rng = np.random.default_rng(18)
        good = {"a": [rng.standard_normal(2000) for _ in range(2)],
                "b": [rng.standard_normal(2000) for _ in range(2)]}
        report = diagnose_chains(good)
        assert report.all_converged
        bad = {"a": [rng.standard_normal(2000), rng.standard_normal(2000) + 4.0]}
        assert not diagnose_chains(bad).all_converged

    def test_ess_capped_at_total(self):
        chains = [np.tile([1.0, -1.0], 300), np.tile([1.0, -1.0], 300)]
        report = diagnose_chains({"p": chains})
        assert report.parameters[0].ess <= 1200

    def test_degenerate_parameter_noted_not_fatal(self):
        rng = np.random.default_rng(19)
        cols = {"ok": [rng.standard_normal(1000) for _ in range(2)],
                "stuck": [np.full(1000, 3.3) for _ in range(2)]}
        report = diagnose_chains(cols)
        stuck = [p for p in report.parameters if p.name == "stuck"][0]
        assert np.isnan(stuck.geweke_z)
        assert "degenerate" in stuck.note

    def test_csv_and_text_render(self, tmp_path):
        rng = np.random.default_rng(20)
        report = diagnose_chains({"a": [rng.standard_normal(1000) for _ in range(2)]})
        p = tmp_path / "diag.csv"
        report.to_csv(p)
        lines = p.read_text().strip().splitlines()
        assert lines[0].startswith("parameter,geweke_z,r_hat")
        assert len(lines) == 2
        text = report.to_text()
        assert "all_converged" in text
