import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carlevel.compare import (ComparisonReport, bias_rmse, coverage, dic,
                              summarize_coefficient, summarize_fit,
                              summarize_posterior, write_comparison_csvs)
from carlevel.errors import ValidationError


class TestBiasRmse:
    def test_exact_recovery(self):
        out = bias_rmse([2.0, 2.0, 2.0], 2.0)
        assert out.bias == 0.0
        assert out.rmse == 0.0

    def test_symmetric_estimates(self):
        out = bias_rmse([1.0, 3.0], 2.0)
        assert out.bias == 0.0
        assert np.isclose(out.rmse, np.sqrt(2.0))

    def test_direct_arithmetic(self):
        out = bias_rmse([2.0, 4.0, 6.0], 3.0)
        assert np.isclose(out.bias, 1.0)
        assert np.isclose(out.variance, 4.0)
        assert np.isclose(out.rmse, np.sqrt(5.0))

    def test_single_replicate_flagged(self):
        with pytest.warns(UserWarning, match="bias only"):
            out = bias_rmse([1.7], 2.0)
        assert out.bias_only
        assert np.isclose(out.bias, 0.3)
        assert np.isnan(out.rmse)

    def test_nonfinite_truth_rejected(self):
        with pytest.raises(ValidationError):
            bias_rmse([1.0, 2.0], float("inf"))

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=30),
           st.floats(-50, 50))
    @settings(max_examples=100, deadline=None)
    def test_identity_rmse_sq_is_bias_sq_plus_var(self, estimates, truth):
        out = bias_rmse(estimates, truth)
        assert np.isclose(out.rmse**2, out.bias**2 + out.variance, rtol=1e-9, atol=1e-9)
        assert out.rmse >= out.bias - 1e-12


class TestDic:
    def test_constant_deviance(self):
        assert dic([10.0, 10.0, 10.0], 10.0) == (10.0, 0.0)

    def test_direct_arithmetic(self):
        value, p_d = dic([8.0, 12.0], 9.0)
        assert np.isclose(p_d, 1.0)
        assert np.isclose(value, 11.0)

    def test_negative_dic_permitted(self):
        value, p_d = dic([-40.0, -44.0], -41.0)
        assert value < 0  # must not raise

    def test_invariant_to_reordering(self):
        draws = [3.0, 9.0, 1.0, 7.0]
        assert dic(draws, 4.0) == dic(list(reversed(draws)), 4.0)

    def test_empty_trace_rejected(self):
        with pytest.raises(ValidationError):
            dic([], 0.0)


class TestCoverage:
    def test_all_cover(self):
        assert coverage([(0, 2), (1, 3), (-1, 5)], 1.5) == 1.0

    def test_none_cover(self):
        assert coverage([(0, 1), (2, 3)], 5.0) == 0.0

    def test_three_of_four(self):
        ivs = [(0, 2), (0.5, 1.5), (0.9, 3), (1.5, 2)]
        assert coverage(ivs, 1.0) == 0.75

    def test_malformed_interval(self):
        with pytest.raises(ValidationError):
            coverage([(2.0, 1.0)], 1.5)

    @given(st.lists(st.tuples(st.floats(-10, 0), st.floats(0, 10)), min_size=1,
                    max_size=20),
           st.floats(-12, 12), st.floats(0, 3))
    @settings(max_examples=100, deadline=None)
    def test_widening_never_decreases(self, intervals, truth, widen):
        base = coverage(intervals, truth)
        wider = [(lo - widen, hi + widen) for lo, hi in intervals]
        assert coverage(wider, truth) >= base


class TestSummarizePosterior:
    def test_order_statistics_1_to_100(self):
        med, lo, hi = summarize_posterior(np.arange(1.0, 101.0))
        assert np.isclose(med, 50.5)
        assert np.isclose(lo, 3.475)
        assert np.isclose(hi, 97.525)

    def test_constant_draws(self):
        assert summarize_posterior(np.full(50, 3.3)) == (3.3, 3.3, 3.3)

    def test_symmetric_draws_median_near_zero(self):
        rng = np.random.default_rng(1)
        draws = rng.standard_normal(100_000)
        med, _, _ = summarize_posterior(draws)
        assert abs(med) < 0.02

    def test_too_few_draws(self):
        with pytest.raises(ValidationError):
            summarize_posterior(np.arange(10.0))


class TestReportCsvs:
    def test_schemas_and_round_trip(self, tmp_path):
        coeffs = [summarize_coefficient("3", "car", "x_area", 0.14,
                                        [0.1, 0.2, 0.15], [(0, 0.3), (0.05, 0.4),
                                                           (-0.1, 0.2)])]
        fits = [summarize_fit("3", "car", dics=[100.0, 110.0, 90.0],
                              p_ds=[4.0, 5.0, 3.0],
                              mean_deviances=[96.0, 105.0, 87.0],
                              max_logliks=[-40.0, -42.0, -41.0])]
        report = ComparisonReport(coefficients=coeffs, fits=fits)
        paths = write_comparison_csvs(report, tmp_path)
        rmse_lines = paths["rmse"].read_text().strip().splitlines()
        assert rmse_lines[0] == ("scenario,model,coefficient,truth,bias,rmse,"
                                 "posterior_median,ci_2_5,ci_97_5,n_replicates")
        fields = rmse_lines[1].split(",")
        assert fields[0] == "3" and fields[1] == "car" and fields[2] == "x_area"
        dic_lines = paths["dic"].read_text().strip().splitlines()
        row = dict(zip(dic_lines[0].split(","), dic_lines[1].split(",")))
        # identity: dic = mean_deviance + p_d on the mean-aggregated columns
        assert np.isclose(float(row["dic"]),
                          float(row["mean_deviance"]) + float(row["p_d"]))
        cov_lines = paths["coverage"].read_text().strip().splitlines()
        assert cov_lines[0] == "scenario,model,coefficient,coverage_95,n_replicates"
        assert float(dict(zip(cov_lines[0].split(","),
                              cov_lines[1].split(",")))["coverage_95"]) == 1.0
