"""Model-quality metrics across replicates: bias, RMSE, coverage, DIC.

The point estimate of a coefficient is its posterior median. For R
replicate fits, bias is |mean of estimates - truth| and

    rmse = sqrt(bias^2 + sample variance of the estimates),

so rmse >= |bias| by construction. DIC uses the conditional deviance
given the random effects: p_d = mean(D draws) - D(posterior means),
dic = mean(D draws) + p_d. D at the posterior mean evaluates the
deviance at the averaged sampled parameters and averaged latent
effects (running means for latents that are not stored).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class BiasRmse:
    bias: float
    rmse: float  # NaN when bias_only
    variance: float  # NaN when bias_only
    bias_only: bool = False


def bias_rmse(estimates, truth: float) -> BiasRmse:
    """Absolute bias and RMSE of per-replicate estimates against truth.

    A single replicate cannot support a variance; the result then
    carries bias only and is flagged.
    """
    est = np.asarray(estimates, dtype=float).ravel()
    if est.size == 0:
        raise ValidationError("no estimates supplied")
    if not np.isfinite(truth):
        raise ValidationError(f"truth must be finite, got {truth}")
    bias = abs(float(est.mean()) - truth)
    if est.size < 2:
        warnings.warn("fewer than 2 replicates: variance undefined, reporting bias only",
                      stacklevel=2)
        return BiasRmse(bias=bias, rmse=float("nan"), variance=float("nan"), bias_only=True)
    var = float(np.var(est, ddof=1))
    return BiasRmse(bias=bias, rmse=float(np.sqrt(bias**2 + var)), variance=var)


def dic(deviance_draws, deviance_at_posterior_mean: float) -> tuple[float, float]:
    """(dic, p_d) from a deviance trace and D at the posterior mean.

    Negative values are legitimate (tiny observation variances push
    the Gaussian deviance below zero) and pass through untouched.
    """
    draws = np.asarray(deviance_draws, dtype=float).ravel()
    if draws.size == 0:
        raise ValidationError("empty deviance trace")
    mean_dev = float(draws.mean())
    p_d = mean_dev - float(deviance_at_posterior_mean)
    return mean_dev + p_d, p_d


def coverage(intervals, truth: float) -> float:
    """Fraction of (lo, hi) intervals containing truth."""
    hits = 0
    total = 0
    for lo, hi in intervals:
        if lo > hi:
            raise ValidationError(f"malformed interval ({lo}, {hi})")
        hits += int(lo <= truth <= hi)
        total += 1
    if total == 0:
        raise ValidationError("no intervals supplied")
    return hits / total


def summarize_posterior(draws) -> tuple[float, float, float]:
    """(median, 2.5%, 97.5%) empirical quantiles, linear interpolation."""
    x = np.asarray(draws, dtype=float).ravel()
    if x.size < 40:
        raise ValidationError(f"need at least 40 draws to summarize, got {x.size}")
    med, lo, hi = np.quantile(x, [0.5, 0.025, 0.975])
    return float(med), float(lo), float(hi)


# ---------------------------------------------------------------------------
# replicate aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientSummary:
    """Per (scenario, model, coefficient) row of a comparison report.

    posterior_median / ci bounds are medians across replicates of the
    per-replicate values. Two RMSE flavors are reported: ``rmse`` uses
    the across-replicate sample variance of the point estimates, while
    ``rmse_post_sd`` plugs in the mean posterior variance instead
    (bias^2 + mean posterior sd^2), the form behind the study's
    model-ordering conclusions. ``posterior_sd`` is the mean
    across replicates of the per-fit posterior standard deviation.
    """

    scenario: str
    model: str
    coefficient: str
    truth: float
    bias: float
    rmse: float
    coverage_95: float
    posterior_median: float
    ci_2_5: float
    ci_97_5: float
    n_replicates: int
    bias_only: bool = False
    posterior_sd: float = float("nan")
    rmse_post_sd: float = float("nan")


@dataclass(frozen=True)
class FitSummary:
    """Per (scenario, model) fit metrics.

    dic/p_d/mean_deviance are replicate means so the identity
    dic = mean_deviance + p_d survives aggregation; dic_median backs
    median-based orderings and the plots.
    """

    scenario: str
    model: str
    dic: float
    p_d: float
    mean_deviance: float
    dic_median: float
    dic_iqr_lo: float
    dic_iqr_hi: float
    max_posterior_loglik: float
    n_replicates: int


@dataclass
class ComparisonReport:
    coefficients: list[CoefficientSummary]
    fits: list[FitSummary]


def summarize_coefficient(scenario, model, coefficient, truth,
                          medians, intervals) -> CoefficientSummary:
    medians = np.asarray(medians, dtype=float)
    stats = bias_rmse(medians, truth)
    cov = coverage(intervals, truth)
    lo = float(np.median([iv[0] for iv in intervals]))
    hi = float(np.median([iv[1] for iv in intervals]))
    return CoefficientSummary(
        scenario=str(scenario), model=model, coefficient=coefficient, truth=float(truth),
        bias=stats.bias, rmse=stats.rmse, coverage_95=cov,
        posterior_median=float(np.median(medians)), ci_2_5=lo, ci_97_5=hi,
        n_replicates=medians.size, bias_only=stats.bias_only)


def summarize_fit(scenario, model, dics, p_ds, mean_deviances, max_logliks) -> FitSummary:
    dics = np.asarray(dics, dtype=float)
    q25, q50, q75 = np.quantile(dics, [0.25, 0.5, 0.75])
    return FitSummary(
        scenario=str(scenario), model=model,
        dic=float(np.mean(dics)), p_d=float(np.mean(p_ds)),
        mean_deviance=float(np.mean(mean_deviances)),
        dic_median=float(q50), dic_iqr_lo=float(q25), dic_iqr_hi=float(q75),
        max_posterior_loglik=float(np.median(max_logliks)), n_replicates=dics.size)


# ---------------------------------------------------------------------------
# CSV export (documented schemas)
# ---------------------------------------------------------------------------

def write_comparison_csvs(report: ComparisonReport, outdir) -> dict[str, Path]:
    """Write rmse_by_scenario.csv, dic_by_scenario.csv, coverage_by_scenario.csv.

    Schemas:
      rmse_by_scenario.csv:     scenario,model,coefficient,truth,bias,rmse,
                                posterior_median,ci_2_5,ci_97_5,n_replicates
      dic_by_scenario.csv:      scenario,model,dic,p_d,mean_deviance,dic_median,
                                dic_iqr_lo,dic_iqr_hi,max_posterior_loglik,n_replicates
      coverage_by_scenario.csv: scenario,model,coefficient,coverage_95,n_replicates
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}

    lines = ["scenario,model,coefficient,truth,bias,rmse,posterior_median,"
             "ci_2_5,ci_97_5,n_replicates"]
    for c in report.coefficients:
        lines.append(f"{c.scenario},{c.model},{c.coefficient},{c.truth!r},{c.bias!r},"
                     f"{c.rmse!r},{c.posterior_median!r},{c.ci_2_5!r},{c.ci_97_5!r},"
                     f"{c.n_replicates}")
    paths["rmse"] = outdir / "rmse_by_scenario.csv"
    paths["rmse"].write_text("\n".join(lines) + "\n")

    lines = ["scenario,model,dic,p_d,mean_deviance,dic_median,dic_iqr_lo,dic_iqr_hi,"
             "max_posterior_loglik,n_replicates"]
    for f in report.fits:
        lines.append(f"{f.scenario},{f.model},{f.dic!r},{f.p_d!r},{f.mean_deviance!r},"
                     f"{f.dic_median!r},{f.dic_iqr_lo!r},{f.dic_iqr_hi!r},"
                     f"{f.max_posterior_loglik!r},{f.n_replicates}")
    paths["dic"] = outdir / "dic_by_scenario.csv"
    paths["dic"].write_text("\n".join(lines) + "\n")

    lines = ["scenario,model,coefficient,coverage_95,n_replicates"]
    for c in report.coefficients:
        lines.append(f"{c.scenario},{c.model},{c.coefficient},{c.coverage_95!r},"
                     f"{c.n_replicates}")
    paths["coverage"] = outdir / "coverage_by_scenario.csv"
    paths["coverage"].write_text("\n".join(lines) + "\n")
    return paths
