"""Convergence assessment for stored chains.

Implements the window-comparison z-score (Geweke), the potential scale
reduction factor over parallel chains (Brooks-Gelman), the
stationarity/half-width test (Heidelberger-Welch) and autocorrelation-
based effective sample size. Spectral density at frequency zero is
estimated through an autoregressive approximation of order at most 20
selected by AIC, fitted by Yule-Walker.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_toeplitz
from scipy.stats import norm

from .errors import ValidationError

R_HAT_THRESHOLD = 1.02
MAX_AR_ORDER = 20

# Asymptotic critical values of the Cramer-von Mises statistic.
_CVM_ALPHA = np.array([0.01, 0.025, 0.05, 0.1])
_CVM_CRIT = np.array([0.74346, 0.58061, 0.46136, 0.34730])


def _check_chain(chain, min_len: int, what: str) -> np.ndarray:
    x = np.asarray(chain, dtype=float).ravel()
    if x.size < min_len:
        raise ValidationError(f"{what} needs at least {min_len} draws, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{what}: chain contains non-finite draws")
    return x


def _autocovariances(x: np.ndarray, max_lag: int) -> np.ndarray:
    x = x - x.mean()
    n = x.size
    return np.array([float(x[: n - k] @ x[k:]) / n for k in range(max_lag + 1)])


_AR_SUM_CAP = 0.99


def spectral_density_at_zero(chain) -> float:
    """AR-approximation estimate of S(0), order <= 20 chosen by AICc.

    Yule-Walker fits with the small-sample innovation correction
    n/(n-p-1); the AR coefficient sum is capped below 1 so a
    near-unit-root fit (heavy trend) yields a finite, small-variance
    estimate that lets the trend be flagged rather than swallowed.
    """
    x = np.asarray(chain, dtype=float).ravel()
    n = x.size
    max_order = min(MAX_AR_ORDER, n - 2)
    acov = _autocovariances(x, max_order)
    if acov[0] <= 0:
        raise ValidationError("degenerate chain (zero variance)")
    best = (n * np.log(acov[0]), acov[0] * n / (n - 1), np.array([]))  # order 0
    for p in range(1, max_order + 1):
        try:
            phi = solve_toeplitz(acov[:p], acov[1 : p + 1])
        except np.linalg.LinAlgError:
            continue
        innov = acov[0] - float(phi @ acov[1 : p + 1])
        if innov <= 0:
            continue
        aicc = n * np.log(innov) + 2.0 * p + 2.0 * p * (p + 1) / max(n - p - 1, 1)
        if aicc < best[0]:
            best = (aicc, innov * n / (n - p - 1), phi)
    _, innov, phi = best
    coef_sum = min(float(np.sum(phi)), _AR_SUM_CAP)
    return innov / (1.0 - coef_sum) ** 2


def geweke(chain, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    """z-score comparing the means of the first and last chain windows.

    z = (mean_A - mean_B) / sqrt(S_A(0)/n_A + S_B(0)/n_B) with the
    first ``frac_a`` and final ``frac_b`` fractions as windows. Raises
    on constant (zero-spectral-variance) chains.
    """
    x = _check_chain(chain, 100, "geweke")
    if not (0 < frac_a < 1 and 0 < frac_b < 1 and frac_a + frac_b <= 1):
        raise ValidationError(
            f"window fractions must lie in (0,1) and not overlap, got ({frac_a}, {frac_b})")
    n = x.size
    a = x[: int(frac_a * n)]
    b = x[n - int(frac_b * n):]
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        raise ValidationError("degenerate chain (both windows constant)")
    var_a = spectral_density_at_zero(a) / a.size
    var_b = spectral_density_at_zero(b) / b.size
    denom = np.sqrt(var_a + var_b)
    if denom == 0:
        raise ValidationError("degenerate chain (zero spectral variance)")
    return float((a.mean() - b.mean()) / denom)


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor from >= 2 equal-length chains.

    sqrt(((n-1)/n * W + B/n) / W) with W the mean within-chain variance
    and B = n * variance of the chain means. Identical chains give the
    floor value sqrt((n-1)/n).
    """
    arrs = [np.asarray(c, dtype=float).ravel() for c in chains]
    if len(arrs) < 2:
        raise ValidationError("gelman_rubin needs at least 2 chains")
    n = arrs[0].size
    if any(a.size != n for a in arrs):
        raise ValidationError("chains must have equal length")
    if n < 10:
        raise ValidationError(f"chains too short for r_hat ({n} draws)")
    W = float(np.mean([np.var(a, ddof=1) for a in arrs]))
    B = n * float(np.var([a.mean() for a in arrs], ddof=1))
    if W == 0:
        raise ValidationError("degenerate chains (zero within-chain variance)")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def heidelberger_welch(
    chain, alpha: float = 0.05, halfwidth_ratio: float = 0.1
) -> tuple[bool, bool, float]:
    """Stationarity (Cramer-von Mises on the Brownian bridge) plus a
    relative half-width check on the retained segment.

    S(0) is estimated from the second half of the segment under test,
    so early transients or level shifts cannot inflate the denominator
    and hide themselves. The test is retried after discarding initial
    10% increments up to 40% of the chain; ``discard_fraction`` reports
    the first passing point, or the 0.5 sentinel when no prefix within
    the allowed discards is stationary (the test then fails).
    """
    x = _check_chain(chain, 200, "heidelberger_welch")
    if np.ptp(x) == 0:
        raise ValidationError("degenerate chain (constant)")
    if not _CVM_ALPHA[0] <= alpha <= _CVM_ALPHA[-1]:
        raise ValidationError(f"alpha must lie in [{_CVM_ALPHA[0]}, {_CVM_ALPHA[-1]}]")
    crit = float(np.interp(alpha, _CVM_ALPHA, _CVM_CRIT))
    n = x.size
    stationary = False
    discard = 0.5
    segment = x
    for frac in (0.0, 0.1, 0.2, 0.3, 0.4):
        segment = x[int(frac * n):]
        m = segment.size
        if np.ptp(segment[m // 2:]) == 0:
            continue
        s0 = spectral_density_at_zero(segment[m // 2:])
        partial = np.cumsum(segment)
        k = np.arange(1, m + 1)
        bridge = (partial - k * segment.mean()) / np.sqrt(m * s0)
        cvm = float(np.mean(bridge**2))
        if cvm < crit:
            stationary = True
            discard = frac
            break
    if not stationary:
        return False, False, 0.5
    m = segment.size
    mean = segment.mean()
    halfwidth = norm.ppf(1.0 - alpha / 2.0) * np.sqrt(spectral_density_at_zero(segment) / m)
    hw_pass = bool(mean != 0 and abs(halfwidth / mean) <= halfwidth_ratio)
    return True, hw_pass, discard


def effective_sample_size(chain) -> float:
    """n / (1 + 2 * sum of autocorrelations), summed over consecutive
    lag pairs and truncated at the first nonpositive pair (initial
    positive sequence rule). Anticorrelated chains may legitimately
    exceed n."""
    x = _check_chain(chain, 100, "effective_sample_size")
    n = x.size
    acov = _autocovariances(x, n - 1)
    if acov[0] <= 0:
        raise ValidationError("degenerate chain (zero variance)")
    rho = acov / acov[0]
    pair_sum = 0.0
    m = 0
    while 2 * m + 1 < n:
        gamma = rho[2 * m] + rho[2 * m + 1]
        if gamma <= 0:
            break
        pair_sum += gamma
        m += 1
    tau = max(2.0 * pair_sum - 1.0, 1.0 / n)
    return float(n / tau)


@dataclass
class ParameterDiagnostics:
    name: str
    geweke_z: float
    r_hat: float
    hw_stationarity_pass: bool
    hw_halfwidth_pass: bool
    ess: float
    note: str = ""


@dataclass
class DiagnosticsReport:
    parameters: list[ParameterDiagnostics] = field(default_factory=list)
    r_hat_threshold: float = R_HAT_THRESHOLD

    @property
    def all_converged(self) -> bool:
        finite = [p.r_hat for p in self.parameters if np.isfinite(p.r_hat)]
        return bool(finite) and all(r < self.r_hat_threshold for r in finite)

    def to_csv(self, path) -> None:
        lines = ["parameter,geweke_z,r_hat,hw_stationarity_pass,hw_halfwidth_pass,ess,note"]
        for p in self.parameters:
            lines.append(f"{p.name},{p.geweke_z!r},{p.r_hat!r},"
                         f"{str(p.hw_stationarity_pass).lower()},"
                         f"{str(p.hw_halfwidth_pass).lower()},{p.ess!r},{p.note}")
        Path(path).write_text("\n".join(lines) + "\n")

    def to_text(self) -> str:
        lines = [f"{'parameter':<24} {'geweke_z':>9} {'r_hat':>8} {'stat':>5} "
                 f"{'hw':>5} {'ess':>10}"]
        for p in self.parameters:
            lines.append(
                f"{p.name:<24} {p.geweke_z:>9.3f} {p.r_hat:>8.4f} "
                f"{'ok' if p.hw_stationarity_pass else 'FAIL':>5} "
                f"{'ok' if p.hw_halfwidth_pass else 'FAIL':>5} {p.ess:>10.1f}")
        lines.append(f"all_converged = {str(self.all_converged).lower()} "
                     f"(r_hat < {self.r_hat_threshold})")
        return "\n".join(lines)


def diagnose_chains(chain_columns: dict[str, list[np.ndarray]],
                    r_hat_threshold: float = R_HAT_THRESHOLD) -> DiagnosticsReport:
    """Per-parameter diagnostics from {name: [chain0 draws, chain1 ...]}.

    Single-chain tests (Geweke, Heidelberger-Welch) use the first
    chain; r_hat needs >= 2 chains and is NaN otherwise; ess sums the
    per-chain estimates, capped at the total number of stored draws.
    Parameters whose chains are degenerate are reported with NaN and a
    note instead of failing the whole report.
    """
    report = DiagnosticsReport(r_hat_threshold=r_hat_threshold)
    for name, chains in chain_columns.items():
        note = ""
        try:
            z = geweke(chains[0])
            stat, hw, _ = heidelberger_welch(chains[0])
            total = sum(len(c) for c in chains)
            ess = min(float(sum(effective_sample_size(c) for c in chains)), float(total))
            r_hat = gelman_rubin(chains) if len(chains) >= 2 else float("nan")
        except ValidationError as exc:
            z, r_hat, stat, hw, ess = float("nan"), float("nan"), False, False, float("nan")
            note = str(exc)
        report.parameters.append(ParameterDiagnostics(
            name=name, geweke_z=z, r_hat=r_hat, hw_stationarity_pass=stat,
            hw_halfwidth_pass=hw, ess=ess, note=note))
    return report
