"""Random-number kernels: streams, scalar draws, GMRF draws, slice updates.

Streams are built on numpy's Philox counter-based generator with the
pair ``(seed, stream_id)`` as the key, so distinct stream ids give
statistically independent, reproducible streams and the same pair
always replays bit-identically. This choice is fixed: changing the
underlying generator changes every seeded result in the package.

GMRF draws factor the sparse precision with a banded Cholesky after a
reverse-Cuthill-McKee fill-reducing permutation; for lattice-like
graphs the permuted bandwidth stays small and one factorization is
O(K * bandwidth^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import cholesky_banded, solve_banded
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import NumericalError, ValidationError
from .graph import PrecisionMatrix

_UINT64 = np.uint64(2**64 - 1)


@dataclass
class RngStream:
    """One exclusively-owned random stream, keyed by (seed, stream_id)."""

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        key = np.array([self.seed, self.stream_id], dtype=np.object_)
        key = np.array([int(k) & int(_UINT64) for k in key], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))


def sample_normal(rng: RngStream, mean: float, sd: float) -> float:
    if sd < 0:
        raise ValidationError(f"sd must be nonnegative, got {sd}")
    if sd == 0:
        return float(mean)
    return float(mean + sd * rng.generator.standard_normal())


def sample_uniform(rng: RngStream, lo: float, hi: float) -> float:
    if not lo < hi:
        raise ValidationError(f"require lo < hi, got ({lo}, {hi})")
    return float(rng.generator.uniform(lo, hi))


def sample_inverse_gamma(rng: RngStream, a: float, b: float) -> float:
    """Draw from IG(a, b) with density proportional to x^(-a-1) exp(-b/x).

    Implemented as the reciprocal of a Gamma(shape=a, rate=b) draw.
    """
    if a <= 0 or b <= 0:
        raise ValidationError(f"inverse-gamma parameters must be positive, got a={a}, b={b}")
    g = rng.generator.gamma(shape=a, scale=1.0 / b)
    if g <= 0.0:  # underflow guard for extreme shapes
        raise NumericalError(f"gamma draw underflowed for a={a}, b={b}")
    return float(1.0 / g)


# ---------------------------------------------------------------------------
# Banded sparse Cholesky
# ---------------------------------------------------------------------------

def _banded_from_csr(Q: sparse.csr_matrix, perm: np.ndarray) -> tuple[np.ndarray, int]:
    """Lower banded storage ab[d, j] = Qp[j+d, j] of the permuted matrix."""
    n = Q.shape[0]
    Qp = Q[perm][:, perm].tocoo()
    if Qp.nnz:
        bw = int(np.max(np.abs(Qp.row - Qp.col)))
    else:
        bw = 0
    ab = np.zeros((bw + 1, n))
    mask = Qp.row >= Qp.col
    ab[Qp.row[mask] - Qp.col[mask], Qp.col[mask]] = Qp.data[mask]
    return ab, bw


def _upper_from_lower(cb: np.ndarray) -> np.ndarray:
    """General-banded storage of L^T given lower-banded Cholesky factor cb."""
    bw, n = cb.shape[0] - 1, cb.shape[1]
    ab = np.zeros_like(cb)
    for d in range(bw + 1):
        ab[bw - d, d:n] = cb[d, : n - d]
    return ab


@dataclass
class CholeskyFactor:
    """Banded lower Cholesky factor of a permuted sparse precision matrix.

    ``banded`` holds L in lower banded storage for the matrix
    P Q P^T where P is the reverse-Cuthill-McKee permutation.
    """

    dimension: int
    bandwidth: int
    banded: np.ndarray = field(repr=False)
    permutation: np.ndarray = field(repr=False)
    _upper: np.ndarray = field(repr=False)

    @classmethod
    def from_precision(cls, Q: PrecisionMatrix | sparse.spmatrix) -> "CholeskyFactor":
        if isinstance(Q, PrecisionMatrix):
            if not Q.is_strictly_positive_definite:
                raise NumericalError("precision flagged non-positive-definite; refusing to factor")
            mat = Q.matrix
        else:
            mat = sparse.csr_matrix(Q)
        n = mat.shape[0]
        # Include the diagonal in the symbolic structure so isolated rows keep a pivot.
        structure = (mat != 0) + sparse.identity(n, format="csr")
        perm = np.asarray(reverse_cuthill_mckee(structure.tocsr(), symmetric_mode=True))
        ab, bw = _banded_from_csr(mat.tocsr(), perm)
        try:
            cb = cholesky_banded(ab, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"Cholesky factorization failed: {exc}") from exc
        if not np.all(np.isfinite(cb)):
            raise NumericalError("Cholesky factor contains non-finite entries")
        return cls(n, bw, cb, perm, _upper_from_lower(cb))

    def log_determinant(self) -> float:
        """log det Q = 2 * sum(log diag L)."""
        return 2.0 * float(np.sum(np.log(self.banded[0])))

    def solve_lower(self, rhs: np.ndarray) -> np.ndarray:
        return solve_banded((self.bandwidth, 0), self.banded, rhs)

    def solve_upper(self, rhs: np.ndarray) -> np.ndarray:
        return solve_banded((0, self.bandwidth), self._upper, rhs)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve Q x = b in original ordering."""
        x = np.empty_like(b, dtype=float)
        z = self.solve_upper(self.solve_lower(b[self.permutation]))
        x[self.permutation] = z
        return x

    def lower_matrix(self) -> np.ndarray:
        """Dense L with L @ L.T equal to the permuted precision (test hook)."""
        n = self.dimension
        L = np.zeros((n, n))
        for d in range(self.bandwidth + 1):
            L[np.arange(d, n), np.arange(0, n - d)] = self.banded[d, : n - d]
        return L


class BandedPrecisionFamily:
    """Precomputed banded templates for Q(rho)/tau_sq = (rho*R + (1-rho)*I)/tau_sq.

    The permutation and band structure depend only on the graph, so
    factoring at a new rho is a cheap dense-band operation. Used by the
    slice sampler, which needs log det Q(rho) at many rho values.
    """

    def __init__(self, R: sparse.spmatrix):
        n = R.shape[0]
        structure = (sparse.csr_matrix(R) != 0) + sparse.identity(n, format="csr")
        self.permutation = np.asarray(reverse_cuthill_mckee(structure, symmetric_mode=True))
        self._ab_R, self.bandwidth = _banded_from_csr(sparse.csr_matrix(R), self.permutation)
        self._ab_I = np.zeros_like(self._ab_R)
        self._ab_I[0, :] = 1.0
        self.dimension = n

    def factor(self, rho: float, tau_sq: float = 1.0) -> CholeskyFactor:
        ab = (rho * self._ab_R + (1.0 - rho) * self._ab_I) / tau_sq
        try:
            cb = cholesky_banded(ab, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"Cholesky failed at rho={rho}: {exc}") from exc
        return CholeskyFactor(self.dimension, self.bandwidth, cb, self.permutation,
                              _upper_from_lower(cb))

    def log_determinant(self, rho: float, tau_sq: float = 1.0) -> float:
        return self.factor(rho, tau_sq).log_determinant()


def sample_gmrf(rng: RngStream, Q: PrecisionMatrix | CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Draw from N(Q^{-1} b, Q^{-1}) via the canonical form.

    Accepts a prefactored :class:`CholeskyFactor` so repeated draws at a
    fixed precision reuse the factorization. Non-positive-definite
    input raises :class:`NumericalError`; there is no silent jitter.
    """
    factor = Q if isinstance(Q, CholeskyFactor) else CholeskyFactor.from_precision(Q)
    b = np.asarray(b, dtype=float)
    if b.shape != (factor.dimension,):
        raise ValidationError(f"canonical mean has shape {b.shape}, expected ({factor.dimension},)")
    bp = b[factor.permutation]
    mean_p = factor.solve_upper(factor.solve_lower(bp))
    noise_p = factor.solve_upper(rng.generator.standard_normal(factor.dimension))
    out = np.empty(factor.dimension)
    out[factor.permutation] = mean_p + noise_p
    return out


def slice_sample(
    rng: RngStream,
    log_density,
    current: float,
    lo: float,
    hi: float,
    width: float = 0.1,
) -> float:
    """One stepping-out-and-shrinkage slice update on a bounded interval.

    Neal-style univariate slice sampling: draw a level under the density
    at ``current``, step an initial ``width`` bracket out to the slice
    (capped at ``lo``/``hi``), then shrink toward ``current`` until a
    point under the curve is found. Leaves the target invariant; the
    return value is strictly inside (lo, hi).
    """
    if not lo < current < hi:
        raise ValidationError(f"current={current} must lie strictly inside ({lo}, {hi})")
    logf0 = float(log_density(current))
    if np.isnan(logf0):
        raise NumericalError(f"log_density is NaN at current={current}")
    gen = rng.generator
    level = logf0 + np.log(gen.uniform())

    u = gen.uniform()
    left = max(lo, current - u * width)
    right = min(hi, left + width)
    while left > lo and log_density(left) > level:
        left = max(lo, left - width)
    while right < hi and log_density(right) > level:
        right = min(hi, right + width)

    while True:
        proposal = gen.uniform(left, right)
        if proposal <= lo or proposal >= hi:
            # only reachable through floating-point underflow at the bounds
            proposal = np.clip(proposal, np.nextafter(lo, hi), np.nextafter(hi, lo))
        if log_density(proposal) > level:
            return float(proposal)
        if proposal < current:
            left = proposal
        else:
            right = proposal
        if right - left <= 1e-15:
            return float(current)
