"""Spatial/temporal neighborhood structures and CAR precision matrices.

Areas are indexed 0..K-1 internally; all file formats use 1-based
indices. Adjacency is binary and symmetric with no self-loops. The
Leroux precision for a field with variance scale tau_sq is

    Q(rho) / tau_sq,   Q(rho) = rho * R + (1 - rho) * I,

where R is the graph Laplacian (R_jj = number of neighbors of j,
R_jk = -1 for neighbors). rho is restricted to [0, 1 - 1e-8]; the
intrinsic limit rho = 1 is only ever used through its conditionals
(convolution model), never as a joint precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ValidationError

RHO_MAX = 1.0 - 1e-8


@dataclass(frozen=True)
class SpatialGraph:
    """Binary symmetric adjacency over ``num_areas`` areal units.

    ``edges`` holds each unordered pair once as ``(lo, hi)`` with
    0-based indices. Construction rejects self-loops and out-of-range
    indices; duplicates collapse. Instances are immutable and safe to
    share across chains.
    """

    num_areas: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.num_areas < 1:
            raise ValidationError(f"num_areas must be positive, got {self.num_areas}")
        seen = set()
        for j, k in self.edges:
            if j == k:
                raise ValidationError(f"self-loop on area {j + 1} (w_jj must be 0)")
            if not (0 <= j < self.num_areas and 0 <= k < self.num_areas):
                raise ValidationError(f"edge ({j + 1},{k + 1}) outside 1..{self.num_areas}")
            seen.add((min(j, k), max(j, k)))
        object.__setattr__(self, "edges", tuple(sorted(seen)))

    @classmethod
    def from_edges(cls, num_areas: int, edges) -> "SpatialGraph":
        return cls(num_areas=num_areas, edges=tuple((int(j), int(k)) for j, k in edges))

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """K x K binary adjacency W in CSR form."""
        if not self.edges:
            return sparse.csr_matrix((self.num_areas, self.num_areas))
        rows, cols = [], []
        for j, k in self.edges:
            rows.extend((j, k))
            cols.extend((k, j))
        data = np.ones(len(rows))
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.num_areas, self.num_areas))

    @cached_property
    def neighbor_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_areas, dtype=np.int64)
        for j, k in self.edges:
            counts[j] += 1
            counts[k] += 1
        counts.flags.writeable = False
        return counts

    @cached_property
    def num_components(self) -> int:
        from scipy.sparse.csgraph import connected_components

        if not self.edges:
            return self.num_areas
        n, _ = connected_components(self.adjacency, directed=False)
        return n

    def neighbors_of(self, j: int) -> np.ndarray:
        return self.adjacency.indices[self.adjacency.indptr[j]:self.adjacency.indptr[j + 1]]


@dataclass(frozen=True)
class TemporalGraph:
    """Band (path) adjacency over ``num_periods`` measurement occasions.

    d_tl = 1 iff |l - t| = 1; the structure is implicit and never
    materialized densely.
    """

    num_periods: int

    def __post_init__(self):
        if self.num_periods < 1:
            raise ValidationError(f"num_periods must be positive, got {self.num_periods}")

    def neighbor_count(self, t: int) -> int:
        if self.num_periods == 1:
            return 0
        return 1 if t in (0, self.num_periods - 1) else 2

    def as_spatial(self) -> SpatialGraph:
        """Path graph on the periods, for code that is generic over graphs."""
        return path_graph(self.num_periods)


@dataclass(frozen=True)
class PrecisionMatrix:
    """Sparse symmetric precision matrix with a definiteness flag."""

    dimension: int
    matrix: sparse.csr_matrix = field(repr=False)
    is_strictly_positive_definite: bool = True

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.errors


def validate_graph(graph: SpatialGraph) -> ValidationReport:
    """Check structural invariants; isolation/disconnection warn, not fail.

    Symmetry, binary weights and absence of self-loops are enforced at
    construction and at ingestion; this re-checks them on the built
    adjacency so externally constructed matrices get audited too.
    """
    report = ValidationReport()
    W = graph.adjacency
    if (W != W.T).nnz > 0:
        report.errors.append("adjacency is not symmetric")
    if W.diagonal().any():
        report.errors.append("self-loop present (nonzero diagonal)")
    if W.nnz and not np.all(np.isin(W.data, (0.0, 1.0))):
        report.errors.append("non-binary weight encountered")
    counts = graph.neighbor_counts
    expected = np.asarray(W.sum(axis=1)).ravel()
    if not np.array_equal(counts, expected.astype(np.int64)):
        report.errors.append("neighbor_counts inconsistent with adjacency row sums")
    for j in np.flatnonzero(counts == 0):
        report.warnings.append(f"area {j + 1} isolated (no neighbors)")
    if graph.num_areas > 1 and graph.num_components > 1:
        report.warnings.append(f"graph disconnected ({graph.num_components} components)")
    return report


def path_graph(n: int) -> SpatialGraph:
    return SpatialGraph.from_edges(n, [(t, t + 1) for t in range(n - 1)])


def laplacian(graph: SpatialGraph) -> PrecisionMatrix:
    """Graph Laplacian R (intrinsic-CAR structure matrix); singular."""
    W = graph.adjacency
    R = sparse.diags(graph.neighbor_counts.astype(float)) - W
    return PrecisionMatrix(graph.num_areas, R.tocsr(), is_strictly_positive_definite=False)


def _check_leroux_args(rho: float, tau_sq: float) -> None:
    if not 0.0 <= rho <= RHO_MAX:
        raise ValidationError(
            f"rho must lie in [0, {RHO_MAX}] (intrinsic limit rho=1 is not a valid "
            f"joint precision), got {rho}"
        )
    if tau_sq <= 0.0:
        raise ValidationError(f"tau_sq must be positive, got {tau_sq}")


def build_leroux_precision(graph: SpatialGraph, rho: float, tau_sq: float) -> PrecisionMatrix:
    """Precision (rho*R + (1-rho)*I) / tau_sq of the Leroux field.

    The resulting field has covariance tau_sq * Q(rho)^{-1}. Strict
    diagonal dominance for rho < 1 makes the output positive definite.
    """
    _check_leroux_args(rho, tau_sq)
    R = laplacian(graph).matrix
    eye = sparse.identity(graph.num_areas, format="csr")
    Q = (rho * R + (1.0 - rho) * eye) / tau_sq
    return PrecisionMatrix(graph.num_areas, Q.tocsr(), is_strictly_positive_definite=True)


def build_temporal_precision(tgraph: TemporalGraph, rho_T: float, tau_sq_T: float) -> PrecisionMatrix:
    """Temporal analog of :func:`build_leroux_precision` on the band graph."""
    _check_leroux_args(rho_T, tau_sq_T)
    n = tgraph.num_periods
    deg = np.full(n, 2.0)
    if n == 1:
        deg[:] = 0.0
    else:
        deg[0] = deg[-1] = 1.0
    main = (rho_T * deg + (1.0 - rho_T)) / tau_sq_T
    if n == 1:
        Q = sparse.csr_matrix(np.array([[main[0]]]))
    else:
        off = np.full(n - 1, -rho_T / tau_sq_T)
        Q = sparse.diags([off, main, off], offsets=(-1, 0, 1), format="csr")
    return PrecisionMatrix(n, Q, is_strictly_positive_definite=True)


def leroux_conditional(
    graph: SpatialGraph, psi: np.ndarray, j: int, rho: float, tau_sq: float
) -> tuple[float, float]:
    """Full-conditional mean/variance of psi_j given the other areas.

    mean = rho * sum_k w_jk psi_k / (rho * m_j + 1 - rho)
    var  = tau_sq / (rho * m_j + 1 - rho),   m_j = neighbor count.

    Degenerates gracefully: rho = 0 gives N(0, tau_sq); an isolated
    area gives N(0, tau_sq / (1 - rho)).
    """
    _check_leroux_args(rho, tau_sq)
    if not 0 <= j < graph.num_areas:
        raise ValidationError(f"area index {j} out of range")
    nbrs = graph.neighbors_of(j)
    denom = rho * len(nbrs) + (1.0 - rho)
    mean = rho * float(np.sum(psi[nbrs])) / denom
    return mean, tau_sq / denom


# ---------------------------------------------------------------------------
# Adjacency file formats (both round-trip)
# ---------------------------------------------------------------------------

def write_edge_list(graph: SpatialGraph, path) -> None:
    """Plain-text edge list: header ``K=<num_areas>``, then 1-based ``j,k`` lines."""
    lines = [f"K={graph.num_areas}"]
    lines += [f"{j + 1},{k + 1}" for j, k in graph.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path) -> SpatialGraph:
    text = Path(path).read_text().strip().splitlines()
    if not text or not text[0].replace(" ", "").startswith("K="):
        raise ValidationError(f"{path}: missing 'K=<num_areas>' header")
    try:
        num_areas = int(text[0].split("=", 1)[1])
    except ValueError as exc:
        raise ValidationError(f"{path}: unreadable header {text[0]!r}") from exc
    edges = []
    for lineno, line in enumerate(text[1:], start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 'j,k', got {line!r}")
        j, k = (int(p) for p in parts)
        if j == k:
            raise ValidationError(f"{path}:{lineno}: self-loop ({j},{j})")
        edges.append((j - 1, k - 1))
    return SpatialGraph.from_edges(num_areas, edges)


def write_adjacency_csv(graph: SpatialGraph, path) -> None:
    """Square 0/1 CSV matrix (no header)."""
    W = graph.adjacency.toarray().astype(int)
    np.savetxt(path, W, fmt="%d", delimiter=",")


def read_adjacency_csv(path) -> SpatialGraph:
    W = np.loadtxt(path, delimiter=",", ndmin=2)
    if W.shape[0] != W.shape[1]:
        raise ValidationError(f"{path}: adjacency matrix must be square, got {W.shape}")
    if not np.array_equal(W, W.T):
        raise ValidationError(f"{path}: asymmetric adjacency matrix")
    if np.any((W != 0) & (W != 1)):
        raise ValidationError(f"{path}: non-binary weight encountered")
    if np.any(np.diag(W) != 0):
        raise ValidationError(f"{path}: self-loop on the diagonal")
    rows, cols = np.nonzero(np.triu(W, k=1))
    return SpatialGraph.from_edges(W.shape[0], zip(rows.tolist(), cols.tolist()))
