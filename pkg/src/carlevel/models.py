"""Model families and their full-conditional updates.

Six families share the Gaussian observation equation

    y = X beta + (area effect) [+ individual intercept/slope] + e

and differ in the area-effect block:

    cl2        psi_j  exchangeable N(0, tau_sq)            (single period)
    car        psi_j  Leroux CAR(rho, tau_sq)              (single period)
    rcar       car + projection onto the orthogonal complement of the
               area-level fixed-effect columns
    cl3        psi_tj = u0_j + g(t) u1_j                   (growth form)
    car_anova  psi_tj = phi_j + delta_t + omega_tj, phi/delta Leroux
    conv       psi_tj = phi_tj + omega_tj, phi_t intrinsic CAR per
               period with period-specific variances

All conditionals are conjugate normal / inverse-gamma draws except the
autocorrelation parameters, which use slice sampling against
0.5*logdet Q(rho) - x'Q(rho)x/(2 tau_sq). Every conditional here is
unit-tested against a finite-difference oracle on the dense joint
log-kernel, so derivations are machine-checked rather than trusted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .data import LongDataset
from .errors import NumericalError, ValidationError
from .graph import SpatialGraph, laplacian, path_graph
from .sampling import BandedPrecisionFamily, RngStream, sample_inverse_gamma, slice_sample

CROSS_SECTIONAL_FAMILIES = ("cl2", "car", "rcar")
LONGITUDINAL_FAMILIES = ("cl3", "car_anova", "conv")
FAMILIES = CROSS_SECTIONAL_FAMILIES + LONGITUDINAL_FAMILIES

CENTER_TOL = 1e-10


def default_time_trend(t: int) -> float:
    """Linear growth g on 1-based period numbers: period index 0 -> 1.0."""
    return float(t + 1)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters shared by all families.

    a, b are the inverse-gamma shape/scale for every variance
    component. beta coefficients get independent N(0, beta_prior_sd^2)
    priors. The individual-effect covariance gets an inverse-Wishart
    prior with ``individual_cov_df`` degrees of freedom and scale
    ``individual_cov_scale * I``.
    """

    a: float = 1.0
    b: float = 0.01
    beta_prior_sd: float = math.sqrt(1000.0)
    rho_bounds: tuple[float, float] = (1e-8, 1.0 - 1e-8)
    individual_cov_df: float = 3.0
    individual_cov_scale: float = 0.01

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValidationError(f"inverse-gamma a, b must be positive, got ({self.a}, {self.b})")
        if self.beta_prior_sd <= 0:
            raise ValidationError("beta_prior_sd must be positive")
        lo, hi = self.rho_bounds
        if not (0.0 < lo < hi < 1.0):
            raise ValidationError(f"rho_bounds must satisfy 0 < lo < hi < 1, got {self.rho_bounds}")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    time_trend: callable = default_time_trend
    prior: PriorConfig = field(default_factory=PriorConfig)
    include_interaction: bool = True
    fixed: dict = field(default_factory=dict)  # parameter name -> pinned value

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}; expected one of {FAMILIES}")

    @property
    def is_longitudinal(self) -> bool:
        return self.family in LONGITUDINAL_FAMILIES

    def validate_for(self, data: LongDataset) -> None:
        if self.is_longitudinal and data.num_periods < 2:
            raise ValidationError(
                f"family {self.family!r} needs at least 2 periods, data has {data.num_periods}")
        if not self.is_longitudinal and data.num_periods != 1:
            raise ValidationError(
                f"family {self.family!r} is cross-sectional but data has "
                f"{data.num_periods} periods")


@dataclass
class ModelState:
    """All latent quantities of one chain; family determines which are set."""

    family: str
    beta: np.ndarray
    sigma_e_sq: float
    # cross-sectional CAR block
    psi: np.ndarray | None = None
    tau_sq: float | None = None
    rho: float | None = None
    # classical growth block
    u0: np.ndarray | None = None
    u1: np.ndarray | None = None
    sigma_u0_sq: float | None = None
    sigma_u1_sq: float | None = None
    # CAR ANOVA block
    phi: np.ndarray | None = None
    delta: np.ndarray | None = None
    omega: np.ndarray | None = None  # (N, K)
    tau_S_sq: float | None = None
    tau_T_sq: float | None = None
    sigma_omega_sq: float | None = None
    rho_S: float | None = None
    rho_T: float | None = None
    # convolution block
    phi_t: np.ndarray | None = None  # (N, K)
    omega_t: np.ndarray | None = None  # (N, K)
    tau_t_sq: np.ndarray | None = None  # (N,)
    sigma_omega_t_sq: np.ndarray | None = None  # (N,)
    # individual block (longitudinal families)
    r0: np.ndarray | None = None
    r1: np.ndarray | None = None
    r_cov: np.ndarray | None = None  # 2x2

    def copy(self) -> "ModelState":
        def dup(v):
            return v.copy() if isinstance(v, np.ndarray) else v
        return ModelState(**{k: dup(v) for k, v in self.__dict__.items()})

    def check_invariants(self, rho_bounds=(0.0, 1.0)) -> None:
        """Positivity, rho ranges, SPD individual covariance, centering."""
        if self.sigma_e_sq <= 0:
            raise ValidationError("sigma_e_sq must be positive")
        for name in ("tau_sq", "sigma_u0_sq", "sigma_u1_sq", "tau_S_sq",
                     "tau_T_sq", "sigma_omega_sq"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValidationError(f"{name} must be positive, got {v}")
        for name in ("tau_t_sq", "sigma_omega_t_sq"):
            v = getattr(self, name)
            if v is not None and np.any(v <= 0):
                raise ValidationError(f"{name} must be positive")
        lo, hi = rho_bounds
        for name in ("rho", "rho_S", "rho_T"):
            v = getattr(self, name)
            if v is not None and not (lo <= v <= hi):
                raise ValidationError(f"{name}={v} outside [{lo}, {hi}]")
        if self.r_cov is not None:
            if not np.allclose(self.r_cov, self.r_cov.T):
                raise ValidationError("individual covariance not symmetric")
            if np.any(np.linalg.eigvalsh(self.r_cov) <= 0):
                raise ValidationError("individual covariance not positive definite")
        if self.family == "car_anova":
            if abs(float(np.mean(self.phi))) > CENTER_TOL:
                raise ValidationError("phi not centered")
            if abs(float(np.mean(self.delta))) > CENTER_TOL:
                raise ValidationError("delta not centered")
        if self.family == "conv":
            if np.max(np.abs(self.phi_t.mean(axis=1))) > CENTER_TOL:
                raise ValidationError("phi_t rows not centered")


@dataclass(frozen=True)
class RestrictionMatrix:
    """Projection machinery for the restricted CAR family.

    Z stacks a constant column with the per-area values of the
    time-invariant area-level covariates; the projector maps onto the
    orthogonal complement of span(Z). ``beta_columns`` names the design
    column each Z column corresponds to, so removed components can be
    folded into the fixed effects without changing the likelihood.
    """

    Z: np.ndarray
    projector: np.ndarray
    beta_columns: tuple[int, ...]


def build_restriction(data: LongDataset, design_names: list[str]) -> RestrictionMatrix:
    Z_cov, names = data.area_level_values()
    Z = np.column_stack([np.ones(data.num_areas)] + [Z_cov[:, i] for i in range(Z_cov.shape[1])])
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise ValidationError("restriction matrix Z is rank-deficient "
                              "(collinear area-level covariates)")
    ZtZ_inv_Zt = np.linalg.solve(Z.T @ Z, Z.T)
    projector = np.eye(data.num_areas) - Z @ ZtZ_inv_Zt
    cols = [design_names.index("intercept")] + [design_names.index(n) for n in names]
    return RestrictionMatrix(Z=Z, projector=projector, beta_columns=tuple(cols))


def restrict_projection(psi: np.ndarray, restriction: RestrictionMatrix) -> np.ndarray:
    """Component of psi orthogonal to every column of Z."""
    psi = np.asarray(psi, dtype=float)
    if psi.shape[0] != restriction.projector.shape[0]:
        raise ValidationError(f"psi has length {psi.shape[0]}, projector expects "
                              f"{restriction.projector.shape[0]}")
    return restriction.projector @ psi


def _greedy_coloring(graph: SpatialGraph) -> list[np.ndarray]:
    """Partition areas into independent sets for blocked single-site Gibbs."""
    K = graph.num_areas
    color = np.full(K, -1, dtype=np.int64)
    order = np.argsort(-graph.neighbor_counts, kind="stable")
    for j in order:
        used = {color[k] for k in graph.neighbors_of(j) if color[k] >= 0}
        c = 0
        while c in used:
            c += 1
        color[j] = c
    return [np.flatnonzero(color == c) for c in range(color.max() + 1)]


class GibbsModel:
    """Precomputed structures plus the full-conditional updates for one fit.

    Construction validates spec/data/graph consistency and builds the
    index machinery one sweep needs (group sums via bincount, graph
    coloring, banded precision templates for the slice targets).
    Instances hold no chain state; states are passed in and mutated.
    """

    def __init__(self, spec: ModelSpec, data: LongDataset, graph: SpatialGraph):
        spec.validate_for(data)
        if graph.num_areas != data.num_areas:
            raise ValidationError(f"graph has {graph.num_areas} areas, data declares "
                                  f"{data.num_areas}")
        self.spec = spec
        self.data = data
        self.graph = graph
        self.K = data.num_areas
        self.N = data.num_periods
        self.n = data.n_obs

        trend = spec.time_trend if spec.is_longitudinal else None
        self.X, self.design_names = data.design_matrix(trend)
        self.p = self.X.shape[1]
        self.XtX = self.X.T @ self.X

        self.area_idx = data.area
        self.t_idx = data.period
        self.ind_idx = data.individual
        self.cell_idx = self.t_idx * self.K + self.area_idx
        self.n_cells = self.N * self.K
        self.counts_area = np.bincount(self.area_idx, minlength=self.K).astype(float)
        self.counts_period = np.bincount(self.t_idx, minlength=self.N).astype(float)
        self.counts_cell = np.bincount(self.cell_idx, minlength=self.n_cells).astype(float)

        self.degrees = graph.neighbor_counts.astype(float)
        self.W = graph.adjacency
        self.colors = _greedy_coloring(graph)
        edges = np.array(graph.edges, dtype=np.int64).reshape(-1, 2)
        self.edge_a, self.edge_b = edges[:, 0], edges[:, 1]
        self._spatial_family = BandedPrecisionFamily(laplacian(graph).matrix)

        if spec.is_longitudinal:
            self.n_ind = data.num_individuals
            self.counts_ind = np.bincount(self.ind_idx, minlength=self.n_ind).astype(float)
            self.g_obs = np.array([spec.time_trend(t) for t in self.t_idx], dtype=float)
            self.sum_g_ind = np.bincount(self.ind_idx, weights=self.g_obs, minlength=self.n_ind)
            self.sum_g2_ind = np.bincount(self.ind_idx, weights=self.g_obs**2,
                                          minlength=self.n_ind)
            self.sum_g2_area = np.bincount(self.area_idx, weights=self.g_obs**2,
                                           minlength=self.K)
        else:
            self.n_ind = 0
            self.g_obs = None

        if spec.family == "car_anova":
            tpath = path_graph(self.N)
            self.t_degrees = tpath.neighbor_counts.astype(float)
            self.t_colors = _greedy_coloring(tpath)
            self.W_time = tpath.adjacency
            self._temporal_family = BandedPrecisionFamily(laplacian(tpath).matrix)

        if spec.family == "conv":
            self.isolated = self.degrees == 0
            if self.isolated.any():
                warnings.warn(
                    f"{int(self.isolated.sum())} isolated area(s): intrinsic conditional "
                    "undefined there; falling back to N(0, tau_t_sq)", stacklevel=2)
            if len(self.edge_a):
                ncomp, _ = connected_components(self.W, directed=False)
            else:
                ncomp = self.K
            # rank of the intrinsic quadratic form plus one exchangeable
            # term per isolated area
            self.intrinsic_count = (self.K - ncomp) + int(self.isolated.sum())

        self.restriction = (build_restriction(data, self.design_names)
                            if spec.family == "rcar" else None)

        prior = spec.prior
        self.beta_prior_prec = np.full(self.p, prior.beta_prior_sd**-2)

    # ------------------------------------------------------------------
    # state construction
    # ------------------------------------------------------------------

    def init_state(self, rng: RngStream, overdispersed: bool = False) -> ModelState:
        """Least-squares beta, zero effects, unit variances, rho at 0.5."""
        if np.linalg.matrix_rank(self.X) < self.p:
            raise ValidationError("rank-deficient design matrix")
        beta, *_ = np.linalg.lstsq(self.X, self.data.y, rcond=None)
        if overdispersed:
            beta = beta + rng.generator.uniform(-2.0, 2.0, size=self.p) * self.spec.prior.beta_prior_sd

        K, N = self.K, self.N
        st = ModelState(family=self.spec.family, beta=beta, sigma_e_sq=1.0)
        fam = self.spec.family
        if fam in CROSS_SECTIONAL_FAMILIES:
            st.psi = np.zeros(K)
            st.tau_sq = 1.0
            st.rho = 0.0 if fam == "cl2" else 0.5
        else:
            st.r0 = np.zeros(self.n_ind)
            st.r1 = np.zeros(self.n_ind)
            st.r_cov = np.eye(2)
        if fam == "cl3":
            st.u0 = np.zeros(K)
            st.u1 = np.zeros(K)
            st.sigma_u0_sq = 1.0
            st.sigma_u1_sq = 1.0
        elif fam == "car_anova":
            st.phi = np.zeros(K)
            st.delta = np.zeros(N)
            st.omega = np.zeros((N, K))
            st.tau_S_sq = 1.0
            st.tau_T_sq = 1.0
            st.sigma_omega_sq = 1.0
            st.rho_S = 0.5
            st.rho_T = 0.5
        elif fam == "conv":
            st.phi_t = np.zeros((N, K))
            st.omega_t = np.zeros((N, K))
            st.tau_t_sq = np.ones(N)
            st.sigma_omega_t_sq = np.ones(N)
        for name, value in self.spec.fixed.items():
            if not hasattr(st, name):
                raise ValidationError(f"cannot fix unknown parameter {name!r}")
            setattr(st, name, value)
        return st

    # ------------------------------------------------------------------
    # contribution helpers
    # ------------------------------------------------------------------

    def area_effect_matrix(self, state: ModelState) -> np.ndarray:
        """Total area contribution psi_tj as an (N, K) array."""
        fam = state.family
        if fam in CROSS_SECTIONAL_FAMILIES:
            return state.psi.reshape(1, self.K)
        if fam == "cl3":
            g = np.array([self.spec.time_trend(t) for t in range(self.N)])
            return state.u0[None, :] + g[:, None] * state.u1[None, :]
        if fam == "car_anova":
            psi = state.phi[None, :] + state.delta[:, None]
            return psi + state.omega if self.spec.include_interaction else psi
        return state.phi_t + state.omega_t

    def area_contrib(self, state: ModelState) -> np.ndarray:
        return self.area_effect_matrix(state).ravel()[self.cell_idx]

    def ind_contrib(self, state: ModelState) -> np.ndarray:
        if not self.spec.is_longitudinal:
            return np.zeros(self.n)
        return state.r0[self.ind_idx] + state.r1[self.ind_idx] * self.g_obs

    def mean_vector(self, state: ModelState) -> np.ndarray:
        return self.X @ state.beta + self.area_contrib(state) + self.ind_contrib(state)

    def log_likelihood(self, state: ModelState) -> float:
        """Conditional Gaussian log-likelihood given all latent effects."""
        resid = self.data.y - self.mean_vector(state)
        s2 = state.sigma_e_sq
        return float(-0.5 * self.n * math.log(2.0 * math.pi * s2)
                     - 0.5 * float(resid @ resid) / s2)

    def deviance(self, state: ModelState) -> float:
        return -2.0 * self.log_likelihood(state)

    # ------------------------------------------------------------------
    # fixed effects
    # ------------------------------------------------------------------

    def beta_conditional(self, state: ModelState) -> tuple[np.ndarray, np.ndarray]:
        resid = self.data.y - self.area_contrib(state) - self.ind_contrib(state)
        prec = self.XtX / state.sigma_e_sq + np.diag(self.beta_prior_prec)
        rhs = self.X.T @ resid / state.sigma_e_sq
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        return cov @ rhs, cov

    def update_fixed_effects(self, state: ModelState, rng: RngStream) -> ModelState:
        mean, cov = self.beta_conditional(state)
        L = np.linalg.cholesky(cov)
        state.beta = mean + L @ rng.generator.standard_normal(self.p)
        return state

    # ------------------------------------------------------------------
    # conditional moments for area-level blocks (all sites at once,
    # given the current values of every other quantity)
    # ------------------------------------------------------------------

    def _leroux_prior_terms(self, x, rho, tau_sq, W, degrees):
        prior_prec = (rho * degrees + (1.0 - rho)) / tau_sq
        prior_cross = rho * (W @ x) / tau_sq  # equals prior_prec * prior_mean
        return prior_prec, prior_cross

    def _moments_psi(self, state: ModelState) -> tuple[np.ndarray, np.ndarray]:
        resid = self.data.y - self.X @ state.beta
        s = np.bincount(self.area_idx, weights=resid, minlength=self.K)
        prior_prec, prior_cross = self._leroux_prior_terms(
            state.psi, state.rho, state.tau_sq, self.W, self.degrees)
        post_prec = prior_prec + self.counts_area / state.sigma_e_sq
        post_mean = (prior_cross + s / state.sigma_e_sq) / post_prec
        return post_mean, 1.0 / post_prec

    def _moments_u0(self, state: ModelState) -> tuple[np.ndarray, np.ndarray]:
        resid = (self.data.y - self.X @ state.beta - self.ind_contrib(state)
                 - state.u1[self.area_idx] * self.g_obs)
        s = np.bincount(self.area_idx, weights=resid, minlength=self.K)
        post_prec = 1.0 / state.sigma_u0_sq + self.counts_area / state.sigma_e_sq
        return (s / state.sigma_e_sq) / post_prec, 1.0 / post_prec

    def _moments_u1(self, state: ModelState) -> tuple[np.ndarray, np.ndarray]:
        resid = (self.data.y - self.X @ state.beta - self.ind_contrib(state)
                 - state.u0[self.area_idx])
        s = np.bincount(self.area_idx, weights=self.g_obs * resid, minlength=self.K)
        post_prec = 1.0 / state.sigma_u1_sq + self.sum_g2_area / state.sigma_e_sq
        return (s / state.sigma_e_sq) / post_prec, 1.0 / post_prec

    def _anova_resid(self, state: ModelState, drop: str) -> np.ndarray:
        resid = self.data.y - self.X @ state.beta - self.ind_contrib(state)
        if drop != "phi":
            resid = resid - state.phi[self.area_idx]
        if drop != "delta":
            resid = resid - state.delta[self.t_idx]
        if drop != "omega" and self.spec.include_interaction:
            resid = resid - state.omega.ravel()[self.cell_idx]
        return resid

    def _moments_phi(self, state: ModelState) -> tuple[np.ndarray, np.ndarray]:
        s = np.bincount(self.area_idx, weights=self._anova_resid(state, "phi"),
                        minlength=self.K)
        prior_prec, prior_cross = self._leroux_prior_terms(
            state.phi, state.rho_S, state.tau_S_sq, self.W, self.degrees)
        post_prec = prior_prec + self.counts_area / state.sigma_e_sq
        return (prior_cross + s / state.sigma_e_sq) / post_prec, 1.0 / post_prec

    def _moments_delta(self, state: ModelState) -> tuple[np.ndarray, np.ndarray]:
        s = np.bincount(self.t_idx, weights=self._anova_resid(state, "delta"),
                        minlength=self.N)
        prior_prec, prior_cross = self._leroux_prior_terms(
            state.delta, state.rho_T, state.tau_T_sq, self.W_time, self.t_degrees)
        post_prec = prior_prec + self.counts_period / state.sigma_e_sq
        return (prior_cross + s / state.sigma_e_sq) / post_prec, 1.0 / post_prec

    def _moments_omega(self, state: ModelState) -> tuple[np.ndarray, np.ndarray]:
        s = np.bincount(self.cell_idx, weights=self._anova_resid(state, "omega"),
                        minlength=self.n_cells)
        post_prec = 1.0 / state.sigma_omega_sq + self.counts_cell / state.sigma_e_sq
        return (s / state.sigma_e_sq) / post_prec, 1.0 / post_prec

    def _moments_phi_t(self, state: ModelState) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell intrinsic-CAR conditionals; isolated areas fall back
        to the exchangeable N(0, tau_t_sq) prior."""
        resid = (self.data.y - self.X @ state.beta - self.ind_contrib(state)
                 - state.omega_t.ravel()[self.cell_idx])
        s = np.bincount(self.cell_idx, weights=resid, minlength=self.n_cells).reshape(
            self.N, self.K)
        cnt = self.counts_cell.reshape(self.N, self.K)
        tau = state.tau_t_sq[:, None]
        nbr = (self.W @ state.phi_t.T).T  # (N, K) neighbor sums per period
        prior_prec = np.where(self.isolated[None, :], 1.0 / tau, self.degrees[None, :] / tau)
        prior_cross = np.where(self.isolated[None, :], 0.0, nbr / tau)
        post_prec = prior_prec + cnt / state.sigma_e_sq
        post_mean = (prior_cross + s / state.sigma_e_sq) / post_prec
        return post_mean.ravel(), (1.0 / post_prec).ravel()

    def _moments_omega_t(self, state: ModelState) -> tuple[np.ndarray, np.ndarray]:
        resid = (self.data.y - self.X @ state.beta - self.ind_contrib(state)
                 - state.phi_t.ravel()[self.cell_idx])
        s = np.bincount(self.cell_idx, weights=resid, minlength=self.n_cells)
        prior_prec = np.repeat(1.0 / state.sigma_omega_t_sq, self.K)
        post_prec = prior_prec + self.counts_cell / state.sigma_e_sq
        return (s / state.sigma_e_sq) / post_prec, 1.0 / post_prec

    def conditional_moments(self, state: ModelState, block: str, index) -> tuple[float, float]:
        """Single-site full-conditional (mean, variance); oracle-test hook.

        ``index`` is an area j for K-vectors, a period t for delta, or a
        (t, j) pair for the space-time arrays.
        """
        means, variances = getattr(self, f"_moments_{block}")(state)
        if isinstance(index, tuple):
            flat = index[0] * self.K + index[1]
        else:
            flat = index
        return float(means[flat]), float(variances[flat])

    # ------------------------------------------------------------------
    # area-effect updates
    # ------------------------------------------------------------------

    def _chromatic_update(self, vector, moments_fn, state, rng, colors):
        for color in colors:
            means, variances = moments_fn(state)
            vector[color] = means[color] + np.sqrt(variances[color]) * \
                rng.generator.standard_normal(len(color))

    def update_area_effects(self, state: ModelState, rng: RngStream) -> ModelState:
        fam = state.family
        gen = rng.generator
        if fam in CROSS_SECTIONAL_FAMILIES:
            if fam == "cl2" or state.rho == 0.0:
                means, variances = self._moments_psi(state)
                state.psi = means + np.sqrt(variances) * gen.standard_normal(self.K)
            else:
                self._chromatic_update(state.psi, self._moments_psi, state, rng, self.colors)
            if fam == "rcar":
                self._apply_restriction(state)
        elif fam == "cl3":
            means, variances = self._moments_u0(state)
            state.u0 = means + np.sqrt(variances) * gen.standard_normal(self.K)
            means, variances = self._moments_u1(state)
            state.u1 = means + np.sqrt(variances) * gen.standard_normal(self.K)
        elif fam == "car_anova":
            self._chromatic_update(state.phi, self._moments_phi, state, rng, self.colors)
            self._chromatic_update(state.delta, self._moments_delta, state, rng, self.t_colors)
            if self.spec.include_interaction:
                means, variances = self._moments_omega(state)
                draw = means + np.sqrt(variances) * gen.standard_normal(self.n_cells)
                state.omega = draw.reshape(self.N, self.K)
        elif fam == "conv":
            flat = state.phi_t.ravel()
            for color in self.colors:
                means, variances = self._moments_phi_t(state)
                cells = (np.arange(self.N)[:, None] * self.K + color[None, :]).ravel()
                flat[cells] = means[cells] + np.sqrt(variances[cells]) * \
                    gen.standard_normal(len(cells))
                state.phi_t = flat.reshape(self.N, self.K)
            means, variances = self._moments_omega_t(state)
            draw = means + np.sqrt(variances) * gen.standard_normal(self.n_cells)
            state.omega_t = draw.reshape(self.N, self.K)
        return state

    def _apply_restriction(self, state: ModelState) -> None:
        """Project psi onto span(Z)^perp, folding the removed component
        into the matching fixed effects (likelihood unchanged)."""
        Z = self.restriction.Z
        coef = np.linalg.solve(Z.T @ Z, Z.T @ state.psi)
        state.psi = state.psi - Z @ coef
        for c, col in zip(coef, self.restriction.beta_columns):
            state.beta[col] += c

    # ------------------------------------------------------------------
    # individual effects
    # ------------------------------------------------------------------

    def individual_conditionals(self, state: ModelState):
        """Per-individual bivariate conditional means (n_ind, 2) and
        covariances (n_ind, 2, 2) for (r0, r1)."""
        resid = self.data.y - self.X @ state.beta - self.area_contrib(state)
        s0 = np.bincount(self.ind_idx, weights=resid, minlength=self.n_ind)
        s1 = np.bincount(self.ind_idx, weights=self.g_obs * resid, minlength=self.n_ind)
        prior_prec = np.linalg.inv(state.r_cov)
        se = state.sigma_e_sq
        p00 = prior_prec[0, 0] + self.counts_ind / se
        p01 = prior_prec[0, 1] + self.sum_g_ind / se
        p11 = prior_prec[1, 1] + self.sum_g2_ind / se
        det = p00 * p11 - p01 * p01
        if np.any(det <= 0):
            raise NumericalError("individual-effect conditional precision not PD")
        c00, c01, c11 = p11 / det, -p01 / det, p00 / det
        b0, b1 = s0 / se, s1 / se
        means = np.column_stack([c00 * b0 + c01 * b1, c01 * b0 + c11 * b1])
        covs = np.empty((self.n_ind, 2, 2))
        covs[:, 0, 0], covs[:, 0, 1] = c00, c01
        covs[:, 1, 0], covs[:, 1, 1] = c01, c11
        return means, covs

    def update_individual_effects(self, state: ModelState, rng: RngStream) -> ModelState:
        if not self.spec.is_longitudinal:
            raise ValidationError("individual effects exist only for longitudinal families")
        means, covs = self.individual_conditionals(state)
        # vectorized 2x2 Cholesky
        l00 = np.sqrt(covs[:, 0, 0])
        l10 = covs[:, 0, 1] / l00
        l11 = np.sqrt(covs[:, 1, 1] - l10 * l10)
        z = rng.generator.standard_normal((self.n_ind, 2))
        state.r0 = means[:, 0] + l00 * z[:, 0]
        state.r1 = means[:, 1] + l10 * z[:, 0] + l11 * z[:, 1]
        if "r_cov" not in self.spec.fixed:
            state.r_cov = self._draw_individual_cov(state, rng)
        return state

    def _draw_individual_cov(self, state: ModelState, rng: RngStream) -> np.ndarray:
        """Conjugate inverse-Wishart update of the 2x2 (r0, r1) covariance."""
        prior = self.spec.prior
        R = np.column_stack([state.r0, state.r1])
        scale_post = prior.individual_cov_scale * np.eye(2) + R.T @ R
        df_post = prior.individual_cov_df + self.n_ind
        # Bartlett draw of W ~ Wishart(df, inv(scale_post)); covariance is inv(W)
        L = np.linalg.cholesky(np.linalg.inv(scale_post))
        gen = rng.generator
        A = np.zeros((2, 2))
        A[0, 0] = math.sqrt(gen.chisquare(df_post))
        A[1, 1] = math.sqrt(gen.chisquare(df_post - 1))
        A[1, 0] = gen.standard_normal()
        LA = L @ A
        W = LA @ LA.T
        cov = np.linalg.inv(W)
        return 0.5 * (cov + cov.T)

    # ------------------------------------------------------------------
    # variances
    # ------------------------------------------------------------------

    def _edge_quad(self, x: np.ndarray) -> float:
        """x' R x over the spatial graph: sum over edges of (x_a - x_b)^2."""
        if not len(self.edge_a):
            return 0.0
        d = x[self.edge_a] - x[self.edge_b]
        return float(d @ d)

    def variance_conditionals(self, state: ModelState) -> dict[str, tuple[float, float]]:
        """IG(shape, scale) parameters of every variance full conditional."""
        a, b = self.spec.prior.a, self.spec.prior.b
        out: dict[str, tuple[float, float]] = {}
        resid = self.data.y - self.mean_vector(state)
        out["sigma_e_sq"] = (a + 0.5 * self.n, b + 0.5 * float(resid @ resid))
        fam = state.family
        if fam in CROSS_SECTIONAL_FAMILIES:
            quad = state.rho * self._edge_quad(state.psi) + \
                (1.0 - state.rho) * float(state.psi @ state.psi)
            out["tau_sq"] = (a + 0.5 * self.K, b + 0.5 * quad)
        elif fam == "cl3":
            out["sigma_u0_sq"] = (a + 0.5 * self.K, b + 0.5 * float(state.u0 @ state.u0))
            out["sigma_u1_sq"] = (a + 0.5 * self.K, b + 0.5 * float(state.u1 @ state.u1))
        elif fam == "car_anova":
            quad_s = state.rho_S * self._edge_quad(state.phi) + \
                (1.0 - state.rho_S) * float(state.phi @ state.phi)
            out["tau_S_sq"] = (a + 0.5 * self.K, b + 0.5 * quad_s)
            d = state.delta
            quad_t = state.rho_T * float(np.sum(np.diff(d) ** 2)) + \
                (1.0 - state.rho_T) * float(d @ d)
            out["tau_T_sq"] = (a + 0.5 * self.N, b + 0.5 * quad_t)
            if self.spec.include_interaction:
                om = state.omega.ravel()
                out["sigma_omega_sq"] = (a + 0.5 * self.n_cells, b + 0.5 * float(om @ om))
        elif fam == "conv":
            for t in range(self.N):
                x = state.phi_t[t]
                ss = self._edge_quad(x) + float(x[self.isolated] @ x[self.isolated])
                out[f"tau_t_sq[{t}]"] = (a + 0.5 * self.intrinsic_count, b + 0.5 * ss)
                w = state.omega_t[t]
                out[f"sigma_omega_t_sq[{t}]"] = (a + 0.5 * self.K, b + 0.5 * float(w @ w))
        return out

    def update_variances(self, state: ModelState, rng: RngStream) -> ModelState:
        fixed = self.spec.fixed
        for name, (shape, scale) in self.variance_conditionals(state).items():
            base = name.split("[")[0]
            if base in fixed:
                continue
            draw = sample_inverse_gamma(rng, shape, scale)
            if "[" in name:
                t = int(name.split("[")[1].rstrip("]"))
                getattr(state, base)[t] = draw
            else:
                setattr(state, name, draw)
        return state

    # ------------------------------------------------------------------
    # autocorrelation parameters
    # ------------------------------------------------------------------

    def rho_log_kernel(self, state: ModelState, which: str):
        """log p(field | rho, tau_sq) + log Uniform prior, up to a constant.

        0.5 * logdet Q(rho) - field' Q(rho) field / (2 tau_sq); the
        determinant comes from a banded Cholesky refactorization at
        each evaluated rho.
        """
        if which == "rho_T":
            fam_ops = self._temporal_family
            x, tau = state.delta, state.tau_T_sq
            quad_edges = float(np.sum(np.diff(x) ** 2))
        else:
            fam_ops = self._spatial_family
            if which == "rho":
                x, tau = state.psi, state.tau_sq
            else:
                x, tau = state.phi, state.tau_S_sq
            quad_edges = self._edge_quad(x)
        quad_eye = float(x @ x)

        def log_kernel(rho: float) -> float:
            logdet = fam_ops.log_determinant(rho)
            quad = rho * quad_edges + (1.0 - rho) * quad_eye
            return 0.5 * logdet - 0.5 * quad / tau

        return log_kernel

    def update_autocorrelation(self, state: ModelState, rng: RngStream) -> ModelState:
        lo, hi = self.spec.prior.rho_bounds
        fixed = self.spec.fixed
        targets = []
        if state.family in ("car", "rcar") and "rho" not in fixed:
            targets.append("rho")
        if state.family == "car_anova":
            if "rho_S" not in fixed:
                targets.append("rho_S")
            if "rho_T" not in fixed:
                targets.append("rho_T")
        for which in targets:
            current = float(np.clip(getattr(state, which), lo + 1e-12, hi - 1e-12))
            new = slice_sample(rng, self.rho_log_kernel(state, which), current, lo, hi)
            setattr(state, which, new)
        return state

    # ------------------------------------------------------------------
    # centering / sweep
    # ------------------------------------------------------------------

    def recenter(self, state: ModelState) -> ModelState:
        """Sum-to-zero identification constraints, means folded upward.

        car_anova: row means of omega move into delta, the means of
        delta and phi move into the intercept. conv: per-period means
        of phi_t are removed (intrinsic flat direction); their average
        is absorbable by the intercept and is transferred there.
        """
        icol = self.design_names.index("intercept")
        if state.family == "car_anova":
            if self.spec.include_interaction:
                row_means = state.omega.mean(axis=1)
                state.omega = state.omega - row_means[:, None]
                state.delta = state.delta + row_means
            m_delta = float(state.delta.mean())
            state.delta = state.delta - m_delta
            m_phi = float(state.phi.mean())
            state.phi = state.phi - m_phi
            state.beta[icol] += m_delta + m_phi
        elif state.family == "conv":
            period_means = state.phi_t.mean(axis=1)
            state.phi_t = state.phi_t - period_means[:, None]
            state.beta[icol] += float(period_means.mean())
        return state

    def gibbs_sweep(self, state: ModelState, rng: RngStream) -> ModelState:
        state = self.update_fixed_effects(state, rng)
        state = self.update_area_effects(state, rng)
        if self.spec.is_longitudinal:
            state = self.update_individual_effects(state, rng)
        state = self.update_variances(state, rng)
        state = self.update_autocorrelation(state, rng)
        state = self.recenter(state)
        return state

    # ------------------------------------------------------------------
    # parameter bookkeeping for chain storage
    # ------------------------------------------------------------------

    def scalar_parameters(self, state: ModelState) -> dict[str, float]:
        out = {f"beta_{name}": float(v) for name, v in zip(self.design_names, state.beta)}
        out["sigma_e_sq"] = float(state.sigma_e_sq)
        fam = state.family
        if fam in CROSS_SECTIONAL_FAMILIES:
            out["tau_sq"] = float(state.tau_sq)
            if fam != "cl2":
                out["rho"] = float(state.rho)
        elif fam == "cl3":
            out["sigma_u0_sq"] = float(state.sigma_u0_sq)
            out["sigma_u1_sq"] = float(state.sigma_u1_sq)
        elif fam == "car_anova":
            out["tau_S_sq"] = float(state.tau_S_sq)
            out["tau_T_sq"] = float(state.tau_T_sq)
            if self.spec.include_interaction:
                out["sigma_omega_sq"] = float(state.sigma_omega_sq)
            out["rho_S"] = float(state.rho_S)
            out["rho_T"] = float(state.rho_T)
        elif fam == "conv":
            for t in range(self.N):
                out[f"tau_t_sq_{t + 1}"] = float(state.tau_t_sq[t])
            for t in range(self.N):
                out[f"sigma_omega_t_sq_{t + 1}"] = float(state.sigma_omega_t_sq[t])
        if self.spec.is_longitudinal:
            out["sigma_r0"] = float(state.r_cov[0, 0])
            out["sigma_r01"] = float(state.r_cov[0, 1])
            out["sigma_r1"] = float(state.r_cov[1, 1])
        return out

    def latent_blocks(self, state: ModelState) -> dict[str, np.ndarray]:
        """Latent-effect arrays tracked for posterior means / storage."""
        out: dict[str, np.ndarray] = {"area_effect": self.area_effect_matrix(state).ravel()}
        if self.spec.is_longitudinal:
            out["r0"] = state.r0.copy()
            out["r1"] = state.r1.copy()
        return out

    def area_effect_names(self) -> list[str]:
        if self.N == 1:
            return [f"psi_{j + 1}" for j in range(self.K)]
        return [f"psi_t{t + 1}_j{j + 1}" for t in range(self.N) for j in range(self.K)]

    def mean_state_deviance(self, beta_mean, sigma_e_sq_mean, latent_means) -> float:
        """Deviance at posterior means of coefficients and latent effects."""
        mu = self.X @ beta_mean + latent_means["area_effect"][self.cell_idx]
        if self.spec.is_longitudinal:
            mu = mu + latent_means["r0"][self.ind_idx] + latent_means["r1"][self.ind_idx] * self.g_obs
        resid = self.data.y - mu
        ll = (-0.5 * self.n * math.log(2.0 * math.pi * sigma_e_sq_mean)
              - 0.5 * float(resid @ resid) / sigma_e_sq_mean)
        return -2.0 * ll
