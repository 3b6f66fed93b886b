"""Chain orchestration: burn-in, thinning, storage, multi-chain runs.

Iteration counts are raw sweeps, before thinning; a run stores
floor((iterations - burn_in) / thin) draws, taking sweep s when
s > burn_in and (s - burn_in) is a multiple of thin. Chains draw from
independent Philox streams keyed by (seed, stream_id), so a chain's
output never depends on whether other chains run beside it.
"""

from __future__ import annotations

import csv
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LongDataset
from .errors import ConfigurationError, NumericalError
from .graph import SpatialGraph
from .kvfile import read_kv, write_kv
from .models import GibbsModel, ModelSpec
from .sampling import RngStream

# Burn-in defaults per family, from observed stabilization behavior:
# growth/convolution variants settle early, the cross-sectional CAR
# variants need more, and the space-time ANOVA is the slowest (it can
# need far more than this floor on hard problems; override as needed).
DEFAULT_BURN_IN = {
    "cl2": 8000,
    "cl3": 8000,
    "conv": 8000,
    "car": 15000,
    "rcar": 15000,
    "car_anova": 25000,
}
MIN_STORED_DRAWS = 100


@dataclass(frozen=True)
class McmcConfig:
    iterations: int
    burn_in: int
    thin: int = 10
    num_chains: int = 2
    seed: int = 0
    overdispersed_init: bool = False
    store_area_effects: bool = True
    store_individual_effects: bool = False

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigurationError(f"iterations must be positive, got {self.iterations}")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigurationError(
                f"burn_in must lie in [0, iterations), got {self.burn_in}/{self.iterations}")
        if self.thin < 1:
            raise ConfigurationError(f"thin must be >= 1, got {self.thin}")
        if self.num_chains < 1:
            raise ConfigurationError(f"num_chains must be >= 1, got {self.num_chains}")

    @property
    def num_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def check_storage_budget(self) -> None:
        """User-facing runs must keep at least MIN_STORED_DRAWS draws."""
        if self.num_stored < MIN_STORED_DRAWS:
            raise ConfigurationError(
                f"(iterations - burn_in)/thin = {self.num_stored} stored draws; "
                f"need at least {MIN_STORED_DRAWS}")


@dataclass
class ChainOutput:
    parameter_names: list[str]
    draws: np.ndarray                # (stored, P)
    deviance: np.ndarray             # (stored,)
    log_likelihood: np.ndarray       # (stored,)
    seed: int
    stream_id: int
    family: str
    wall_time: float
    beta_mean: np.ndarray
    sigma_e_sq_mean: float
    latent_means: dict[str, np.ndarray] = field(default_factory=dict)
    deviance_at_posterior_mean: float = float("nan")

    @property
    def num_stored(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            idx = self.parameter_names.index(name)
        except ValueError as exc:
            raise KeyError(f"no stored parameter {name!r}") from exc
        return self.draws[:, idx]


def run_chain(
    spec: ModelSpec,
    data: LongDataset,
    graph: SpatialGraph,
    config: McmcConfig,
    stream_id: int,
) -> ChainOutput:
    """One chain, deterministic given (config.seed, stream_id)."""
    model = GibbsModel(spec, data, graph)
    rng = RngStream(config.seed, stream_id)
    state = model.init_state(rng, overdispersed=config.overdispersed_init)

    names = list(model.scalar_parameters(state).keys())
    if config.store_area_effects:
        names += model.area_effect_names()
    if config.store_individual_effects and spec.is_longitudinal:
        names += [f"r0_{i + 1}" for i in range(model.n_ind)]
        names += [f"r1_{i + 1}" for i in range(model.n_ind)]

    stored = config.num_stored
    draws = np.empty((stored, len(names)))
    deviance = np.empty(stored)
    loglik = np.empty(stored)
    beta_acc = np.zeros(model.p)
    sigma_acc = 0.0
    latent_acc = {k: np.zeros_like(v) for k, v in model.latent_blocks(state).items()}

    start = time.perf_counter()
    row = 0
    for sweep in range(1, config.iterations + 1):
        try:
            state = model.gibbs_sweep(state, rng)
        except Exception as exc:
            raise NumericalError(
                f"chain {stream_id}: numerical failure at sweep {sweep}: {exc}") from exc
        if sweep <= config.burn_in or (sweep - config.burn_in) % config.thin:
            continue
        scalars = model.scalar_parameters(state)
        vals = list(scalars.values())
        latents = model.latent_blocks(state)
        if config.store_area_effects:
            vals.extend(latents["area_effect"])
        if config.store_individual_effects and spec.is_longitudinal:
            vals.extend(latents["r0"])
            vals.extend(latents["r1"])
        draws[row] = vals
        ll = model.log_likelihood(state)
        loglik[row] = ll
        deviance[row] = -2.0 * ll
        beta_acc += state.beta
        sigma_acc += state.sigma_e_sq
        for k, v in latents.items():
            latent_acc[k] += v
        row += 1
    assert row == stored, f"storage audit failed: {row} != {stored}"
    elapsed = time.perf_counter() - start

    beta_mean = beta_acc / stored
    sigma_mean = sigma_acc / stored
    latent_means = {k: v / stored for k, v in latent_acc.items()}
    d_at_mean = model.mean_state_deviance(beta_mean, sigma_mean, latent_means)
    return ChainOutput(
        parameter_names=names, draws=draws, deviance=deviance, log_likelihood=loglik,
        seed=config.seed, stream_id=stream_id, family=spec.family, wall_time=elapsed,
        beta_mean=beta_mean, sigma_e_sq_mean=sigma_mean, latent_means=latent_means,
        deviance_at_posterior_mean=d_at_mean)


def _run_chain_star(args):
    return run_chain(*args)


def run_chains(
    spec: ModelSpec,
    data: LongDataset,
    graph: SpatialGraph,
    config: McmcConfig,
    parallel: bool = True,
) -> list[ChainOutput]:
    """All chains of one fit; output is a pure function of the inputs.

    Chains run on stream ids 0..num_chains-1. With ``parallel`` they
    run in separate processes; scheduling cannot change results because
    streams are independent and outputs are gathered by chain index.
    Failed chains are reported with a warning and the survivors are
    returned; if every chain fails the first error propagates.
    """
    tasks = [(spec, data, graph, config, cid) for cid in range(config.num_chains)]
    results: list[ChainOutput | None] = [None] * config.num_chains
    errors: list[tuple[int, Exception]] = []
    if parallel and config.num_chains > 1:
        try:
            with ProcessPoolExecutor(max_workers=config.num_chains) as pool:
                futures = [pool.submit(_run_chain_star, t) for t in tasks]
                for cid, fut in enumerate(futures):
                    try:
                        results[cid] = fut.result()
                    except Exception as exc:  # noqa: BLE001
                        errors.append((cid, exc))
        except (OSError, PermissionError) as exc:
            warnings.warn(f"process pool unavailable ({exc}); running chains serially",
                          stacklevel=2)
            results = [None] * config.num_chains
            errors = []
            parallel = False
    if not parallel or config.num_chains == 1:
        for cid, task in enumerate(tasks):
            if results[cid] is not None:
                continue
            try:
                results[cid] = _run_chain_star(task)
            except Exception as exc:  # noqa: BLE001
                errors.append((cid, exc))
    for cid, exc in errors:
        warnings.warn(f"chain {cid} failed: {exc}", stacklevel=2)
    survivors = [r for r in results if r is not None]
    if not survivors:
        raise NumericalError(f"all {config.num_chains} chains failed; first error: {errors[0][1]}")
    return survivors


def pooled_deviance_at_posterior_mean(model: GibbsModel, chains: list[ChainOutput]) -> float:
    """Deviance at the across-chain posterior means (equal chain lengths)."""
    beta = np.mean([c.beta_mean for c in chains], axis=0)
    sigma = float(np.mean([c.sigma_e_sq_mean for c in chains]))
    latent = {k: np.mean([c.latent_means[k] for c in chains], axis=0)
              for k in chains[0].latent_means}
    return model.mean_state_deviance(beta, sigma, latent)


# ---------------------------------------------------------------------------
# chain files: CSV of draws + key=value sidecar
# ---------------------------------------------------------------------------

def write_chain_csv(output: ChainOutput, path) -> None:
    """One row per stored draw; deviance/log-likelihood as final columns."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(output.parameter_names + ["deviance", "log_likelihood"])
        for i in range(output.num_stored):
            row = [repr(float(v)) for v in output.draws[i]]
            row.append(repr(float(output.deviance[i])))
            row.append(repr(float(output.log_likelihood[i])))
            writer.writerow(row)


def chain_meta_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".meta")


def write_chain_meta(output: ChainOutput, config: McmcConfig, path) -> None:
    entries = {
        "family": output.family,
        "seed": output.seed,
        "stream_id": output.stream_id,
        "iterations": config.iterations,
        "burn_in": config.burn_in,
        "thin": config.thin,
        "num_stored": output.num_stored,
        "deviance_at_posterior_mean": repr(output.deviance_at_posterior_mean),
        "wall_time_s": repr(output.wall_time),
    }
    write_kv(path, entries)


def read_chain_csv(path, meta_path=None) -> ChainOutput:
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.asarray(rows)
    names = header[:-2]
    meta = {}
    if meta_path is None:
        candidate = chain_meta_path(path)
        meta_path = candidate if candidate.exists() else None
    if meta_path is not None:
        meta = read_kv(meta_path)
    p = len(names)
    return ChainOutput(
        parameter_names=names,
        draws=arr[:, :p],
        deviance=arr[:, p],
        log_likelihood=arr[:, p + 1],
        seed=int(meta.get("seed", -1)),
        stream_id=int(meta.get("stream_id", -1)),
        family=meta.get("family", "unknown"),
        wall_time=float(meta.get("wall_time_s", "nan")),
        beta_mean=np.array([]),
        sigma_e_sq_mean=float("nan"),
        deviance_at_posterior_mean=float(meta.get("deviance_at_posterior_mean", "nan")),
    )
