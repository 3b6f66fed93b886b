"""Command-line entry point: simulate, fit, diagnose, compare, study.

Every option can come from the command line, from a ``--config`` file
of ``key = value`` lines (same keys as the long flags), or for the
seed from the CARLEVEL_SEED environment variable; explicit flags win.
Every command writes a RunManifest (key = value, atomic) that is
itself a valid ``--config`` file, so a finished run can be reproduced
with ``carlevel <command> --config <manifest>``.

Exit codes: 0 success, 2 validation/configuration error, 3 numerical
failure, 4 non-convergence after the allowed retries.

Reproducibility conventions (documented contract): scenario datasets
draw from stream id 1_000_000 + 1000 * scenario (held fixed across
replicates) and effects from 2_000_000 + 1000 * scenario + replicate;
each (scenario, replicate, model) fit derives its chain seed as
seed + 1_000_003*scenario + 1_009*replicate + 101*(model_index + 1).
Results never depend on scheduling or on --jobs.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .compare import (ComparisonReport, dic as dic_fn, summarize_coefficient,
                      summarize_fit, write_comparison_csvs)
from .data import LongDataset, read_dataset_csv, write_dataset_csv
from .diagnostics import R_HAT_THRESHOLD, diagnose_chains, gelman_rubin
from .errors import (CarlevelError, ConfigurationError, ConvergenceError,
                     NumericalError, ValidationError)
from .graph import SpatialGraph, read_adjacency_csv, read_edge_list, write_edge_list
from .kvfile import read_kv, write_kv
from .mcmc import (DEFAULT_BURN_IN, McmcConfig, pooled_deviance_at_posterior_mean,
                   read_chain_csv, run_chains, write_chain_csv, write_chain_meta)
from .models import GibbsModel, ModelSpec
from .plots import grouped_bar_svg
from .sampling import RngStream
from .simulate import (NoiseConfig, Scenario, get_scenario, lattice_geography,
                       scenario_grid, simulate_cross_sectional,
                       simulate_longitudinal)

ENV_SEED = "CARLEVEL_SEED"
EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_NONCONVERGENCE = 2, 3, 4

CLI_TO_FAMILY = {"cl2": "cl2", "car": "car", "rcar": "rcar",
                 "cl3": "cl3", "car-anova": "car_anova", "conv": "conv"}
FAMILY_TO_CLI = {v: k for k, v in CLI_TO_FAMILY.items()}
KIND_ALIASES = {"longitudinal": "longitudinal", "cross-sectional": "cross_sectional",
                "cross_sectional": "cross_sectional"}
DEFAULT_MODELS = {"cross_sectional": ["cl2", "car", "rcar"],
                  "longitudinal": ["cl3", "car_anova", "conv"]}

DATASET_STREAM_BASE = 1_000_000
EFFECT_STREAM_BASE = 2_000_000
MAX_GATE_RETRIES = 2

_MANIFEST_RESERVED = {"command", "version", "outputs", "wall_time_s"}


def dataset_stream(seed: int, scenario: int) -> RngStream:
    return RngStream(seed, DATASET_STREAM_BASE + 1000 * scenario)


def effect_stream(seed: int, scenario: int, replicate: int) -> RngStream:
    return RngStream(seed, EFFECT_STREAM_BASE + 1000 * scenario + replicate)


def fit_seed(seed: int, scenario: int, replicate: int, model_index: int) -> int:
    return seed + 1_000_003 * scenario + 1_009 * replicate + 101 * (model_index + 1)


# ---------------------------------------------------------------------------
# option resolution: flag > config file > environment (seed) > default
# ---------------------------------------------------------------------------

def _cast(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"expected boolean, got {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


class Options:
    """Resolved options plus the record used for the manifest."""

    def __init__(self, args: argparse.Namespace):
        self._args = args
        self._config = {}
        if getattr(args, "config", None):
            self._config = {k: v for k, v in read_kv(args.config).items()
                            if k not in _MANIFEST_RESERVED}
        self.resolved: dict[str, object] = {}

    def get(self, name: str, default=None, required: bool = False):
        attr = name.replace("-", "_")
        value = getattr(self._args, attr, None)
        if value is None and name in self._config:
            template = default if default is not None else ""
            raw = self._config[name]
            value = _cast(raw, template) if default is not None else raw
        if value is None and name == "seed" and ENV_SEED in os.environ:
            value = int(os.environ[ENV_SEED])
        if value is None:
            if required:
                raise ConfigurationError(f"missing required option --{name}")
            value = default
        if value is not None:
            self.resolved[name] = value
        return value


def write_manifest(path, command: str, resolved: dict, outputs: list, started: float) -> None:
    entries = {"command": command, "version": __version__}
    for key, value in resolved.items():
        entries[key] = str(value).lower() if isinstance(value, bool) else value
    entries["outputs"] = ",".join(str(o) for o in outputs)
    entries["wall_time_s"] = repr(time.perf_counter() - started)
    write_kv(path, entries, atomic=True)


def read_graph_file(path) -> SpatialGraph:
    text = Path(path).read_text()
    first = text.lstrip().splitlines()[0] if text.strip() else ""
    if first.replace(" ", "").startswith("K="):
        return read_edge_list(path)
    return read_adjacency_csv(path)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _build_scenario(opts: Options, kind: str) -> Scenario:
    number = opts.get("scenario", None)
    if number is not None:
        return get_scenario(kind, int(number), full=bool(opts.get("full-grid", False)))
    if kind == "cross_sectional":
        tau_sq = opts.get("tau-sq", None)
        rho = opts.get("rho", None)
        if tau_sq is None or rho is None:
            raise ConfigurationError("need --scenario or both --tau-sq and --rho")
        return Scenario(kind=kind, number=0, label="custom", tau_sq=float(tau_sq),
                        rho=float(rho))
    flag_names = {"tau_S_sq": "tau-s-sq", "rho_S": "rho-s",
                  "tau_T_sq": "tau-t-sq", "rho_T": "rho-t"}
    params = {n: opts.get(flag, None) for n, flag in flag_names.items()}
    if any(v is None for v in params.values()):
        raise ConfigurationError(
            "need --scenario or all of --tau-s-sq --rho-s --tau-t-sq --rho-t")
    return Scenario(kind=kind, number=0, label="custom",
                    **{k: float(v) for k, v in params.items()})


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    opts = Options(args)
    kind = KIND_ALIASES.get(opts.get("kind", required=True))
    if kind is None:
        raise ValidationError(f"unknown kind {opts.resolved['kind']!r}")
    rows = int(opts.get("rows", 10))
    cols = int(opts.get("cols", 10))
    n_per_area = int(opts.get("n-per-area", 5))
    seed = int(opts.get("seed", 0))
    replicate = int(opts.get("replicate", 0))
    out = Path(opts.get("out", "dataset.csv"))

    scenario = _build_scenario(opts, kind)
    graph = lattice_geography(rows, cols)
    ds_rng = dataset_stream(seed, scenario.number)
    eff_rng = effect_stream(seed, scenario.number, replicate)
    if kind == "longitudinal":
        periods = int(opts.get("periods", 5))
        ds = simulate_longitudinal(graph, scenario, n_per_area, periods,
                                   rng=ds_rng, effect_rng=eff_rng)
    else:
        ds = simulate_cross_sectional(graph, scenario, n_per_area,
                                      rng=ds_rng, effect_rng=eff_rng)
    ds.meta["base_seed"] = seed
    ds.meta["replicate"] = replicate
    write_dataset_csv(ds, out)
    outputs = [out, Path(str(out)).with_suffix(".meta")]

    adjacency_out = opts.get("adjacency-out", None)
    if adjacency_out:
        write_edge_list(graph, adjacency_out)
        outputs.append(Path(adjacency_out))

    for key, value in scenario.params().items():
        opts.resolved[f"scenario_{key}"] = value
    manifest = out.parent / (out.stem + ".manifest.txt")
    write_manifest(manifest, "simulate", opts.resolved, outputs, started)
    print(f"wrote {out} ({ds.n_obs} rows, K={ds.num_areas}, N={ds.num_periods}) "
          f"and {manifest}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _scalar_names(output) -> list[str]:
    return [n for n in output.parameter_names
            if not (n.startswith("psi_") or n.startswith("r0_") or n.startswith("r1_"))]


def _write_summary_csv(path, chains) -> None:
    from .compare import summarize_posterior
    names = _scalar_names(chains[0])
    lines = ["parameter,median,q2_5,q97_5"]
    for name in names:
        pooled = np.concatenate([c.column(name) for c in chains])
        med, lo, hi = summarize_posterior(pooled)
        lines.append(f"{name},{med!r},{lo!r},{hi!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_fit(args) -> int:
    started = time.perf_counter()
    opts = Options(args)
    model_name = opts.get("model", required=True)
    if model_name not in CLI_TO_FAMILY:
        raise ValidationError(f"unknown model {model_name!r}; expected one of "
                              f"{sorted(CLI_TO_FAMILY)}")
    family = CLI_TO_FAMILY[model_name]
    data = read_dataset_csv(opts.get("data", required=True))
    graph = read_graph_file(opts.get("adjacency", required=True))
    ModelSpec(family=family).validate_for(data)

    burn_in = int(opts.get("burnin", DEFAULT_BURN_IN[family]))
    iters = int(opts.get("iters", burn_in + 10_000))
    config = McmcConfig(
        iterations=iters, burn_in=burn_in, thin=int(opts.get("thin", 10)),
        num_chains=int(opts.get("chains", 2)), seed=int(opts.get("seed", 0)),
        overdispersed_init=bool(opts.get("overdispersed", False)),
        store_area_effects=bool(opts.get("store-area-effects", True)))
    config.check_storage_budget()

    out_dir = Path(opts.get("out-dir", "fit_out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    chains = run_chains(ModelSpec(family=family), data, graph, config,
                        parallel=int(opts.get("jobs", 1)) > 1)

    outputs = []
    chain_files = []
    for chain in chains:
        cpath = out_dir / f"chain_{chain.stream_id}.csv"
        write_chain_csv(chain, cpath)
        write_chain_meta(chain, config, cpath.with_suffix(".meta"))
        chain_files.append(cpath)
        outputs += [cpath, cpath.with_suffix(".meta")]

    _write_summary_csv(out_dir / "summary.csv", chains)
    outputs.append(out_dir / "summary.csv")

    columns = {n: [c.column(n) for c in chains] for n in _scalar_names(chains[0])}
    report = diagnose_chains(columns)
    report.to_csv(out_dir / "diagnostics.csv")
    (out_dir / "diagnostics.txt").write_text(report.to_text() + "\n")
    outputs += [out_dir / "diagnostics.csv", out_dir / "diagnostics.txt"]

    write_kv(out_dir / "fit.meta", {
        "model": model_name, "family": family,
        "data": Path(opts.resolved["data"]).resolve(),
        "chains": ",".join(str(c.resolve()) for c in chain_files),
        "seed": config.seed,
    })
    outputs.append(out_dir / "fit.meta")
    write_manifest(out_dir / "manifest.txt", "fit", opts.resolved, outputs, started)
    print((out_dir / "summary.csv").read_text().rstrip())
    print(f"all_converged = {str(report.all_converged).lower()}")
    return 0


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def cmd_diagnose(args) -> int:
    started = time.perf_counter()
    opts = Options(args)
    chain_paths = args.chains or (opts.get("chains", required=True).split(","))
    opts.resolved["chains"] = ",".join(str(p) for p in chain_paths)
    chains = [read_chain_csv(p) for p in chain_paths]
    names = _scalar_names(chains[0])
    columns = {n: [c.column(n) for c in chains] for n in names}
    report = diagnose_chains(columns)
    out = Path(opts.get("out", "diagnostics.csv"))
    report.to_csv(out)
    print(report.to_text())
    write_manifest(out.parent / (out.stem + ".manifest.txt"), "diagnose",
                   opts.resolved, [out], started)
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def _truth_map(data: LongDataset, spec: ModelSpec) -> dict[str, float]:
    if "beta_true" not in data.meta:
        raise ValidationError("dataset metadata has no beta_true; cannot compare "
                              "against truth")
    beta_true = np.atleast_1d(np.asarray(data.meta["beta_true"], dtype=float))
    trend = spec.time_trend if spec.is_longitudinal else None
    _, names = data.design_matrix(trend)
    if len(names) != beta_true.size:
        raise ValidationError(f"beta_true has {beta_true.size} entries for "
                              f"{len(names)} design columns")
    return {f"beta_{n}": float(v) for n, v in zip(names, beta_true)}


def cmd_compare(args) -> int:
    started = time.perf_counter()
    opts = Options(args)
    fit_dirs = args.fits or opts.get("fits", required=True).split(",")
    opts.resolved["fits"] = ",".join(str(f) for f in fit_dirs)
    out_dir = Path(opts.get("out-dir", "compare_out"))

    per_model: dict[str, list[dict]] = {}
    for fdir in fit_dirs:
        meta = read_kv(Path(fdir) / "fit.meta")
        family = meta["family"]
        data = read_dataset_csv(meta["data"])
        spec = ModelSpec(family=family)
        truth = _truth_map(data, spec)
        chains = [read_chain_csv(p) for p in meta["chains"].split(",")]
        scenario = str(data.meta.get("scenario_number", "custom"))
        entry = {"scenario": scenario, "truth": truth, "coef": {}, }
        for name in truth:
            pooled = np.concatenate([c.column(name) for c in chains])
            med, lo, hi = np.quantile(pooled, [0.5, 0.025, 0.975])
            entry["coef"][name] = (float(med), float(lo), float(hi))
        dev = np.concatenate([c.deviance for c in chains])
        # file-based route: average the per-chain D(posterior mean) values
        # (the in-memory study path recomputes D at the pooled means instead)
        d_at_mean = float(np.mean([c.deviance_at_posterior_mean for c in chains]))
        entry["dic"], entry["p_d"] = dic_fn(dev, d_at_mean)
        entry["mean_deviance"] = float(dev.mean())
        entry["max_loglik"] = float(np.concatenate(
            [c.log_likelihood for c in chains]).max())
        per_model.setdefault(family, []).append(entry)

    coefficients = []
    fits = []
    for family, entries in sorted(per_model.items()):
        scenario = entries[0]["scenario"]
        for name, truth_v in entries[0]["truth"].items():
            medians = [e["coef"][name][0] for e in entries]
            intervals = [(e["coef"][name][1], e["coef"][name][2]) for e in entries]
            coefficients.append(summarize_coefficient(
                scenario, FAMILY_TO_CLI[family], name, truth_v, medians, intervals))
        fits.append(summarize_fit(
            scenario, FAMILY_TO_CLI[family],
            [e["dic"] for e in entries], [e["p_d"] for e in entries],
            [e["mean_deviance"] for e in entries],
            [e["max_loglik"] for e in entries]))
    report = ComparisonReport(coefficients=coefficients, fits=fits)
    paths = write_comparison_csvs(report, out_dir)
    write_manifest(out_dir / "manifest.txt", "compare", opts.resolved,
                   list(paths.values()), started)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


# ---------------------------------------------------------------------------
# study
# ---------------------------------------------------------------------------

@dataclass
class StudyTask:
    kind: str
    scenario_number: int
    replicate: int
    family: str
    model_index: int
    rows: int
    cols: int
    n_per_area: int
    periods: int
    seed: int
    iterations: int
    burn_in: int
    thin: int
    num_chains: int


@dataclass
class TaskResult:
    scenario_number: int
    replicate: int
    family: str
    converged: bool
    iterations_used: int
    truth: dict[str, float]
    coefficients: dict[str, tuple[float, float, float]]  # name -> (med, lo, hi)
    dic: float
    p_d: float
    mean_deviance: float
    max_loglik: float
    area_coefficient: str


@dataclass
class StudyResult:
    report: ComparisonReport
    tasks: list[TaskResult] = field(default_factory=list)
    all_converged: bool = True
    out_dir: Path | None = None


def _simulate_for_task(task: StudyTask) -> tuple:
    graph = lattice_geography(task.rows, task.cols)
    scenario = get_scenario(task.kind, task.scenario_number)
    ds_rng = dataset_stream(task.seed, task.scenario_number)
    eff_rng = effect_stream(task.seed, task.scenario_number, task.replicate)
    if task.kind == "longitudinal":
        data = simulate_longitudinal(graph, scenario, task.n_per_area, task.periods,
                                     rng=ds_rng, effect_rng=eff_rng)
    else:
        data = simulate_cross_sectional(graph, scenario, task.n_per_area,
                                        rng=ds_rng, effect_rng=eff_rng)
    return data, graph


MONITORED_PREFIXES = ("beta_", "sigma_e_sq")


def _gate_r_hat(chains) -> float:
    """Largest r_hat over the monitored parameters (fixed effects and the
    observation variance)."""
    worst = 0.0
    for name in chains[0].parameter_names:
        if not (name.startswith("beta_") or name == "sigma_e_sq"):
            continue
        worst = max(worst, gelman_rubin([c.column(name) for c in chains]))
    return worst


def run_study_task(task: StudyTask) -> TaskResult:
    data, graph = _simulate_for_task(task)
    spec = ModelSpec(family=task.family)
    truth = _truth_map(data, spec)
    area_names = [f"beta_{i.name}" for i in data.covariate_info if i.level == "area"]

    iterations = task.iterations
    burn_in = task.burn_in
    converged = True
    for attempt in range(MAX_GATE_RETRIES + 1):
        config = McmcConfig(
            iterations=iterations, burn_in=burn_in, thin=task.thin,
            num_chains=task.num_chains,
            seed=fit_seed(task.seed, task.scenario_number, task.replicate,
                          task.model_index),
            overdispersed_init=task.num_chains > 1, store_area_effects=False)
        chains = run_chains(spec, data, graph, config, parallel=False)
        if task.num_chains < 2:
            break
        if _gate_r_hat(chains) < R_HAT_THRESHOLD:
            break
        if attempt == MAX_GATE_RETRIES:
            converged = False
            break
        iterations *= 2
        burn_in *= 2

    coefficients = {}
    for name in truth:
        pooled = np.concatenate([c.column(name) for c in chains])
        med, lo, hi = np.quantile(pooled, [0.5, 0.025, 0.975])
        coefficients[name] = (float(med), float(lo), float(hi))
    deviance = np.concatenate([c.deviance for c in chains])
    model = GibbsModel(spec, data, graph)
    d_at_mean = pooled_deviance_at_posterior_mean(model, chains)
    mean_dev = float(deviance.mean())
    p_d = mean_dev - d_at_mean
    return TaskResult(
        scenario_number=task.scenario_number, replicate=task.replicate,
        family=task.family, converged=converged, iterations_used=iterations,
        truth=truth, coefficients=coefficients, dic=mean_dev + p_d, p_d=p_d,
        mean_deviance=mean_dev,
        max_loglik=float(np.concatenate([c.log_likelihood for c in chains]).max()),
        area_coefficient=area_names[0] if area_names else "")


@dataclass
class StudyOptions:
    kind: str
    scenarios: list[int]
    replicates: int
    seed: int = 0
    rows: int = 10
    cols: int = 10
    n_per_area: int = 5
    periods: int = 5
    models: list[str] | None = None
    iterations: dict[str, int] | None = None  # per family, else defaults
    burn_in: dict[str, int] | None = None
    thin: int = 10
    num_chains: int = 2
    jobs: int = 1
    out_dir: Path = Path("study_out")


def _study_tasks(opts: StudyOptions) -> list[StudyTask]:
    models = opts.models or DEFAULT_MODELS[opts.kind]
    tasks = []
    for scenario in opts.scenarios:
        for replicate in range(opts.replicates):
            for model_index, family in enumerate(models):
                burn = (opts.burn_in or {}).get(family, DEFAULT_BURN_IN[family])
                iters = (opts.iterations or {}).get(family, burn + 5000)
                tasks.append(StudyTask(
                    kind=opts.kind, scenario_number=scenario, replicate=replicate,
                    family=family, model_index=model_index, rows=opts.rows,
                    cols=opts.cols, n_per_area=opts.n_per_area, periods=opts.periods,
                    seed=opts.seed, iterations=iters, burn_in=burn, thin=opts.thin,
                    num_chains=opts.num_chains))
    return tasks


def run_study(opts: StudyOptions) -> StudyResult:
    """Simulate, fit and aggregate the full scenario grid selection.

    Pure function of the options: task seeds are derived from indices,
    so neither --jobs nor scheduling order can change any output.
    """
    tasks = _study_tasks(opts)
    if opts.jobs > 1:
        try:
            with ProcessPoolExecutor(max_workers=opts.jobs) as pool:
                results = list(pool.map(run_study_task, tasks))
        except (OSError, PermissionError) as exc:
            warnings.warn(f"process pool unavailable ({exc}); running serially",
                          stacklevel=2)
            results = [run_study_task(t) for t in tasks]
    else:
        results = [run_study_task(t) for t in tasks]

    models = opts.models or DEFAULT_MODELS[opts.kind]
    coefficients = []
    fits = []
    for scenario in opts.scenarios:
        for family in models:
            group = [r for r in results
                     if r.scenario_number == scenario and r.family == family]
            group.sort(key=lambda r: r.replicate)
            for name, truth_v in group[0].truth.items():
                medians = [g.coefficients[name][0] for g in group]
                intervals = [(g.coefficients[name][1], g.coefficients[name][2])
                             for g in group]
                coefficients.append(summarize_coefficient(
                    str(scenario), FAMILY_TO_CLI[family], name, truth_v,
                    medians, intervals))
            fits.append(summarize_fit(
                str(scenario), FAMILY_TO_CLI[family],
                [g.dic for g in group], [g.p_d for g in group],
                [g.mean_deviance for g in group], [g.max_loglik for g in group]))
    report = ComparisonReport(coefficients=coefficients, fits=fits)
    return StudyResult(report=report, tasks=results,
                       all_converged=all(r.converged for r in results))


def _write_study_outputs(opts: StudyOptions, result: StudyResult) -> list[Path]:
    out_dir = Path(opts.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = list(write_comparison_csvs(result.report, out_dir).values())

    lines = ["scenario,replicate,model,dic,p_d,mean_deviance,max_posterior_loglik,"
             "converged,iterations_used"]
    for r in sorted(result.tasks, key=lambda r: (r.scenario_number, r.replicate,
                                                 r.family)):
        lines.append(f"{r.scenario_number},{r.replicate},{FAMILY_TO_CLI[r.family]},"
                     f"{r.dic!r},{r.p_d!r},{r.mean_deviance!r},{r.max_loglik!r},"
                     f"{str(r.converged).lower()},{r.iterations_used}")
    (out_dir / "fit_metrics.csv").write_text("\n".join(lines) + "\n")
    paths.append(out_dir / "fit_metrics.csv")

    lines = ["scenario,replicate,model,coefficient,median,q2_5,q97_5,truth"]
    for r in sorted(result.tasks, key=lambda r: (r.scenario_number, r.replicate,
                                                 r.family)):
        for name in sorted(r.coefficients):
            med, lo, hi = r.coefficients[name]
            lines.append(f"{r.scenario_number},{r.replicate},{FAMILY_TO_CLI[r.family]},"
                         f"{name},{med!r},{lo!r},{hi!r},{r.truth[name]!r}")
    (out_dir / "coefficient_estimates.csv").write_text("\n".join(lines) + "\n")
    paths.append(out_dir / "coefficient_estimates.csv")

    models = opts.models or DEFAULT_MODELS[opts.kind]
    series = [FAMILY_TO_CLI[f] for f in models]
    group_labels = [f"scenario {s}" for s in opts.scenarios]

    area_name = next((r.area_coefficient for r in result.tasks if r.area_coefficient),
                     None)
    if area_name:
        rmse_vals, rmse_whisk = [], []
        for scenario in opts.scenarios:
            row_v, row_w = [], []
            for family in models:
                group = [r for r in result.tasks
                         if r.scenario_number == scenario and r.family == family]
                errors = np.abs([g.coefficients[area_name][0] - g.truth[area_name]
                                 for g in group])
                est = [g.coefficients[area_name][0] for g in group]
                truth_v = group[0].truth[area_name]
                bias = abs(float(np.mean(est)) - truth_v)
                var = float(np.var(est, ddof=1)) if len(est) > 1 else 0.0
                row_v.append(float(np.sqrt(bias**2 + var)))
                row_w.append((float(np.quantile(errors, 0.25)),
                              float(np.quantile(errors, 0.75))))
            rmse_vals.append(row_v)
            rmse_whisk.append(row_w)
        grouped_bar_svg(out_dir / "rmse_by_scenario.svg",
                        f"area-level coefficient RMSE ({opts.kind})",
                        group_labels, series, rmse_vals, rmse_whisk,
                        y_label="RMSE")
        paths.append(out_dir / "rmse_by_scenario.svg")

    dic_vals, dic_whisk = [], []
    for scenario in opts.scenarios:
        row_v, row_w = [], []
        for family in models:
            group = [r for r in result.tasks
                     if r.scenario_number == scenario and r.family == family]
            dics = np.array([g.dic for g in group])
            row_v.append(float(np.median(dics)))
            row_w.append((float(np.quantile(dics, 0.25)),
                          float(np.quantile(dics, 0.75))))
        dic_vals.append(row_v)
        dic_whisk.append(row_w)
    grouped_bar_svg(out_dir / "dic_by_scenario.svg",
                    f"DIC, median with IQR ({opts.kind})",
                    group_labels, series, dic_vals, dic_whisk, y_label="DIC")
    paths.append(out_dir / "dic_by_scenario.svg")
    return paths


def cmd_study(args) -> int:
    started = time.perf_counter()
    opts = Options(args)
    kind = KIND_ALIASES.get(opts.get("kind", required=True))
    if kind is None:
        raise ValidationError(f"unknown kind {opts.resolved['kind']!r}")
    scenario_text = str(opts.get("scenarios", "all"))
    if scenario_text == "all":
        numbers = [s.number for s in scenario_grid(kind)]
    else:
        numbers = [int(x) for x in scenario_text.split(",")]
        for n in numbers:
            get_scenario(kind, n)  # validates
    replicates = int(opts.get("replicates", 20))
    if replicates < 2:
        warnings.warn("fewer than 2 replicates: comparison degrades to bias only",
                      stacklevel=2)
    models_text = opts.get("models", None)
    models = None
    if models_text:
        models = []
        for m in str(models_text).split(","):
            if m not in CLI_TO_FAMILY:
                raise ValidationError(f"unknown model {m!r}")
            models.append(CLI_TO_FAMILY[m])

    burn_override = opts.get("burnin", None)
    iters_override = opts.get("iters", None)
    families = models or DEFAULT_MODELS[kind]
    burn_map = ({f: int(burn_override) for f in families}
                if burn_override is not None else None)
    iters_map = ({f: int(iters_override) for f in families}
                 if iters_override is not None else None)

    study_opts = StudyOptions(
        kind=kind, scenarios=numbers, replicates=replicates,
        seed=int(opts.get("seed", 0)), rows=int(opts.get("rows", 10)),
        cols=int(opts.get("cols", 10)), n_per_area=int(opts.get("n-per-area", 5)),
        periods=int(opts.get("periods", 5)), models=models,
        iterations=iters_map, burn_in=burn_map, thin=int(opts.get("thin", 10)),
        num_chains=int(opts.get("chains", 2)), jobs=int(opts.get("jobs", 1)),
        out_dir=Path(opts.get("out-dir", "study_out")))
    for family in families:
        burn = (burn_map or {}).get(family, DEFAULT_BURN_IN[family])
        iters = (iters_map or {}).get(family, burn + 5000)
        McmcConfig(iterations=iters, burn_in=burn, thin=study_opts.thin,
                   seed=study_opts.seed).check_storage_budget()

    result = run_study(study_opts)
    result.out_dir = study_opts.out_dir
    paths = _write_study_outputs(study_opts, result)
    write_manifest(study_opts.out_dir / "manifest.txt", "study", opts.resolved,
                   paths, started)
    print(f"study complete: {len(result.tasks)} fits, outputs in {study_opts.out_dir}")
    if not result.all_converged:
        raise ConvergenceError(
            "some fits failed the r_hat gate after doubling retries; "
            "see fit_metrics.csv")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carlevel",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value file mirroring the flags")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    add_common(p)
    p.add_argument("--kind", choices=sorted(KIND_ALIASES))
    p.add_argument("--scenario", type=int)
    p.add_argument("--full-grid", action="store_true", default=None)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--n-per-area", type=int)
    p.add_argument("--periods", type=int)
    p.add_argument("--replicate", type=int)
    p.add_argument("--tau-sq", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--tau-s-sq", dest="tau_s_sq", type=float)
    p.add_argument("--rho-s", dest="rho_s", type=float)
    p.add_argument("--tau-t-sq", dest="tau_t_sq", type=float)
    p.add_argument("--rho-t", dest="rho_t", type=float)
    p.add_argument("--out")
    p.add_argument("--adjacency-out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run MCMC chains for one model on one dataset")
    add_common(p)
    p.add_argument("--model", choices=sorted(CLI_TO_FAMILY))
    p.add_argument("--data")
    p.add_argument("--adjacency")
    p.add_argument("--iters", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--overdispersed", action="store_true", default=None)
    p.add_argument("--store-area-effects", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", help="convergence diagnostics for chain files")
    add_common(p)
    p.add_argument("--chains", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("compare", help="bias/RMSE/coverage/DIC across fits")
    add_common(p)
    p.add_argument("--fits", nargs="+")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("study", help="full simulate-fit-compare replication")
    add_common(p)
    p.add_argument("--kind", choices=sorted(KIND_ALIASES))
    p.add_argument("--scenarios", help="comma list of scenario numbers, or 'all'")
    p.add_argument("--replicates", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--n-per-area", type=int)
    p.add_argument("--periods", type=int)
    p.add_argument("--models", help="comma list, default per kind")
    p.add_argument("--iters", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
