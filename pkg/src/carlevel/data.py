"""Long-format observational data with design metadata.

A :class:`LongDataset` holds one row per (period, individual) pair:
outcome, area membership and raw covariate values, plus per-covariate
metadata (individual vs area level, time-varying or not) that the
restricted-CAR machinery needs. Periods, individuals and areas are
0-based internally and 1-based in CSV files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .kvfile import format_floats, parse_floats, read_kv, write_kv

LEVELS = ("individual", "area")


@dataclass(frozen=True)
class CovariateInfo:
    name: str
    level: str  # "individual" | "area"
    time_varying: bool = False

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValidationError(f"covariate level must be one of {LEVELS}, got {self.level!r}")


@dataclass
class LongDataset:
    period: np.ndarray      # (n,) int, 0-based
    individual: np.ndarray  # (n,) int, 0-based contiguous
    area: np.ndarray        # (n,) int, 0-based
    y: np.ndarray           # (n,) float
    covariates: np.ndarray  # (n, c) float
    covariate_info: tuple[CovariateInfo, ...]
    num_areas: int
    num_periods: int
    meta: dict = field(default_factory=dict)  # truth/seed sidecar payload

    def __post_init__(self):
        self.period = np.asarray(self.period, dtype=np.int64)
        self.individual = np.asarray(self.individual, dtype=np.int64)
        self.area = np.asarray(self.area, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=float)
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        if self.covariates.shape[0] != self.n_obs and self.covariates.size:
            self.covariates = self.covariates.reshape(self.n_obs, -1)
        self.covariate_info = tuple(self.covariate_info)
        self.validate()

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def num_individuals(self) -> int:
        return int(self.individual.max()) + 1 if self.n_obs else 0

    @property
    def num_covariates(self) -> int:
        return len(self.covariate_info)

    def validate(self) -> None:
        n = self.n_obs
        for name, arr in (("period", self.period), ("individual", self.individual),
                          ("area", self.area)):
            if arr.shape != (n,):
                raise ValidationError(f"{name} has shape {arr.shape}, expected ({n},)")
        if self.covariates.shape != (n, self.num_covariates):
            raise ValidationError(
                f"covariates shape {self.covariates.shape} does not match "
                f"{self.num_covariates} declared covariates over {n} rows")
        if n == 0:
            raise ValidationError("dataset has no observations")
        if self.area.min() < 0 or self.area.max() >= self.num_areas:
            raise ValidationError("area index outside 0..K-1")
        if self.period.min() < 0 or self.period.max() >= self.num_periods:
            raise ValidationError("period index outside 0..N-1")
        if self.individual.min() < 0:
            raise ValidationError("negative individual id")
        pairs = set(zip(self.period.tolist(), self.individual.tolist()))
        if len(pairs) != n:
            raise ValidationError("duplicate (period, individual) observation")
        # every individual must live in exactly one area
        order = np.argsort(self.individual, kind="stable")
        ind_sorted = self.individual[order]
        area_sorted = self.area[order]
        starts = np.flatnonzero(np.diff(ind_sorted, prepend=-1))
        for s, e in zip(starts, np.append(starts[1:], n)):
            if np.unique(area_sorted[s:e]).size != 1:
                raise ValidationError(f"individual {ind_sorted[s]} observed in multiple areas")

    def area_counts(self) -> np.ndarray:
        """Observations per area, n_j."""
        return np.bincount(self.area, minlength=self.num_areas)

    def area_of_individual(self) -> np.ndarray:
        out = np.zeros(self.num_individuals, dtype=np.int64)
        out[self.individual] = self.area
        return out

    def design_matrix(self, time_trend=None) -> tuple[np.ndarray, list[str]]:
        """Intercept + covariates (+ time column when a trend is given).

        The time column holds ``g(period)`` and is appended last; its
        coefficient is the population time slope.
        """
        cols = [np.ones(self.n_obs)]
        names = ["intercept"]
        for idx, info in enumerate(self.covariate_info):
            cols.append(self.covariates[:, idx])
            names.append(info.name)
        if time_trend is not None:
            cols.append(np.array([time_trend(t) for t in self.period], dtype=float))
            names.append("time")
        return np.column_stack(cols), names

    def area_level_values(self) -> tuple[np.ndarray, list[str]]:
        """Per-area values of the time-invariant area-level covariates.

        Used to build the restriction matrix Z for the RCAR family.
        """
        idx = [i for i, info in enumerate(self.covariate_info)
               if info.level == "area" and not info.time_varying]
        Z = np.zeros((self.num_areas, len(idx)))
        for col, i in enumerate(idx):
            vals = np.full(self.num_areas, np.nan)
            vals[self.area] = self.covariates[:, i]
            per_area = self.covariates[:, i]
            # verify constancy within areas
            for j in range(self.num_areas):
                sel = self.area == j
                if sel.any() and np.ptp(per_area[sel]) > 0:
                    raise ValidationError(
                        f"covariate {self.covariate_info[i].name!r} declared area-level "
                        f"but varies within area {j + 1}")
            vals[np.isnan(vals)] = 0.0
            Z[:, col] = vals
        return Z, [self.covariate_info[i].name for i in idx]

    def single_period(self) -> bool:
        return self.num_periods == 1

    def with_outcome(self, y: np.ndarray) -> "LongDataset":
        return replace(self, y=np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# CSV + sidecar round trip
# ---------------------------------------------------------------------------

def write_dataset_csv(ds: LongDataset, path, meta_path=None) -> None:
    """Columns t,i,j,y,x1,... with 1-based t/i/j; metadata in a kv sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "i", "j", "y"] + [info.name for info in ds.covariate_info])
        for row in range(ds.n_obs):
            writer.writerow(
                [ds.period[row] + 1, ds.individual[row] + 1, ds.area[row] + 1,
                 repr(float(ds.y[row]))]
                + [repr(float(v)) for v in ds.covariates[row]])
    if meta_path is None:
        meta_path = default_meta_path(path)
    entries = {
        "num_areas": ds.num_areas,
        "num_periods": ds.num_periods,
        "covariate_names": ",".join(info.name for info in ds.covariate_info),
        "covariate_levels": ",".join(info.level for info in ds.covariate_info),
        "covariate_time_varying": ",".join(
            str(info.time_varying).lower() for info in ds.covariate_info),
    }
    for key, value in ds.meta.items():
        entries[key] = format_floats(value) if isinstance(value, (list, tuple, np.ndarray)) else value
    write_kv(meta_path, entries)


def default_meta_path(csv_path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_suffix(".meta")


_META_STRING_KEYS = ("kind", "scenario_label")


def read_dataset_csv(path, meta_path=None) -> LongDataset:
    path = Path(path)
    if meta_path is None:
        meta_path = default_meta_path(path)
        if not Path(meta_path).exists():
            raise ValidationError(
                f"{path}: metadata sidecar {meta_path} not found; pass it explicitly")
    kv = read_kv(meta_path)
    names = kv.get("covariate_names", "").split(",") if kv.get("covariate_names") else []
    levels = kv.get("covariate_levels", "").split(",") if kv.get("covariate_levels") else []
    varying = [v == "true" for v in kv.get("covariate_time_varying", "").split(",") if v]
    info = tuple(CovariateInfo(n, l, tv) for n, l, tv in zip(names, levels, varying))

    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["t", "i", "j", "y"]:
            raise ValidationError(f"{path}: header must start with t,i,j,y")
        if header[4:] != list(names):
            raise ValidationError(f"{path}: covariate columns {header[4:]} do not match "
                                  f"sidecar names {names}")
        rows = [row for row in reader if row]
    n = len(rows)
    period = np.empty(n, dtype=np.int64)
    individual = np.empty(n, dtype=np.int64)
    area = np.empty(n, dtype=np.int64)
    y = np.empty(n)
    X = np.empty((n, len(info)))
    for r, row in enumerate(rows):
        period[r] = int(row[0]) - 1
        individual[r] = int(row[1]) - 1
        area[r] = int(row[2]) - 1
        y[r] = float(row[3])
        X[r] = [float(v) for v in row[4:]]

    meta = {}
    consumed = {"num_areas", "num_periods", "covariate_names", "covariate_levels",
                "covariate_time_varying"}
    for key, value in kv.items():
        if key in consumed:
            continue
        if key in _META_STRING_KEYS:
            meta[key] = value
            continue
        try:
            parsed = parse_floats(value)
            meta[key] = parsed if len(parsed) > 1 else parsed[0]
        except ValueError:
            meta[key] = value
    return LongDataset(
        period=period, individual=individual, area=area, y=y, covariates=X,
        covariate_info=info, num_areas=int(kv["num_areas"]),
        num_periods=int(kv["num_periods"]), meta=meta)
