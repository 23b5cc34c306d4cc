"""Simulation-study driver: validated YAML config, replication loop, summaries.

A study is a grid of model cells evaluated on shared simulated datasets.
Replicate r draws its dataset from seed stream (base_seed, r), identical
for every cell, and cell k fits with stream (base_seed, r, k + 1), so runs
are reproducible and cells are comparable on the same data.  Records are
appended to per-cell CSV files as replicates complete, which makes an
interrupted run resumable: already-recorded replicates are skipped, and
the final pass rewrites each file sorted by replicate id so a resumed run
produces the same bytes as an uninterrupted one (runtimes aside).
"""

from __future__ import annotations

import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np
import yaml

from .basis import make_knots
from .dataio import append_record, read_records, read_table, write_records, write_table
from .estimands import rmst_draws, rmstd_draws, summarize
from .inference import FitOptions, laplace_sample, mcmc_sample
from .metrics import (
    PERFORMANCE_COLUMNS, ReplicateRecord, filter_converged, performance_table,
)
from .model import ModelSpec
from .model import SurvivalDataset
from .simgen import (
    DGM_TYPES, HR_TYPES, TreatedArm, simulate_arm, simulate_trial, true_rmst,
    true_rmst_difference,
)

SCHEMA_VERSION = 1
TWO_ARM_ESTIMANDS = ("rmstd", "rmst_treated", "rmst_control")
ONE_ARM_ESTIMANDS = ("rmst",)
_PRIOR_KEYS = ("eta_sd", "beta_sd", "sigma_shape", "sigma_rate", "tau_shape", "tau_rate")


class ConfigError(ValueError):
    """Raised when a study configuration is malformed."""


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}; allowed keys are "
                          f"{sorted(allowed)}")


def _req(d, key, where):
    if key not in d:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return d[key]


def _as_int(v, where, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {v}")
    return v


def _as_float(v, where, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    v = float(v)
    if positive and v <= 0:
        raise ConfigError(f"{where}: must be positive, got {v}")
    return v


def _as_bool(v, where):
    if not isinstance(v, bool):
        raise ConfigError(f"{where}: expected true/false, got {v!r}")
    return v


def _as_str(v, where, choices=None):
    if not isinstance(v, str):
        raise ConfigError(f"{where}: expected a string, got {v!r}")
    if choices and v not in choices:
        raise ConfigError(f"{where}: must be one of {sorted(choices)}, got {v!r}")
    return v


def _build_component(d, registry, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping with a 'kind' key")
    kind = _as_str(_req(d, "kind", where), f"{where}.kind", choices=registry)
    cls = registry[kind]
    allowed = {f.name for f in fields(cls)} | {"kind"}
    _check_keys(d, allowed, where)
    params = {}
    for key, value in d.items():
        if key == "kind":
            continue
        params[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class ScenarioConfig:
    """Control-arm mechanism plus an optional treatment hazard-ratio form.

    A scenario without an ``hr`` entry describes a single-arm study.
    """

    control_kind: str
    control_params: tuple
    hr_kind: str | None = None
    hr_params: tuple = ()

    @classmethod
    def from_dict(cls, d, where="scenario"):
        _check_keys(d, {"control", "hr"}, where)
        _build_component(_req(d, "control", where), DGM_TYPES, f"{where}.control")
        hr_kind = None
        hr_params = ()
        if d.get("hr") is not None:
            _build_component(d["hr"], HR_TYPES, f"{where}.hr")
            hr_kind = d["hr"]["kind"]
            hr_params = tuple(sorted(
                (k, tuple(v) if isinstance(v, list) else v)
                for k, v in d["hr"].items() if k != "kind"))
        return cls(control_kind=d["control"]["kind"],
                   control_params=tuple(sorted(
                       (k, tuple(v) if isinstance(v, list) else v)
                       for k, v in d["control"].items() if k != "kind")),
                   hr_kind=hr_kind,
                   hr_params=hr_params)

    @property
    def two_arm(self) -> bool:
        return self.hr_kind is not None


@dataclass(frozen=True)
class HrGridConfig:
    start: float
    stop: float
    points: int

    @classmethod
    def from_dict(cls, d, where="hr_grid"):
        _check_keys(d, {"start", "stop", "points"}, where)
        start = _as_float(_req(d, "start", where), f"{where}.start", positive=True)
        stop = _as_float(_req(d, "stop", where), f"{where}.stop")
        points = _as_int(_req(d, "points", where), f"{where}.points", minimum=2)
        if stop <= start:
            raise ConfigError(f"{where}: stop must exceed start")
        return cls(start=start, stop=stop, points=points)

    def values(self):
        return np.linspace(self.start, self.stop, self.points)


@dataclass(frozen=True)
class CellConfig:
    name: str
    df: int
    mode: str = "ph"
    bsmooth: bool = True
    smoothing: str = "random_walk"
    method: str = "mcmc"
    chains: int = 4
    draws: int = 2000
    warmup: int | None = None
    target_accept: float = 0.8
    max_depth: int = 10
    priors: tuple = ()

    @classmethod
    def from_dict(cls, d, where):
        allowed = {"name", "df", "mode", "bsmooth", "smoothing", "method", "chains",
                   "draws", "warmup", "target_accept", "max_depth", "priors"}
        _check_keys(d, allowed, where)
        name = _as_str(_req(d, "name", where), f"{where}.name")
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
            raise ConfigError(f"{where}.name: {name!r} is not filesystem-safe "
                              "(use letters, digits, '._-')")
        kwargs = {
            "name": name,
            "df": _as_int(_req(d, "df", where), f"{where}.df", minimum=2),
            "mode": _as_str(d.get("mode", "ph"), f"{where}.mode",
                            choices=("none", "ph", "nonph")),
            "bsmooth": _as_bool(d.get("bsmooth", True), f"{where}.bsmooth"),
            "smoothing": _as_str(d.get("smoothing", "random_walk"), f"{where}.smoothing",
                                 choices=("random_walk", "exchangeable")),
            "method": _as_str(d.get("method", "mcmc"), f"{where}.method",
                              choices=("mcmc", "laplace")),
            "chains": _as_int(d.get("chains", 4), f"{where}.chains", minimum=1),
            "draws": _as_int(d.get("draws", 2000), f"{where}.draws", minimum=10),
            "target_accept": _as_float(d.get("target_accept", 0.8),
                                       f"{where}.target_accept", positive=True),
            "max_depth": _as_int(d.get("max_depth", 10), f"{where}.max_depth", minimum=1),
        }
        warmup = d.get("warmup")
        kwargs["warmup"] = None if warmup is None else _as_int(
            warmup, f"{where}.warmup", minimum=10)
        priors = d.get("priors", {})
        _check_keys(priors, _PRIOR_KEYS, f"{where}.priors")
        kwargs["priors"] = tuple(sorted(
            (k, _as_float(v, f"{where}.priors.{k}", positive=True))
            for k, v in priors.items()))
        return cls(**kwargs)

    def fit_options(self) -> FitOptions:
        return FitOptions(chains=self.chains, draws=self.draws, warmup=self.warmup,
                          max_depth=self.max_depth, target_accept=self.target_accept)


@dataclass(frozen=True)
class StudyConfig:
    n_replicates: int
    n_per_arm: int
    scenario: ScenarioConfig
    cells: tuple[CellConfig, ...]
    estimand: str = "rmstd"
    name: str = "study"
    base_seed: int | None = None
    censor_time: float | None = None
    horizon: float | None = None
    workers: int = 1
    hr_grid: HrGridConfig | None = None
    policy: str = "none"

    @classmethod
    def from_dict(cls, d):
        where = "config"
        allowed = {"schema_version", "name", "base_seed", "n_replicates", "n_per_arm",
                   "censor_time", "horizon", "workers", "scenario", "estimand",
                   "hr_grid", "models", "metrics"}
        _check_keys(d, allowed, where)
        version = _as_int(_req(d, "schema_version", where), f"{where}.schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"{where}.schema_version: expected {SCHEMA_VERSION}, "
                              f"got {version}")
        scenario = ScenarioConfig.from_dict(_req(d, "scenario", where))
        models = _req(d, "models", where)
        if not isinstance(models, list) or not models:
            raise ConfigError(f"{where}.models: expected a non-empty list")
        cells = tuple(CellConfig.from_dict(m, f"{where}.models[{i}]")
                      for i, m in enumerate(models))
        names = [c.name for c in cells]
        if len(set(names)) != len(names):
            raise ConfigError(f"{where}.models: duplicate cell names")
        for i, c in enumerate(cells):
            if scenario.two_arm and c.mode == "none":
                raise ConfigError(f"{where}.models[{i}].mode: 'none' needs a "
                                  "single-arm scenario (no 'hr' entry)")
            if not scenario.two_arm and c.mode != "none":
                raise ConfigError(f"{where}.models[{i}].mode: {c.mode!r} needs a "
                                  "two-arm scenario (add an 'hr' entry)")

        censor = d.get("censor_time")
        censor = None if censor is None else _as_float(censor, f"{where}.censor_time",
                                                       positive=True)
        horizon = d.get("horizon")
        horizon = None if horizon is None else _as_float(horizon, f"{where}.horizon",
                                                         positive=True)
        if horizon is None:
            if censor is None:
                raise ConfigError(f"{where}: need horizon when censor_time is absent")
            horizon = censor

        metrics = d.get("metrics", {})
        _check_keys(metrics, {"policy"}, f"{where}.metrics")
        policy = _as_str(metrics.get("policy", "none"), f"{where}.metrics.policy",
                         choices=("none", "strict"))

        base_seed = d.get("base_seed")
        base_seed = None if base_seed is None else _as_int(base_seed, f"{where}.base_seed")
        hr_grid = d.get("hr_grid")
        hr_grid = None if hr_grid is None else HrGridConfig.from_dict(hr_grid)
        if hr_grid is not None and not scenario.two_arm:
            raise ConfigError(f"{where}.hr_grid: needs a two-arm scenario")

        allowed_estimands = TWO_ARM_ESTIMANDS if scenario.two_arm else ONE_ARM_ESTIMANDS
        default_estimand = "rmstd" if scenario.two_arm else "rmst"

        return cls(
            n_replicates=_as_int(_req(d, "n_replicates", where),
                                 f"{where}.n_replicates", minimum=1),
            n_per_arm=_as_int(_req(d, "n_per_arm", where), f"{where}.n_per_arm", minimum=2),
            scenario=scenario,
            cells=cells,
            estimand=_as_str(d.get("estimand", default_estimand), f"{where}.estimand",
                             choices=allowed_estimands),
            name=_as_str(d.get("name", "study"), f"{where}.name"),
            base_seed=base_seed,
            censor_time=censor,
            horizon=horizon,
            workers=_as_int(d.get("workers", 1), f"{where}.workers", minimum=1),
            hr_grid=hr_grid,
            policy=policy,
        )

    def to_dict(self) -> dict:
        scenario = {
            "control": {"kind": self.scenario.control_kind,
                        **{k: list(v) if isinstance(v, tuple) else v
                           for k, v in self.scenario.control_params}},
        }
        if self.scenario.two_arm:
            scenario["hr"] = {"kind": self.scenario.hr_kind,
                              **{k: list(v) if isinstance(v, tuple) else v
                                 for k, v in self.scenario.hr_params}}
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "base_seed": self.base_seed,
            "n_replicates": self.n_replicates,
            "n_per_arm": self.n_per_arm,
            "censor_time": self.censor_time,
            "horizon": self.horizon,
            "workers": self.workers,
            "estimand": self.estimand,
            "scenario": scenario,
            "hr_grid": (None if self.hr_grid is None else
                        {"start": self.hr_grid.start, "stop": self.hr_grid.stop,
                         "points": self.hr_grid.points}),
            "models": [
                {"name": c.name, "df": c.df, "mode": c.mode, "bsmooth": c.bsmooth,
                 "smoothing": c.smoothing, "method": c.method, "chains": c.chains,
                 "draws": c.draws, "warmup": c.warmup,
                 "target_accept": c.target_accept, "max_depth": c.max_depth,
                 "priors": dict(c.priors)}
                for c in self.cells],
            "metrics": {"policy": self.policy},
        }

    def build_scenario(self):
        control = DGM_TYPES[self.scenario.control_kind](
            **{k: v for k, v in self.scenario.control_params})
        if not self.scenario.two_arm:
            return control, None
        hr = HR_TYPES[self.scenario.hr_kind](
            **{k: v for k, v in self.scenario.hr_params})
        return control, hr


def load_config(path) -> StudyConfig:
    with open(path, "r") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a YAML mapping at the top level")
    return StudyConfig.from_dict(raw)


def true_value(config: StudyConfig) -> float:
    """The target estimand under the data-generating scenario."""
    control, hr = config.build_scenario()
    if config.estimand == "rmstd":
        return true_rmst_difference(control, hr, config.horizon)
    if config.estimand == "rmst_treated":
        return true_rmst(TreatedArm(control=control, hr=hr), config.horizon)
    # "rmst" (single-arm) and "rmst_control" both target the control arm
    return true_rmst(control, config.horizon)


def records_path(outdir, cell_name):
    return os.path.join(outdir, f"records_{cell_name}.csv")


def hr_curves_path(outdir, cell_name):
    return os.path.join(outdir, f"hr_curves_{cell_name}.csv")


def simulate_replicate(config: StudyConfig, replicate: int):
    """The shared dataset for one replicate (same for every cell)."""
    control, hr = config.build_scenario()
    rng = np.random.default_rng(np.random.SeedSequence([config.base_seed, replicate]))
    if hr is None:
        time, event = simulate_arm(control, config.n_per_arm, rng,
                                   censor_time=config.censor_time)
        return SurvivalDataset(time=time, event=event)
    return simulate_trial(control, hr, config.n_per_arm, rng,
                          censor_time=config.censor_time)


def _fit_cell(config: StudyConfig, cell: CellConfig, cell_index: int, data,
              replicate: int):
    """Fit one cell on one replicate; returns the record and hr-curve rows."""
    event_times = data.time[data.event == 1.0]
    spline = make_knots(event_times, df=cell.df, bsmooth=cell.bsmooth,
                        upper=float(data.time.max()))
    spec = ModelSpec(config=spline, mode=cell.mode,
                     ncov=0 if cell.mode == "none" else 1,
                     smoothing=cell.smoothing, **dict(cell.priors))
    seed = (config.base_seed, replicate, cell_index + 1)
    if cell.method == "mcmc":
        fit = mcmc_sample(spec, data, seed=seed, options=cell.fit_options())
    else:
        n_draws = cell.chains * cell.draws
        fit = laplace_sample(spec, data, n_draws=n_draws, seed=seed,
                             options=cell.fit_options())

    horizon = config.horizon
    if config.estimand == "rmstd":
        samples = rmstd_draws(spec, fit.draws, horizon, x1=[1.0], x0=[0.0])
    elif config.estimand == "rmst_treated":
        samples = rmst_draws(spec, fit.draws, horizon, x=[1.0])
    elif config.estimand == "rmst_control":
        samples = rmst_draws(spec, fit.draws, horizon, x=[0.0])
    else:
        samples = rmst_draws(spec, fit.draws, horizon)
    summary = summarize(samples, name=config.estimand)

    record = ReplicateRecord(
        replicate=replicate,
        estimate=summary.point,
        post_sd=summary.sd,
        ci_low=summary.ci_low,
        ci_high=summary.ci_high,
        converged=fit.converged,
        rhat_max=fit.rhat_max,
        ess_bulk_min=fit.ess_bulk_min,
        ess_tail_min=fit.ess_tail_min,
        n_divergent=fit.n_divergent,
        runtime_seconds=fit.runtime_seconds,
    )

    hr_rows = []
    if config.hr_grid is not None and cell.mode == "nonph":
        from .estimands import hazard_ratio_draws

        ts = config.hr_grid.values()
        hr_draws = hazard_ratio_draws(spec, fit.draws, ts, x1=[1.0], x0=[0.0])
        med = np.median(hr_draws, axis=0)
        hr_rows = [{"replicate": replicate, "t": float(t), "hr_median": float(h)}
                   for t, h in zip(ts, med)]
    return record, hr_rows


def _replicate_task(config: StudyConfig, replicate: int, cell_indices: list[int]):
    """Worker entry: simulate the replicate's data and fit the listed cells."""
    data = simulate_replicate(config, replicate)
    out = []
    for ci in cell_indices:
        record, hr_rows = _fit_cell(config, config.cells[ci], ci, data, replicate)
        out.append((ci, record, hr_rows))
    return replicate, out


def _append_hr_rows(path, rows):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        if new:
            fh.write("replicate,t,hr_median\n")
        for row in rows:
            fh.write(f"{row['replicate']},{row['t']!r},{row['hr_median']!r}\n")


def _finalize_hr_file(path, done_replicates):
    """Sort hr-curve rows and drop rows from replicates that never completed."""
    if not os.path.exists(path):
        return
    rows = read_table(path)
    seen = set()
    keep = []
    for row in rows:
        key = (int(row["replicate"]), row["t"])
        if key in seen or int(row["replicate"]) not in done_replicates:
            continue
        seen.add(key)
        keep.append(row)
    keep.sort(key=lambda r: (int(r["replicate"]), float(r["t"])))
    with open(path, "w", newline="") as fh:
        fh.write("replicate,t,hr_median\n")
        for row in keep:
            fh.write(f"{row['replicate']},{row['t']},{row['hr_median']}\n")


def run_study(config: StudyConfig, outdir, seed: int, progress=None) -> None:
    """Run (or resume) every cell for every replicate, then summarize.

    ``seed`` is required and must match the config's base_seed when that is
    set; the resolved configuration is stored in the output directory and
    must match on resume.
    """
    if config.base_seed is not None and config.base_seed != seed:
        raise ConfigError(f"--seed {seed} conflicts with configured base_seed "
                          f"{config.base_seed}")
    config = StudyConfig.from_dict({**config.to_dict(), "base_seed": int(seed)})

    os.makedirs(outdir, exist_ok=True)
    stored = os.path.join(outdir, "config.yaml")
    resolved = config.to_dict()
    if os.path.exists(stored):
        with open(stored, "r") as fh:
            previous = yaml.safe_load(fh)
        if previous != resolved:
            raise ConfigError(f"{outdir} holds results for a different configuration; "
                              "use a fresh output directory")
    else:
        with open(stored, "w") as fh:
            yaml.safe_dump(resolved, fh, sort_keys=True)

    done = {ci: {r.replicate for r in read_records(records_path(outdir, cell.name))}
            for ci, cell in enumerate(config.cells)}
    todo = []
    for rep in range(config.n_replicates):
        missing = [ci for ci in range(len(config.cells)) if rep not in done[ci]]
        if missing:
            todo.append((rep, missing))

    def handle(replicate, results):
        for ci, record, hr_rows in results:
            cell = config.cells[ci]
            if hr_rows:
                _append_hr_rows(hr_curves_path(outdir, cell.name), hr_rows)
            append_record(records_path(outdir, cell.name), record)
        if progress:
            progress(f"replicate {replicate} done "
                     f"({len(results)} cell{'s' if len(results) != 1 else ''})")

    if config.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_replicate_task, config, rep, missing)
                       for rep, missing in todo]
            for fut in futures:
                replicate, results = fut.result()
                handle(replicate, results)
    else:
        for rep, missing in todo:
            _, results = _replicate_task(config, rep, missing)
            handle(rep, results)

    # deterministic final layout: records sorted by replicate, curves deduped
    for ci, cell in enumerate(config.cells):
        path = records_path(outdir, cell.name)
        records = sorted(read_records(path), key=lambda r: r.replicate)
        write_records(path, records)
        _finalize_hr_file(hr_curves_path(outdir, cell.name),
                          {r.replicate for r in records})
    summarize_study(config, outdir)


def summarize_study(config: StudyConfig, outdir) -> list[dict]:
    """Compute the performance table for every cell and write performance.csv."""
    truth = true_value(config)
    rows = []
    for cell in config.cells:
        records = read_records(records_path(outdir, cell.name))
        if len(records) < 2:
            raise ConfigError(f"cell {cell.name!r} has {len(records)} records; "
                              "run the study first")
        kept, _ = filter_converged(records, config.policy)
        if len(kept) < 2:
            raise ConfigError(f"cell {cell.name!r}: fewer than two replicates pass "
                              f"the {config.policy!r} inclusion policy")
        table = performance_table(kept, truth)
        rows.append({"cell": cell.name, "estimand": config.estimand, **table})
    write_table(os.path.join(outdir, "performance.csv"),
                ["cell", "estimand"] + PERFORMANCE_COLUMNS, rows)
    return rows
