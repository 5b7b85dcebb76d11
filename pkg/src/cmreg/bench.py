"""Evaluation harness: seeded trials, suites with CSV/text/JSON reports, NN-vs-MLP timing."""
from __future__ import annotations

import dataclasses
import json
import math
import multiprocessing
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._backend import BACKEND
from .config import ConfigError, apply_overrides, read_kv
from .contact import contact_model
from .geometry import GeometryPair, resolve_geometry
from .manifold import ContactManifold, SamplerConfig, _fmt, load_manifold, sample_manifold
from .observer import (NoContact, ObserverConfig, SearchFailed, collect_observations,
                       downsample, perturb_hole_pose, search_with_duration)
from .pose import Pose6, as_array, compose_arrays, flat_difference, invert_arrays
from .projection import load_model
from .registration import (EXACT_NN, LEARNED, Correspondence, InsertionConfig,
                           align_and_insert, register)

TRUE_HOLE = (450.0, 120.0, 80.0, 0.0, 0.0, 30.0)
TRIALS_SCHEMA = "# cmreg-trials v1"
_AXES = ("x", "y", "z", "alpha", "beta", "gamma")
TRIAL_COLUMNS = (["geometry", "seed", "backend", "status"]
                 + [f"true_{a}" for a in _AXES] + [f"est_{a}" for a in _AXES]
                 + [f"rec_{a}" for a in _AXES] + [f"err_{a}" for a in _AXES]
                 + ["n_obs", "obs_time_s", "direct_success", "method_success"])
# acceptance defaults: (xy MAE mm, angle MAE deg, method success rate)
DEFAULT_THRESHOLDS = {"cross": (0.7, 1.5, 0.7), "gear": (0.3, 1.2, 0.9),
                      "extrusion": (0.3, 1.2, 0.9)}
_FALLBACK_THRESHOLD = (0.3, 1.2, 0.9)


@dataclass(frozen=True)
class TrialConfig:
    n_obs: int = 100
    n_iter: int = 50
    true_hole: tuple = TRUE_HOLE
    observer: ObserverConfig = ObserverConfig()
    insertion: InsertionConfig = InsertionConfig()


@dataclass
class TrialRecord:
    geometry: str
    seed: int
    backend: str
    status: str  # ok | search_failed | no_contact
    true_pose: np.ndarray
    est_pose: np.ndarray
    recovered_pose: np.ndarray
    errors: np.ndarray
    n_obs: int
    obs_time_s: float
    direct_success: bool
    method_success: bool
    reg_ms: float = math.nan  # wall clock; kept out of the deterministic CSV

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def row(self) -> list[str]:
        vals = [self.geometry, str(self.seed), self.backend, self.status]
        for arr in (self.true_pose, self.est_pose, self.recovered_pose, self.errors):
            vals += [_fmt(v) for v in arr]
        vals += [str(self.n_obs), _fmt(self.obs_time_s),
                 str(int(self.direct_success)), str(int(self.method_success))]
        return vals

    @classmethod
    def from_row(cls, row: list[str]) -> "TrialRecord":
        if len(row) != len(TRIAL_COLUMNS):
            raise ValueError(f"expected {len(TRIAL_COLUMNS)} columns, got {len(row)}")
        f = [float(v) for v in row[4:28]]
        return cls(row[0], int(row[1]), row[2], row[3], np.array(f[0:6]), np.array(f[6:12]),
                   np.array(f[12:18]), np.array(f[18:24]), int(row[28]), float(row[29]),
                   row[30] == "1", row[31] == "1")


def direct_insertion_start(est_hole, peg_pose) -> tuple[np.ndarray, float]:
    """Straight-line baseline: keep the estimated axis, re-anchored under the peg.

    Returns the hole frame the baseline descends in and the peg's current
    depth along it.
    """
    pe = compose_arrays(invert_arrays(as_array(est_hole)), as_array(peg_pose))
    frame = compose_arrays(as_array(est_hole), np.array([pe[0], pe[1], 0.0, 0.0, 0.0, 0.0]))
    return frame, float(-pe[2])


def run_trial(pair: GeometryPair, seed: int, corr: Correspondence,
              cfg: TrialConfig | None = None) -> TrialRecord:
    """One seeded trial: perturb, search, observe, register, then insert both ways."""
    cfg = cfg or TrialConfig()
    model = contact_model(pair)
    true = as_array(cfg.true_hole)
    est = perturb_hole_pose(true, [seed, 1])
    est_a = as_array(est)
    nan6 = np.full(6, math.nan)
    try:
        partial, t_search = search_with_duration(pair, est, true, cfg.observer, model)
        obs = collect_observations(pair, est, true, cfg.observer, model, partial=partial)
    except (SearchFailed, NoContact) as exc:
        status = "search_failed" if isinstance(exc, SearchFailed) else "no_contact"
        return TrialRecord(pair.name, seed, corr.backend, status, true, est_a, nan6, nan6,
                           0, math.nan, False, False)
    obs = downsample(obs, cfg.n_obs)
    t0 = time.perf_counter()
    res = register(obs, est, corr, cfg.n_iter)
    reg_ms = 1e3 * (time.perf_counter() - t0)
    rec = as_array(res.estimate)
    err = np.abs(flat_difference(rec, true))
    final = obs.final_pose
    depth = float(-compose_arrays(invert_arrays(rec), final)[2])
    method = align_and_insert(pair, rec, true, depth, cfg.insertion, model).success
    frame, ddepth = direct_insertion_start(est_a, final)
    direct = align_and_insert(pair, frame, true, ddepth, cfg.insertion, model).success
    return TrialRecord(pair.name, seed, corr.backend, "ok", true, est_a, rec, err, len(obs),
                       t_search + cfg.observer.t_obs, bool(direct), bool(method), reg_ms)


# ------------------------------------------------------------------ aggregates

def aggregate(records) -> dict:
    """Per-(geometry, backend) MAE/std/success summary, in first-seen order."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.geometry, r.backend), []).append(r)
    out = {}
    for (g, b), rs in groups.items():
        ok = [r for r in rs if r.ok]
        E = np.array([r.errors for r in ok]).reshape(-1, 6)
        xy = E[:, :2].ravel()
        ang = E[:, 3:].ravel()
        n = len(rs)
        out[f"{g}/{b}"] = {
            "geometry": g, "backend": b, "trials": n, "trials_ok": len(ok),
            "xy_mae_mm": float(xy.mean()) if len(xy) else math.nan,
            "xy_std_mm": float(xy.std()) if len(xy) else math.nan,
            "ang_mae_deg": float(ang.mean()) if len(ang) else math.nan,
            "ang_std_deg": float(ang.std()) if len(ang) else math.nan,
            "axis_mae": [float(v) for v in E.mean(axis=0)] if len(E) else [math.nan] * 6,
            "method_success_rate": sum(r.method_success for r in rs) / n,
            "direct_success_rate": sum(r.direct_success for r in rs) / n,
        }
    return out


def threshold_checks(summary: dict, thresholds: dict) -> list[dict]:
    checks = []
    for key, s in summary.items():
        xy_t, ang_t, succ_t = thresholds.get(s["geometry"], _FALLBACK_THRESHOLD)
        items = [
            ("xy_mae_mm", s["xy_mae_mm"] <= xy_t, f"<= {xy_t}"),
            ("ang_mae_deg", s["ang_mae_deg"] <= ang_t, f"<= {ang_t}"),
            ("method_success_rate", s["method_success_rate"] >= succ_t, f">= {succ_t}"),
            ("method_beats_direct", s["method_success_rate"] > s["direct_success_rate"],
             "> direct_success_rate"),
        ]
        for name, ok, rule in items:
            checks.append({"group": key, "check": name, "pass": bool(ok), "rule": rule})
    return checks


def backend_comparison(records, band_mm: float = 0.2, band_deg: float = 0.5) -> dict:
    """Exact-vs-learned agreement per geometry on trials both backends ran."""
    by = {}
    for r in records:
        by.setdefault(r.geometry, {}).setdefault(r.backend, {})[r.seed] = r
    out = {}
    for g, d in by.items():
        if EXACT_NN not in d or LEARNED not in d:
            continue
        seeds = sorted(s for s in d[EXACT_NN] if s in d[LEARNED]
                       and d[EXACT_NN][s].ok and d[LEARNED][s].ok)
        if not seeds:
            continue
        agree = 0
        dt, dr = [], []
        for s in seeds:
            a, b = d[EXACT_NN][s], d[LEARNED][s]
            diff = np.abs(flat_difference(a.recovered_pose, b.recovered_pose))
            # z along the insertion axis is barely observable and is not scored
            agree += bool(np.all(diff[:2] <= band_mm) and np.all(diff[3:] <= band_deg))
            dt.append(b.errors[:2].mean() - a.errors[:2].mean())
            dr.append(b.errors[3:].mean() - a.errors[3:].mean())
        out[g] = {"trials": len(seeds), "agree_fraction": agree / len(seeds),
                  "xy_mae_delta_mm": float(np.mean(dt)), "ang_mae_delta_deg": float(np.mean(dr))}
    return out


def timing_summary(records) -> dict:
    out = {}
    for r in records:
        if r.ok and math.isfinite(r.reg_ms):
            out.setdefault(f"{r.geometry}/{r.backend}", []).append(r.reg_ms)
    return {k: {"median_ms": float(np.median(v)), "mean_ms": float(np.mean(v)), "n": len(v)}
            for k, v in out.items()}


def hardware_string() -> str:
    return (f"{platform.machine()} {platform.processor() or 'cpu'} x{os.cpu_count()}; "
            f"{platform.system()} {platform.release()}; python {platform.python_version()}; "
            f"numpy {np.__version__}; kernels {BACKEND}")


# ---------------------------------------------------------------------- files

def write_trials_csv(records, path) -> None:
    lines = [TRIALS_SCHEMA, ",".join(TRIAL_COLUMNS)]
    lines += [",".join(r.row()) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_trials_csv(path) -> list[TrialRecord]:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != TRIALS_SCHEMA:
        raise ValueError(f"{path}: not a {TRIALS_SCHEMA!r} file")
    if len(text) < 2 or text[1] != ",".join(TRIAL_COLUMNS):
        raise ValueError(f"{path}: unexpected column header")
    return [TrialRecord.from_row(line.split(",")) for line in text[2:] if line]


# ---------------------------------------------------------------------- suite

@dataclass
class SuiteConfig:
    geometries: tuple = ("gear", "extrusion", "cross")
    trials: int = 40
    seed: int = 0
    backends: tuple = (EXACT_NN,)
    workers: int = 1
    manifolds: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    trial: TrialConfig = TrialConfig()
    sampler: SamplerConfig = SamplerConfig()

    @classmethod
    def from_kv(cls, values: dict, base_dir: Path | None = None) -> "SuiteConfig":
        base_dir = base_dir or Path(".")
        cfg = cls()
        known = {"geometries", "trials", "seed", "backend", "workers", "manifold_dir",
                 "model_dir", "n_obs", "n_iter"}
        prefixes = ("manifold.", "model.", "threshold.", "observer.", "insertion.", "sampler.")
        for k in values:
            if k not in known and not k.startswith(prefixes):
                raise ConfigError(f"unknown config key {k}")
        try:
            if "geometries" in values:
                cfg.geometries = tuple(g for g in values["geometries"].replace(",", " ").split())
            if "trials" in values:
                cfg.trials = int(values["trials"])
            if "seed" in values:
                cfg.seed = int(values["seed"])
            if "workers" in values:
                cfg.workers = max(1, int(values["workers"]))
            if "backend" in values:
                cfg.backends = tuple(_backend_name(b) for b in
                                     values["backend"].replace(",", " ").split())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if cfg.trials < 0:
            raise ConfigError("trials must be >= 0")

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base_dir / p

        for g in cfg.geometries:
            if f"manifold.{g}" in values:
                cfg.manifolds[g] = resolve(values[f"manifold.{g}"])
            elif "manifold_dir" in values:
                cfg.manifolds[g] = resolve(values["manifold_dir"]) / f"{_stem(g)}.csv"
            if f"model.{g}" in values:
                cfg.models[g] = resolve(values[f"model.{g}"])
            elif "model_dir" in values:
                cfg.models[g] = resolve(values["model_dir"]) / f"{_stem(g)}.mlp"
            t = list(cfg.thresholds.get(g, _FALLBACK_THRESHOLD))
            for i, name in enumerate(("xy_mae_mm", "ang_mae_deg", "success")):
                key = f"threshold.{g}.{name}"
                if key in values:
                    t[i] = float(values[key])
            cfg.thresholds[g] = tuple(t)
        trial = apply_overrides(cfg.trial, {f"t.{k}": v for k, v in values.items()
                                            if k in ("n_obs", "n_iter")}, "t")
        trial = dataclasses.replace(
            trial, observer=apply_overrides(trial.observer, values, "observer"),
            insertion=apply_overrides(trial.insertion, values, "insertion"))
        cfg.trial = trial
        cfg.sampler = apply_overrides(cfg.sampler, values, "sampler")
        return cfg

    def validate(self) -> None:
        """Fail fast on missing artifacts, before any trial runs."""
        for g in self.geometries:
            try:
                resolve_geometry(g)
            except (ValueError, OSError) as exc:
                raise ConfigError(f"geometry {g}: {exc}") from None
            if g in self.manifolds and not Path(self.manifolds[g]).exists():
                raise ConfigError(f"manifold file not found for {g}: {self.manifolds[g]}")
            if LEARNED in self.backends:
                if g not in self.models:
                    raise ConfigError(f"learned backend needs model.{g} or model_dir")
                if not Path(self.models[g]).exists():
                    raise ConfigError(f"model file not found for {g}: {self.models[g]}")


def _stem(geometry: str) -> str:
    return Path(geometry[1:]).stem if geometry.startswith("@") else geometry


def _backend_name(b: str) -> str:
    b = b.strip().lower()
    if b in ("exact", EXACT_NN):
        return EXACT_NN
    if b == LEARNED:
        return LEARNED
    raise ValueError(f"unknown backend {b!r} (expected exact or learned)")


@dataclass
class BenchReport:
    summary: dict
    checks: list
    comparison: dict
    timings: dict
    hardware: str
    config: dict
    records: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary, "checks": self.checks,
                           "backend_comparison": self.comparison, "timings": self.timings,
                           "hardware": self.hardware, "config": self.config,
                           "passed": self.passed}, indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = ["geometry   backend   trials  xy MAE mm (std)    ang MAE deg (std)   "
                 "method  direct"]
        for s in self.summary.values():
            lines.append(f"{s['geometry']:<10} {s['backend']:<9} {s['trials']:>6}  "
                         f"{s['xy_mae_mm']:.4f} ({s['xy_std_mm']:.4f})    "
                         f"{s['ang_mae_deg']:.4f} ({s['ang_std_deg']:.4f})     "
                         f"{100 * s['method_success_rate']:5.1f}%  "
                         f"{100 * s['direct_success_rate']:5.1f}%")
        if self.comparison:
            lines.append("")
            lines.append("exact vs learned: agree / xy MAE delta mm / ang MAE delta deg")
            for g, c in self.comparison.items():
                lines.append(f"  {g:<10} {100 * c['agree_fraction']:5.1f}%  "
                             f"{c['xy_mae_delta_mm']:+.4f}  {c['ang_mae_delta_deg']:+.4f}")
        if self.timings:
            lines.append("")
            lines.append("registration wall time (median ms): " + ", ".join(
                f"{k} {v['median_ms']:.1f}" for k, v in self.timings.items()))
        lines.append("")
        for c in self.checks:
            lines.append(f"{'PASS' if c['pass'] else 'FAIL'}  {c['group']:<22} "
                         f"{c['check']} {c['rule']}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        lines.append(f"hardware: {self.hardware}")
        return "\n".join(lines) + "\n"


_CTX: dict = {}


def _run_task(task):
    g, seed, backend = task
    pair, corrs, tcfg = _CTX[g]
    return run_trial(pair, seed, corrs[backend], tcfg)


def _prepare(cfg: SuiteConfig, log) -> dict:
    ctx = {}
    for g in cfg.geometries:
        pair = resolve_geometry(g)
        if g in cfg.manifolds:
            m = load_manifold(cfg.manifolds[g], pair)
        else:
            log(f"{g}: no manifold given, sampling {cfg.sampler.samples_target} poses")
            m = sample_manifold(pair, cfg.sampler)
        m.index  # build before workers fork
        corrs = {EXACT_NN: Correspondence.exact(m)}
        if LEARNED in cfg.backends:
            corrs[LEARNED] = Correspondence.learned(load_model(cfg.models[g]))
        ctx[g] = (pair, corrs, cfg.trial)
    return ctx


def run_suite(cfg: SuiteConfig, out_dir=None, log=None) -> BenchReport:
    """Run every (geometry, seed, backend) trial and fold the results in task order."""
    log = log or (lambda msg: None)
    cfg.validate()
    global _CTX
    _CTX = _prepare(cfg, log)
    tasks = [(g, cfg.seed + i, b) for g in cfg.geometries for b in cfg.backends
             for i in range(cfg.trials)]
    if cfg.workers > 1 and len(tasks) > 1 and "fork" in multiprocessing.get_all_start_methods():
        with multiprocessing.get_context("fork").Pool(cfg.workers) as pool:
            records = pool.map(_run_task, tasks, chunksize=1)
    else:
        records = []
        for t in tasks:
            records.append(_run_task(t))
            r = records[-1]
            log(f"{r.geometry} seed {r.seed} {r.backend}: {r.status} "
                f"method={int(r.method_success)} direct={int(r.direct_success)}")
    summary = aggregate(records)
    report = BenchReport(summary, threshold_checks(summary, cfg.thresholds),
                         backend_comparison(records), timing_summary(records),
                         hardware_string(), _config_echo(cfg), records)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _config_echo(cfg: SuiteConfig) -> dict:
    return {"geometries": list(cfg.geometries), "trials": cfg.trials, "seed": cfg.seed,
            "backends": list(cfg.backends), "n_obs": cfg.trial.n_obs,
            "n_iter": cfg.trial.n_iter,
            "manifolds": {k: str(v) for k, v in cfg.manifolds.items()},
            "models": {k: str(v) for k, v in cfg.models.items()},
            "thresholds": {k: list(v) for k, v in cfg.thresholds.items()}}


def write_report(report: BenchReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trials_csv(report.records, out / "trials.csv")
    lines = ["geometry,seed,backend,registration_ms"]
    for r in report.records:
        lines.append(f"{r.geometry},{r.seed},{r.backend},{_fmt(r.reg_ms)}")
    (out / "timings.csv").write_text("\n".join(lines) + "\n")
    (out / "report.txt").write_text(report.to_text())
    (out / "report.json").write_text(report.to_json() + "\n")


# ------------------------------------------------------------------- bench-nn

def bench_nn_sweep(cases, n_obs: int = 100, n_iter: int = 50, reps: int = 25, seed: int = 0,
                   true_hole=TRUE_HOLE) -> list[dict]:
    """Time register() with both backends for each ``(manifold, model)`` case.

    All cases share one observation set, so inputs are identical. Every
    repetition times each (case, backend) cell once in turn, so slow phases
    of the machine are spread over all cells instead of landing on one.
    Reports median/mean/p10/p90 wall time over ``reps`` warm repetitions and
    the error of each final estimate against the true hole pose.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    cases = list(cases)
    if not cases:
        return []
    pair = cases[0][0].pair
    true = as_array(true_hole)
    est = perturb_hole_pose(true, [seed, 1])
    obs = downsample(collect_observations(pair, est, true), n_obs)
    cells = []
    for m, model in cases:
        m.index
        for name, corr in ((EXACT_NN, Correspondence.exact(m)),
                           (LEARNED, Correspondence.learned(model))):
            res = register(obs, est, corr, n_iter)  # warm-up
            cells.append((name, corr, res, []))
    for _ in range(reps):
        for name, corr, _, times in cells:
            t0 = time.perf_counter()
            register(obs, est, corr, n_iter)
            times.append(time.perf_counter() - t0)
    rows = []
    for k, (m, _) in enumerate(cases):
        row = {"manifold_size": len(m), "n_obs": len(obs), "n_iter": n_iter, "reps": reps}
        for name, _, res, times in cells[2 * k:2 * k + 2]:
            t = np.array(times)
            err = np.abs(flat_difference(as_array(res.estimate), true))
            row[name] = {"median_s": float(np.median(t)), "mean_s": float(t.mean()),
                         "p10_s": float(np.percentile(t, 10)), "p90_s": float(np.percentile(t, 90)),
                         "xy_mae_mm": float(err[:2].mean()), "ang_mae_deg": float(err[3:].mean())}
        row["speedup"] = row[EXACT_NN]["median_s"] / row[LEARNED]["median_s"]
        rows.append(row)
    return rows


def bench_nn(manifold: ContactManifold, model, n_obs: int = 100, n_iter: int = 50,
             reps: int = 25, seed: int = 0, true_hole=TRUE_HOLE) -> dict:
    """bench_nn_sweep for a single manifold."""
    return bench_nn_sweep([(manifold, model)], n_obs, n_iter, reps, seed, true_hole)[0]


def subset_manifold(m: ContactManifold, n: int, seed: int = 0) -> ContactManifold:
    """Uniform random subset of ``n`` poses (a sparser manifold of the same geometry)."""
    if n > len(m):
        raise ValueError(f"cannot take {n} poses from a manifold of {len(m)}")
    idx = np.sort(np.random.default_rng(seed).permutation(len(m))[:n])
    return ContactManifold(m.pair, m.poses[idx], m.config)


def scaling_verdict(rows, band: float = 0.2) -> dict:
    """Learned time flat within +-band of its median, exact time increasing, learned faster at the top."""
    rows = sorted(rows, key=lambda r: r["manifold_size"])
    lt = np.array([r[LEARNED]["median_s"] for r in rows])
    et = np.array([r[EXACT_NN]["median_s"] for r in rows])
    ref = float(np.median(lt))
    flat = bool(np.all(np.abs(lt - ref) <= band * ref))
    mono = bool(np.all(np.diff(et) > 0))
    faster = bool(lt[-1] < et[-1])
    return {"learned_constant": flat, "exact_monotone": mono, "learned_faster_at_largest": faster,
            "learned_spread": float(np.max(np.abs(lt - ref)) / ref),
            "passed": flat and mono and faster}


def format_nn_table(rows) -> str:
    lines = ["size      exact median ms  learned median ms  speedup  exact xy/ang   learned xy/ang"]
    for r in sorted(rows, key=lambda r: r["manifold_size"]):
        e, l = r[EXACT_NN], r[LEARNED]
        lines.append(f"{r['manifold_size']:<9} {1e3 * e['median_s']:>15.2f}  "
                     f"{1e3 * l['median_s']:>17.2f}  {r['speedup']:>7.2f}  "
                     f"{e['xy_mae_mm']:.3f}/{e['ang_mae_deg']:.3f}   "
                     f"{l['xy_mae_mm']:.3f}/{l['ang_mae_deg']:.3f}")
    return "\n".join(lines) + "\n"


def load_suite_config(path) -> SuiteConfig:
    path = Path(path)
    return SuiteConfig.from_kv(read_kv(path), path.parent)


__all__ = ["TrialConfig", "TrialRecord", "SuiteConfig", "BenchReport", "run_trial", "run_suite",
           "aggregate", "threshold_checks", "backend_comparison", "write_trials_csv",
           "read_trials_csv", "write_report", "bench_nn", "bench_nn_sweep", "subset_manifold", "scaling_verdict",
           "format_nn_table", "load_suite_config", "direct_insertion_start", "hardware_string",
           "TRUE_HOLE"]
