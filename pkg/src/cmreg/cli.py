"""``cmreg`` command line: gen-manifold, train-projection, estimate, evaluate, bench-nn."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench
from .config import ConfigError, apply_overrides, read_kv
from .geometry import resolve_geometry
from .manifold import SamplerConfig, _fmt, load_manifold, sample_manifold, save_manifold, split_errors
from .observer import (NoContact, SearchFailed, collect_observations, downsample,
                       perturb_hole_pose, save_observations)
from .pose import as_array, flat_difference
from .projection import TrainConfig, fit_projection, load_model, save_model
from .registration import EXACT_NN, LEARNED, Correspondence, register


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _kv(args) -> dict:
    return read_kv(args.config) if args.config else {}


def _backend(name: str) -> str:
    return EXACT_NN if name == "exact" else LEARNED


# ------------------------------------------------------------------ commands

def cmd_gen_manifold(args) -> int:
    values = _kv(args)
    pair = resolve_geometry(args.geometry)
    cfg = apply_overrides(SamplerConfig(), values, "sampler")
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    if args.samples is not None:
        cfg = dataclasses.replace(cfg, samples_target=args.samples)
    t0 = time.perf_counter()
    m = sample_manifold(pair, cfg)
    dt = time.perf_counter() - t0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_manifold(m, out, args.geometry)
    msg = f"{pair.name}: {len(m)} contact poses in {dt:.1f} s -> {out}"
    if len(m) > 1:
        t, r = m.spacing()
        msg += f" (median spacing {t:.4f} mm / {r:.4f} deg)"
    print(msg)
    return 0


def cmd_train_projection(args) -> int:
    values = _kv(args)
    m = load_manifold(args.manifold)
    cfg = apply_overrides(TrainConfig(), values, "train")
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    t0 = time.perf_counter()
    every = max(cfg.epochs // 10, 1)
    model, ho = fit_projection(
        m, cfg, log=lambda ep, loss: _log(f"epoch {ep}: loss {loss:.6g}") if ep % every == 0 else None)
    dt = time.perf_counter() - t0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    report = {"manifold": str(args.manifold), "train_seconds": dt, "pairs": cfg.pairs,
              "epochs": cfg.epochs, "hidden": list(cfg.hidden)}
    if len(ho):
        te, re = split_errors(model.project(ho.inputs), ho.targets)
        st, sr = m.spacing()
        report.update({"holdout": len(ho), "mae_mm": float(te.mean()), "mae_deg": float(re.mean()),
                       "spacing_mm": st, "spacing_deg": sr,
                       "mae_over_spacing": [float(te.mean() / st), float(re.mean() / sr)]})
    out.with_name(out.name + ".json").write_text(json.dumps(report, indent=2) + "\n")
    line = f"trained in {dt:.1f} s -> {out}"
    if len(ho):
        line += (f"; held-out MAE {report['mae_mm']:.4f} mm / {report['mae_deg']:.4f} deg "
                 f"({report['mae_over_spacing'][0]:.2f}x / {report['mae_over_spacing'][1]:.2f}x spacing)")
    print(line)
    return 0


def cmd_estimate(args) -> int:
    values = _kv(args)
    pair = resolve_geometry(args.geometry)
    suite = bench.SuiteConfig.from_kv(values)
    tcfg = suite.trial
    if not args.manifold:
        raise ConfigError("estimate needs --manifold")
    m = load_manifold(args.manifold, pair)
    backend = _backend(args.backend)
    if backend == LEARNED:
        if not args.model:
            raise ConfigError("--backend learned needs --model")
        corr = Correspondence.learned(load_model(args.model))
    else:
        corr = Correspondence.exact(m)
    seed = args.seed or 0
    true = as_array(tcfg.true_hole)
    est = perturb_hole_pose(true, [seed, 1])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        obs = collect_observations(pair, est, true, tcfg.observer)
    except (SearchFailed, NoContact) as exc:
        print(f"observation failed: {exc}")
        return 1
    obs = downsample(obs, tcfg.n_obs)
    save_observations(obs, out / "observations.csv")
    res = register(obs, est, corr, tcfg.n_iter)
    res.save(out / "registration.json")
    err = flat_difference(as_array(res.estimate), true)
    print("initial  " + " ".join(f"{v:.4f}" for v in as_array(est)))
    print("estimate " + " ".join(f"{v:.4f}" for v in as_array(res.estimate)))
    print("error    " + " ".join(f"{v:+.4f}" for v in err))
    return 0


def cmd_evaluate(args) -> int:
    values = _kv(args)
    if args.geometry:
        values["geometries"] = args.geometry
    if args.trials is not None:
        values["trials"] = str(args.trials)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.backend:
        values["backend"] = args.backend
    if args.workers is not None:
        values["workers"] = str(args.workers)
    base = Path(args.config).parent if args.config else Path(".")
    cfg = bench.SuiteConfig.from_kv(values, base)
    geos = cfg.geometries
    if args.manifold:
        if len(geos) != 1:
            raise ConfigError("--manifold applies to a single --geometry")
        cfg.manifolds[geos[0]] = Path(args.manifold)
    if args.model:
        if len(geos) != 1:
            raise ConfigError("--model applies to a single --geometry")
        cfg.models[geos[0]] = Path(args.model)
    report = bench.run_suite(cfg, args.out, log=_log if args.verbose else None)
    sys.stdout.write(report.to_text())
    return 0 if report.passed else 1


def cmd_bench_nn(args) -> int:
    values = _kv(args)
    pair = resolve_geometry(args.geometry)
    sizes = sorted(int(s) for s in args.sizes.split(","))
    reps = int(values.get("bench.reps", args.reps))
    if reps < 25:
        _log("note: fewer than 25 repetitions per timing")
    tcfg = apply_overrides(TrainConfig(pairs=2000, holdout=0, epochs=2), values, "train")
    if args.manifold:
        base = load_manifold(args.manifold, pair)
    else:
        cfg = apply_overrides(SamplerConfig(samples_target=sizes[-1]), values, "sampler")
        _log(f"sampling {cfg.samples_target} poses for {pair.name}")
        base = sample_manifold(pair, cfg)
    fixed = load_model(args.model) if args.model else None
    cases = []
    for n in sizes:
        m = bench.subset_manifold(base, n, seed=args.seed or 0) if n < len(base) else base
        cases.append((m, fixed if fixed is not None else fit_projection(m, tcfg)[0]))
    _log(f"timing {len(cases)} sizes x 2 backends, {reps} interleaved repetitions")
    rows = bench.bench_nn_sweep(cases, reps=reps, seed=args.seed or 0)
    verdict = bench.scaling_verdict(rows)
    text = bench.format_nn_table(rows) + (
        f"learned constant within 20%: {verdict['learned_constant']} "
        f"(spread {100 * verdict['learned_spread']:.1f}%)\n"
        f"exact monotone: {verdict['exact_monotone']}\n"
        f"learned faster at largest: {verdict['learned_faster_at_largest']}\n"
        f"hardware: {bench.hardware_string()}\n")
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench_nn.txt").write_text(text)
        (out / "bench_nn.json").write_text(json.dumps(
            {"rows": rows, "verdict": verdict, "hardware": bench.hardware_string()},
            indent=2) + "\n")
        lines = ["manifold_size,exact_median_s,learned_median_s,speedup"]
        for r in rows:
            lines.append(f"{r['manifold_size']},{_fmt(r[EXACT_NN]['median_s'])},"
                         f"{_fmt(r[LEARNED]['median_s'])},{_fmt(r['speedup'])}")
        (out / "bench_nn.csv").write_text("\n".join(lines) + "\n")
    return 0 if verdict["passed"] else 1


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmreg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, geometry_required=False):
        sp.add_argument("--geometry", required=geometry_required,
                        help="cross | gear | extrusion | @profile.csv")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--config", help="key=value configuration file")
        return sp

    g = common(sub.add_parser("gen-manifold", help="sample a reference contact manifold"), True)
    g.add_argument("--out", required=True, help="output CSV (a .meta sidecar is written too)")
    g.add_argument("--samples", type=int, help="override the sample count")
    g.set_defaults(func=cmd_gen_manifold)

    t = common(sub.add_parser("train-projection", help="fit the learned projection"))
    t.add_argument("--manifold", required=True)
    t.add_argument("--out", required=True, help="output model file")
    t.set_defaults(func=cmd_train_projection)

    e = common(sub.add_parser("estimate", help="one seeded observe-and-register run"), True)
    e.add_argument("--manifold")
    e.add_argument("--model")
    e.add_argument("--backend", choices=("exact", "learned"), default="exact")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_estimate)

    v = common(sub.add_parser("evaluate", help="run a trial suite and write reports"))
    v.add_argument("--manifold")
    v.add_argument("--model")
    v.add_argument("--trials", type=int)
    v.add_argument("--backend", help="exact, learned or exact,learned")
    v.add_argument("--workers", type=int)
    v.add_argument("--out")
    v.add_argument("--verbose", action="store_true")
    v.set_defaults(func=cmd_evaluate)

    b = common(sub.add_parser("bench-nn", help="exact-NN vs learned registration timing"), True)
    b.add_argument("--manifold", help="largest manifold; smaller sizes are random subsets")
    b.add_argument("--model", help="use one model for every size instead of quick per-size fits")
    b.add_argument("--sizes", default="10000,100000,1000000")
    b.add_argument("--reps", type=int, default=25)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench_nn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
