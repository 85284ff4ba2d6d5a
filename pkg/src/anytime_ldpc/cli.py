"""Command line: ``anytime-ldpc {codegen,analyze,petd,control,replay}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, pexit, plant
from .protograph import ProtographSpec, build_code, export_triplets, load_spec, validate_protograph


def _spec(path):
    if path is None:
        return ProtographSpec.paper_code(), {}
    return load_spec(path)


def _plant_matrix(path):
    if path is None:
        return plant.PAPER_A
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError:
        return np.loadtxt(path, ndmin=2)
    return np.asarray(d["A"] if isinstance(d, dict) else d, dtype=float)


def cmd_codegen(args) -> int:
    spec, extra = _spec(args.spec)
    r = args.r or extra.get("r", 12)
    seed = args.seed if args.seed is not None else extra.get("seed", 2024)
    report = validate_protograph(spec)
    code = build_code(spec, r, args.t, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_triplets(code, out / "matrix.txt")
    meta = {
        "spec": spec.to_dict(),
        "r": r,
        "t": args.t,
        "seed": seed,
        "rows": code.matrix.shape[0],
        "cols": code.matrix.shape[1],
        "nnz": int(code.matrix.nnz),
        "rate": report.rate,
        "warnings": list(report.warnings),
    }
    (out / "code.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {out / 'matrix.txt'} ({meta['rows']} x {meta['cols']}, {meta['nnz']} ones)")
    return 0


def cmd_analyze(args) -> int:
    spec, _ = _spec(args.spec)
    A = _plant_matrix(args.plant)
    reports = [pexit.analyze(spec, s, t=args.t, A=A) for s in args.snr_db]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, bounds = [], []
    for rep in reports:
        rho_star_db = rep.threshold.rho_star_db if rep.threshold is not None else float("nan")
        rows.append((rep.snr_db, rep.beta_bar, rep.beta_closed_form, rho_star_db))
        d, b = rep.bound_curve(spec.k0)
        bounds += [(rep.snr_db, int(di), float(m), float(bi)) for di, m, bi in zip(d, rep.fit.min_output, b)]
        print(f"{rep.snr_db:6.2f} dB  beta_bar={rep.beta_bar:.6g}  closed_form={rep.beta_closed_form:.6g}  rho*={rho_star_db:.3f} dB")
    harness.write_csv(out / "analyze.csv", ["snr_db", "beta_bar", "beta_bar_closed_form", "rho_star_db"], rows)
    harness.write_csv(out / "bounds.csv", ["snr_db", "d", "min_output_snr", "pe_bound"], bounds)
    if not args.no_plot:
        from . import plots

        plots.analyze_figure(reports, out / "analyze.png")
    return 0


def _experiment(args, scenario, family) -> harness.ExperimentConfig:
    overrides = {
        "snr_db": args.snr_db,
        "trials": args.trials,
        "horizon": args.horizon,
        "iterations": args.iterations,
        "seed": args.seed,
        "workers": args.workers,
        "output": args.output,
    }
    if getattr(args, "n_sensors", None):
        overrides["n_sensors"] = args.n_sensors
    if args.no_plot:
        overrides["plot"] = False
    if args.config:
        cfg = harness.ExperimentConfig.load(args.config, **overrides)
    else:
        cfg = harness.ExperimentConfig.from_dict({"scenario": scenario}, **overrides)
    if not cfg.scenario.startswith(family):
        raise SystemExit(f"config scenario {cfg.scenario!r} does not match this subcommand")
    return cfg


def cmd_petd(args) -> int:
    cfg = _experiment(args, "petd_awgn", "petd")
    results = harness.run(cfg)
    files = harness.emit(cfg, results)
    for est in results:
        try:
            fit = est.fit(cfg.d_range, cfg.min_events)
            print(f"{est.snr_db:g} dB: beta_hat={fit.beta:.4f} +- {fit.stderr:.4f} over d={fit.delays.tolist()}")
        except harness.InsufficientEvents as exc:
            print(f"{est.snr_db:g} dB: {exc}")
    print(f"wrote {files['petd']}")
    return 0


def cmd_control(args) -> int:
    cfg = _experiment(args, "control_awgn", "control")
    results = harness.run(cfg)
    files = harness.emit(cfg, results)
    for row in results[0].rows:
        print(f"{row['snr_db']:g} dB N={row['n_sensors']}: p100={row['p100']:.4g} ({row['failures']}/{row['trials']})")
    print(f"wrote {files['p100']}")
    return 0


def cmd_replay(args) -> int:
    files = harness.replay(args.meta, output=args.output, workers=args.workers)
    print("wrote " + ", ".join(str(p) for p in files.values() if str(p).endswith(".csv")))
    return 0


def _run_options(p, sensors=False):
    p.add_argument("--config", help="experiment JSON file")
    p.add_argument("--snr-db", type=float, nargs="+")
    p.add_argument("--trials", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--iterations", type=int, help="BP iterations per step")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output")
    p.add_argument("--no-plot", action="store_true")
    if sensors:
        p.add_argument("--n-sensors", type=int, nargs="+")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anytime-ldpc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codegen", help="lift a protograph and export the parity-check matrix")
    p.add_argument("--spec", help="protograph JSON (default: the repeat-tail rate-1/2 code)")
    p.add_argument("--r", type=int)
    p.add_argument("--t", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="code")
    p.set_defaults(func=cmd_codegen)

    p = sub.add_parser("analyze", help="SNR evolution, exponent bound and stabilization threshold")
    p.add_argument("--spec")
    p.add_argument("--snr-db", type=float, nargs="+", default=[3.0, 4.5, 6.0, 10.0, 20.0])
    p.add_argument("--plant", help="plant matrix: JSON with key A, or whitespace text")
    p.add_argument("--t", type=int, default=200)
    p.add_argument("--out", default="analysis")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("petd", help="Monte Carlo P_e(t, d) on AWGN")
    _run_options(p)
    p.set_defaults(func=cmd_petd)

    p = sub.add_parser("control", help="closed-loop p100 over AWGN or Rayleigh fading")
    _run_options(p, sensors=True)
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("replay", help="re-run an experiment from its meta.json")
    p.add_argument("meta")
    p.add_argument("--output")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
