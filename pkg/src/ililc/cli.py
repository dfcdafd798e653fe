"""Command-line entry point: ``ililc {synthesize,simulate,campaign,demo}``.

Exit codes: 0 success, 1 usage error, 2 synthesis failure, 3 unexpected
scientific outcome.
"""
from __future__ import annotations

import argparse
import csv
import inspect
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import demos
from .bench import KNOWN_LAWS, export_results, run_campaign
from .config import ConfigError, RunConfig, load_config
from .ilc import ILILC, NILC, GradientILC, PType, run_simulation
from .model import CartPendulumParams, ModelError
from .stable_inversion import InversionError, diagnostic_report, synthesize

log = logging.getLogger("ililc")

EXIT_OK, EXIT_USAGE, EXIT_SYNTHESIS, EXIT_OUTCOME = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(
        N=getattr(args, "N", None),
        gamma=getattr(args, "gamma", None),
        m_final=getattr(args, "m_final", None),
        n_trials=getattr(args, "trials", None),
        model=getattr(args, "model", None),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_synthesize(args) -> int:
    cfg = _run_config(args)
    t0 = time.perf_counter()
    try:
        model = cfg.build_model()
        syn = synthesize(model, m_final=cfg.m_final)
    except (InversionError, ModelError) as exc:
        print(f"synthesis failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SYNTHESIS
    report = diagnostic_report(syn)
    report["model"] = cfg.model
    report["N"] = model.N
    report["total_s"] = time.perf_counter() - t0
    out = Path(args.out_dir) / "synthesis.json"
    _write_json(out, report)
    for step, sec in report["timings_s"].items():
        print(f"  {step:<24s} {sec:9.3f} s")
    print(f"eigenvalue moduli {np.round(report['eigenvalue_moduli'], 4).tolist()}, "
          f"stable {report['v']}, unstable {report['n_unstable']}, "
          f"phi norm {report['phi_norm_inf1']:.4g}")
    print(f"wrote {out}")
    return EXIT_OK


def _truth_params(error_norm: float, seed: int, noisy: bool, base: CartPendulumParams) -> CartPendulumParams:
    theta = base.as_vector()
    if error_norm > 0:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
        d = rng.normal(size=theta.size)
        theta = (1.0 + error_norm * d / np.linalg.norm(d)) * theta
    p = CartPendulumParams.from_vector(theta, sigma_c=base.sigma_c, sigma_y=base.sigma_y)
    return p if noisy else p.noiseless()


def cmd_simulate(args) -> int:
    cfg = _run_config(args)
    control = cfg.build_model()
    if cfg.model == "cart-pendulum":
        truth = control.with_params(_truth_params(args.error_norm, args.seed, not args.no_noise, cfg.build_params()))
    else:
        if args.error_norm > 0:
            raise UsageError("--error-norm only applies to the cart-pendulum model")
        truth = control
    if args.law == "ililc":
        try:
            law = ILILC(synthesize(control, m_final=cfg.m_final).ginv)
        except (InversionError, ModelError) as exc:
            print(f"synthesis failed: {exc}", file=sys.stderr)
            return EXIT_SYNTHESIS
    elif args.law == "nilc":
        law = NILC(control)
    elif args.law == "gradient":
        law = GradientILC(control, gamma=cfg.gamma)
    else:
        if cfg.model == "cart-pendulum":
            raise UsageError("the P-type law needs a relative-degree-one LTI model")
        law = PType.for_lti(cfg.build_lti(), cfg.ptype_gain)
    t0 = time.perf_counter()
    res = run_simulation(law, truth, cfg.n_trials, args.seed)
    elapsed = time.perf_counter() - t0
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sim_id", "law", "trial", "nrmse", "max_abs_u", "cond", "flag"])
        for r in res.records:
            w.writerow([f"{args.law}-sim", args.law, r.trial, repr(r.nrmse), repr(r.max_abs_u),
                        "" if r.cond is None else repr(r.cond), r.flag])
    _write_json(out / "simulation.json", {
        "law": args.law,
        "model": cfg.model,
        "seed": args.seed,
        "error_norm": args.error_norm,
        "divergent": res.divergent,
        "nrmse": res.nrmse.tolist(),
        "elapsed_s": elapsed,
    })
    for r in res.records:
        print(f"trial {r.trial:3d}  nrmse {r.nrmse:.4e}  max|u| {r.max_abs_u:.4e}  {r.flag}")
    print(f"{len(res.records)} trials in {elapsed:.2f} s; wrote {out / 'trials.csv'}")
    return EXIT_OK


def _num(x, fmt: str) -> str:
    return "n/a" if x is None else format(x, fmt)


def _print_campaign_table(summary: dict) -> None:
    laws = list(summary["bin_convergence_percent"])
    edges = summary["bin_edges"]
    print("bin  ||e||_2 range     " + "".join(f"{law:>10s}" for law in laws))
    for b in range(len(edges) - 1):
        row = "".join(f"{_num(summary['bin_convergence_percent'][law][b], '.0f'):>9s}%" for law in laws)
        print(f"{b:3d}  [{edges[b]:.3f}, {edges[b + 1]:.3f})  {row}")
    print("converged: " + ", ".join(f"{k} {v}" for k, v in summary["convergence_counts"].items()))
    for law, r in summary["transient_convergence_rate"].items():
        print(f"rate {law:<9s} {_num(r['mean'], '.3f')} (std {_num(r['std'], '.3f')}) "
              f"over {summary['converged_set_size']} sims")


def cmd_campaign(args) -> int:
    cfg = _run_config(args)
    preset = {"n_bins": 20, "models_per_bin": 50} if args.preset == "full" else {}
    overrides = {
        "n_bins": args.bins,
        "models_per_bin": args.models_per_bin,
        "tolerance": args.tolerance,
        "error_max": args.error_max,
        "nilc_trials": args.nilc_trials,
        "N": args.N,
        "n_trials": args.trials,
        "gamma": args.gamma,
        "m_final": args.m_final,
        "seed": args.seed,
        "threads": args.threads,
    }
    if args.laws:
        overrides["laws"] = tuple(s.strip() for s in args.laws.split(",") if s.strip())
    try:
        merged = cfg.campaign_config(preset, **overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    total = len(merged.laws) * merged.n_bins * merged.models_per_bin
    t0 = time.perf_counter()

    def progress(i, n, o):
        if args.verbose or i == n or i % max(1, n // 20) == 0:
            print(f"[{i}/{n}] {o.law} bin {o.bin} model {o.model}: "
                  f"l* {o.l_star}  ({time.perf_counter() - t0:.0f} s)", flush=True)

    try:
        result = run_campaign(merged, progress=progress)
    except (InversionError, ModelError) as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_SYNTHESIS
    paths = export_results(result, args.out_dir)
    summary = result.summary()
    _print_campaign_table(summary)
    print(f"{total} simulations in {time.perf_counter() - t0:.1f} s; wrote {paths['trials']} and {paths['summary']}")
    return EXIT_OK


def cmd_demo(args) -> int:
    fn = demos.DEMOS[args.which]
    kwargs = {}
    params = inspect.signature(fn).parameters
    if "seed" in params:
        kwargs["seed"] = args.seed
    if "N" in params and args.N is not None:
        kwargs["N"] = args.N
    t0 = time.perf_counter()
    try:
        outcome = fn(**kwargs)
    except (InversionError, ModelError) as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_SYNTHESIS
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{outcome.name}_nrmse.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        names = list(outcome.trajectories)
        w.writerow(["trial", *names])
        n = max(len(v) for v in outcome.trajectories.values())
        for t in range(n):
            w.writerow([t, *[repr(outcome.trajectories[k][t]) if t < len(outcome.trajectories[k]) else ""
                             for k in names]])
    _write_json(out / f"{outcome.name}.json", {
        "demo": outcome.name,
        "passed": outcome.passed,
        "elapsed_s": time.perf_counter() - t0,
        "diagnostics": outcome.diagnostics,
        "nrmse": outcome.trajectories,
    })
    for k, v in outcome.diagnostics.items():
        if k != "synthesis":
            print(f"  {k}: {v}")
    verdict = "expected outcome" if outcome.passed else "UNEXPECTED outcome"
    print(f"{outcome.name}: {verdict} ({time.perf_counter() - t0:.1f} s)")
    return EXIT_OK if outcome.passed else EXIT_OUTCOME


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(s: str) -> float:
    v = float(s)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("must be a positive finite number")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out-dir", default="out", help="output directory (default: %(default)s)")
    common.add_argument("--seed", type=int, default=0, help="master seed (default: %(default)s)")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker processes for campaigns")
    common.add_argument("--N", type=_positive_int, help="horizon length override")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ililc", description="ILC synthesis by stable inversion, and benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthesize", parents=[common], help="build the stable inverse and report diagnostics")
    s.add_argument("--model", choices=("cart-pendulum", "lti", "appendix-lti"))
    s.add_argument("--m-final", type=_positive_int)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("simulate", parents=[common], help="run one learning simulation")
    s.add_argument("--law", choices=(*KNOWN_LAWS, "ptype"), default="ililc")
    s.add_argument("--model", choices=("cart-pendulum", "lti", "appendix-lti"))
    s.add_argument("--trials", type=_positive_int)
    s.add_argument("--gamma", type=_positive_float)
    s.add_argument("--m-final", type=_positive_int)
    s.add_argument("--error-norm", type=float, default=0.0, help="||e_theta||_2 of the truth model")
    s.add_argument("--no-noise", action="store_true", help="disable process and measurement noise")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("campaign", parents=[common], help="Monte-Carlo robustness campaign")
    s.add_argument("--preset", choices=("desk", "full"), default="desk")
    s.add_argument("--laws", help=f"comma-separated subset of {','.join(KNOWN_LAWS)}")
    s.add_argument("--bins", type=_positive_int)
    s.add_argument("--models-per-bin", type=_positive_int)
    s.add_argument("--trials", type=_positive_int)
    s.add_argument("--tolerance", type=_positive_float)
    s.add_argument("--error-max", type=_positive_float)
    s.add_argument("--nilc-trials", type=_positive_int)
    s.add_argument("--gamma", type=_positive_float)
    s.add_argument("--m-final", type=_positive_int)
    s.set_defaults(func=cmd_campaign)

    s = sub.add_parser("demo", parents=[common], help="run a scenario with a known qualitative outcome")
    s.add_argument("which", choices=tuple(demos.DEMOS))
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
