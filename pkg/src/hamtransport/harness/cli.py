"""Command-line entry point: ``run``, ``presets`` and ``describe``.

Exit codes: 0 when every check passes, 2 when some check fails, 3 when a
scenario aborts (caustic, chart boundary or violated hypothesis) and 1 on
any other error, including malformed configs.
"""

import argparse
import os
import sys
import time

from ..errors import ConfigError, HamTransportError
from .config import build_scenario, load_config
from .presets import PRESETS, list_presets, preset_config, preset_text
from .report import write_result, write_summary
from .runner import ABORT_ERRORS, Check, ScenarioResult, run_scenario

ENV_OUT = "HAMTRANSPORT_OUT"
DEFAULT_OUT = "hamtransport_out"
EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_ABORT = 0, 1, 2, 3


def resolve_targets(targets):
    """Expand ``all`` and map preset names or config paths to parsed configs."""
    out = []
    for target in targets:
        if target == "all":
            out.extend(preset_config(name) for name in PRESETS)
        elif target in PRESETS:
            out.append(preset_config(target))
        elif os.path.isfile(target):
            out.append(load_config(target))
        else:
            raise ConfigError(f"{target!r} is neither a preset nor a config file", key="config")
    return out


def run_suite(configs, out_dir, plot_data=False, particles=None, steps=None, tol=None, seed=None, log=None):
    """Run scenarios in order and write every report; return (results, exit code)."""
    results = []
    code = EXIT_OK
    for cfg in configs:
        start = time.perf_counter()
        try:
            sc = build_scenario(cfg, particles=particles, steps=steps, tol=tol, seed=seed)
            res = run_scenario(sc)
        except ABORT_ERRORS as exc:
            res = ScenarioResult(cfg.get("name", "?"), cfg.get("mode", "transport"))
            res.checks.append(Check(res.name, type(exc).__name__, float("nan"), float("nan"), "ABORT", str(exc)))
        write_result(res, out_dir, plot_data)
        results.append(res)
        if res.aborted:
            code = EXIT_ABORT
        elif res.failed and code == EXIT_OK:
            code = EXIT_FAIL
        if log is not None:
            status = "ABORT" if res.aborted else "FAIL" if res.failed else "PASS"
            log(f"{res.name:28s} {status:5s} {time.perf_counter() - start:7.1f}s")
            for c in res.checks:
                if c.status != "PASS":
                    log(f"    {c.scenario} {c.check}: {c.status} margin={c.margin:.3e} {c.detail}")
    write_summary(results, out_dir)
    return results, code


def build_parser():
    ap = argparse.ArgumentParser(prog="hamtransport",
                                 description="Displacement interpolation and entropy convexity checks.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run presets or config files")
    run.add_argument("targets", nargs="+", help="preset name, config path, or 'all'")
    run.add_argument("--out", default=None, help=f"output directory (default ${ENV_OUT} or {DEFAULT_OUT})")
    run.add_argument("--plot-data", action="store_true", help="write gnuplot data files per theorem")
    run.add_argument("--steps", type=int, default=None, help="time steps per unit time")
    run.add_argument("--particles", type=int, default=None, help="particles per axis")
    run.add_argument("--tol", type=float, default=None, help="inequality tolerance on margins")
    run.add_argument("--seed", type=int, default=None, help="seed for random phase-point sweeps")
    sub.add_parser("presets", help="list built-in presets")
    desc = sub.add_parser("describe", help="print a preset's config")
    desc.add_argument("name")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            for name, text in list_presets():
                print(f"{name:28s} {text}")
            return EXIT_OK
        if args.command == "describe":
            print(preset_text(args.name), end="")
            return EXIT_OK
        out = args.out or os.environ.get(ENV_OUT) or DEFAULT_OUT
        configs = resolve_targets(args.targets)
        _, code = run_suite(configs, out, args.plot_data, args.particles, args.steps, args.tol, args.seed,
                            log=print)
        print(f"reports written to {out}")
        return code
    except HamTransportError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
