"""Command-line entry point: config -> optimize -> export.

Exit codes: 0 converged, 2 iteration cap reached, 1 error.  The environment
variable GRADTOPO_LOG selects the log level (DEBUG/INFO/WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from gradtopo import export, stress
from gradtopo.config import (ConfigError, apply_overrides, benchmark_config,
                             cantilever_config, load_config, serialize, validate)
from gradtopo.mesh import build_rect_mesh
from gradtopo.optimizer import Optimizer

log = logging.getLogger("gradtopo")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _setup_logging():
    level = os.environ.get("GRADTOPO_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(message)s")


def _load(args, default_builtin=False):
    if args.config:
        config = load_config(args.config)
    elif default_builtin:
        config = cantilever_config()
    else:
        raise ConfigError("--config is required (or use the bench subcommand)")
    if getattr(args, "set", None):
        config = apply_overrides(config, args.set)
    if getattr(args, "out", None):
        config = apply_overrides(config, [f"output.directory={args.out}"])
    if getattr(args, "seed", None) is not None:
        config = apply_overrides(config, [f"optimizer.seed={args.seed}"])
    return config


def _execute(config) -> int:
    outdir = config.output_dir
    os.makedirs(outdir, exist_ok=True)
    opt = Optimizer(config)

    def progress(state, rec):
        if config.log_every and state.iter % config.log_every == 0:
            log.info("iter=%d objective=%.6g compliance=%.6g m_chi=%.4f "
                     "delta_phi=%.3e delta_chi=%.3e", rec.iter, rec.objective,
                     rec.compliance, rec.m_chi, rec.delta_phi, rec.delta_chi)

    state, history = opt.run(callback=progress)
    if config.write_csv:
        export.write_history_csv(history, os.path.join(outdir, "history.csv"))
    if config.write_vtk:
        export.write_fields(state, opt.mesh, os.path.join(outdir, "fields.vtk"))
        np.savez(os.path.join(outdir, "fields.npz"), phi=state.phi,
                 chi=state.chi, u=state.u, sigma=state.sigma)
    vm_max = float(stress.von_mises(state.sigma).max(initial=0.0))
    print(f"converged={'yes' if state.converged else 'no'} "
          f"iterations={state.iter} compliance={state.compliance:.6g} "
          f"m_chi={state.m_chi:.6g} objective={state.objective:.6g} "
          f"max_von_mises={vm_max:.6g}")
    return EXIT_OK if state.converged else EXIT_NOT_CONVERGED


def cmd_run(args) -> int:
    config = _load(args, default_builtin=args.builtin)
    return _execute(config)


def cmd_bench(args) -> int:
    config = benchmark_config()
    if args.set:
        config = apply_overrides(config, args.set)
    if args.out:
        config = apply_overrides(config, [f"output.directory={args.out}"])
    return _execute(config)


def cmd_validate(args) -> int:
    config = _load(args)
    violations = validate(config)
    for v in violations:
        print(f"violation: {v}")
    if not violations:
        print("config ok")
        if args.dump:
            sys.stdout.write(serialize(config))
    return EXIT_OK if not violations else EXIT_ERROR


def cmd_sweep(args) -> int:
    if "=" not in args.sweep:
        raise ConfigError("sweep spec must look like section.key=v1,v2,...")
    key, raw = args.sweep.split("=", 1)
    values = [v for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep value list is empty")
    base = _load(args, default_builtin=True)
    rows = []
    variants = [(f"{key}={v}", [f"{key}={v}"]) for v in values]
    if args.reference_beta1:
        variants.append(("beta=1 (single material)", ["material.beta=1"]))
    for label, overrides in variants:
        try:
            config = apply_overrides(base, overrides)
            subdir = os.path.join(config.output_dir,
                                  label.split()[0].replace(".", "_").replace("=", "_"))
            config = apply_overrides(config, [f"output.directory={subdir}"])
            os.makedirs(subdir, exist_ok=True)
            opt = Optimizer(config)
            state, history = opt.run()
            if config.write_csv:
                export.write_history_csv(history, os.path.join(subdir, "history.csv"))
            if config.write_vtk:
                export.write_fields(state, opt.mesh, os.path.join(subdir, "fields.vtk"))
            rows.append((label, f"{state.compliance:.6g}", f"{state.m_chi:.4g}",
                         "YES" if state.converged else "NO"))
        except Exception as exc:  # per-run failures recorded, sweep continues
            log.error("sweep variant %s failed: %s", label, exc)
            rows.append((label, "error", "error", "ERROR"))
    header = ("variant", "compliance", "m_chi", "convergence")
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(4)]
    fmt = " | ".join("{:%d}" % w for w in widths)
    print(fmt.format(*header))
    print("-|-".join("-" * w for w in widths))
    for r in rows:
        print(fmt.format(*r))
    if args.table:
        with open(args.table, "w", encoding="ascii") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join(r) + "\n")
    return EXIT_OK


def cmd_export_stl(args) -> int:
    if args.height <= 0:
        raise ConfigError(f"extrusion height must be > 0, got {args.height}")
    snap = np.load(args.snapshot)
    phi, chi = snap["phi"], snap["chi"]
    config = _load(args, default_builtin=True)
    opt_mesh = build_rect_mesh(config)
    if len(phi) != opt_mesh.node_count:
        raise ConfigError("snapshot does not match the configured mesh size")
    threshold = args.threshold
    os.makedirs(args.out or ".", exist_ok=True)
    outdir = args.out or "."

    def masked(level_field):
        # exclude void: keep only where phi >= 0.5
        g = np.minimum(phi - 0.5, level_field)
        scale = 4.0 * max(float(np.abs(g).max()), 1e-30)
        return 0.5 + g / scale

    written = []
    above = export.threshold_contour(masked(chi - threshold), opt_mesh, 0.5) \
        if threshold > 0 else export.threshold_contour(masked(np.ones_like(chi)), opt_mesh, 0.5)
    if above.loops_above:
        path = os.path.join(outdir, "above.stl")
        export.extrude_to_stl(above.loops_above, args.height, path)
        written.append(path)
    if threshold > 0:
        below = export.threshold_contour(masked(threshold - chi), opt_mesh, 0.5)
        if below.loops_above:
            path = os.path.join(outdir, "below.stl")
            export.extrude_to_stl(below.loops_above, args.height, path)
            written.append(path)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradtopo",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", help="configuration file path")
        p.add_argument("--set", action="append", default=[],
                       metavar="section.key=value", help="override a config key")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--seed", type=int, help="RNG seed override")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for the linear algebra backend")

    p = sub.add_parser("run", help="run one optimization")
    common(p)
    p.add_argument("--builtin", action="store_true",
                   help="use the built-in cantilever scenario if no --config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run the tuned built-in cantilever benchmark")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate", help="validate a configuration file")
    common(p)
    p.add_argument("--dump", action="store_true", help="print the resolved config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="run a one-key parameter sweep")
    common(p)
    p.add_argument("sweep", metavar="section.key=v1,v2,...",
                   help="key and comma-separated values to sweep")
    p.add_argument("--reference-beta1", action="store_true",
                   help="add the beta=1 single-material reference run")
    p.add_argument("--table", help="also write the summary table as CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-stl", help="threshold-split a snapshot into STLs")
    common(p)
    p.add_argument("--snapshot", required=True, help="fields.npz from a run")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--height", type=float, default=10.0)
    p.set_defaults(func=cmd_export_stl)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None):
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
