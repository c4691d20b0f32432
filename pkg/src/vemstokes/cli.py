"""Command-line entry point: ``vem-stokes {run,equivalence,dof-table}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from .harness import (
    ExperimentConfig,
    dof_saving_table,
    emit_outputs,
    load_config,
    run_convergence,
    run_equivalence,
    with_overrides,
    write_saving_table,
)
from .mesh import MeshError
from .system import ConfigurationError, SolverError

log = logging.getLogger("vemstokes")


def _floats(s: str) -> tuple[float, ...]:
    out = []
    for tok in s.split(","):
        tok = tok.strip()
        if "/" in tok:
            a, b = tok.split("/")
            out.append(float(a) / float(b))
        else:
            out.append(float(tok))
    return tuple(out)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(t) for t in s.split(","))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with experiment settings; flags override it")
    p.add_argument("--test", choices=["1", "2"])
    p.add_argument("--family", help="V, T, Q or file:PATH")
    p.add_argument("--h", type=_floats, dest="hs", help="comma list, e.g. 1/4,1/8")
    p.add_argument("--k", type=_ints, dest="ks", help="comma list of degrees")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=["rotational", "orthogonal"])
    p.add_argument("--triangle-pattern", choices=["uniform", "checker"], dest="triangle_pattern")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vem-stokes", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="convergence study for one family")
    _add_common(run)
    run.add_argument("--element", choices=["new", "classic"])
    run.add_argument("--scheme", choices=["full", "reduced", "reduced-post"])
    run.add_argument("--max-div", type=float, default=1e-9,
                     help="fail if a divergence-free run exceeds this relative divergence")

    eq = sub.add_parser("equivalence", help="full vs reduced discrepancy")
    _add_common(eq)
    eq.add_argument("--tol", type=float, default=1e-8)

    dt = sub.add_parser("dof-table", help="DoF savings of the reduced scheme")
    dt.add_argument("--families", default="V,T,Q")
    dt.add_argument("--k", type=_ints, dest="ks", default=(2, 3, 4, 5))
    dt.add_argument("--seed", type=int, default=0)
    dt.add_argument("--triangle-pattern", choices=["uniform", "checker"], default="checker")
    dt.add_argument("--out", help="CSV path (printed to stdout otherwise)")
    return ap


def _resolve(args) -> ExperimentConfig:
    base = ExperimentConfig.from_dict(load_config(args.config)) if args.config else ExperimentConfig()
    kw = {k: getattr(args, k, None) for k in
          ("test", "family", "hs", "ks", "seed", "out", "mode", "triangle_pattern", "element", "scheme")}
    cfg = with_overrides(base, **kw)
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


def _print_rows(rows, eps: bool = False) -> None:
    if eps:
        print(f"{'family':>8} {'h':>9} {'k':>2} {'ndof':>7} {'eps_u':>11} {'eps_p':>11}")
        for r in rows:
            print(f"{r.family:>8} {r.h:9.5f} {r.k:2d} {r.ndof:7d} {r.eps_u:11.3e} {r.eps_p:11.3e}")
        return
    print(f"{'family':>8} {'h':>9} {'k':>2} {'ndof':>7} {'delta_u':>11} {'delta_p':>11} {'maxdiv':>11}")
    for r in rows:
        print(f"{r.family:>8} {r.h:9.5f} {r.k:2d} {r.ndof:7d} {r.delta_u:11.3e} "
              f"{r.delta_p:11.3e} {r.maxdiv:11.3e}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        if args.cmd == "dof-table":
            rows = dof_saving_table(tuple(args.families.split(",")), ks=args.ks, seed=args.seed,
                                    triangle_pattern=args.triangle_pattern)
            if args.out:
                write_saving_table(rows, args.out)
            print(f"{'family':>6} {'h':>8} {'k':>2} {'no -1 %':>9} {'with -1 %':>9}")
            for r in rows:
                print(f"{r.family:>6} {r.h:8.5f} {r.k:2d} {r.saving_no_minus_one:9.3f} "
                      f"{r.saving_minus_one:9.3f}")
            status = 0
        elif args.cmd == "run":
            cfg = _resolve(args)
            rep = run_convergence(cfg)
            _print_rows(rep.rows)
            for key, (su, sp) in sorted(rep.slopes.items()):
                print(f"slopes {key[0]} k={key[1]}: delta_u {su:.3f} delta_p {sp:.3f}")
            if cfg.out:
                emit_outputs(rep, cfg.out)
            bad = [r for r in rep.rows if r.element == "new" and r.maxdiv > args.max_div]
            for r in bad:
                log.error("divergence %.3e above %.1e at h=%g k=%d", r.maxdiv, args.max_div, r.h, r.k)
            status = 1 if bad else 0
        else:
            cfg = _resolve(args)
            rep = run_equivalence(cfg)
            _print_rows(rep.rows, eps=True)
            if cfg.out:
                emit_outputs(rep, cfg.out, prefix="equivalence")
            bad = [r for r in rep.rows if max(r.eps_u, r.eps_p) > args.tol]
            for r in bad:
                log.error("equivalence gap above %.1e at h=%g k=%d", args.tol, r.h, r.k)
            status = 1 if bad else 0
    except (ConfigurationError, MeshError, SolverError, OSError, ValueError) as err:
        log.error("%s", err)
        return 2
    log.info("wall time %.2fs", time.perf_counter() - t0)
    return status


if __name__ == "__main__":
    sys.exit(main())
