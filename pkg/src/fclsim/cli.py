"""Command line entry point: ``fclsim run`` and ``fclsim sweep``."""

from __future__ import annotations

import argparse
import sys

from .errors import FCLError
from .runner import load_config, run_experiment, sweep

CASE_CHOICES = ["fmtl", "sync", "async", "sync_fcl", "async_fcl"]
SERVER_CHOICES = ["fedsgd", "fedadam", "fedadagrad", "fedyogi"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fclsim", description="Federated continual learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", help="JSON or TOML file of flat key = value settings")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", dest="output_dir")
    run.add_argument("--case", choices=CASE_CHOICES)
    run.add_argument("--server", choices=SERVER_CHOICES)
    run.add_argument("--eta", type=float)
    run.add_argument("--mu", dest="client_lr", type=float)
    run.add_argument("--rounds", type=int)
    run.add_argument("--tasks", type=int)
    run.add_argument("--clients", type=int)
    run.add_argument("--local-epochs", dest="local_epochs", type=int)
    run.add_argument("--alpha", type=float, help="Dirichlet concentration; implies a non-IID partition")
    run.add_argument("--drop-prob", dest="drop_prob", type=float)
    run.add_argument("--emit-svg", dest="emit_svg", action="store_true", default=None)

    sw = sub.add_parser("sweep", help="run a one-axis sweep over several seeds")
    sw.add_argument("--config")
    sw.add_argument("--axis", required=True)
    sw.add_argument("--values", required=True, help="comma separated")
    sw.add_argument("--seeds", required=True, help="comma separated integers")
    sw.add_argument("--out", dest="output_dir", default="sweep_out")
    return parser


def _run(args: argparse.Namespace) -> int:
    overrides = {
        k: getattr(args, k)
        for k in ("seed", "output_dir", "case", "server", "eta", "client_lr", "rounds", "tasks",
                  "clients", "local_epochs", "alpha", "drop_prob", "emit_svg")
    }
    if args.alpha is not None:
        overrides["partition"] = "dirichlet"
    config = load_config(args.config, overrides)
    if config.output_dir is None:
        config.output_dir = "run_out"
    result = run_experiment(config)
    bwt = "null" if result.bwt_f is None else f"{result.bwt_f:.6f}"
    print(f"acc={result.acc:.6f} bwt_f={bwt} c2s={result.total_c2s_bytes} s2c={result.total_s2c_bytes} "
          f"out={config.output_dir} ({result.wall_seconds:.1f}s)")
    return 0


def _sweep(args: argparse.Namespace) -> int:
    base = load_config(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise FCLError(f"--seeds must be comma separated integers, got {args.seeds!r}") from None
    rows = sweep(base, args.axis, values, seeds, output_dir=args.output_dir)
    for row in rows:
        bwt = "null" if row["bwt_f"] is None else f"{row['bwt_f']:.6f}"
        print(f"{row['axis']}={row['value']} seed={row['seed']} acc={row['acc']:.6f} bwt_f={bwt}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args) if args.command == "run" else _sweep(args)
    except (FCLError, OSError) as exc:
        print(f"fclsim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
