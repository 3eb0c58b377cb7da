"""Command-line entry point: ``bwbp <subcommand> ...``.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
Errors go to stderr as ``error[<code>]: message``.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import abpre, analysis, engine, experiments, spine
from .model import ModelError, dump_model, load_model, validate_assumptions
from .rng import fresh_seed, stream


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = 2):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2) with its own format
        raise CliError("usage", f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers


def _seed(args) -> int:
    if args.seed is None:
        args.seed = fresh_seed()
        print(f"seed: {args.seed}", file=sys.stderr)
    if not 0 <= args.seed < 2**64:
        raise CliError("usage", "seed must be a 64-bit unsigned integer")
    return args.seed


def _model(path):
    if path is None:
        raise CliError("usage", "--model is required")
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CliError("model", f"{path}: no such file") from None
    except ModelError as exc:
        raise CliError("model", str(exc)) from None


@contextlib.contextmanager
def _sink(out_dir: Optional[str], name: str):
    """Open ``out_dir/name`` or fall back to stdout."""
    if out_dir is None:
        yield sys.stdout
        return
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / name, "w", newline="") as fh:
        yield fh


def _positive(name, value):
    if value is not None and value < 1:
        raise CliError("usage", f"{name} must be >= 1")


# -------------------------------------------------------------- subcommands


def cmd_validate(args) -> int:
    spec = _model(args.model)
    if args.echo:
        sys.stdout.write(dump_model(spec) + "\n")
        return 0
    rep = validate_assumptions(spec, args.mc_budget, seed=_seed(args))
    print(f"model: {spec.name}")
    print(f"{'assumption':<11} {'status':<13} detail")
    for name, v in rep.verdicts.items():
        print(f"{name:<11} {v.status:<13} {v.detail}")
    return 0 if rep.all_pass else 1


def _parse_norming(items: list[str]) -> tuple[float, int]:
    kv = {}
    for it in items:
        key, sep, val = it.partition("=")
        if not sep or key not in ("a", "n"):
            raise CliError("usage", f"--norming expects a=<float> n=<int>, got {it!r}")
        kv[key] = val
    try:
        return float(kv["a"]), int(kv["n"])
    except (KeyError, ValueError):
        raise CliError("usage", "--norming expects a=<float> n=<int>") from None


def cmd_analyze(args) -> int:
    spec = _model(args.model)
    if args.norming:
        a, n = _parse_norming(args.norming)
        try:
            seq = analysis.heyde_seneta_norming(spec.cell_law, a, n)
        except analysis.AnalysisError as exc:
            raise CliError("precondition", str(exc)) from None
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["n", "c_n", "ratio"])
        for i, c, r in seq.rows():
            w.writerow([i, repr(c), "" if r is None else repr(r)])
        return 0
    try:
        rep = analysis.analyze(spec)
    except analysis.AnalysisError as exc:
        raise CliError("precondition", str(exc)) from None
    d = rep.to_dict()
    print(json.dumps(d, indent=2))
    print()
    for key, val in d.items():
        if key in ("mu", "notes"):
            continue
        print(f"{key:<28} {val}")
    for note in rep.notes:
        print(f"note: {note}")
    return 0


def cmd_simulate(args) -> int:
    spec = _model(args.model)
    _positive("--reps", args.reps)
    try:
        caps = engine.Caps.parse(args.caps)
    except ValueError:
        raise CliError("usage", f"--caps expects <parasites,cells>, got {args.caps!r}") from None
    ens = engine.run_batch(
        spec, args.reps, args.horizon, caps, seed=_seed(args), track_empty=args.track_empty, threads=args.threads
    )
    if args.format == "jsonl":
        with _sink(args.out, "trajectories.jsonl") as fh:
            for r, tr in enumerate(ens.trajectories):
                fh.write(json.dumps({"rep": r, **tr.__dict__}) + "\n")
    else:
        with _sink(args.out, "trajectories.csv") as fh:
            engine.write_trajectories(ens.trajectories, fh)
    if args.out is not None or args.summary:
        with _sink(args.out, "summary.csv") as fh:
            engine.write_summary(ens, fh)
    return 0


def cmd_spine(args) -> int:
    spec = _model(args.model)
    seed = _seed(args)
    _positive("--reps", args.reps)
    try:
        tables = spine.SpineTables.build(spec)
    except spine.SpineError as exc:
        raise CliError("precondition", str(exc)) from None
    if args.full_tree:
        with _sink(args.out, "trees.jsonl") as fh:
            for r in range(args.reps):
                t = spine.run_sizebiased_tree(spec, args.depth, args.cap, rng=stream(seed, "cli-tree", r), tables=tables)
                fh.write(json.dumps({"rep": r, **t.to_dict()}, sort_keys=True) + "\n")
        return 0
    recs = spine.run_spine_batch(spec, args.reps, args.horizon, seed, threads=args.threads)
    with _sink(args.out, "spines.csv") as fh:
        spine.write_spines(recs, fh)
    return 0


def cmd_abpre(args) -> int:
    spec = _model(args.model)
    _positive("--reps", args.reps)
    es = abpre.EnvAtomStream.from_env(analysis.abpre_env(spec))
    trajs = abpre.run_stream_batch(es, args.reps, args.horizon, _seed(args), immigration=False, threads=args.threads)
    with _sink(args.out, "abpre.csv") as fh:
        abpre.write_stream_trajectories(trajs, fh)
    return 0


def cmd_bprei(args) -> int:
    if (args.stream is None) == (args.model is None):
        raise CliError("usage", "give exactly one of --stream or --model")
    _positive("--reps", args.reps)
    if args.stream is not None:
        try:
            es = abpre.EnvAtomStream.from_dict(json.loads(Path(args.stream).read_text()))
        except FileNotFoundError:
            raise CliError("model", f"{args.stream}: no such file") from None
        except json.JSONDecodeError as exc:
            raise CliError("model", f"{args.stream}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        except (ModelError, abpre.StreamError) as exc:
            raise CliError("model", str(exc)) from None
    else:
        es = abpre.EnvAtomStream.abprei(_model(args.model))
    try:
        trajs = abpre.run_stream_batch(es, args.reps, args.horizon, _seed(args), threads=args.threads)
    except abpre.StreamError as exc:
        raise CliError("precondition", str(exc)) from None
    with _sink(args.out, "bprei.csv") as fh:
        abpre.write_stream_trajectories(trajs, fh)
    return 0


def _overrides(items: list[str]) -> dict:
    out = {}
    for it in items or []:
        key, sep, val = it.partition("=")
        if not sep:
            raise CliError("usage", f"--set expects key=value, got {it!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def cmd_experiment(args) -> int:
    if args.list:
        for e in experiments.CATALOG.values():
            print(f"{e.id:<10} {e.description}")
        return 0
    if args.name is None:
        raise CliError("usage", "--name is required (see --list)")
    if args.name not in experiments.CATALOG:
        raise CliError("usage", f"unknown experiment {args.name!r}; see --list")
    spec = _model(args.model)
    extra = _overrides(args.set)
    if args.caps is not None:
        try:
            extra["caps"] = engine.Caps.parse(args.caps)
        except ValueError:
            raise CliError("usage", f"--caps expects <parasites,cells>, got {args.caps!r}") from None
    if args.a is not None:
        extra["a"] = args.a
    if args.name == "thm23" and "a" not in extra:
        raise CliError("usage", "thm23 needs --a")
    try:
        res = experiments.run_experiment(
            args.name,
            spec,
            seed=_seed(args),
            reps=args.reps,
            horizon=args.horizon,
            threads=args.threads,
            out_dir=Path(args.out) if args.out else None,
            **extra,
        )
    except TypeError as exc:
        raise CliError("usage", f"bad --set override: {exc}") from None
    except (experiments.ExperimentError, analysis.AnalysisError, spine.SpineError) as exc:
        raise CliError("precondition", str(exc)) from None
    print(json.dumps(res.to_dict(), indent=2))
    print(f"verdict: {res.verdict}", file=sys.stderr)
    return 1 if res.verdict == "fail" else 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bwbp", description="Branching-within-branching process toolkit")
    p.add_argument("--threads", type=int, default=engine.default_threads(), help="worker processes (default: all)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, horizon=True):
        sp.add_argument("--model")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--reps", type=int, default=100)
        if horizon:
            sp.add_argument("--horizon", type=int, default=20)
        sp.add_argument("--out", help="output directory (default: stdout)")

    sp = sub.add_parser("validate", help="check assumptions A1-A5")
    sp.add_argument("--model")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--mc-budget", type=int, default=2000)
    sp.add_argument("--echo", action="store_true", help="print the normalized model file and exit")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("analyze", help="regime report")
    sp.add_argument("--model")
    sp.add_argument("--norming", nargs=2, metavar=("a=<float>", "n=<int>"))
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("simulate", help="forward simulation")
    common(sp)
    sp.add_argument("--caps", default="10000000,1000000", help="<parasites,cells>")
    sp.add_argument("--track-empty", action="store_true")
    sp.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    sp.add_argument("--summary", action="store_true", help="also print the summary CSV to stdout")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("spine", help="spinal parasite process or size-biased trees")
    common(sp)
    sp.add_argument("--full-tree", action="store_true")
    sp.add_argument("--depth", type=int, default=3)
    sp.add_argument("--cap", type=int, default=10**5)
    sp.set_defaults(func=cmd_spine)

    sp = sub.add_parser("abpre", help="parasites along a random cell line")
    common(sp)
    sp.set_defaults(func=cmd_abpre)

    sp = sub.add_parser("bprei", help="random environment with immigration")
    common(sp)
    sp.add_argument("--stream", help="stream JSON file (alternative to --model)")
    sp.set_defaults(func=cmd_bprei)

    sp = sub.add_parser("experiment", help="run a catalogued experiment")
    sp.add_argument("--list", action="store_true")
    sp.add_argument("--name")
    sp.add_argument("--model")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--reps", type=int)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--out")
    sp.add_argument("--caps")
    sp.add_argument("--a", type=float, help="norming start value (thm23)")
    sp.add_argument("--set", action="append", metavar="key=value", help="override a check threshold")
    sp.set_defaults(func=cmd_experiment)
    return p


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise CliError("usage", "missing subcommand")
        if args.threads < 1:
            raise CliError("usage", "--threads must be >= 1")
        return args.func(args)
    except CliError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.status


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
