"""Command line interface: ``errw <subcommand> ...``.

Exit codes: 0 success, 1 a checked property or assertion failed, 2 usage
or configuration error. All output is JSON (see docs/schemas).
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import __version__
from .diagnostics import CycleDiag, IDENTITY_TOL, DRIFT_TOL
from .errors import ErrwError
from .experiments import PRESETS, ExperimentConfig, dumps, preset, run_experiment
from .graphs import CycleZmodL, NuValue, nu, parse_graph
from .walk import init_state, run
from .weights import check_h0, check_h1, check_h2, check_h3, parse_weight

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# errors that mean "the request was malformed" rather than "a check failed"
_USAGE_ERRORS = (ValueError, KeyError, TypeError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse already exits 2; keep the message on stderr
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj, output: Path | None) -> None:
    text = dumps(obj)
    if output is None:
        sys.stdout.write(text)
    else:
        output.write_text(text)


def _window(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(float(x)) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must be 'lo,hi', got {text!r}") from None
    return lo, hi


def _nu_value(text: str) -> NuValue:
    try:
        return NuValue.from_number(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--nu-value must be a number, got {text!r}") from None


def _overrides(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        try:
            edge, count = item.split("=")
            a, b = edge.split("-")
            out[(int(a), int(b))] = int(count)
        except ValueError:
            raise argparse.ArgumentTypeError(f"--override must look like 'u-v=count', got {item!r}") from None
    return out


def _graph(text: str):
    try:
        return parse_graph(text)
    except (ErrwError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"--graph: {exc}") from None


def _weight(text: str):
    try:
        return parse_weight(text)
    except (ErrwError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"--weight: {exc}") from None


# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    g, w = _graph(args.graph), _weight(args.weight)
    state = init_state(g, w, args.start, args.initial, _overrides(args.override), seed=args.seed)
    summary = run(state, g, w, args.steps, log_path=args.log)
    out = {"graph": args.graph, "weight": args.weight, "seed": args.seed, "start": args.start,
           "initial": args.initial, **summary.to_dict()}
    out.pop("backend", None)
    if g.is_finite:
        out["edge_counts"] = {f"{a}-{b}": state.count((a, b)) for a, b in sorted(g.edges())}
    out["traversals"] = {f"{a}-{b}": c - state.initial((a, b)) for (a, b), c in sorted(state.edge_counts.items())}
    _emit(out, args.output)
    return EXIT_OK


def cmd_analyze(args) -> int:
    w = _weight(args.weight)
    checks = [c.strip().lower() for c in args.checks.split(",") if c.strip()]
    bad = [c for c in checks if c not in ("h0", "h1", "h2", "h3")]
    if bad or not checks:
        raise argparse.ArgumentTypeError(f"--checks takes a subset of h0,h1,h2,h3; got {args.checks!r}")
    nv = args.nu_value
    if "h1" in checks and nv is None:
        if args.graph is None:
            raise argparse.ArgumentTypeError("--checks h1 needs --nu-value (or --graph to compute it)")
        nv = nu(_graph(args.graph))
    verdicts = []
    for c in checks:
        if c == "h0":
            verdicts.append(check_h0(w))
        elif c == "h1":
            verdicts.append(check_h1(w, nv, args.window))
        elif c == "h2":
            verdicts.append(check_h2(w, args.h2_window))
        else:
            verdicts.append(check_h3(w))
    out = {"weight": w.spec, "family": w.describe(), "verdicts": [v.to_dict() for v in verdicts]}
    if nv is not None:
        out["nu"] = nv.to_dict()
    _emit(out, args.output)
    return EXIT_OK


def cmd_nu(args) -> int:
    g = _graph(args.graph)
    value = nu(g, max_len=args.max_len)
    out = {"graph": args.graph, **value.to_dict()}
    if value.kind == "finite" and value.value > 0:
        out["longest_odd_cycle"] = int(round(value.value / math.sqrt(2)))
    _emit(out, args.output)
    return EXIT_OK


def cmd_check_identities(args) -> int:
    g, w = _graph(args.graph), _weight(args.weight)
    if not isinstance(g, CycleZmodL):
        raise argparse.ArgumentTypeError(f"--graph must be cycle:L for identity checks, got {args.graph!r}")
    state = init_state(g, w, args.start, args.initial, seed=args.seed)
    diag = CycleDiag(state, g, w)
    run(state, g, w, args.steps, [diag])
    res = diag.residuals()
    ok = res.ok(args.tol, args.drift_tol)
    _emit({"graph": args.graph, "weight": args.weight, "steps": args.steps, "seed": args.seed,
           "tolerance": args.tol, "drift_tolerance": args.drift_tol, "closed_form_mode":
           "exact" if diag.exact_mode else "constant_offset", "residuals": res.to_dict(), "passed": ok},
          args.output)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_experiment(args) -> int:
    if (args.config is None) == (args.preset is None):
        raise argparse.ArgumentTypeError("give exactly one of --config or --preset")
    cfg = ExperimentConfig.from_file(args.config) if args.config else preset(args.preset)
    changes = {}
    if args.replicas is not None:
        changes["replicas"] = args.replicas
    if args.steps is not None:
        changes["n_steps"] = args.steps
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if changes:
        cfg = cfg.replace(**changes)
    report = run_experiment(cfg)
    paths = report.write(args.out)
    summary = {"name": cfg.name, "report": str(paths[0]), "replicas_csv": str(paths[1]),
               "aggregate": {k: v for k, v in report.aggregate.items()}, "assertions": report.assertions,
               "passed": report.passed, "exploratory": cfg.exploratory}
    _emit(summary, args.output)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_presets(args) -> int:
    _emit({name: cfg.to_dict() for name, cfg in sorted(PRESETS.items())}, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="errw", description="Edge-reinforced random walk toolkit")
    p.add_argument("--version", action="version", version=f"errw {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--output", "-o", type=Path, default=None, help="write JSON here instead of stdout")

    s = sub.add_parser("simulate", help="run one walk and print its summary")
    s.add_argument("--graph", required=True)
    s.add_argument("--weight", required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--start", type=int, default=0)
    s.add_argument("--initial", type=int, default=1)
    s.add_argument("--override", action="append", metavar="U-V=COUNT", help="initial count of one edge")
    s.add_argument("--log", type=Path, default=None, help="CSV trajectory log (.gz to compress)")
    common(s)
    s.set_defaults(fn=cmd_simulate)

    a = sub.add_parser("analyze-weights", help="check the weight hypotheses H0-H3")
    a.add_argument("--weight", required=True)
    a.add_argument("--checks", default="h0,h1,h2,h3")
    a.add_argument("--nu-value", type=_nu_value, default=None)
    a.add_argument("--graph", default=None, help="compute nu from this graph when --nu-value is absent")
    a.add_argument("--window", type=_window, default=(1000, 100_000), help="H1 window 'lo,hi'")
    a.add_argument("--h2-window", type=_window, default=(10, 1000), help="H2 window 'lo,hi'")
    common(a)
    a.set_defaults(fn=cmd_analyze)

    n = sub.add_parser("nu", help="sqrt(2) times the longest odd cycle")
    n.add_argument("--graph", required=True)
    n.add_argument("--max-len", type=int, default=None)
    common(n)
    n.set_defaults(fn=cmd_nu)

    c = sub.add_parser("check-identities", help="verify the cycle identities along a run")
    c.add_argument("--graph", required=True)
    c.add_argument("--weight", required=True)
    c.add_argument("--steps", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--start", type=int, default=0)
    c.add_argument("--initial", type=int, default=1)
    c.add_argument("--tol", type=float, default=IDENTITY_TOL)
    c.add_argument("--drift-tol", type=float, default=DRIFT_TOL)
    common(c)
    c.set_defaults(fn=cmd_check_identities)

    e = sub.add_parser("experiment", help="run a configured or preset experiment")
    e.add_argument("--config", type=Path, default=None)
    e.add_argument("--preset", default=None)
    e.add_argument("--out", type=Path, required=True, help="directory for report.json and replicas.csv")
    e.add_argument("--replicas", type=int, default=None)
    e.add_argument("--steps", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--workers", type=int, default=None)
    common(e)
    e.set_defaults(fn=cmd_experiment)

    ps = sub.add_parser("presets", help="list preset experiments")
    common(ps)
    ps.set_defaults(fn=cmd_presets)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.fn(args)
    except argparse.ArgumentTypeError as exc:
        parser.print_usage(sys.stderr)
        print(f"errw {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _USAGE_ERRORS as exc:
        print(f"errw {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ErrwError, ArithmeticError, RuntimeError) as exc:
        print(f"errw {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
