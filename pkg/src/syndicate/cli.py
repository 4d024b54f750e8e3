"""Command-line driver: prove, bench, verify and sample-traces."""

from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional, Sequence

from .engine import (
    MODE_ALIASES, MODES, PROVED, Certificate, EngineParams, ProgramResult,
    UnsupportedProgram, portfolio, verify_certificate,
)
from .interp import sample_traces
from .lang import ParseError, parse_program
from .smt import SmtError, SolverConfig
from .templates import DEFAULT_PORTFOLIO, InvariantTemplate, parse_templates

EXIT_OK, EXIT_NOT_PROVED, EXIT_ERROR = 0, 1, 2

log = logging.getLogger("syndicate")


class UsageError(Exception):
    pass


def _count_or_inf(text: str) -> Optional[int]:
    if text.lower() in ("inf", "infinity", "none"):
        return None
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'inf', got {text!r}")
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _positive_or_inf(text: str) -> Optional[int]:
    v = _count_or_inf(text)
    if v == 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _mode(text: str) -> str:
    mode = MODE_ALIASES.get(text, text)
    if mode not in MODES:
        raise argparse.ArgumentTypeError(f"unknown mode {text!r}; choose from {', '.join(MODES)}")
    return mode


def _engine_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("engine")
    g.add_argument("--template", default=",".join(DEFAULT_PORTFOLIO),
                   help="ranking template(s) T(i,n), comma separated; several run as a portfolio")
    g.add_argument("--coeff-bound", type=_positive_or_inf, default=10_000, metavar="N|inf",
                   help="bound on the sum of absolute coefficients (default 10000)")
    g.add_argument("--pref", type=_count_or_inf, default=10, metavar="N|inf",
                   help="refinements per candidate before a pair is set aside (default 10)")
    g.add_argument("--piter", type=_count_or_inf, default=10, metavar="N|inf",
                   help="separator attempts per refinement (default 10)")
    g.add_argument("--traces", type=int, default=100, help="random runs used to seed pair sets")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mode", type=_mode, default="syndicate",
                   help=f"one of {', '.join(MODES)}")
    g.add_argument("--solver", default=None, metavar="PATH",
                   help="SMT solver executable (env SYNDICATE_SOLVER takes precedence)")
    g.add_argument("--smt-timeout", type=int, default=10_000, metavar="MS")
    g.add_argument("--timeout", type=float, default=120.0, metavar="S", help="wall clock per program")
    g.add_argument("--joint-refine", action="store_true",
                   help="refine all loops on a counterexample path at once")
    g.add_argument("--json", default=None, metavar="PATH", help="append one JSON line per program")


def _solver(args) -> SolverConfig:
    exe = os.environ.get("SYNDICATE_SOLVER") or args.solver or "z3"
    if args.smt_timeout <= 0:
        raise UsageError("--smt-timeout must be positive")
    return SolverConfig(executable=exe, timeout_ms=args.smt_timeout)


def params_from_args(args) -> tuple[EngineParams, list]:
    templates = parse_templates(args.template, args.coeff_bound)
    if not templates:
        raise UsageError(f"no template in {args.template!r}")
    if args.traces < 0:
        raise UsageError("--traces must be non-negative")
    params = EngineParams(
        template=templates[0], inv_template=InvariantTemplate(args.coeff_bound),
        p_ref=args.pref, p_iter=args.piter, mode=args.mode, timeout_s=args.timeout,
        seed=args.seed, traces=args.traces, joint_refine=args.joint_refine, solver=_solver(args),
    )
    return params, templates


def solver_identity(config: SolverConfig) -> str:
    try:
        out = subprocess.run([config.command()[0], "--version"], capture_output=True, text=True, timeout=10)
        return out.stdout.strip() or out.stderr.strip() or config.executable
    except (OSError, subprocess.SubprocessError):
        return config.executable


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    rows: list[dict] = field(default_factory=list)
    timeout_s: float = 120.0

    @property
    def proved(self) -> int:
        return sum(r["status"] == PROVED for r in self.rows)

    def mean_seconds(self) -> float:
        """Mean wall time with unproved rows counted at the timeout cap."""
        if not self.rows:
            return 0.0
        secs = [r["wallSeconds"] if r["status"] == PROVED else self.timeout_s for r in self.rows]
        return sum(secs) / len(secs)

    def summary(self) -> str:
        lines = [f"{'file':40} {'status':22} {'seconds':>8}"]
        for r in self.rows:
            lines.append(f"{Path(r['file']).name:40} {r['status']:22} {r['wallSeconds']:8.2f}")
        lines.append(f"proved {self.proved}/{len(self.rows)}, mean time {self.mean_seconds():.2f}s")
        return "\n".join(lines)


class JsonlSink:
    """Append-only JSONL writer; each row is flushed so an interrupted run leaves a valid prefix."""

    def __init__(self, path: Optional[str]):
        self._fh: Optional[IO[str]] = open(path, "a", encoding="utf-8") if path else None
        self._lock = threading.Lock()

    def write(self, row: dict) -> None:
        if self._fh is None:
            return
        with self._lock:
            self._fh.write(json.dumps(row) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def report_row(path: str, result: Optional[ProgramResult], params: EngineParams, seconds: float,
               solver: str, error: Optional[str] = None) -> dict:
    if result is not None:
        row = result.certificate().to_json()
        row["reason"] = result.reason
    else:
        row = {"status": "error", "loops": [], "mode": params.mode, "seed": params.seed, "reason": error}
    row.update(file=str(path), wallSeconds=round(seconds, 3), solver=solver,
               params={"pref": params.p_ref, "piter": params.p_iter, "traces": params.traces,
                       "coeffBound": params.template.budget, "timeout": params.timeout_s})
    return row


def prove_file(path: str, params: EngineParams, templates) -> tuple[Optional[ProgramResult], float, Optional[str]]:
    """Returns (result, seconds, error); errors are parse problems and unsupported programs."""
    start = time.monotonic()
    try:
        program = parse_program(Path(path).read_text())
        result = portfolio(program, templates, params)
    except (ParseError, UnsupportedProgram, OSError) as e:
        return None, time.monotonic() - start, f"{type(e).__name__}: {e}"
    return result, time.monotonic() - start, None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_prove(args) -> int:
    params, templates = params_from_args(args)
    sink = JsonlSink(args.json)
    solver = solver_identity(params.solver)
    code = EXIT_OK
    try:
        for path in args.files:
            result, secs, err = prove_file(path, params, templates)
            sink.write(report_row(path, result, params, secs, solver, err))
            if err is not None:
                print(f"{path}: {err}", file=sys.stderr)
                return EXIT_ERROR
            print(f"{path}: {result.status} ({secs:.2f}s)" + (f" - {result.reason}" if result.reason else ""))
            print(result.certificate().dumps())
            if not result.proved:
                code = EXIT_NOT_PROVED
    finally:
        sink.close()
    return code


def run_bench(directory: str, params: EngineParams, templates, jobs: int = 1,
              sink: Optional[JsonlSink] = None, solver: str = "") -> RunReport:
    files = sorted(str(p) for p in Path(directory).glob("*.while"))
    report = RunReport(timeout_s=params.timeout_s)

    def one(path: str) -> dict:
        result, secs, err = prove_file(path, params, templates)
        row = report_row(path, result, params, secs, solver, err)
        if sink is not None:
            sink.write(row)
        return row

    if jobs <= 1:
        report.rows = [one(f) for f in files]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            report.rows = list(pool.map(one, files))
    return report


def cmd_bench(args) -> int:
    params, templates = params_from_args(args)
    if not Path(args.dir).is_dir():
        raise UsageError(f"{args.dir} is not a directory")
    sink = JsonlSink(args.json)
    try:
        report = run_bench(args.dir, params, templates, args.jobs, sink, solver_identity(params.solver))
    finally:
        sink.close()
    print(report.summary())
    return EXIT_OK if report.proved == len(report.rows) else EXIT_NOT_PROVED


def cmd_verify(args) -> int:
    program = parse_program(Path(args.file).read_text())
    text = sys.stdin.read() if args.certificate == "-" else Path(args.certificate).read_text()
    data = json.loads(text.strip().splitlines()[0]) if text.strip().startswith("{") else json.loads(text)
    cert = Certificate.from_json(data)
    exe = os.environ.get("SYNDICATE_SOLVER") or args.solver or "z3"
    verdict = verify_certificate(program, cert, SolverConfig(executable=exe, timeout_ms=args.smt_timeout))
    if verdict:
        print("accepted")
        return EXIT_OK
    print(f"rejected: {verdict.reason}" + (f" (loop {verdict.loop})" if verdict.loop is not None else ""))
    return EXIT_NOT_PROVED


def cmd_sample_traces(args) -> int:
    program = parse_program(Path(args.file).read_text())
    store = sample_traces(program, args.traces, args.seed)
    for line in store.to_jsonl():
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="syndicate", description="Termination prover for while programs.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prove", help="prove termination of one or more programs")
    p.add_argument("files", nargs="+")
    _engine_flags(p)
    p.set_defaults(func=cmd_prove)

    b = sub.add_parser("bench", help="run every .while file in a directory")
    b.add_argument("dir")
    b.add_argument("--jobs", type=int, default=1)
    _engine_flags(b)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="re-check a certificate against a program")
    v.add_argument("file")
    v.add_argument("certificate", help="certificate JSON file, or - for stdin")
    v.add_argument("--solver", default=None, metavar="PATH")
    v.add_argument("--smt-timeout", type=int, default=10_000, metavar="MS")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sample-traces", help="print sampled loop iterations as JSON lines")
    s.add_argument("file")
    s.add_argument("--traces", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample_traces)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_ERROR if e.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (ParseError, OSError, SmtError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
