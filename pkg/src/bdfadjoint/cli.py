"""Command-line front end: integrate / adjoint / converge / verify.

Exit codes: 0 success, 1 usage or configuration error, 2 solver failure,
3 verification failure.  Options may also be supplied through a plain-text
key=value config file with section headers (--config); command-line flags
win over config values.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

from .adjoint import adjoint_sweep, assemble_weak_adjoint
from .analysis import ConvergenceTable, fit_order, pointwise_error, verify_kkt
from .bdf import (MAX_ORDER, SolverError, integrate_adaptive,
                  integrate_nonadaptive, tape_residuals)
from .problems import get_problem
from .serialize import (load_adjoint_results, load_tape, save_adjoint_results,
                        save_kkt_report, save_tape, write_adjoint_csv,
                        write_convergence_csv)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_VERIFY = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _parse_vector(text):
    return [float(x) for x in text.replace(",", " ").split()]


def _parse_matrix(text):
    return [_parse_vector(row) for row in text.split(";")]


class _Settings:
    """Flag values layered over config-file values (flags win)."""

    def __init__(self, ns):
        self.flags = vars(ns)
        self.cfg = {}
        path = ns.config
        if path is not None:
            if not Path(path).is_file():
                raise _UsageError(f"config file not found: {path}")
            parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
            parser.optionxform = str  # keep key case (A vs a)
            try:
                parser.read(path)
            except configparser.Error as exc:
                raise _UsageError(f"bad config file {path}: {exc}") from exc
            for section in parser.sections():
                for key, value in parser.items(section):
                    self.cfg[key.replace("-", "_")] = value

    def get(self, key, default=None, cast=None):
        value = self.flags.get(key)
        if value is None:
            value = self.cfg.get(key)
            if value is not None and cast is not None:
                try:
                    value = cast(value)
                except ValueError as exc:
                    raise _UsageError(f"config key {key}: {exc}") from exc
        if value is None:
            return default
        return value

    def get_list(self, key, cast=float):
        """Repeatable flag (already a list) or comma/space list in the config."""
        value = self.flags.get(key)
        if value:
            return list(value)
        raw = self.cfg.get(key)
        if raw is None:
            return []
        try:
            return [cast(x) for x in raw.replace(",", " ").split()]
        except ValueError as exc:
            raise _UsageError(f"config key {key}: {exc}") from exc


def _build_problem(settings):
    name = settings.get("problem", default="catenary")
    tf = settings.get("tf", cast=float)
    if name == "catenary":
        params = {
            "p": settings.get("p", default=3.0, cast=float),
            "A": settings.get("A", default=-3.0, cast=float),
            "tf": 2.0 if tf is None else tf,
        }
    elif name == "linear":
        params = {
            "a": settings.get("a", default=[[0.0, 1.0], [0.0, 0.0]], cast=_parse_matrix),
            "y0": settings.get("y0", default=[1.0, 1.0], cast=_parse_vector),
            "t0": settings.get("t0", default=0.0, cast=float),
            "tf": 1.0 if tf is None else tf,
        }
        c = settings.get("c", cast=_parse_vector)
        if c is not None:
            params["c"] = c
    else:
        raise _UsageError(f"unknown problem {name!r} (available: catenary, linear)")
    try:
        problem, reference = get_problem(name, **params)
    except ValueError as exc:
        raise _UsageError(str(exc)) from exc
    return problem, reference


def _integration_setup(settings):
    """Validated (mode, kwargs) for a single run — before any computation."""
    mode = settings.get("mode", default="nonadaptive")
    if mode not in ("nonadaptive", "adaptive"):
        raise _UsageError(f"mode must be 'nonadaptive' or 'adaptive', got {mode!r}")
    if mode == "nonadaptive":
        order = settings.get("order", cast=int)
        h = settings.get("h", cast=float)
        if order is None or h is None:
            raise _UsageError("nonadaptive mode requires --order and --h")
        if h <= 0.0:
            raise _UsageError(f"stepsize must be positive, got {h}")
        if not 1 <= order <= MAX_ORDER:
            raise _UsageError(f"order must be in [1, {MAX_ORDER}], got {order}")
        return mode, {"k": order, "h": h}
    rtol = settings.get("rtol", cast=float)
    atol = settings.get("atol", default=1e-12, cast=float)
    if rtol is None:
        raise _UsageError("adaptive mode requires --rtol")
    if rtol <= 0.0 or atol <= 0.0:
        raise _UsageError(f"tolerances must be positive, got rtol={rtol}, atol={atol}")
    return mode, {"rtol": rtol, "atol": atol}


def _run_integration(problem, mode, kwargs):
    if mode == "nonadaptive":
        return integrate_nonadaptive(problem, **kwargs)
    return integrate_adaptive(problem, **kwargs)


def cmd_integrate(ns) -> int:
    settings = _Settings(ns)
    problem, _ = _build_problem(settings)
    mode, kwargs = _integration_setup(settings)
    out = settings.get("out", default="tape.json")
    try:
        tape = _run_integration(problem, mode, kwargs)
    except ValueError as exc:
        raise _UsageError(str(exc)) from exc
    save_tape(tape, out)
    orders = tape.grid.orders
    print(f"problem={problem.name} mode={mode} steps N={tape.n_steps} "
          f"nodes={tape.grid.nodes.size}")
    print(f"orders in [{orders.min()}, {orders.max()}]; "
          f"newton iterations total={int(tape.newton_iterations.sum())} "
          f"max residual={tape.newton_residuals.max():.3e}")
    print(f"tape written to {out}")
    return EXIT_OK


def _load_tape_checked(path):
    if path is None:
        raise _UsageError("--tape is required")
    try:
        return load_tape(path)
    except (OSError, ValueError, KeyError) as exc:
        raise _UsageError(f"cannot load tape: {exc}") from exc


def _problem_for_tape(tape, settings=None):
    if settings is not None:
        declared = settings.get("problem")
        if declared is not None and declared != tape.problem_name:
            raise _UsageError(
                f"tape was recorded for problem {tape.problem_name!r}, "
                f"not {declared!r}")
    try:
        return get_problem(tape.problem_name, **tape.problem_params)
    except (TypeError, ValueError) as exc:
        raise _UsageError(f"cannot rebuild tape problem: {exc}") from exc


def cmd_adjoint(ns) -> int:
    settings = _Settings(ns)
    tape = _load_tape_checked(settings.get("tape"))
    problem, _ = _problem_for_tape(tape, settings)
    if problem.dimension != tape.dimension:
        raise _UsageError("tape dimension does not match the problem")
    resid = tape_residuals(problem, tape)
    if np.any(resid > 10.0 * tape.newton_tolerances):
        raise _UsageError("tape failed residual validation against its problem")
    adjoints = adjoint_sweep(problem, tape)
    weak = assemble_weak_adjoint(tape, adjoints)
    out = settings.get("out", default="adjoint.json")
    save_adjoint_results(tape, adjoints, weak, out)
    csv_path = str(Path(out).with_suffix(".csv"))
    write_adjoint_csv(tape, adjoints, weak, csv_path)
    grad = ", ".join(repr(float(v)) for v in adjoints.gradient)
    lam_n = ", ".join(repr(float(v)) for v in adjoints.lambdas[-1])
    print(f"adjoint sweep over N={tape.n_steps} steps")
    print(f"gradient=[{grad}]")
    print(f"lambda_N=[{lam_n}]")
    print(f"results written to {out} and {csv_path}")
    return EXIT_OK


def cmd_converge(ns) -> int:
    settings = _Settings(ns)
    problem, reference = _build_problem(settings)
    mode = settings.get("mode", default="nonadaptive")
    probes = [p for p in settings.get_list("probe")
              if abs(p - problem.final_time) > 1e-12]
    for p in probes + [problem.final_time]:
        if not problem.initial_time <= p <= problem.final_time:
            raise _UsageError(f"probe time {p} outside the integration interval")

    if mode == "nonadaptive":
        values = settings.get_list("h")
        order = settings.get("order", default=2, cast=int)
        parameter = "h"
        if not 1 <= order <= MAX_ORDER:
            raise _UsageError(f"order must be in [1, {MAX_ORDER}], got {order}")
    elif mode == "adaptive":
        values = settings.get_list("rtol")
        atol = settings.get("atol", default=1e-12, cast=float)
        parameter = "rtol"
    else:
        raise _UsageError(f"mode must be 'nonadaptive' or 'adaptive', got {mode!r}")
    if len(values) < 2:
        raise _UsageError(f"need at least 2 sweep values for --{parameter}")
    if any(v <= 0 for v in values):
        raise _UsageError("sweep values must be positive")
    values = sorted(values, reverse=True)

    names = ["tf"] + [f"interior{'' if i == 0 else f'_{i + 1}'}"
                      for i in range(len(probes))]
    errors = {name: [] for name in names}
    failures = 0
    for v in values:
        try:
            if parameter == "h":
                tape = integrate_nonadaptive(problem, order, v)
            else:
                tape = integrate_adaptive(problem, v, atol)
            adjoints = adjoint_sweep(problem, tape)
            weak = assemble_weak_adjoint(tape, adjoints)
            errors["tf"].append(pointwise_error(weak, reference, problem.final_time))
            for name, p in zip(names[1:], probes):
                errors[name].append(pointwise_error(weak, reference, p))
        except (SolverError, ValueError) as exc:
            sys.stderr.write(f"sweep point {parameter}={v} failed: {exc}\n")
            failures += 1
            for name in names:
                errors[name].append(float("nan"))
    if failures == len(values):
        raise SolverError("every sweep point failed")

    table = ConvergenceTable(parameter=parameter, values=np.array(values),
                             errors={k: np.array(v) for k, v in errors.items()})
    out = settings.get("out", default="convergence.csv")
    write_convergence_csv(table, out)
    for name in names:
        try:
            print(f"fitted order ({name}): {fit_order(table, name):.3f}")
        except ValueError as exc:
            print(f"fitted order ({name}): skipped ({exc})")
    print(f"table written to {out}")
    return EXIT_OK


def cmd_verify(ns) -> int:
    settings = _Settings(ns)
    tape = _load_tape_checked(settings.get("tape"))
    adj_path = settings.get("adjoint_file")
    if adj_path is None:
        raise _UsageError("--adjoint-file is required")
    try:
        record = load_adjoint_results(adj_path)
    except (OSError, ValueError, KeyError) as exc:
        raise _UsageError(f"cannot load adjoint results: {exc}") from exc

    if (record["problem"]["name"] != tape.problem_name
            or record["problem"]["params"] != tape.problem_params
            or record["nodes"].shape != tape.grid.nodes.shape
            or not np.array_equal(record["nodes"], tape.grid.nodes)):
        raise _UsageError("adjoint file does not belong to this tape")
    adjoints = record["adjoints"]
    if adjoints.lambdas.shape != (tape.n_steps, tape.dimension):
        raise _UsageError("adjoint file does not match the tape dimensions")

    problem, _ = _problem_for_tape(tape, settings)
    report = verify_kkt(problem, tape, adjoints)

    coeff_ok = True
    for n in range(tape.n_steps):
        alphas = tape.coefficients[n].alphas
        stencil = tape.grid.nodes[n + 1 - tape.grid.orders[n]:n + 2]
        h = tape.grid.stepsizes[n]
        zero_sum = abs(alphas.sum())
        ident = abs(alphas @ stencil[::-1] - h)
        if (zero_sum > 1e-12 * np.max(np.abs(alphas))
                or ident > 1e-12 * abs(h) * max(np.max(np.abs(stencil)), 1.0)):
            coeff_ok = False
            break

    out = settings.get("out", default="kkt.json")
    save_kkt_report(report, out)
    init_ok = report.initial_residual <= 1e-12 * (1.0 + np.max(np.abs(tape.states[0])))
    print(f"nominal_residual={report.nominal_residual!r} "
          f"(threshold {report.nominal_threshold!r})")
    print(f"adjoint_residual={report.adjoint_residual!r} "
          f"(threshold {report.adjoint_threshold!r})")
    print(f"initial_residual={report.initial_residual!r}")
    print(f"coefficient invariants: {'ok' if coeff_ok else 'VIOLATED'}")
    print(f"report written to {out}")
    if not report.nominal_residual <= report.nominal_threshold:
        sys.stderr.write("verification failed: nominal_residual above threshold\n")
        return EXIT_VERIFY
    if not report.adjoint_residual <= report.adjoint_threshold:
        sys.stderr.write("verification failed: adjoint_residual above threshold\n")
        return EXIT_VERIFY
    if not init_ok:
        sys.stderr.write("verification failed: initial_residual above threshold\n")
        return EXIT_VERIFY
    if not coeff_ok:
        sys.stderr.write("verification failed: coefficient invariants violated\n")
        return EXIT_VERIFY
    return EXIT_OK


def _add_common(parser):
    parser.add_argument("--config", help="key=value config file with [section] headers")
    parser.add_argument("--problem", help="problem name (catenary, linear)")
    parser.add_argument("--p", type=float, help="catenary parameter p > 0")
    parser.add_argument("--A", type=float, help="catenary parameter A")
    parser.add_argument("--tf", type=float, help="final time")
    parser.add_argument("--out", help="output file path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bdfadjoint",
                     description="BDF integration with discrete adjoints")
    sub = parser.add_subparsers(dest="command", required=True)

    p_int = sub.add_parser("integrate", help="run one integration, write a tape")
    _add_common(p_int)
    p_int.add_argument("--mode", help="nonadaptive | adaptive")
    p_int.add_argument("--order", type=int, help="BDF order k (nonadaptive)")
    p_int.add_argument("--h", type=float, help="main stepsize (nonadaptive)")
    p_int.add_argument("--rtol", type=float, help="relative tolerance (adaptive)")
    p_int.add_argument("--atol", type=float, help="absolute tolerance (adaptive)")
    p_int.set_defaults(func=cmd_integrate)

    p_adj = sub.add_parser("adjoint", help="adjoint sweep over a recorded tape")
    _add_common(p_adj)
    p_adj.add_argument("--tape", help="tape JSON produced by 'integrate'")
    p_adj.set_defaults(func=cmd_adjoint)

    p_con = sub.add_parser("converge", help="error sweep over h or rtol")
    _add_common(p_con)
    p_con.add_argument("--mode", help="nonadaptive | adaptive")
    p_con.add_argument("--order", type=int, help="BDF order k (nonadaptive)")
    p_con.add_argument("--h", type=_parse_vector, help="comma-separated h sweep")
    p_con.add_argument("--rtol", type=_parse_vector, help="comma-separated rtol sweep")
    p_con.add_argument("--atol", type=float, help="absolute tolerance (adaptive)")
    p_con.add_argument("--probe", type=float, action="append",
                       help="error evaluation time (repeatable)")
    p_con.set_defaults(func=cmd_converge)

    p_ver = sub.add_parser("verify", help="check optimality-system residuals")
    _add_common(p_ver)
    p_ver.add_argument("--tape", help="tape JSON")
    p_ver.add_argument("--adjoint-file", dest="adjoint_file",
                       help="adjoint JSON produced by 'adjoint'")
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return ns.func(ns)
    except _UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except SolverError as exc:
        sys.stderr.write(f"solver failure: {exc}\n")
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
