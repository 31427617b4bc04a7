"""JSON/CSV serialization for tapes, adjoint results and verification reports.

All documents are versioned and deterministic: keys are sorted, floats use
shortest round-trip decimal formatting (Python's repr), and nothing
time- or environment-dependent is written.  Identical inputs therefore
produce byte-identical files, and loading reproduces the exact binary
floating-point values.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .adjoint import DiscreteAdjoints, WeakAdjoint
from .analysis import ConvergenceTable, KktResidualReport
from .bdf import IntegrationTape, TimeGrid, compute_coefficients

__all__ = [
    "FORMAT_VERSION",
    "save_tape",
    "load_tape",
    "save_adjoint_results",
    "load_adjoint_results",
    "write_adjoint_csv",
    "save_kkt_report",
    "write_convergence_csv",
]

FORMAT_VERSION = 1
TAPE_FORMAT = "bdf-tape"
ADJOINT_FORMAT = "bdf-adjoint"
KKT_FORMAT = "bdf-kkt"


def _dump(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_checked(path, expected_format):
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("format") != expected_format:
        raise ValueError(f"{path}: not a {expected_format} document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(
            f"{path}: unsupported version {doc.get('version')!r} "
            f"(supported: {FORMAT_VERSION})"
        )
    return doc


def tape_to_dict(tape: IntegrationTape) -> dict:
    doc = {
        "format": TAPE_FORMAT,
        "version": FORMAT_VERSION,
        "problem": {
            "name": tape.problem_name,
            "params": tape.problem_params,
            "dimension": tape.dimension,
        },
        "mode": tape.mode,
        "driver_params": tape.driver_params,
        "nodes": tape.grid.nodes.tolist(),
        "stepsizes": tape.grid.stepsizes.tolist(),
        "orders": tape.grid.orders.tolist(),
        "states": tape.states.tolist(),
        "newton": {
            "iterations": tape.newton_iterations.tolist(),
            "residuals": tape.newton_residuals.tolist(),
            "tolerances": tape.newton_tolerances.tolist(),
        },
    }
    if tape.error_estimates is not None:
        doc["error_estimates"] = np.asarray(tape.error_estimates).tolist()
    return doc


def save_tape(tape: IntegrationTape, path) -> None:
    _dump(tape_to_dict(tape), path)


def load_tape(path) -> IntegrationTape:
    """Rebuild a tape from JSON; per-step coefficients are recomputed from the
    nodes and orders (bit-identical, since the nodes round-trip exactly)."""
    doc = _load_checked(path, TAPE_FORMAT)
    grid = TimeGrid(nodes=np.array(doc["nodes"], dtype=float),
                    orders=np.array(doc["orders"], dtype=int))
    if grid.n_steps == 0:
        raise ValueError(f"{path}: empty tape")
    coeffs = tuple(
        compute_coefficients(grid.nodes[n + 1 - grid.orders[n]:n + 2],
                             int(grid.orders[n]))
        for n in range(grid.n_steps)
    )
    newton = doc["newton"]
    est = doc.get("error_estimates")
    return IntegrationTape(
        problem_name=doc["problem"]["name"],
        problem_params=doc["problem"]["params"],
        dimension=int(doc["problem"]["dimension"]),
        mode=doc["mode"],
        grid=grid,
        states=np.array(doc["states"], dtype=float),
        coefficients=coeffs,
        newton_iterations=np.array(newton["iterations"], dtype=int),
        newton_residuals=np.array(newton["residuals"], dtype=float),
        newton_tolerances=np.array(newton["tolerances"], dtype=float),
        error_estimates=None if est is None else np.array(est, dtype=float),
        driver_params=doc.get("driver_params", {}),
    )


def adjoint_results_to_dict(tape, adjoints: DiscreteAdjoints,
                            weak: WeakAdjoint) -> dict:
    return {
        "format": ADJOINT_FORMAT,
        "version": FORMAT_VERSION,
        "problem": {
            "name": tape.problem_name,
            "params": tape.problem_params,
            "dimension": tape.dimension,
        },
        "nodes": tape.grid.nodes.tolist(),
        "lambdas": adjoints.lambdas.tolist(),
        "gradient": adjoints.gradient.tolist(),
        "jumps": {
            "times": weak.jump_times.tolist(),
            "sizes": weak.jump_sizes.tolist(),
        },
    }


def save_adjoint_results(tape, adjoints, weak, path) -> None:
    _dump(adjoint_results_to_dict(tape, adjoints, weak), path)


def load_adjoint_results(path) -> dict:
    """Returns {"problem": dict, "nodes": ndarray, "adjoints": DiscreteAdjoints,
    "weak": WeakAdjoint}."""
    doc = _load_checked(path, ADJOINT_FORMAT)
    nodes = np.array(doc["nodes"], dtype=float)
    adjoints = DiscreteAdjoints(
        lambdas=np.array(doc["lambdas"], dtype=float),
        gradient=np.array(doc["gradient"], dtype=float),
    )
    weak = WeakAdjoint(
        t_start=float(nodes[0]),
        jump_times=np.array(doc["jumps"]["times"], dtype=float),
        jump_sizes=np.array(doc["jumps"]["sizes"], dtype=float),
    )
    return {
        "problem": doc["problem"],
        "nodes": nodes,
        "adjoints": adjoints,
        "weak": weak,
    }


def write_adjoint_csv(tape, adjoints, weak, path) -> None:
    """Rows (t_n, lambda_n components, Lambda^h(t_n) components), n = 1..N."""
    d = tape.dimension
    header = (["t"]
              + [f"lambda_{j + 1}" for j in range(d)]
              + [f"Lambda_{j + 1}" for j in range(d)])
    cum = np.cumsum(weak.jump_sizes, axis=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for n in range(tape.n_steps):
            t = tape.grid.nodes[n + 1]
            row = [repr(float(t))]
            row += [repr(float(v)) for v in adjoints.lambdas[n]]
            row += [repr(float(v)) for v in cum[n]]
            writer.writerow(row)


def kkt_report_to_dict(report: KktResidualReport) -> dict:
    return {
        "format": KKT_FORMAT,
        "version": FORMAT_VERSION,
        "nominal_residual": report.nominal_residual,
        "adjoint_residual": report.adjoint_residual,
        "initial_residual": report.initial_residual,
        "thresholds": {
            "nominal": report.nominal_threshold,
            "adjoint": report.adjoint_threshold,
        },
        "passed": report.passed,
    }


def save_kkt_report(report: KktResidualReport, path) -> None:
    _dump(kkt_report_to_dict(report), path)


def write_convergence_csv(table: ConvergenceTable, path) -> None:
    """CSV with the parameter column followed by (error, order) column pairs."""
    names = list(table.errors)
    header = [table.parameter]
    for name in names:
        header += [f"error_{name}", f"order_{name}"]
    orders = {name: table.orders(name) for name in names}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, v in enumerate(table.values):
            row = [repr(float(v))]
            for name in names:
                e = table.errors[name][i]
                row.append(repr(float(e)) if np.isfinite(e) else "nan")
                o = orders[name][i]
                row.append(repr(float(o)) if np.isfinite(o) else "")
            writer.writerow(row)
