"""Batch execution of scheme x depth x coupling sweeps and report emission.

Each combination marches the configured number of time steps and records
the per-step nonlinear iteration counts; a failing step terminates the
combination with its failure status.  Status markers in the text report
follow the convention ``->[n]`` (stagnation at step n), ``^[n]``
(divergence) and ``x[n]`` (iteration budget exhausted).
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .anderson import AndersonConfig
from .config import SCHEME_LABELS, ScenarioConfig
from .export import cell_flux_vectors, write_cell_csv, write_point_csv, write_vtk
from .model import initial_state
from .schemes import run_transient

__all__ = ["SweepRow", "SweepReport", "run_sweep", "emit_report"]

_MARKS = {"stagnated": "->", "diverged": "^", "max_iters": "x"}


@dataclass
class SweepRow:
    scheme: str
    depth: int
    alpha: float
    status: str                  # "ok" or a failure status
    fail_step: int | None
    average_iterations: float | None
    per_step: list

    def marker(self) -> str:
        if self.status == "ok":
            return f"{self.average_iterations:.1f}"
        return f"{_MARKS[self.status]}[{self.fail_step}]"


@dataclass
class SweepReport:
    config: ScenarioConfig
    rows: list

    def row(self, scheme, depth, alpha) -> SweepRow:
        for r in self.rows:
            if r.scheme == scheme and r.depth == depth and r.alpha == alpha:
                return r
        raise KeyError((scheme, depth, alpha))


def _run_combo(config: ScenarioConfig, scheme_name: str, depth: int, alpha: float):
    ops = config.operators()
    params = config.params_for(alpha)
    init = initial_state(config.mesh(), params, config.p0, ops)
    accel = AndersonConfig(depth=depth) if depth > 0 else None
    result = run_transient(config.scheme_config(scheme_name), accel, init, params, ops)
    counts = result.iterations_per_step
    if result.completed:
        row = SweepRow(scheme_name, depth, alpha, "ok", None,
                       float(np.mean(counts)), counts)
    else:
        row = SweepRow(scheme_name, depth, alpha, result.fail_status,
                       result.fail_step, None, counts)
    final = result.states[-1] if result.completed else None
    return row, final


def _export_fields(config, scheme_name, depth, alpha, state):
    mesh = config.mesh()
    params = config.params_for(alpha)
    flux = cell_flux_vectors(mesh, state.q)
    fields = {
        "pressure": state.p,
        "saturation": state.saturation(params),
        "flux_magnitude": np.hypot(flux[:, 0], flux[:, 1]),
    }
    stem = f"{scheme_name}_aa{depth}_alpha{alpha:g}"
    base = os.path.join(config.out_dir, stem)
    if config.fields == "csv":
        write_cell_csv(base + "_cells.csv", mesh, fields)
        write_point_csv(base + "_nodes.csv", mesh, state.u)
    elif config.fields == "vtk":
        write_vtk(base + ".vtk", mesh, fields, state.u)


def run_sweep(config: ScenarioConfig) -> SweepReport:
    """Run every scheme x depth x alpha combination of the configuration.

    Combinations are independent; with workers > 1 they execute in a
    process pool.   Solver failures are recorded as data, never raised."""
    combos = [
        (scheme, depth, alpha)
        for scheme in config.schemes
        for depth in config.depths
        for alpha in config.alphas
    ]
    results = []
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_combo, config, *combo) for combo in combos]
            results = [f.result() for f in futures]
    else:
        results = [_run_combo(config, *combo) for combo in combos]

    rows = []
    for (scheme, depth, alpha), (row, final) in zip(combos, results):
        rows.append(row)
        if config.fields != "none" and final is not None:
            os.makedirs(config.out_dir, exist_ok=True)
            _export_fields(config, scheme, depth, alpha, final)
    return SweepReport(config=config, rows=rows)


def emit_report(report: SweepReport, out_dir) -> dict:
    """Write the sweep as CSV plus an aligned text table; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "sweep.csv")
    txt_path = os.path.join(out_dir, "sweep.txt")
    try:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["scheme", "depth", "alpha", "status", "fail_step",
                 "avg_iterations", "steps_completed", "per_step_iterations"]
            )
            for r in report.rows:
                writer.writerow(
                    [r.scheme, r.depth, f"{r.alpha:g}", r.status,
                     "" if r.fail_step is None else r.fail_step,
                     "" if r.average_iterations is None else f"{r.average_iterations:.6g}",
                     len(r.per_step) - (0 if r.status == "ok" else 1),
                     "|".join(str(c) for c in r.per_step)]
                )
        with open(txt_path, "w") as fh:
            fh.write(_text_table(report))
    except OSError as exc:
        raise OSError(f"cannot write report to {out_dir}: {exc}") from exc
    return {"csv": csv_path, "txt": txt_path}


def _text_table(report: SweepReport) -> str:
    config = report.config
    depths = sorted({r.depth for r in report.rows})
    schemes = [s for s in config.schemes if any(r.scheme == s for r in report.rows)]
    alphas = sorted({r.alpha for r in report.rows})
    lines = [f"scenario {config.scenario}: average nonlinear iterations per time step"]
    width = 11
    for alpha in alphas:
        lines.append("")
        lines.append(f"alpha = {alpha:g}")
        header = "  ".join(f"{SCHEME_LABELS[s]:>{width}}" for s in schemes)
        lines.append(f"{'':8}{header}")
        for depth in depths:
            cells = []
            for s in schemes:
                try:
                    cells.append(f"{report.row(s, depth, alpha).marker():>{width}}")
                except KeyError:
                    cells.append(f"{'-':>{width}}")
            lines.append(f"AA({depth})".ljust(8) + "  ".join(cells))
    return "\n".join(lines) + "\n"
