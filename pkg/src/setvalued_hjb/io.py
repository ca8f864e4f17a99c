"""CSV and JSON exports.

Floats are written with 17 significant digits so every value round-trips
exactly; rows come out in grid-index order, never completion order.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, allow_nan=True) + "\n", encoding="utf-8")
    return path


def read_csv(path):
    """Header and float rows of a file written here."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, np.array([[float(v) for v in row] for row in r])


# -- value surface ------------------------------------------------------------


def surface_header(n, d):
    return (
        ["t"]
        + [f"x{i}" for i in range(n)]
        + ["k"]
        + [f"zeta{j}" for j in range(d)]
        + ["threshold"]
        + [f"p{i}" for i in range(n)]
        + ["iterations", "residual"]
    )


def surface_rows(surface):
    zetas = surface.cone.base_grid
    for i, (t, x) in enumerate(zip(surface.points_t, surface.points_x)):
        for k, zeta in enumerate(zetas):
            yield (
                [t, *x, k, *zeta, surface.thresholds[i, k], *surface.p_star[i, k]]
                + [int(surface.iterations[i, k]), surface.residual[i, k]]
            )


def write_surface_csv(path, surface):
    n = surface.points_x.shape[1]
    return _write_csv(path, surface_header(n, surface.cone.dim_d), surface_rows(surface))


def write_surface_json(path, surface):
    n = surface.points_x.shape[1]
    header = surface_header(n, surface.cone.dim_d)
    rows = [dict(zip(header, (fmt_json(v) for v in row))) for row in surface_rows(surface)]
    return _write_json(path, {"columns": header, "rows": rows})


def fmt_json(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    return float(v)


# -- oracle -------------------------------------------------------------------

ORACLE_HEADER = ["t", "x", "k", "v_hopflax", "v_direct", "gap", "M", "iters"]


def write_oracle_csv(path, rows):
    """One row per ``(point, direction)``; ``x`` is space-joined when ``n > 1``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ORACLE_HEADER)
        for r in rows:
            x = " ".join(fmt(v) for v in r.x)
            w.writerow([fmt(r.t), x, r.k, fmt(r.v_hopflax), fmt(r.v_direct), fmt(r.gap), r.M, r.iters])
    return path


# -- reports ------------------------------------------------------------------


def hjb_rows(report):
    for i, (t, x) in enumerate(zip(report.points_t, report.points_x)):
        for k in range(report.lhs.shape[1]):
            yield [
                t,
                *x,
                k,
                report.lhs[i, k],
                report.rhs[i, k],
                report.residual[i, k],
                report.fd_time_error[i, k],
                report.fd_space_error[i, k],
            ]


def write_hjb_csv(path, report):
    n = report.points_x.shape[1]
    header = ["t"] + [f"x{i}" for i in range(n)] + ["k", "lhs", "rhs", "residual", "fd_time_error", "fd_space_error"]
    return _write_csv(path, header, hjb_rows(report))


def write_hjb_json(path, report):
    t, x, k = report.worst
    payload = {
        "passed": bool(report.passed),
        "tol": report.tol,
        "fd_tol": report.fd_tol,
        "max_residual": report.max_residual,
        "corollary_max": report.corollary_max,
        "max_fd_error": report.max_fd_error,
        "worst": {"t": t, "x": x, "k": k},
        "zetas": report.zetas.tolist(),
        "points_t": report.points_t.tolist(),
        "points_x": report.points_x.tolist(),
        "lhs": report.lhs.tolist(),
        "rhs": report.rhs.tolist(),
        "residual": report.residual.tolist(),
        "fd_time_error": report.fd_time_error.tolist(),
        "fd_space_error": report.fd_space_error.tolist(),
    }
    return _write_json(path, payload)


def bellman_rows(report, point_index=0):
    slack = report.slack
    for a in range(slack.shape[0]):
        for j, tau in enumerate(report.taus):
            for k in range(slack.shape[2]):
                yield [point_index, a, tau, k, report.lhs[k], report.rhs[a, j, k], slack[a, j, k]]


BELLMAN_HEADER = ["point", "arc", "tau", "k", "lhs", "rhs", "slack"]


def write_bellman_csv(path, reports):
    rows = (row for i, rep in enumerate(reports) for row in bellman_rows(rep, i))
    return _write_csv(path, BELLMAN_HEADER, rows)


def write_bellman_json(path, reports, points):
    items = []
    for rep, (t, x) in zip(reports, points):
        a, tau, k = rep.worst
        items.append(
            {
                "t": float(t),
                "x": [float(v) for v in x],
                "passed": bool(rep.passed),
                "min_slack": rep.min_slack,
                "worst": {"arc": a, "tau": tau, "k": k},
                "infimizer_gap": rep.infimizer_gap,
                "tol": rep.tol,
                "tol_infimizer": rep.tol_infimizer,
                "taus": rep.taus.tolist(),
                "lhs": rep.lhs.tolist(),
                "infimizer_rhs": rep.infimizer_rhs.tolist(),
            }
        )
    return _write_json(path, {"passed": all(i["passed"] for i in items), "points": items})


def write_hypotheses_json(path, results):
    return _write_json(path, {r.name: {"passed": bool(r.passed), "message": r.message} for r in results})
