"""Command-line front end.

Every option can also come from the environment: ``SVHJB_SCENARIO``,
``SVHJB_OUT``, ``SVHJB_TOL``, ``SVHJB_GRID_T``, ``SVHJB_GRID_X`` (space
separated when repeated), ``SVHJB_SEED``, ``SVHJB_JOBS``, ``SVHJB_K_GRID``.
Command-line flags win over the environment, which wins over the ``[run]``
section of the scenario file.

Exit status: 0 on success, 1 when a check finds a violation, 2 on
configuration or usage errors.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click
import numpy as np

from . import io
from .bellman_hjb import check_bellman, check_hjb, random_arcs
from .config import GridSpec, bundled_path, load_scenario
from .exceptions import SetValuedHJBError
from .hopflax import grid_points, value_surface
from .oracle import DirectMethodConfig, compare_with_direct
from .quadrature import DEFAULT_PANELS

ENV_PREFIX = "SVHJB"
EXIT_VIOLATION = 1
EXIT_ERROR = 2


class Run:
    """Resolved settings shared by every command."""

    def __init__(self, scenario, out, tol, grid_t, grid_x, seed, jobs, k_grid, panels):
        loaded = load_scenario(scenario)
        scn = loaded.scenario
        if k_grid is not None:
            scn = scn.with_k_grid(k_grid)
        self.scn = scn
        self.defaults = loaded.run
        self.out = Path(out)
        self.tol = tol if tol is not None else loaded.run.tol
        self.seed = seed if seed is not None else (loaded.run.seed if loaded.run.seed is not None else 0)
        self.jobs = jobs if jobs is not None else (loaded.run.jobs or 1)
        self.panels = panels if panels is not None else (loaded.run.panels or DEFAULT_PANELS)
        self._grid_t = grid_t
        self._grid_x = tuple(grid_x)
        if self.jobs < 1:
            raise click.UsageError("--jobs must be ≥ 1")

    @property
    def explicit_grid(self):
        return self._grid_t is not None or bool(self._grid_x)

    def grid(self):
        """Points ``(t, x)`` with ``t`` varying slowest."""
        scn = self.scn
        gt = self._grid_t or self.defaults.grid_t or GridSpec(0.0, 0.8 * scn.T, 5)
        gx = self._grid_x or self.defaults.grid_x or (GridSpec(-1.0, 1.0, 5),) * scn.n
        if len(gx) != scn.n:
            raise click.UsageError(f"need one --grid-x per state dimension ({scn.n}), got {len(gx)}")
        if gt.lo < 0 or gt.hi >= scn.T:
            raise click.UsageError(f"--grid-t must lie in [0, T) with T = {scn.T}, got {gt}")
        return grid_points(gt.values(), [g.values() for g in gx])


def _grid(ctx, param, value):
    if value is None:
        return None
    try:
        if isinstance(value, tuple):
            return tuple(GridSpec.parse(v) for v in value)
        return GridSpec.parse(value)
    except SetValuedHJBError as exc:
        raise click.BadParameter(str(exc)) from None


def common_options(fn):
    opts = [
        click.option(
            "--scenario",
            type=click.Path(dir_okay=False),
            default=str(bundled_path()),
            show_default="bundled standard.cfg",
            envvar=f"{ENV_PREFIX}_SCENARIO",
            help="Scenario file.",
        ),
        click.option("--out", default="out", show_default=True, envvar=f"{ENV_PREFIX}_OUT", help="Output directory."),
        click.option("--tol", type=float, envvar=f"{ENV_PREFIX}_TOL", help="Pass/fail tolerance."),
        click.option("--grid-t", callback=_grid, envvar=f"{ENV_PREFIX}_GRID_T", help="Time grid LO:HI:N."),
        click.option(
            "--grid-x",
            multiple=True,
            callback=_grid,
            envvar=f"{ENV_PREFIX}_GRID_X",
            help="State grid LO:HI:N, once per dimension.",
        ),
        click.option("--seed", type=click.IntRange(0, 2**64 - 1), envvar=f"{ENV_PREFIX}_SEED", help="Seed for arc sampling."),
        click.option("--jobs", type=int, envvar=f"{ENV_PREFIX}_JOBS", help="Worker processes."),
        click.option("--k-grid", type=click.IntRange(1), envvar=f"{ENV_PREFIX}_K_GRID", help="Base directions."),
        click.option("--panels", type=click.IntRange(1), help="Quadrature panels."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)

    @functools.wraps(fn)
    def wrapper(scenario, out, tol, grid_t, grid_x, seed, jobs, k_grid, panels, **kw):
        try:
            run = Run(scenario, out, tol, grid_t, grid_x, seed, jobs, k_grid, panels)
            code = fn(run, **kw)
        except SetValuedHJBError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_ERROR)
        sys.exit(code or 0)

    return wrapper


def _status(ok):
    return "PASS" if ok else "FAIL"


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Set-valued value functions via the Hopf-Lax formula, with Bellman and HJB checks."""


@main.command("value-surface")
@common_options
def value_surface_cmd(run):
    """Write U(t, x) thresholds over the grid as CSV and JSON."""
    pt, px = run.grid()
    surface = value_surface(run.scn, pt, px, jobs=run.jobs, panels=run.panels)
    csv_path = io.write_surface_csv(run.out / "value_surface.csv", surface)
    io.write_surface_json(run.out / "value_surface.json", surface)
    click.echo(f"wrote {len(pt) * run.scn.cone.K} rows to {csv_path}")
    return 0


def _default_hjb_tol(scn):
    closed_form = scn.lagrangian.family == "QUADRATIC" and scn.terminal.family == "LINEAR"
    return 1e-6 if closed_form else 1e-4


@main.command("hjb-check")
@click.option("--fd-tol", type=float, default=1e-4, show_default=True, help="Finite-difference tolerance.")
@click.option("--fd-h", type=float, default=1e-5, show_default=True, help="Finite-difference step.")
@common_options
def hjb_check_cmd(run, fd_tol, fd_h):
    """Residual of the HJB equation in every base direction."""
    tol = run.tol if run.tol is not None else _default_hjb_tol(run.scn)
    pt, px = run.grid()
    rep = check_hjb(run.scn, pt, px, tol=tol, fd_h=fd_h, fd_tol=fd_tol, panels=run.panels)
    io.write_hjb_json(run.out / "hjb_report.json", rep)
    io.write_hjb_csv(run.out / "hjb_residuals.csv", rep)
    click.echo(f"max |residual| {rep.max_residual:.3e} (tol {tol:g}) {_status(rep.max_residual <= tol)}")
    click.echo(f"corollary max  {rep.corollary_max:.3e} (tol {tol:g}) {_status(rep.corollary_max <= tol)}")
    click.echo(f"max fd error   {rep.max_fd_error:.3e} (tol {fd_tol:g}) {_status(rep.max_fd_error <= fd_tol)}")
    if not rep.passed:
        t, x, k = rep.worst
        click.echo(f"worst residual at t={t!r}, x={x}, k={k}")
        return EXIT_VIOLATION
    return 0


def _parse_taus(ctx, param, value):
    try:
        return tuple(float(v) for v in value.split(","))
    except ValueError:
        raise click.BadParameter(f"expected comma-separated times, got {value!r}") from None


@main.command("bellman-check")
@click.option("--arcs", type=click.IntRange(1), default=100, show_default=True, help="Random arcs per point.")
@click.option("--taus", default="0.25,0.5,0.75", show_default=True, callback=_parse_taus, help="Intermediate times.")
@click.option("--tol-infimizer", type=float, default=1e-4, show_default=True)
@common_options
def bellman_check_cmd(run, arcs, taus, tol_infimizer):
    """Bellman inclusion for seeded random arcs and the infimizer identity.

    Runs at (t, x) = (0, 0) unless a grid is given on the command line.
    """
    tol = run.tol if run.tol is not None else 1e-6
    if run.explicit_grid:
        pt, px = run.grid()
    else:
        pt, px = np.zeros(1), np.zeros((1, run.scn.n))
    reports = []
    for i, (t, x) in enumerate(zip(pt, px)):
        ts = [tau for tau in taus if t <= tau <= run.scn.T]
        if not ts:
            raise click.UsageError(f"no --taus inside [{t}, {run.scn.T}]")
        sample = random_arcs(run.scn, t, x, arcs, seed=(run.seed, i))
        reports.append(check_bellman(run.scn, t, x, sample, ts, tol=tol, tol_infimizer=tol_infimizer, panels=run.panels))
    io.write_bellman_json(run.out / "bellman_report.json", reports, zip(pt, px))
    io.write_bellman_csv(run.out / "bellman_slack.csv", reports)
    min_slack = min(r.min_slack for r in reports)
    gap = max(r.infimizer_gap for r in reports)
    click.echo(f"min slack      {min_slack:.3e} (≥ -{tol:g}) {_status(min_slack >= -tol)}")
    click.echo(f"infimizer gap  {gap:.3e} (tol {tol_infimizer:g}) {_status(gap <= tol_infimizer)}")
    return 0 if all(r.passed for r in reports) else EXIT_VIOLATION


@main.command("oracle-compare")
@click.option("--nodes", type=click.IntRange(2), default=65, show_default=True, help="Direct-method node count M.")
@click.option("--bound", type=float, default=10.0, show_default=True, help="Velocity box bound.")
@common_options
def oracle_compare_cmd(run, nodes, bound):
    """Hopf-Lax thresholds against the direct method over piecewise-linear arcs."""
    tol = run.tol if run.tol is not None else 1e-3
    pt, px = run.grid()
    cfg = DirectMethodConfig(node_count=nodes, velocity_bound=bound)
    rows = compare_with_direct(run.scn, pt, px, cfg=cfg, jobs=run.jobs)
    path = io.write_oracle_csv(run.out / "oracle.csv", rows)
    worst = max(abs(r.gap) / (1.0 + abs(r.v_hopflax)) for r in rows)
    floor = min(r.gap for r in rows)
    ok_gap, ok_floor = worst <= tol, floor >= -1e-6
    click.echo(f"wrote {len(rows)} rows to {path}")
    click.echo(f"max |gap|/(1+|v|) {worst:.3e} (tol {tol:g}) {_status(ok_gap)}")
    click.echo(f"min gap           {floor:.3e} (≥ -1e-06) {_status(ok_floor)}")
    return 0 if ok_gap and ok_floor else EXIT_VIOLATION


@main.command("hypotheses-check")
@common_options
def hypotheses_check_cmd(run):
    """Probe the standing hypotheses h1-h5."""
    results = run.scn.check_hypotheses()
    io.write_hypotheses_json(run.out / "hypotheses.json", results)
    for r in results:
        click.echo(f"{r.name} {_status(r.passed)} {r.message}")
    return 0 if all(r.passed for r in results) else EXIT_VIOLATION


if __name__ == "__main__":  # pragma: no cover
    main()
