"""Command-line interface: run experiments, the behavior catalog, sweeps."""

import json
import os
import sys

import click
import numpy as np

from . import catalog as catalog_mod
from . import config as config_mod
from . import device, runner
from .errors import MottNeuronError


@click.group()
def main():
    """Mott-memristor neuron circuit simulator."""


def _apply_overrides(cfg, seed, tol, out):
    from dataclasses import replace
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if tol is not None:
        cfg = replace(cfg, solver=cfg.solver.scaled(tol))
    if out is not None:
        cfg = replace(cfg, out_dir=out)
    return cfg


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--tol", type=float, default=None,
              help="Override solver tolerance (rel_tol; abs scaled along).")
@click.option("--out", "-o", type=click.Path(), default=None,
              help="Output directory (default from config / MOTTNEURON_OUTDIR).")
@click.option("--predicate", default=None,
              help="Attach a catalog predicate; exit status reflects it.")
def run(config_path, seed, tol, out, predicate):
    """Run a single experiment config; writes trace CSV + report JSON."""
    try:
        cfg = config_mod.load_config(config_path)
        cfg = _apply_overrides(cfg, seed, tol, out)
        report, _ = runner.run_experiment(cfg, predicate=predicate)
    except MottNeuronError as exc:
        raise click.ClickException(str(exc))
    n = len(report["analysis"]["spike_times"])
    click.echo(f"run complete: {n} spikes, "
               f"{report['solver_stats']['n_steps']} steps, "
               f"outputs in {cfg.out_dir}/")
    if predicate is not None:
        click.echo(f"predicate {predicate}: "
                   f"{'PASS' if report['passed'] else 'FAIL'}")
        if not report["passed"]:
            sys.exit(1)


@main.command("validate-config")
@click.argument("config_path", type=click.Path())
def validate_config(config_path):
    """Check a config file; print the parsed summary or a precise error."""
    try:
        cfg = config_mod.load_config(config_path)
    except MottNeuronError as exc:
        raise click.ClickException(str(exc))
    circ = cfg.circuit
    click.echo(f"ok: {circ.topology} circuit, rl2={circ.rl2:g}, "
               f"c1={circ.c1:g}, c2={circ.c2:g}, e=({circ.e1:g},{circ.e2:g}); "
               f"{len(cfg.program.segments)} stimulus segment(s), "
               f"mode={cfg.program.mode}, t_end={cfg.t_end:g}s, "
               f"seed={cfg.seed}")


@main.group()
def catalog():
    """The built-in 23-behavior catalog."""


@catalog.command("list")
def catalog_list():
    """List catalog behaviors grouped by neuron type."""
    entries = catalog_mod.load_catalog()
    groups = {}
    for e in entries:
        groups.setdefault(e.group, []).append(e)
    for group in ("tonic", "phasic", "shared", "mixed"):
        members = groups.get(group, [])
        click.echo(f"{group} ({len(members)}):")
        for e in members:
            click.echo(f"  {e.name:32s} fig {e.figure}")
    click.echo(f"total: {len(entries)} behaviors")


def _write_entry_report(report, out):
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"{report['behavior']}.report.json")
    runner.write_report(report, path)


@catalog.command("run")
@click.argument("name")
@click.option("--seed", type=int, default=0)
@click.option("--tol", type=float, default=None)
@click.option("--out", "-o", type=click.Path(),
              default=lambda: config_mod.default_out_dir())
def catalog_run(name, seed, tol, out):
    """Run one behavior; nonzero exit if its predicate fails."""
    try:
        entry = catalog_mod.entry_by_name(name)
    except MottNeuronError as exc:
        raise click.ClickException(str(exc))
    report, _ = catalog_mod.run_entry(entry, seed=seed, tol=tol)
    _write_entry_report(report, out)
    status = "PASS" if report["passed"] else "FAIL"
    click.echo(f"{report['behavior']:32s} {status}  "
               f"{json.dumps(runner._sanitize(report['metrics']))[:160]}")
    if not report["passed"]:
        sys.exit(1)


@catalog.command("run-all")
@click.option("--seed", type=int, default=0)
@click.option("--tol", type=float, default=None)
@click.option("--jobs", type=int, default=1)
@click.option("--out", "-o", type=click.Path(),
              default=lambda: config_mod.default_out_dir())
def catalog_run_all(seed, tol, jobs, out):
    """Run every behavior; prints the summary table."""
    reports = catalog_mod.run_all(seed=seed, tol=tol, jobs=jobs)
    n_pass = 0
    os.makedirs(out, exist_ok=True)
    for report in reports:
        _write_entry_report(report, out)
        status = "PASS" if report["passed"] else "FAIL"
        n_pass += report["passed"]
        click.echo(f"{report['behavior']:32s} {report['group']:7s} "
                   f"fig {report['figure']:4s} {status}")
    click.echo(f"{n_pass}/{len(reports)} behaviors pass")
    with open(os.path.join(out, "catalog_summary.csv"), "w") as fh:
        fh.write("behavior,group,figure,passed,runtime_s\n")
        for r in reports:
            fh.write(f"{r['behavior']},{r['group']},{r['figure']},"
                     f"{int(r['passed'])},{r['runtime_s']}\n")
    if n_pass != len(reports):
        sys.exit(1)


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--axis", "axes", multiple=True, required=True,
              help='Axis spec, e.g. "circuit.c1=1n:30n:8:log" (max 2).')
@click.option("--jobs", type=int, default=1)
@click.option("--out", "-o", type=click.Path(), default=None)
@click.option("--traces/--no-traces", default=False,
              help="Also write per-cell trace CSVs.")
def sweep(config_path, axes, jobs, out, traces):
    """Grid sweep of a config over 1-2 axes; resumable per cell."""
    try:
        cfg = config_mod.load_config(config_path)
        cfg = _apply_overrides(cfg, None, None, out)
        rows = runner.run_sweep(cfg, list(axes), jobs=jobs,
                                write_traces=traces)
    except MottNeuronError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"{len(rows)} cells; aggregate in "
               f"{os.path.join(cfg.out_dir, 'sweep_aggregate.csv')}")


@main.command("ee-curve")
@click.option("--density", default="1f",
              help="Capacitance density per um^2, e.g. 1f, 10f, 43f (F/um2).")
@click.option("--area-min-um2", type=float, default=0.5)
@click.option("--area-max-um2", type=float, default=100.0)
@click.option("--points", type=int, default=10)
@click.option("--jobs", type=int, default=1)
@click.option("--out", "-o", type=click.Path(),
              default=lambda: config_mod.default_out_dir())
def ee_curve(density, area_min_um2, area_max_um2, points, jobs, out):
    """Energy-efficiency vs neuron area table (CSV)."""
    dens = config_mod.parse_si(density, "density") / 1e-12  # F/um2 -> F/m2
    areas = np.geomspace(area_min_um2, area_max_um2, points) * 1e-12
    areas, ee = runner.ee_area_curve(dens, areas, jobs=jobs)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "ee_area_curve.csv")
    with open(path, "w") as fh:
        fh.write("area_um2,ee_spikes_per_joule\n")
        for a, e in zip(areas, ee):
            fh.write(f"{a / 1e-12:.6g},{e:.6g}\n")
    click.echo(f"wrote {path}")


@main.command()
@click.option("--material", default="vo2-table2")
@click.option("--r-ch", default="56n")
@click.option("--l-ch", default="100n")
@click.option("--r-e", default="0")
@click.option("--r-shunt", default=None)
@click.option("--mode", type=click.Choice(["force-current", "force-voltage"]),
              default="force-current")
@click.option("--out", "-o", type=click.Path(),
              default=lambda: config_mod.default_out_dir())
def iv(material, r_ch, l_ch, r_e, r_shunt, mode, out):
    """Quasi-static device I-V sweep (CSV: v,i,u columns)."""
    try:
        mat = device.material_preset(material)
        geo = device.DeviceGeometry(
            r_ch=config_mod.parse_si(r_ch, "r-ch"),
            l_ch=config_mod.parse_si(l_ch, "l-ch"),
            r_e=config_mod.parse_si(r_e, "r-e"),
            r_shunt=None if r_shunt in (None, "", "inf")
            else config_mod.parse_si(r_shunt, "r-shunt"))
        curve = device.quasi_static_iv(mat, geo, mode)
    except MottNeuronError as exc:
        raise click.ClickException(str(exc))
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"iv_{mode.replace('force-', '')}.csv")
    data = np.column_stack([curve.voltage, curve.current, curve.u])
    np.savetxt(path, data, delimiter=",", header="v,i,u", comments="")
    click.echo(f"wrote {path} ({len(curve.voltage)} points, "
               f"n_up={curve.n_up})")


if __name__ == "__main__":
    main()
