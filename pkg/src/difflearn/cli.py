"""Command-line front end: simulate, theory, sweep, and bundled experiments.

Every command is deterministic given the config and seed; the only file that
depends on the wall clock or host is run_meta.json. Exit codes: 0 success,
2 configuration problem, 3 numerical failure (divergence or instability).
"""

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, config as cfg
from .engine import convergence_time, measure_msd, run
from .streams import point_seed
from .topology import build_metropolis
from .theory import MsdInputs, StabilityError, approx_activation, approx_local_updates, msd_value


def to_decibels(value):
    """Power ratio in dB; 0.01 maps to -20."""
    if not value > 0:
        raise ValueError("decibel scale is defined for positive values, got %r" % (value,))
    return 10.0 * math.log10(value)


def _maybe_db(value):
    return None if value is None else to_decibels(value)


def _write_json(path, payload):
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _load_config(args):
    config = cfg.load_file(args.config)
    return _apply_overrides(config, args)


def _apply_overrides(config, args):
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "theory_mode", None) is not None:
        config.theory.mode = args.theory_mode
    if getattr(args, "samples", None) is not None:
        config.theory.samples = args.samples
    if getattr(args, "blocks", None) is not None:
        config.simulation.blocks = args.blocks
    if getattr(args, "repetitions", None) is not None:
        config.simulation.repetitions = args.repetitions
    return config.validate()


def _build_all(config):
    topology = cfg.build_topology(config)
    problem = cfg.build_problem(config, topology.agent_count)
    activation = cfg.build_activation(config, topology.agent_count)
    return problem, build_metropolis(topology), activation


def _theory_msd(config, problem, combination, activation):
    """Steady-state prediction for the configured run, or (None, note)."""
    inputs = MsdInputs.from_problem(problem, combination, activation,
                                    config.simulation.mu,
                                    local_steps=config.simulation.local_steps,
                                    mode=config.simulation.mode)
    try:
        report = msd_value(inputs, mode=config.theory.mode,
                           samples=config.theory.samples,
                           exact_budget=config.theory.exact_budget)
    except StabilityError as err:
        return None, None, str(err)
    return report.msd, report, None


def _simulate_once(config, out_dir, per_agent=False):
    """Run + theory comparison for one config; returns the summary dict."""
    os.makedirs(out_dir, exist_ok=True)
    problem, combination, activation = _build_all(config)
    record = run(problem, combination, activation, cfg.build_simulation(config))
    measurement = measure_msd(record, config.simulation.window_fraction)
    theory_value, _, theory_note = _theory_msd(config, problem, combination, activation)

    curve = record.average_curve()
    header = ["block", "deviation"]
    columns = [curve]
    if per_agent:
        per_agent_curve = record.deviations.mean(axis=0)
        header += ["agent%d" % k for k in range(per_agent_curve.shape[1])]
        columns += [per_agent_curve[:, k] for k in range(per_agent_curve.shape[1])]
    rows = [[i] + [float(col[i]) for col in columns] for i in range(curve.size)]
    _write_csv(os.path.join(out_dir, "trajectory.csv"), header, rows)

    block = convergence_time(record, steady=measurement.value)
    gap = (None if theory_value is None
           else abs(theory_value - measurement.value)
           / max(measurement.value, np.finfo(float).tiny))
    summary = {
        "agents": activation.agent_count,
        "dimension": problem.dimension,
        "seed": config.seed,
        "mu": config.simulation.mu,
        "blocks": config.simulation.blocks,
        "local_steps": config.simulation.local_steps,
        "repetitions": config.simulation.repetitions,
        "mode": config.simulation.mode,
        "empirical_msd": measurement.value,
        "empirical_msd_db": to_decibels(measurement.value),
        "stationary": measurement.stationary,
        "window_start": measurement.window_start,
        "convergence_block": block,
        "theory_msd": theory_value,
        "theory_msd_db": _maybe_db(theory_value),
        "theory_note": theory_note,
        "relative_gap": gap,
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def _write_meta(out_dir, started):
    _write_json(os.path.join(out_dir, "run_meta.json"), {
        "wall_time_seconds": time.perf_counter() - started,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "package": __version__,
    })


def cmd_simulate(args):
    started = time.perf_counter()
    config = _load_config(args)
    _simulate_once(config, args.out, per_agent=args.per_agent)
    _write_meta(args.out, started)
    return 0


def cmd_theory(args):
    started = time.perf_counter()
    config = _load_config(args)
    problem, combination, activation = _build_all(config)
    inputs = MsdInputs.from_problem(problem, combination, activation,
                                    config.simulation.mu,
                                    local_steps=config.simulation.local_steps,
                                    mode=config.simulation.mode)
    report = msd_value(inputs, mode=config.theory.mode,
                       samples=config.theory.samples,
                       exact_budget=config.theory.exact_budget)
    local_trend = approx_local_updates(inputs)
    activation_trend = None
    if config.simulation.local_steps == 1:
        trend = approx_activation(inputs, mode=config.theory.mode,
                                  samples=config.theory.samples,
                                  exact_budget=config.theory.exact_budget)
        activation_trend = {"value": trend.value, "remainder_scale": trend.remainder_scale}
    expectations = report.expectations
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "theory.json"), {
        "agents": inputs.agent_count,
        "dimension": inputs.dimension,
        "mu": inputs.mu,
        "local_steps": inputs.local_steps,
        "msd": report.msd,
        "msd_db": _maybe_db(report.msd) if report.msd > 0 else None,
        "spectral_radius": report.spectral_radius,
        "solve_residual": report.solve_residual,
        "expectation_mode": expectations.mode,
        "sample_count": expectations.sample_count,
        "pattern_count": expectations.pattern_count,
        "g_identity_gap": expectations.g_identity_gap,
        "g_se_max": None if expectations.g_se is None else float(expectations.g_se.max()),
        "approx_local_updates": {"value": local_trend.value,
                                 "remainder_scale": local_trend.remainder_scale},
        "approx_activation": activation_trend,
    })
    _write_meta(args.out, started)
    return 0


def _point_config(data, axis, value):
    point = cfg.from_dict(data)
    point.sweep = None
    if axis == "mu":
        point.simulation.mu = float(value)
    elif axis == "local-steps":
        steps = int(value)
        if steps != value:
            raise cfg.ConfigError("local-steps values must be integers, got %r" % (value,))
        point.simulation.local_steps = steps
    else:
        point.activation = cfg.ActivationSpec(kind="bernoulli", q=float(value))
    return point.validate()


def _run_point(payload):
    """One sweep point; module-level so worker pools can pickle it."""
    data, axis, value, index, out_dir = payload
    config = _point_config(data, axis, value)
    config.seed = point_seed(config.seed, index)
    try:
        summary = _simulate_once(config, out_dir)
    except (ValueError, RuntimeError) as err:
        return {"axis": axis, "value": value, "empirical_msd": None, "theory_msd": None,
                "convergence_block": None, "status": "failed: %s" % err}
    return {"axis": axis, "value": value,
            "empirical_msd": summary["empirical_msd"],
            "theory_msd": summary["theory_msd"],
            "convergence_block": summary["convergence_block"],
            "status": "ok"}


def cmd_sweep(args):
    started = time.perf_counter()
    config = _load_config(args)
    axis = args.axis or (config.sweep.axis if config.sweep else None)
    values = args.values or (config.sweep.values if config.sweep else None)
    if axis is None or not values:
        raise cfg.ConfigError("sweep needs an axis and a nonempty value list "
                              "(flags or a sweep section in the config)")
    if axis not in cfg.SWEEP_AXES:
        raise cfg.ConfigError("sweep axis must be one of %s" % ", ".join(cfg.SWEEP_AXES))
    os.makedirs(args.out, exist_ok=True)
    data = cfg.to_dict(config)
    payloads = [(data, axis, value, index, os.path.join(args.out, "point-%02d" % index))
                for index, value in enumerate(values)]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_run_point, payloads))
    else:
        rows = [_run_point(p) for p in payloads]
    _write_csv(os.path.join(args.out, "sweep.csv"),
               ["axis", "value", "empirical_msd", "theory_msd", "convergence_block", "status"],
               [[r["axis"], r["value"],
                 "" if r["empirical_msd"] is None else repr(r["empirical_msd"]),
                 "" if r["theory_msd"] is None else repr(r["theory_msd"]),
                 "" if r["convergence_block"] is None else r["convergence_block"],
                 r["status"]] for r in rows])
    _write_meta(args.out, started)
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        print("%d of %d sweep points failed; see sweep.csv" % (len(failed), len(rows)),
              file=sys.stderr)
        return 3
    return 0


def _experiment_config(args, *, local_steps, activation, blocks, repetitions):
    """Built-in experiment setup at desk scale (exact expectations) or at the
    larger published scale (20 agents, Monte-Carlo expectations)."""
    desk = args.scale == "desk"
    config = cfg.RunConfig()
    config.seed = 0
    config.topology = cfg.TopologySpec(kind="random-geometric",
                                       agents=8 if desk else 20, radius=0.7)
    config.activation = activation
    config.problem = cfg.ProblemSpec()
    config.simulation = cfg.SimulationSpec(mu=0.01, blocks=blocks,
                                           local_steps=local_steps,
                                           repetitions=repetitions)
    config.theory = cfg.TheorySpec(mode="auto" if desk else "mc",
                                   samples=20_000)
    return _apply_overrides(config, args)


def cmd_fig2(args):
    """Learning curve of the desk problem against the flat theory line."""
    started = time.perf_counter()
    config = _experiment_config(args, local_steps=5,
                                activation=cfg.ActivationSpec(kind="uniform-random"),
                                blocks=4000, repetitions=5)
    os.makedirs(args.out, exist_ok=True)
    summary = _simulate_once(config, args.out)
    theory_db = summary["theory_msd_db"]
    curve = []
    with open(os.path.join(args.out, "trajectory.csv")) as handle:
        for row in csv.DictReader(handle):
            deviation = float(row["deviation"])
            curve.append([int(row["block"]),
                          to_decibels(deviation) if deviation > 0 else float("-inf"),
                          theory_db])
    _write_csv(os.path.join(args.out, "curve.csv"),
               ["block", "empirical_db", "theory_db"], curve)
    _write_meta(args.out, started)
    return 0


def _ordered_runs(args, configs, labels, label_name, out):
    """Shared body of the two comparison experiments: one run per config,
    a value-vs-MSD table, aligned learning curves, and ordering flags."""
    os.makedirs(out, exist_ok=True)
    table = []
    curves = []
    for label, config in zip(labels, configs):
        sub = os.path.join(out, "%s-%s" % (label_name, label))
        summary = _simulate_once(config, sub)
        table.append([label, summary["empirical_msd"], summary["empirical_msd_db"],
                      summary["theory_msd"],
                      "" if summary["theory_msd_db"] is None else summary["theory_msd_db"],
                      "" if summary["convergence_block"] is None
                      else summary["convergence_block"]])
        with open(os.path.join(sub, "trajectory.csv")) as handle:
            curves.append([float(r["deviation"]) for r in csv.DictReader(handle)])
    _write_csv(os.path.join(out, "msd_vs_%s.csv" % label_name),
               [label_name, "empirical_msd", "empirical_db", "theory_msd", "theory_db",
                "convergence_block"], table)
    blocks = min(len(c) for c in curves)
    _write_csv(os.path.join(out, "curves.csv"),
               ["block"] + ["%s-%s" % (label_name, label) for label in labels],
               [[i] + [to_decibels(c[i]) if c[i] > 0 else float("-inf") for c in curves]
                for i in range(blocks)])
    return table


def _strictly(values, direction):
    pairs = zip(values, values[1:])
    if any(v is None for v in values):
        return False
    if direction == "decreasing":
        return all(a > b for a, b in pairs)
    return all(a < b for a, b in pairs)


def cmd_fig4(args):
    """Steady-state MSD against uniform activation probability, single local step."""
    started = time.perf_counter()
    levels = [0.1, 0.5, 0.9]
    configs = [_experiment_config(
        args, local_steps=1,
        activation=cfg.ActivationSpec(kind="bernoulli", q=q),
        blocks=30_000, repetitions=3) for q in levels]
    table = _ordered_runs(args, configs, levels, "q", args.out)
    _write_json(os.path.join(args.out, "summary.json"), {
        "q_values": levels,
        "empirical_msd": [row[1] for row in table],
        "theory_msd": [row[3] for row in table],
        "empirical_decreasing": _strictly([row[1] for row in table], "decreasing"),
        "theory_decreasing": _strictly([row[3] for row in table], "decreasing"),
        "convergence_blocks": [row[5] for row in table],
    })
    _write_meta(args.out, started)
    return 0


def cmd_fig5(args):
    """Steady-state MSD against the number of local steps, full participation."""
    started = time.perf_counter()
    levels = [2, 5, 10]
    configs = [_experiment_config(
        args, local_steps=steps,
        activation=cfg.ActivationSpec(kind="bernoulli", q=1.0),
        blocks=2500, repetitions=5) for steps in levels]
    table = _ordered_runs(args, configs, levels, "T", args.out)
    _write_json(os.path.join(args.out, "summary.json"), {
        "local_steps": levels,
        "empirical_msd": [row[1] for row in table],
        "theory_msd": [row[3] for row in table],
        "empirical_increasing": _strictly([row[1] for row in table], "increasing"),
        "theory_increasing": _strictly([row[3] for row in table], "increasing"),
        "convergence_blocks": [row[5] for row in table],
    })
    _write_meta(args.out, started)
    return 0


def _add_common(sub, config_required=True):
    if config_required:
        sub.add_argument("--config", required=True, help="path to a JSON run configuration")
    sub.add_argument("--seed", type=int, default=None, help="master seed override")
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--theory-mode", choices=["auto", "exact", "mc"], default=None,
                     help="expectation mode override")
    sub.add_argument("--samples", type=int, default=None,
                     help="Monte-Carlo pattern sample override")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="difflearn",
        description="Networked learning with local updates and partial participation: "
                    "simulation, steady-state theory, and parameter sweeps.")
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", help="run the simulator and compare with theory")
    _add_common(sim)
    sim.add_argument("--per-agent", action="store_true",
                     help="include per-agent deviation columns in trajectory.csv")
    sim.set_defaults(func=cmd_simulate)

    theory = commands.add_parser("theory", help="evaluate the steady-state prediction")
    _add_common(theory)
    theory.set_defaults(func=cmd_theory)

    sweep = commands.add_parser("sweep", help="simulate+theory along one parameter axis")
    _add_common(sweep)
    sweep.add_argument("--axis", choices=list(cfg.SWEEP_AXES), default=None)
    sweep.add_argument("--values", type=lambda s: [float(v) for v in s.split(",")],
                       default=None, help="comma-separated axis values")
    sweep.add_argument("--workers", type=int, default=1, help="parallel point workers")
    sweep.set_defaults(func=cmd_sweep)

    for name, func in (("reproduce-fig2", cmd_fig2),
                       ("reproduce-fig4", cmd_fig4),
                       ("reproduce-fig5", cmd_fig5)):
        fig = commands.add_parser(name, help="bundled experiment: %s" % func.__doc__)
        _add_common(fig, config_required=False)
        fig.add_argument("--scale", choices=["desk", "paper"], default="desk",
                         help="desk: 8 agents with exact expectations; "
                              "paper: 20 agents with Monte-Carlo expectations")
        fig.add_argument("--blocks", type=int, default=None, help="block-count override")
        fig.add_argument("--repetitions", type=int, default=None,
                         help="repetition-count override")
        fig.set_defaults(func=func)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return 0 if err.code in (None, 0) else 2
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print("error: %s" % err, file=sys.stderr)
        return 2
    except ValueError as err:
        print("error: %s" % err, file=sys.stderr)
        return 2
    except RuntimeError as err:
        print("numerical failure: %s" % err, file=sys.stderr)
        return 3


def entry():
    sys.exit(main(sys.argv[1:]))
