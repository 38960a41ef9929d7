"""Command-line entry point ``ehail``.

Every subcommand reads a key-value config file (``--config``, section
``[ehail]``) and lets flags override it.  Structured outputs are JSON,
tabular ones CSV.  Failures print one JSON error record on stderr and exit
with a code that tells the failure kinds apart.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import estimation, irl, mdp, montecarlo, multiagent, synthetic, trajectory
from .hexgrid import HexGrid, write_heatmap

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SCHEMA = 3
EXIT_MISSING = 4
EXIT_CALIBRATION = 5

SCHEMAS = """\
file formats:
  traces.csv       driver_id,timestamp,lon,lat,status,fare
                   (timestamp in seconds; status idle|matched_en_route|
                    waiting_at_pickup|on_trip; fare only on trip-final rows)
  orders.csv       driver_id,match_cell,pickup_cell,dropoff_cell,match_time,
                   pickup_time,dropoff_time,fare,matched_while_on_trip
                   [,pickup_distance,trip_distance]  (times in minutes, meters)
  seek_events.csv  driver_id,cell,time,mode,matched   (mode cruise|wait)
  legs.csv         driver_id,from_cell,to_cell,minutes,meters
  decisions.csv    driver_id,cell,t,action             (action name, e.g. STAY)
  tables.json      sparse nested maps of every probability/time/distance/fare
                   table, the grid, t_seek, d_seek, alpha and observed masks
  policy.csv       cell_id,t,action
  values.csv       cell_id,t,indicator,value   (or .npy array [cell,t,indicator])
  heatmap.csv      cell_id,axial_q,axial_r,value
  compare.csv      policy,rate_of_return,utilization_rate,n_orders,idle_time,
                   profit_per_unit_time_per_order,service_time_per_order
  histograms.csv   quantity,bin_lo,bin_hi,count

config file (INI, section [ehail]); flags override these keys:
  cells, cols, rows, cell_diagonal, horizon, t_seek, d_seek, alpha, seed,
  drivers, episodes, overrun, max_n, min_visits, alpha2_grid (start:stop:step),
  alpha3_grid, whitelist (comma-separated cells), interval_minutes

exit codes: 0 ok, 1 other error, 2 usage, 3 schema/validation error,
  4 missing input, 5 insufficient calibration data
"""

DEFAULTS = {
    "cell_diagonal": "700", "horizon": "180", "seed": "0", "drivers": "200",
    "episodes": "10000", "overrun": "reject", "max_n": "4", "min_visits": "5",
    "interval_minutes": "10",
}


class MissingInputError(Exception):
    pass


# ---------------------------------------------------------------- config

def load_config(path) -> dict:
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    if not Path(path).exists():
        raise MissingInputError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    if cp.has_section("ehail"):
        cfg.update(cp["ehail"])
    return cfg


def _merge(args) -> dict:
    cfg = load_config(args.config)
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command", "func"):
            cfg[k] = v
    return cfg


def _int(cfg, key):
    return int(cfg[key])


def _grid_arg(text: str) -> np.ndarray:
    a, b, s = (float(x) for x in text.split(":"))
    return np.round(np.arange(round((b - a) / s) + 1) * s + a, 10)


def _need(path, what):
    if path is None:
        raise MissingInputError(f"--{what} is required")
    if not Path(path).exists():
        raise MissingInputError(f"{what} file not found: {path}")
    return path


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _grid_for(cfg) -> HexGrid:
    if cfg.get("cols") and cfg.get("rows"):
        c, r = int(cfg["cols"]), int(cfg["rows"])
        n = int(cfg["cells"]) if cfg.get("cells") else None
    else:
        n = int(cfg.get("cells") or 400)
        c = math.ceil(math.sqrt(n))
        r = math.ceil(n / c)
    return HexGrid.from_shape(c, r, cell_diagonal=float(cfg["cell_diagonal"]), n_cells=n)


def _load_grid(path) -> HexGrid:
    with open(_need(path, "grid")) as fh:
        d = json.load(fh)
    return HexGrid.from_dict(d.get("grid", d))


def _tables(cfg) -> estimation.ParamTables:
    return estimation.load_tables(_need(cfg.get("tables"), "tables"))


# ---------------------------------------------------------------- commands

def cmd_gen(cfg) -> dict:
    out = Path(cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    seed = _int(cfg, "seed")
    world = cfg.get("world") or "random"
    if world == "random":
        extra = {k: float(cfg[k]) for k in ("t_seek", "d_seek", "alpha") if cfg.get(k)}
        tables = synthetic.random_world(_grid_for(cfg), seed=seed, **extra)
    else:
        tables = synthetic.shipped_world(world)
    horizon = _int(cfg, "horizon")
    behavior = cfg.get("behavior") or "uniform"
    if behavior == "optimal":
        _, behavior = mdp.solve(tables, horizon, overrun=cfg["overrun"])
    spec = synthetic.SyntheticWorldSpec(tables, n_drivers=_int(cfg, "drivers"), horizon=horizon,
                                        seed=seed, behavior=behavior, overrun=cfg["overrun"],
                                        traces=bool(cfg.get("traces")))
    log = synthetic.generate_synthetic(spec)
    estimation.save_tables(out / "world.json", tables)
    trajectory.write_orders(out / "orders.csv", log.orders)
    trajectory.write_seek_events(out / "seek_events.csv", log.seek_events)
    trajectory.write_legs(out / "legs.csv", log.legs)
    trajectory.write_decisions(out / "decisions.csv", log.decisions)
    if spec.traces:
        trajectory.write_traces(out / "traces.csv", log.traces)
    return {"cells": tables.n_cells, "orders": len(log.orders), "seek_events": len(log.seek_events),
            "out": str(out)}


def cmd_estimate(cfg) -> dict:
    grid = _load_grid(cfg.get("grid"))
    whitelist = {int(c) for c in str(cfg.get("whitelist") or "").split(",") if c.strip()}
    if cfg.get("traces"):
        traces = trajectory.parse_traces(_need(cfg["traces"], "traces"))
        orders = trajectory.orders_from_traces(traces, grid)
        seeks = trajectory.seek_events_from_traces(traces, grid, whitelist)
    else:
        orders = trajectory.parse_orders(_need(cfg.get("orders"), "orders"))
        seeks = trajectory.parse_seek_events(_need(cfg.get("seek_events"), "seek-events"))
    legs = trajectory.parse_legs(_need(cfg["legs"], "legs")) if cfg.get("legs") else ()
    conf = {k: float(cfg[k]) for k in ("t_seek", "d_seek", "alpha") if cfg.get(k)}
    tables = estimation.estimate_tables(orders, seeks, grid, legs, conf)
    estimation.save_tables(_need_out(cfg), tables)
    return {"orders": len(orders), "seek_events": len(seeks), "out": cfg["out"]}


def _need_out(cfg):
    if not cfg.get("out"):
        raise MissingInputError("--out is required")
    return cfg["out"]


def cmd_solve(cfg) -> dict:
    tables = _tables(cfg)
    vt, pol = mdp.solve(tables, _int(cfg, "horizon"), overrun=cfg["overrun"])
    mdp.write_policy_csv(_need_out(cfg), pol)
    if cfg.get("values"):
        mdp.write_values(cfg["values"], vt)
    return {"states": tables.n_cells * (vt.horizon + 1) * 2, "start_value": mdp.start_value(vt),
            "out": cfg["out"]}


def _features(cfg, tables) -> list:
    feats = []
    for name in str(cfg.get("features") or "fare,dist").split(","):
        name = name.strip()
        if name == "fare":
            feats.append(irl.PHI1_FARE)
        elif name == "dist":
            feats.append(irl.PHI2_DISTANCE)
        elif name == "centroid":
            c = int(cfg.get("centroid") or 0)
            feats.append(irl.centroid_feature(tables.grid.centroids[c]))
        else:
            raise ValueError(f"unknown feature {name!r}")
    return feats


def cmd_irl(cfg) -> dict:
    tables = _tables(cfg)
    decisions = trajectory.parse_decisions(_need(cfg.get("decisions"), "decisions"))
    observed = irl.observed_policy(decisions, _int(cfg, "min_visits"))
    feats = _features(cfg, tables)
    grids = []
    for f in feats[1:]:
        key = "alpha3_grid" if f.kind is irl.FeatureKind.CENTROID else "alpha2_grid"
        grids.append(_grid_arg(cfg[key]) if cfg.get(key) else irl._default_grid(f))
    horizon = _int(cfg, "horizon")
    res = irl.irl_fit(observed, feats, tables, grids, horizon=horizon)
    out = {"alpha": list(res.alpha), "features": [f.kind.value for f in feats],
           "disagreements": res.disagreements, "n_observed": res.n_observed,
           "coverage": res.coverage}
    if cfg.get("lp"):
        out["milp"] = irl.export_milp(observed, feats, tables, cfg["lp"], horizon=horizon)
    _write_json(_need_out(cfg), out)
    return out


def cmd_calibrate(cfg) -> dict:
    orders = trajectory.parse_orders(_need(cfg.get("orders"), "orders"))
    n_cells = int(cfg["cells"]) if cfg.get("cells") else None
    step = float(cfg["interval_minutes"])
    # consecutive slots of interval_minutes; logs spanning several days simply continue the clock
    key = lambda o: int(o.match_time // step)  # noqa: E731
    cal = multiagent.calibrate(orders, _int(cfg, "max_n"), n_cells=n_cells, intervals=key)
    out = {"beta": cal.model.beta, "slope": cal.slope, "intercept": cal.intercept,
           "r_squared": cal.r_squared, "n_samples": cal.n_samples,
           "order_count": cal.model.order_count.tolist()}
    _write_json(_need_out(cfg), out)
    return {k: out[k] for k in ("beta", "slope", "r_squared", "n_samples")}


def cmd_multi_solve(cfg) -> dict:
    tables = _tables(cfg)
    if cfg.get("calibration"):
        with open(_need(cfg["calibration"], "calibration")) as fh:
            d = json.load(fh)
        model = multiagent.AdjustmentModel(float(d["beta"]), np.asarray(d["order_count"]))
    else:
        model = multiagent.AdjustmentModel(float(cfg.get("beta") or 1 / 0.0842), tables.order_count)
    cell = int(cfg.get("cell") or 0)
    pols = multiagent.sequential_policies(tables, model, int(cfg.get("agents") or 3), cell,
                                          _int(cfg, "horizon"), overrun=cfg["overrun"])
    moves = [mdp.Action(a).name for a in multiagent.first_moves(pols, cell)]
    out_dir = Path(_need_out(cfg))
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(pols, 1):
        mdp.write_policy_csv(out_dir / f"policy_agent{i}.csv", p)
    res = {"cell": cell, "beta": model.beta, "first_moves": moves}
    _write_json(out_dir / "first_moves.json", res)
    return res


def _policy_or_baseline(cfg, tables):
    if cfg.get("baseline"):
        return montecarlo.BaselinePolicy(cfg["baseline"])
    return mdp.read_policy_csv(_need(cfg.get("policy"), "policy"), tables.n_cells,
                               _int(cfg, "horizon"))


def cmd_simulate(cfg) -> dict:
    tables = _tables(cfg)
    pol = _policy_or_baseline(cfg, tables)
    m = montecarlo.evaluate(pol, tables, _int(cfg, "episodes"), _int(cfg, "seed"),
                            _int(cfg, "horizon"), overrun=cfg["overrun"])
    out = m.summary()
    out["service_time_by_subinterval"] = [None if np.isnan(x) else float(x)
                                          for x in m.service_by_subinterval]
    _write_json(_need_out(cfg), out)
    if cfg.get("histograms"):
        montecarlo.write_histograms(cfg["histograms"], m)
    return {"rate_of_return": m.rate_of_return, "episodes": m.episodes}


METRIC_COLUMNS = ("rate_of_return", "utilization_rate", "n_orders", "idle_time",
                  "profit_per_unit_time_per_order", "service_time_per_order")


def cmd_compare(cfg) -> dict:
    tables = _tables(cfg)
    horizon = _int(cfg, "horizon")
    _, opt = mdp.solve(tables, horizon, overrun=cfg["overrun"])
    rows = [("optimal", opt)] + [(b.value, b) for b in montecarlo.BaselinePolicy]
    out = {}
    with open(_need_out(cfg), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", *METRIC_COLUMNS])
        for name, p in rows:
            m = montecarlo.evaluate(p, tables, _int(cfg, "episodes"), _int(cfg, "seed"), horizon,
                                    overrun=cfg["overrun"])
            w.writerow([name, *(repr(float(getattr(m, k))) for k in METRIC_COLUMNS)])
            out[name] = m.rate_of_return
    return {"rate_of_return": out}


HEATMAP_FIELDS = ("order_count", "p_order_match_cruise", "p_order_match_wait", "value")


def cmd_export_heatmap(cfg) -> dict:
    tables = _tables(cfg)
    field = cfg.get("field") or "order_count"
    if field == "value":
        vt = mdp.read_values(_need(cfg.get("values"), "values"))
        vals = vt.v[:, int(cfg.get("t") or 0), 0]
    elif field in HEATMAP_FIELDS:
        vals = getattr(tables, field)
    else:
        raise ValueError(f"unknown field {field!r}")
    write_heatmap(_need_out(cfg), tables.grid, vals)
    return {"field": field, "cells": tables.n_cells}


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehail", description="E-hailing repositioning pipeline.",
                                epilog=SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="INI config file with an [ehail] section")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, epilog=SCHEMAS,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", default=argparse.SUPPRESS)
        sp.set_defaults(func=func)
        return sp

    def common(sp, *names):
        opts = {
            "tables": dict(help="tables.json"),
            "horizon": dict(type=int, help="time steps (minutes)"),
            "seed": dict(type=int),
            "episodes": dict(type=int),
            "overrun": dict(choices=("clamp", "reject"), help="orders ending after the horizon"),
            "out": dict(help="output path"),
        }
        for n in names:
            sp.add_argument(f"--{n}", **opts[n])

    sp = add("gen", cmd_gen, "generate a synthetic world and its logs")
    sp.add_argument("--cells", type=int)
    sp.add_argument("--cols", type=int)
    sp.add_argument("--rows", type=int)
    sp.add_argument("--drivers", type=int)
    sp.add_argument("--world", choices=("random",) + synthetic.SHIPPED_WORLDS)
    sp.add_argument("--behavior", choices=("uniform", "greedy", "optimal"))
    sp.add_argument("--traces", action="store_true", default=None, help="also write raw pings")
    common(sp, "horizon", "seed", "overrun", "out")

    sp = add("estimate", cmd_estimate, "estimate tables.json from logs")
    sp.add_argument("--grid", help="JSON holding the grid (e.g. world.json)")
    sp.add_argument("--traces")
    sp.add_argument("--orders")
    sp.add_argument("--seek-events", dest="seek_events")
    sp.add_argument("--legs")
    sp.add_argument("--whitelist", help="comma-separated cells where waiting is recognised")
    sp.add_argument("--alpha", type=float, help="fuel cost per km")
    common(sp, "out")

    sp = add("solve", cmd_solve, "solve the MDP by backward induction")
    sp.add_argument("--values", help="optional value table output (.csv or .npy)")
    common(sp, "tables", "horizon", "overrun", "out")

    sp = add("irl", cmd_irl, "fit reward coefficients to observed decisions")
    sp.add_argument("--decisions", help="decisions.csv")
    sp.add_argument("--features", help="comma list from fare,dist,centroid")
    sp.add_argument("--centroid", type=int, help="cell of the centroid feature")
    sp.add_argument("--min-visits", dest="min_visits", type=int)
    sp.add_argument("--alpha2-grid", dest="alpha2_grid", help="start:stop:step")
    sp.add_argument("--alpha3-grid", dest="alpha3_grid", help="start:stop:step")
    sp.add_argument("--lp", help="also export the MILP in LP format")
    common(sp, "tables", "horizon", "out")

    sp = add("calibrate", cmd_calibrate, "calibrate the competition parameter beta")
    sp.add_argument("--orders")
    sp.add_argument("--cells", type=int)
    sp.add_argument("--max-n", dest="max_n", type=int)
    sp.add_argument("--interval-minutes", dest="interval_minutes", type=float)
    common(sp, "out")

    sp = add("multi-solve", cmd_multi_solve, "sequential policies for competing agents")
    sp.add_argument("--agents", type=int)
    sp.add_argument("--cell", type=int)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--calibration", help="beta.json from calibrate")
    common(sp, "tables", "horizon", "overrun", "out")

    sp = add("simulate", cmd_simulate, "Monte Carlo evaluation of a policy or baseline")
    sp.add_argument("--policy")
    sp.add_argument("--baseline", choices=[b.value for b in montecarlo.BaselinePolicy])
    sp.add_argument("--histograms", help="CSV histogram export")
    common(sp, "tables", "horizon", "seed", "episodes", "overrun", "out")

    sp = add("compare", cmd_compare, "optimal policy vs baselines, one CSV row each")
    common(sp, "tables", "horizon", "seed", "episodes", "overrun", "out")

    sp = add("export-heatmap", cmd_export_heatmap, "per-cell CSV heatmap")
    sp.add_argument("--field", choices=HEATMAP_FIELDS)
    sp.add_argument("--values", help="value table for --field value")
    sp.add_argument("--t", type=int, help="time step for --field value")
    common(sp, "tables", "out")
    return p


def _fail(code: int, kind: str, err: BaseException) -> int:
    rec = {"error": kind, "message": str(err), "exit_code": code}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _merge(args)
        res = args.func(cfg)
    except MissingInputError as e:
        return _fail(EXIT_MISSING, "missing_input", e)
    except FileNotFoundError as e:
        return _fail(EXIT_MISSING, "missing_input", e)
    except multiagent.InsufficientDataError as e:
        return _fail(EXIT_CALIBRATION, "insufficient_data", e)
    except (trajectory.SchemaError, trajectory.ValidationError, estimation.TableError,
            mdp.ContractError, KeyError, json.JSONDecodeError) as e:
        return _fail(EXIT_SCHEMA, "schema", e)
    except Exception as e:  # noqa: BLE001
        return _fail(EXIT_ERROR, type(e).__name__, e)
    print(json.dumps(res, sort_keys=True, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
