"""Command-line front end.

Subcommands::

    cachegain generate KIND --seed S --out DIR
    cachegain solve DIR --method greedy|relax|pipage|equal-cap
    cachegain run DIR [--config FILE] [--scenario shift] [flags]
    cachegain compare [--topologies ...] [--seeds N] [--out DIR]

Configuration is a flat ``key = value`` file ('#' starts a comment).
Precedence, lowest first: built-in defaults, the config file, command-line
flags. A ``manifest.json`` written next to every output records the fully
resolved parameters; passing it back through ``--config`` reproduces the
run bit for bit.

Exit codes: 0 success, 1 some compare cells failed, 2 invalid configuration
or infeasible instance, 3 runtime invariant breach.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cachesim import Event, InvariantBreach, SimConfig, config_dict, run, write_metrics
from .central import (
    equal_capacity_bound,
    greedy_placement,
    pipage_round,
    solve_relaxation,
)
from .model import (
    Network,
    read_demand,
    read_graph,
    read_servers,
    validate_demand,
    validate_network,
    write_demand,
    write_graph,
    write_servers,
)
from .objective import SurrogateParams, baseline_cost, caching_gain, relaxed_gain, smooth_gain
from .topo import KINDS, BENCHMARKS, benchmark_instance

log = logging.getLogger("cachegain")

EXIT_FAILED_CELLS, EXIT_CONFIG, EXIT_BREACH = 1, 2, 3
SUMMARY_COLUMNS = ("topology", "mean_ratio", "std_ratio", "ec_ratio", "n_seeds")
CELL_COLUMNS = (
    "topology", "seed", "ratio", "ec_ratio", "F_mean", "L_upper", "ec_upper",
    "int_cache_mean", "budget", "seconds", "status",
)

# key -> (SimConfig field, parser)
RUN_KEYS = {
    "period": ("period", float),
    "horizon": ("horizon", float),
    "seed": ("seed", int),
    "grad": ("grad_mode", str),
    "alpha": ("alpha", float),
    "mu0": ("mu0", float),
    "epsilon": ("epsilon", float),
    "step": ("step_mode", str),
    "step_scale": ("step_scale", float),
    "gamma": ("gamma", float),
    "rate_bound": ("rate_bound", float),
    "n_bar": ("n_bar", int),
    "consensus_iters": ("consensus_iters", int),
    "eviction": ("eviction", str),
    "probe_fraction": ("probe_fraction", float),
    "drop_prob": ("drop_prob", float),
    "bound_alpha": ("bound_alpha", float),
}
EXTRA_KEYS = ("events", "scenario", "topologies", "seeds", "window", "first_seed")
SCENARIOS = ("none", "shift")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling

def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` pairs; a ``.json`` manifest contributes its ``config`` block."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        return {k: _unparse(v) for k, v in data.get("config", {}).items() if v is not None}
    out = {}
    for n, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in RUN_KEYS and key not in EXTRA_KEYS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def _unparse(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(map(str, v))
    return str(v)


def parse_events(text: str) -> tuple[tuple[Event, ...], tuple[Event, ...]]:
    """``kind@time:value[:high]`` items separated by ';'.

    Events at time 0 are applied before the first period; the rest are
    scheduled. Returns (start events, scheduled events).
    """
    start, later = [], []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        try:
            kind, rest = item.split("@")
            parts = rest.split(":")
            t = float(parts[0])
            value = float(parts[1]) if len(parts) > 1 else 1.0
            high = float(parts[2]) if len(parts) > 2 else None
            ev = Event(t, kind.strip(), value, high)
        except ValueError as exc:
            raise ConfigError(f"bad event {item!r}: {exc}") from exc
        (start if t <= 0 else later).append(ev)
    return tuple(start), tuple(later)


def format_events(events) -> str:
    parts = []
    for e in events:
        s = f"{e.kind}@{e.time!r}:{e.value!r}"
        if e.high is not None:
            s += f":{e.high!r}"
        parts.append(s)
    return ";".join(parts)


def shift_events(n_nodes: int) -> str:
    """Rates u.a.r. in [0.1, 1] until t=8000, then 1; budget cut by |V| at t=16000."""
    return f"rates_uniform@0:0.1:1;rates_const@8000:1;budget_delta@16000:{-n_nodes}"


def resolve(settings: dict[str, str], n_nodes: int | None = None) -> tuple[SimConfig, tuple[Event, ...], dict]:
    """Turn string settings into a SimConfig plus start events and the resolved dict."""
    settings = dict(settings)
    scenario = settings.pop("scenario", "none")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    if scenario == "shift":
        if n_nodes is None:
            raise ConfigError("scenario shift needs an instance")
        settings.setdefault("events", shift_events(n_nodes))
        settings.setdefault("horizon", "24000")
    kwargs = {}
    for key, (field, conv) in RUN_KEYS.items():
        if key in settings and settings[key] not in ("", "None"):
            try:
                kwargs[field] = conv(settings[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
    start, later = parse_events(settings.get("events", ""))
    try:
        config = SimConfig(events=later, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    resolved = {key: getattr(config, field) for key, (field, _) in RUN_KEYS.items()}
    resolved["events"] = format_events(start + later)
    return config, start, resolved


# ---------------------------------------------------------------------------
# instance files

def write_instance(net: Network, demand, out: Path, meta: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _atomic(out / "graph.txt", lambda p: write_graph(net, p))
    _atomic(out / "servers.txt", lambda p: write_servers(net, p))
    _atomic(out / "demand.txt", lambda p: write_demand(demand, p))
    caps = ",".join(map(str, net.caps))
    lines = [f"n_nodes = {net.n_nodes}", f"n_items = {net.n_items}", f"budget = {net.budget}", f"caps = {caps}"]
    _atomic(out / "instance.cfg", lambda p: Path(p).write_text("\n".join(lines) + "\n"))
    write_manifest(out, {"command": "generate", **meta})


def read_instance(path) -> tuple[Network, object]:
    path = Path(path)
    try:
        meta = {}
        for raw in (path / "instance.cfg").read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if line:
                k, v = (s.strip() for s in line.split("=", 1))
                meta[k] = v
        n_read, edges = read_graph(path / "graph.txt")
        servers = read_servers(path / "servers.txt")
        n_nodes = int(meta.get("n_nodes", n_read))
        n_items = int(meta.get("n_items", len(servers)))
        servers += [set() for _ in range(n_items - len(servers))]
        caps = [int(c) for c in meta["caps"].split(",")]
        if len(caps) == 1:
            caps = caps * n_nodes
        net = Network.build(n_nodes, edges, servers, caps, int(meta["budget"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read instance {path}: {exc}") from exc
    problem = validate_network(net)
    if problem:
        raise ConfigError(f"invalid instance: {problem}")
    try:
        demand = read_demand(net, path / "demand.txt")
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read demand: {exc}") from exc
    problem = validate_demand(net, demand)
    if problem:
        raise ConfigError(f"invalid demand: {problem}")
    return net, demand


def _atomic(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    tmp.replace(path)


def write_manifest(out: Path, payload: dict) -> None:
    payload = {"version": __version__, **payload}
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    _atomic(Path(out) / "manifest.json", lambda p: Path(p).write_text(text))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_csv(path: Path, header, rows) -> None:
    import csv

    def writer(p):
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    _atomic(Path(path), writer)


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args) -> int:
    if args.kind not in KINDS:
        raise ConfigError(f"unknown topology kind {args.kind!r}; choose from {', '.join(KINDS)}")
    overrides = {k: v for k, v in (("budget", args.budget), ("n_items", args.items)) if v is not None}
    try:
        net, demand = benchmark_instance(args.kind, args.seed, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    write_instance(net, demand, out, {
        "kind": args.kind, "seed": args.seed, "overrides": overrides,
        "n_nodes": net.n_nodes, "n_edges": len(net.edges), "n_items": net.n_items,
        "n_requests": len(demand), "budget": net.budget,
    })
    print(f"{args.kind}: |V|={net.n_nodes} |E|={len(net.edges)} |C|={net.n_items} "
          f"requests={len(demand)} M={net.budget} -> {out}")
    return 0


def cmd_solve(args) -> int:
    net, demand = read_instance(args.instance)
    params = SurrogateParams(args.alpha)
    try:
        if args.method == "greedy":
            X, sol = greedy_placement(net, demand), None
        elif args.method == "equal-cap":
            sol = equal_capacity_bound(net, demand, params)
            X = None
        else:
            sol = solve_relaxation(net, demand, params)
            X = pipage_round(net, demand, sol.Y_star) if args.method == "pipage" else None
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out or args.instance)
    out.mkdir(parents=True, exist_ok=True)
    report = {"method": args.method, "alpha": args.alpha, "C0": baseline_cost(net, demand)}
    if sol is not None:
        report.update(L_tilde_star=sol.L_tilde_star, L_upper=sol.L_upper,
                      iterations=sol.iterations, converged=sol.converged, gap=sol.gap)
        _atomic(out / f"{args.method}_Y.txt", lambda p: np.savetxt(p, sol.Y_star))
    if X is not None:
        report["F"] = caching_gain(net, demand, X)
        report["L"] = relaxed_gain(net, demand, X)
        if sol is not None:
            report["ratio"] = report["L"] / sol.L_tilde_star if sol.L_tilde_star > 0 else math.nan
        _atomic(out / f"{args.method}_X.txt", lambda p: np.savetxt(p, X, fmt="%d"))
    elif sol is not None:
        report["L_tilde"] = smooth_gain(net, demand, sol.Y_star, params)
    for k, v in report.items():
        print(f"{k}: {v}")
    write_manifest(out, {"command": "solve", "instance": str(args.instance), "report": report})
    return 0


def _cli_settings(args) -> dict[str, str]:
    settings = read_config(args.config) if args.config else {}
    for key in list(RUN_KEYS) + ["events", "scenario"]:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = str(val)
    return settings


def cmd_run(args) -> int:
    net, demand = read_instance(args.instance)
    config, start, resolved = resolve(_cli_settings(args), net.n_nodes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or f"{Path(args.instance).resolve().name}_{config.seed}"
    t0 = time.time()
    result = run(net, demand, config, start)
    write_metrics(result.rows, out / f"{name}.csv")
    write_manifest(out, {
        "command": "run", "instance": str(Path(args.instance).resolve()), "config": resolved,
        "output": f"{name}.csv", "c0_bar": result.c0_bar, "mu": result.params.mu,
        "gamma": result.params.gamma, "regimes": result.regimes, "seconds": time.time() - t0,
    })
    if result.rows:
        last = result.rows[-1]
        print(f"t={last.t:g} F_heu={last.F_heu:.6g} L_tilde={last.L_tilde:.6g} L_upper={last.L_upper:.6g}")
    print(f"{len(result.rows)} rows -> {out / (name + '.csv')}")
    return 0


def compare_cell(kind: str, seed: int, config: SimConfig, window: int, out: str | None) -> dict:
    """One (topology, seed) run: steady-state ratio and the equal-capacity ratio."""
    t0 = time.time()
    net, demand = benchmark_instance(kind, seed)
    cfg = replace(config, seed=seed)
    result = run(net, demand, cfg)
    if out is not None:
        write_metrics(result.rows, Path(out) / f"{kind}_{seed}.csv")
    upper = result.regimes[0]["L_upper"]
    ec = equal_capacity_bound(net, demand, SurrogateParams(cfg.bound_alpha or cfg.alpha))
    F = result.column("F_heu")[-window:]
    sizes = result.column("int_cache_total")[-window:]
    F_mean = float(F.mean()) if len(F) else math.nan
    return {
        "topology": kind, "seed": seed, "ratio": F_mean / upper, "ec_ratio": ec.L_upper / upper,
        "F_mean": F_mean, "L_upper": upper, "ec_upper": ec.L_upper,
        "int_cache_mean": float(sizes.mean()) if len(sizes) else math.nan,
        "budget": net.budget, "seconds": time.time() - t0, "status": "ok",
    }


def _safe_cell(job):
    kind, seed = job[0], job[1]
    try:
        return compare_cell(*job)
    except Exception as exc:  # one failed cell must not sink the batch
        return {"topology": kind, "seed": seed, "status": f"error: {type(exc).__name__}: {exc}"}


def worker_count(n_jobs: int) -> int:
    env = os.environ.get("CACHEGAIN_THREADS")
    try:
        cap = int(env) if env else (os.cpu_count() or 1)
    except ValueError as exc:
        raise ConfigError(f"CACHEGAIN_THREADS must be an integer, got {env!r}") from exc
    return max(1, min(cap, n_jobs))


def summarize(cells: list[dict], kinds) -> list[tuple]:
    rows = []
    for kind in kinds:
        ok = [c for c in cells if c["topology"] == kind and c["status"] == "ok"]
        if not ok:
            rows.append((kind, math.nan, math.nan, math.nan, 0))
            continue
        r = np.array([c["ratio"] for c in ok])
        ec = np.array([c["ec_ratio"] for c in ok])
        std = float(r.std(ddof=1)) if len(r) > 1 else 0.0
        rows.append((kind, float(r.mean()), std, float(ec.mean()), len(ok)))
    return rows


def compare(kinds, seeds, config: SimConfig, window: int, out: Path | None, workers: int = 1) -> tuple[list, list]:
    """Run every (topology, seed) cell; returns (summary rows, cell dicts)."""
    jobs = [(k, s, config, window, str(out) if out else None) for k in kinds for s in seeds]
    if workers <= 1:
        cells = [_safe_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_safe_cell, jobs))
    return summarize(cells, kinds), cells


def cmd_compare(args) -> int:
    settings = _cli_settings(args)
    kinds = (args.topologies or settings.pop("topologies", ",".join(KINDS)).split(","))
    kinds = [k.strip() for k in kinds if k.strip()]
    unknown = [k for k in kinds if k not in BENCHMARKS]
    if unknown:
        raise ConfigError(f"unknown topologies: {', '.join(unknown)}")
    n_seeds = args.seeds if args.seeds is not None else int(settings.pop("seeds", 10))
    first = args.first_seed if args.first_seed is not None else int(settings.pop("first_seed", 1))
    window = args.window if args.window is not None else int(settings.pop("window", 1000))
    for key in ("topologies", "seeds", "first_seed", "window"):
        settings.pop(key, None)
    settings.setdefault("horizon", "10000")
    config, start, resolved = resolve(settings)
    if start or config.events:
        raise ConfigError("compare runs a fixed demand; events are not allowed")
    if n_seeds < 1 or window < 1:
        raise ConfigError("seeds and window must be positive")
    seeds = list(range(first, first + n_seeds))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = worker_count(len(kinds) * len(seeds))
    summary, cells = compare(kinds, seeds, config, window, out if args.keep_runs else None, workers)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    write_csv(out / "cells.csv", CELL_COLUMNS, [[c.get(k, "") for k in CELL_COLUMNS] for c in cells])
    write_manifest(out, {
        "command": "compare", "config": {**resolved, "topologies": ",".join(kinds),
                                         "seeds": n_seeds, "first_seed": first, "window": window},
        "workers": workers,
    })
    print(f"{'topology':<16} {'mean_ratio':>10} {'std_ratio':>9} {'ec_ratio':>9} {'n':>3}")
    for kind, mean, std, ec, n in summary:
        print(f"{kind:<16} {mean:>10.4f} {std:>9.4f} {ec:>9.4f} {n:>3}")
    failed = [c for c in cells if c["status"] != "ok"]
    for c in failed:
        print(f"{c['topology']} seed {c['seed']}: {c['status']}", file=sys.stderr)
    return EXIT_FAILED_CELLS if failed else 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file or a manifest.json")
    p.add_argument("--period", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--grad", choices=("protocol", "oracle"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--mu0", type=float, help="penalty as a fraction of the C0 estimate")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--step", choices=("practical", "theory", "fixed"))
    p.add_argument("--step-scale", dest="step_scale", type=float)
    p.add_argument("--gamma", type=float, help="step size for --step fixed")
    p.add_argument("--rate-bound", dest="rate_bound", type=float)
    p.add_argument("--n-bar", dest="n_bar", type=int)
    p.add_argument("--consensus-iters", dest="consensus_iters", type=int)
    p.add_argument("--eviction", choices=("hard", "soft"))
    p.add_argument("--probe-fraction", dest="probe_fraction", type=float)
    p.add_argument("--drop-prob", dest="drop_prob", type=float)
    p.add_argument("--bound-alpha", dest="bound_alpha", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cachegain", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a benchmark instance")
    g.add_argument("kind")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--budget", type=int, help="override M")
    g.add_argument("--items", type=int, help="override the catalog size")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="centralized baselines on an instance")
    s.add_argument("instance")
    s.add_argument("--method", choices=("greedy", "relax", "pipage", "equal-cap"), default="pipage")
    s.add_argument("--alpha", type=float, default=0.2)
    s.add_argument("--out", help="output directory (default: the instance directory)")
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("run", help="simulate the distributed algorithm")
    r.add_argument("instance")
    r.add_argument("--out", required=True)
    r.add_argument("--name", help="CSV base name (default <instance>_<seed>)")
    r.add_argument("--scenario", choices=SCENARIOS)
    r.add_argument("--events", help="kind@time:value[:high];...")
    _add_run_flags(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="steady-state ratios against the equal-capacity bound")
    c.add_argument("--topologies", type=lambda s: s.split(","))
    c.add_argument("--seeds", type=int, help="number of seeds (default 10)")
    c.add_argument("--first-seed", dest="first_seed", type=int)
    c.add_argument("--window", type=int, help="averaging window in periods (default 1000)")
    c.add_argument("--out", required=True)
    c.add_argument("--keep-runs", action="store_true", help="also write per-run metrics CSVs")
    _add_run_flags(c)
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantBreach as exc:
        print(f"error: invariant breach: {exc}", file=sys.stderr)
        return EXIT_BREACH
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
