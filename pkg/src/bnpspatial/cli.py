"""Command-line interface: ``simulate``, ``fit`` and ``report``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure (a
JSON dump of the chain state is written next to the outputs).

The number of parallel worker processes used by ``fit`` is read from the
``BNPSPATIAL_WORKERS`` environment variable (default 1).
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .baselines import CarConfig, fit_bym, fit_m5, fit_mcar
from .data import DataError, read_dataset, write_dataset
from .graph import GraphError, parse_graph_arg, write_edge_list
from .model import ModelError
from .sampler import NumericalFailure, SamplerConfig, run_chain
from .simgen import (
    SpecError,
    Truth,
    default_cluster_specs,
    eta_ramse,
    gen_study1,
    gen_study2,
    quadrant_labels,
    read_cluster_specs,
    trace_ramse,
)
from .trace import ChainTrace, TraceError

log = logging.getLogger("bnpspatial")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MIXTURE_MODELS = ("M1", "M1A", "M1B", "M1C", "M2", "M3", "M4", "M5", "NP")
CAR_MODELS = ("M6", "M6A", "BYM")
ALL_MODELS = MIXTURE_MODELS + CAR_MODELS
STUDY2_LAMBDAS = (1.0, 5.0, 10.0, 20.0)
STUDY2_INV_PHI = (1.0, 2.0 ** 0.5, 2.0, 2.0 ** 1.5)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _float_list(text: str) -> list:
    try:
        return [float(eval_number(v)) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def eval_number(text: str) -> float:
    """Parse a number, also accepting ``sqrt(a)`` and ``a^b`` forms."""
    t = text.strip()
    if t.startswith("sqrt(") and t.endswith(")"):
        return float(t[5:-1]) ** 0.5
    if "^" in t:
        base, exp = t.split("^", 1)
        return float(base) ** float(exp)
    return float(t)


def _workers() -> int:
    raw = os.environ.get("BNPSPATIAL_WORKERS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise UsageError(f"BNPSPATIAL_WORKERS must be an integer, got {raw!r}") from None
    return max(k, 1)


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def read_config_file(path) -> dict:
    """Key-value file with ``[sampler]`` and/or ``[car]`` sections."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for section, cls in (("sampler", SamplerConfig), ("car", CarConfig)):
        if section not in cp:
            continue
        types = {f.name: f.type for f in fields(cls)}
        vals = {}
        for key, raw in cp[section].items():
            if key not in types:
                raise UsageError(f"unknown {section} setting {key!r}")
            typ = str(types[key])
            if typ == "bool":
                vals[key] = cp[section].getboolean(key)
            elif typ == "int":
                vals[key] = int(raw)
            elif typ == "float":
                vals[key] = float(raw)
            else:
                vals[key] = raw
        out[section] = vals
    return out


def _sampler_config(args, seed: int) -> SamplerConfig:
    base = dict(args.file_config.get("sampler", {}))
    base.update(iterations=args.iters, burnin=args.burnin, thin=args.thin, truncation=args.truncation,
                seed=seed, lambda_max=args.lambda_max)
    try:
        return SamplerConfig(**base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _car_config(args, seed: int) -> CarConfig:
    base = dict(args.file_config.get("car", {}))
    base.update(iterations=args.iters, burnin=args.burnin, thin=args.thin, seed=seed)
    try:
        return CarConfig(**base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    graph = parse_graph_arg(args.graph)
    if args.replicates == 0:
        log.info("zero replicates requested; nothing written")
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_edge_list(graph, out / "graph.txt")
    manifest = {"preset": args.preset, "graph": "graph.txt", "datasets": []}
    if args.preset == "study1":
        specs = read_cluster_specs(args.spec) if args.spec else default_cluster_specs()
        if args.graph.startswith("grid:"):
            r, c = (int(v) for v in args.graph[5:].lower().split("x"))
            labels = quadrant_labels(r, c)
        else:
            raise UsageError("study1 on a custom graph needs a grid (quadrant clusters)")
        for rep in range(args.replicates):
            rng = np.random.default_rng(args.seed + rep)
            ds, truth = gen_study1(graph, labels, specs, rng)
            name = f"s1_r{rep:03d}"
            _emit(out, name, ds, truth, manifest, {"replicate": rep})
    else:
        lams = args.lam or list(STUDY2_LAMBDAS)
        phis = args.inv_phi or list(STUDY2_INV_PHI)
        from .graph import adjacency

        adj = adjacency(graph)
        for a, lam in enumerate(lams):
            for b, inv_phi in enumerate(phis):
                for rep in range(args.replicates):
                    seed = args.seed + rep + 1000 * (a * len(phis) + b)
                    rng = np.random.default_rng(seed)
                    ds, truth = gen_study2(graph, lam, inv_phi, rng, adj=adj)
                    name = f"s2_l{a}_p{b}_r{rep:03d}"
                    _emit(out, name, ds, truth, manifest,
                          {"replicate": rep, "lam": lam, "inv_phi": inv_phi})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    log.info("wrote %d datasets to %s", len(manifest["datasets"]), out)
    return EXIT_OK


def _emit(out, name, ds, truth, manifest, extra):
    write_dataset(ds, out / f"{name}.csv")
    truth.write(out / f"{name}.truth.csv")
    entry = {"name": name, "data": f"{name}.csv", "truth": f"{name}.truth.csv"}
    entry.update(extra)
    manifest["datasets"].append(entry)


# ---------------------------------------------------------------------------
# fit


def _datasets(args):
    """``(name, data path, index)`` for a data file or a simulate directory."""
    path = Path(args.data)
    if path.is_dir():
        mpath = path / "manifest.json"
        if not mpath.exists():
            raise DataError(f"{path} has no manifest.json")
        manifest = json.loads(mpath.read_text())
        items = [(d["name"], path / d["data"]) for d in manifest["datasets"]]
        if args.replicates is not None:
            items = [it for it, d in zip(items, manifest["datasets"]) if d.get("replicate", 0) < args.replicates]
        return [(nm, p, k) for k, (nm, p) in enumerate(items)]
    if not path.exists():
        raise DataError(f"data file {path} does not exist")
    return [(path.stem, path, 0)]


def _graph_for(args):
    if args.graph:
        return parse_graph_arg(args.graph)
    path = Path(args.data)
    if path.is_dir() and (path / "graph.txt").exists():
        return parse_graph_arg(str(path / "graph.txt"))
    raise UsageError("--graph is required unless --data is a simulate directory")


def fit_one(model: str, ds, graph, scfg: SamplerConfig, ccfg: CarConfig):
    if model in ("M6", "M6A"):
        return fit_mcar(ds, graph, ccfg, diagonal=(model == "M6A"))
    if model == "BYM":
        return fit_bym(ds.y1, ds.E, graph, ccfg, area_ids=ds.area_ids)
    if model == "M5":
        return fit_m5(ds, graph, scfg, covariates=True)
    if model == "NP":
        return fit_m5(ds, graph, scfg, covariates=False)
    return run_chain(ds, graph, model, scfg)


def _fit_task(task):
    model, name, data_path, graph, scfg, ccfg, out = task
    ds = read_dataset(data_path)
    if ds.n != graph.n:
        raise DataError(f"{data_path}: {ds.n} areas but the graph has {graph.n}")
    try:
        trace = fit_one(model, ds, graph, scfg, ccfg)
    except NumericalFailure as exc:
        dump = out / f"{name}__{model}.failure.json"
        dump.write_text(json.dumps({"error": str(exc), "state": exc.dump}, indent=1, sort_keys=True))
        raise
    tpath = out / f"{name}__{model}.csv"
    trace.write(tpath)
    summary = {
        "model": model,
        "dataset": name,
        "kept": len(trace),
        "acceptance": trace.acceptance,
        "tuning": trace.meta.get("tuning", {}),
    }
    (out / f"{name}__{model}.summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return name, summary


def cmd_fit(args) -> int:
    models = [m.strip().upper() for m in args.model.split(",")]
    bad = [m for m in models if m not in ALL_MODELS]
    if bad:
        raise UsageError(f"unknown model(s) {bad}; choose from {', '.join(ALL_MODELS)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph = _graph_for(args)
    tasks = []
    for name, path, idx in _datasets(args):
        for model in models:
            seed = args.seed + idx
            tasks.append((model, name, path, graph, _sampler_config(args, seed), _car_config(args, seed), out))
    workers = _workers()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_fit_task, tasks))
    else:
        results = [_fit_task(t) for t in tasks]
    for name, summary in results:
        acc = ", ".join(f"{k}={v:.3f}" for k, v in sorted(summary["acceptance"].items()))
        print(f"{name} {summary['model']}: kept {summary['kept']} draws; acceptance {acc}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _load_truths(data_dir: Path):
    manifest = json.loads((data_dir / "manifest.json").read_text())
    return manifest, {d["name"]: Truth.read(data_dir / d["truth"]) for d in manifest["datasets"]}


def _trace_files(trace_dir: Path):
    found = {}
    for p in sorted(trace_dir.glob("*__*.csv")):
        name, model = p.stem.rsplit("__", 1)
        found[(name, model)] = p
    return found


def study1_table(traces: dict, truths: dict, key: str = "y1.x_x"):
    """Average (over datasets) RAMSE per cluster and model.

    ``traces`` maps ``(dataset, model)`` to a trace. Returns
    ``(clusters, models, values)`` with ``values[cluster][model]``.
    """
    usable = {k: tr for k, tr in traces.items() if key in tr.area_names}
    for name, model in sorted(set(traces) - set(usable)):
        log.warning("%s %s has no %s draws; left out of the table", name, model, key)
    models = sorted({m for _, m in usable}, key=lambda m: (ALL_MODELS.index(m) if m in ALL_MODELS else 99, m))
    per = {}
    for (name, model), tr in sorted(usable.items()):
        rep = trace_ramse(tr, truths[name], key)
        for c, v in list(rep.ramse.items()) + [("all", rep.overall)]:
            per.setdefault(c, {}).setdefault(model, []).append(v)
    clusters = sorted(c for c in per if c != "all") + ["all"]
    values = {c: {m: float(np.mean(per[c][m])) for m in models if m in per[c]} for c in clusters}
    return clusters, models, values


def study2_table(traces: dict, truths: dict, manifest: dict, models=("NP", "BYM"), key: str = "lp.y1"):
    """Pooled RAMSE of the log relative risks per (lam, 1/phi) cell and model."""
    params = {d["name"]: (d["lam"], d["inv_phi"]) for d in manifest["datasets"]}
    est, tru = {}, {}
    for (name, model), tr in sorted(traces.items()):
        if model not in models or name not in params:
            continue
        cell = params[name]
        est.setdefault((cell, model), []).append(tr.area(key).mean(axis=0))
        tru.setdefault((cell, model), []).append(truths[name].eta)
    cells = sorted({c for c, _ in est})
    values = {(c, m): eta_ramse(est[(c, m)], tru[(c, m)]) for (c, m) in est}
    return cells, values


def write_study1_table(path, clusters, models, values) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(["cluster"] + models) + "\n")
        for c in clusters:
            fh.write(",".join([c] + [_fmt(values[c][m]) if m in values[c] else "" for m in models]) + "\n")


def write_study2_table(path, cells, values, pair=("NP", "BYM")) -> None:
    lams = sorted({c[0] for c in cells})
    phis = sorted({c[1] for c in cells})
    with open(path, "w") as fh:
        fh.write(",".join(["lambda"] + [f"inv_phi={p:.4g}" for p in phis]) + "\n")
        for lam in lams:
            row = [f"{lam:g}"]
            for p in phis:
                a = values.get(((lam, p), pair[0]))
                b = values.get(((lam, p), pair[1]))
                row.append("" if a is None or b is None else f"{_fmt(a)}|{_fmt(b)}")
            fh.write(",".join(row) + "\n")


def write_median_map(path, trace: ChainTrace) -> None:
    keys = [k for k in trace.area_names if k != "alloc"]
    med = {k: np.median(trace.area(k), axis=0) for k in keys}
    with open(path, "w") as fh:
        fh.write(",".join(["area"] + keys) + "\n")
        for j, a in enumerate(trace.area_ids):
            fh.write(",".join([str(int(a))] + [repr(float(med[k][j])) for k in keys]) + "\n")


def cmd_report(args) -> int:
    trace_dir = Path(args.traces)
    data_dir = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not (data_dir / "manifest.json").exists():
        raise DataError(f"{data_dir} has no manifest.json")
    manifest, truths = _load_truths(data_dir)
    files = _trace_files(trace_dir)
    if not files:
        raise DataError(f"no traces found in {trace_dir}")
    traces = {k: ChainTrace.read(p) for k, p in files.items() if k[0] in truths}
    maps = out / "maps"
    maps.mkdir(exist_ok=True)
    for (name, model), tr in sorted(traces.items()):
        write_median_map(maps / f"{name}__{model}.csv", tr)
    preset = args.preset or manifest.get("preset")
    if preset == "study2":
        cells, values = study2_table(traces, truths, manifest)
        write_study2_table(out / "table_study2.csv", cells, values)
        print((out / "table_study2.csv").read_text(), end="")
    else:
        clusters, models, values = study1_table(traces, truths)
        write_study1_table(out / "table_study1.csv", clusters, models, values)
        print((out / "table_study1.csv").read_text(), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bnpspatial", description="Simulate data, fit models and report metric tables.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic datasets")
    s.add_argument("--preset", choices=("study1", "study2"), required=True)
    s.add_argument("--graph", default="grid:10x10", help="edge-list file or grid:RxC")
    s.add_argument("--spec", help="cluster-spec file (study1)")
    s.add_argument("--lambda", dest="lam", type=_float_list, help="comma-separated lam values (study2)")
    s.add_argument("--inv-phi", type=_float_list, help="comma-separated 1/phi values (study2)")
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit one or more models")
    f.add_argument("--model", required=True, help=f"comma-separated, from {', '.join(ALL_MODELS)}")
    f.add_argument("--data", required=True, help="dataset file or simulate output directory")
    f.add_argument("--graph", help="edge-list file or grid:RxC")
    f.add_argument("--iters", type=int, default=2000, help="total sweeps including burn-in")
    f.add_argument("--burnin", type=int, default=1000)
    f.add_argument("--thin", type=int, default=1)
    f.add_argument("--truncation", type=int, default=30)
    f.add_argument("--lambda-max", type=float, default=50.0)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--replicates", type=int, help="only fit the first N replicates of a directory")
    f.add_argument("--config", help="key-value file with [sampler] and [car] sections")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("report", help="metric tables and posterior-median maps")
    r.add_argument("--traces", required=True)
    r.add_argument("--data", required=True, help="simulate output directory (truth files)")
    r.add_argument("--preset", choices=("study1", "study2"))
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.file_config = read_config_file(args.config) if getattr(args, "config", None) else {}
        if getattr(args, "replicates", None) is not None and args.replicates < 0:
            raise UsageError("--replicates must be nonnegative")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphError, SpecError, TraceError, ModelError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
