"""Command-line experiment runner.

Exit codes: 0 success, 1 configuration error, 2 inconclusive classification,
3 numerical abort.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import dynamics as dyn
from . import ensemble as ens
from .qsim import make_rng
from .trainer import ExperimentConfig, NumericalAbort, TrainingTrace, run

EXIT_OK, EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_ABORT = 0, 1, 2, 3

_INT_KEYS = ("n", "L", "D", "steps", "seed", "structure_seed", "data_seed", "init_seed", "dense_until")
_FLOAT_KEYS = ("eta", "record_factor", "window_fraction")


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    """17 significant digits; empty for NaN or infinity."""
    x = float(x) + 0.0
    return "" if not np.isfinite(x) else f"{x:.17g}"


def find_config(name) -> Path:
    p = Path(name)
    if p.exists():
        return p
    for fname in (p.name, p.name + ".cfg"):
        bundled = resources.files("qnnlab") / "configs" / fname
        if bundled.is_file():
            return Path(str(bundled))
    raise ConfigError(f"config: file {name!s} not found")


def read_config(path) -> dict:
    """Parse the ``[experiment]`` section of an INI file into config keyword arguments."""
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are case-sensitive (L, D)
    try:
        cp.read_string(Path(path).read_text())
    except configparser.Error as e:
        raise ConfigError(f"config: {e}") from e
    if "experiment" not in cp:
        raise ConfigError("config: missing [experiment] section")
    sec = cp["experiment"]
    known = set(ExperimentConfig.__dataclass_fields__)
    out = {}
    for key, raw in sec.items():
        if key not in known:
            raise ConfigError(f"{key}: unknown config key")
        try:
            if key in ("targets", "basis_indices"):
                vals = [v for v in raw.replace(";", ",").split(",") if v.strip()]
                out[key] = tuple(int(v) if key == "basis_indices" else float(v) for v in vals)
            elif key in _INT_KEYS:
                out[key] = int(raw)
            elif key in _FLOAT_KEYS:
                out[key] = float(raw)
            else:
                out[key] = raw.strip()
        except ValueError as e:
            raise ConfigError(f"{key}: cannot parse {raw!r}") from e
    return out


def build_config(args, extra: dict | None = None) -> ExperimentConfig:
    kw = read_config(find_config(args.config)) if args.config else {}
    kw.update(extra or {})
    for k in ("seed", "steps", "eta"):
        v = getattr(args, k, None)
        if v is not None:
            kw[k] = v
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def write_manifest(out: Path, command: str, config_path, seeds, t0: float, config: dict | None = None):
    text = json.dumps(config, sort_keys=True) if config is not None else ""
    if config_path and Path(config_path).exists():
        text = Path(config_path).read_text() + text
    doc = {"command": command, "config": None if config_path is None else str(config_path), "seeds": seeds,
           "output": str(out), "version": __version__, "wall_clock_s": time.time() - t0,
           "config_hash": hashlib.sha256(text.encode()).hexdigest(), "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2))


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (float, np.floating)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_trace_csv(tr: TrainingTrace, path: Path) -> None:
    N = tr.N
    pairs = [(a, b) for a in range(N) for b in range(a, N)]
    lam = tr.lam_smooth
    ang = tr.angles
    head = (["step", "loss"] + [f"eps_{a + 1}" for a in range(N)] + [f"residual_{a + 1}" for a in range(N)] + [f"K_{a + 1}{b + 1}" for a, b in pairs]
            + [f"angle_{a + 1}{b + 1}" for a, b in pairs if a != b] + [f"lambda_{a + 1}{a + 1}{a + 1}" for a in range(N)]
            + ["lambda_norm1"])
    norm = tr.lambda_norm1
    res = tr.residuals if tr.eps_inf is not None else np.full_like(tr.eps, np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        for i, s in enumerate(tr.steps):
            row = [str(int(s)), fmt(tr.loss[i])] + [fmt(v) for v in tr.eps[i]] + [fmt(v) for v in res[i]]
            row += [fmt(tr.K[i, a, b]) for a, b in pairs]
            row += [fmt(ang[i, a, b]) for a, b in pairs if a != b]
            row += [fmt(lam[i, a, a, a]) for a in range(N)] + [fmt(norm[i])]
            w.writerow(row)


def write_kernels_jsonl(tr: TrainingTrace, path: Path) -> None:
    with open(path, "w") as fh:
        for i in range(len(tr.steps)):
            fh.write(json.dumps(_clean(tr.snapshot(i).to_dict())) + "\n")


def regime_report(tr: TrainingTrace) -> dict:
    lo, hi = tr.bounds
    pred = dyn.predict_regime(tr.targets, lo, hi)
    rep = {"predicted": pred.label, "predicted_sets": pred.to_dict(), "eps_inf": tr.eps_inf,
           "status": tr.status, "warnings": tr.warnings, "steps": int(tr.steps[-1])}
    if len(tr.t) >= 12 and tr.t[-1] >= 100:
        emp = dyn.classify_empirical(tr)
        rep.update(empirical=emp.label, empirical_sets=emp.to_dict(), series=emp.diagnostics["series"])
    else:
        rep["empirical"] = dyn.INCONCLUSIVE
        rep["note"] = "run too short for classification; initial snapshot only"
    return _clean(rep)


def save_run(tr: TrainingTrace, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(tr.config, indent=2))
    tr.save(out / "trace.npz")
    write_trace_csv(tr, out / "trace.csv")
    write_kernels_jsonl(tr, out / "kernels.jsonl")
    rep = regime_report(tr)
    (out / "report.json").write_text(json.dumps(rep, indent=2))
    return rep


def _train_one(cfg_dict: dict, out: str):
    cfg = ExperimentConfig(**cfg_dict)
    try:
        tr = run(cfg)
        status = EXIT_OK
    except NumericalAbort as e:
        tr = e.trace
        status = EXIT_ABORT
    rep = save_run(tr, Path(out))
    return status, rep


def cmd_train(args) -> int:
    t0 = time.time()
    cfg = build_config(args)
    out = Path(args.out)
    status, rep = _train_one(cfg.to_dict(), str(out))
    write_manifest(out, "train", args.config and find_config(args.config), [cfg.seed], t0, cfg.to_dict())
    print(json.dumps({k: rep[k] for k in ("predicted", "empirical", "status")}))
    if status == EXIT_ABORT:
        return EXIT_ABORT
    if cfg.steps == 0:
        return EXIT_OK
    return EXIT_INCONCLUSIVE if rep["empirical"] == dyn.INCONCLUSIVE else EXIT_OK


def _load_trace(d) -> TrainingTrace:
    p = Path(d)
    p = p / "trace.npz" if p.is_dir() else p
    if not p.exists():
        raise ConfigError(f"trace: {p} not found")
    return TrainingTrace.load(p)


def cmd_classify(args) -> int:
    tr = _load_trace(args.trace)
    rep = regime_report(tr)
    print(json.dumps(rep, indent=2))
    return EXIT_INCONCLUSIVE if rep["empirical"] == dyn.INCONCLUSIVE else EXIT_OK


def cmd_stability(args) -> int:
    t0 = time.time()
    tr = _load_trace(args.trace)
    rep = _clean(dyn.stability_from_trace(tr))
    out = Path(args.out or args.trace)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stability.json").write_text(json.dumps(rep, indent=2))
    if args.out:
        write_manifest(out, "stability", None, [tr.config["seed"]], t0, tr.config)
    print(json.dumps(rep, indent=2))
    return EXIT_OK


def decoupled_lambda(N: int, diag: float = -1.0) -> np.ndarray:
    lam = np.zeros((N, N, N))
    for a in range(N):
        lam[a, a, a] = diag
    return lam


def cmd_flowfield(args) -> int:
    t0 = time.time()
    C = np.array([args.C1, args.C2], float)
    if args.lambda_file:
        if not Path(args.lambda_file).is_file():
            raise ConfigError(f"lambda-file: {args.lambda_file} not found")
        lam = np.asarray(json.loads(Path(args.lambda_file).read_text()), float)
        if lam.shape != (2, 2, 2):
            raise ConfigError("lambda: expected a 2x2x2 nested list")
    else:
        lam = decoupled_lambda(2)
    gmax = args.gmax or 1.5 * np.sqrt(max(1.0, *np.abs(C)))
    g = np.linspace(0, gmax, args.grid)
    rows = dyn.flow_field(C, lam, g, g, eta=args.eta or 1e-3, N=2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "flowfield.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["g1", "g2", "dg1", "dg2"])
        for r in rows:
            w.writerow([fmt(v) for v in r])
    best, reports = dyn.stable_fixed_point(C, lam)
    rep = {"charges": C.tolist(), "stable_point": None if best is None else best.fixed_point.tolist(),
           "stable_class": None if best is None else best.cls,
           "fixed_points": [r.to_dict() for r in reports]}
    (out / "stability.json").write_text(json.dumps(_clean(rep), indent=2))
    write_manifest(out, "flowfield", args.lambda_file, [], t0,
                   {"C": C.tolist(), "grid": args.grid, "gmax": float(gmax), "eta": args.eta or 1e-3})
    print(json.dumps(_clean(rep), indent=2))
    return EXIT_OK


def cmd_ensemble(args) -> int:
    t0 = time.time()
    d, N, k = args.d, args.N, args.k
    seed = 0 if args.seed is None else args.seed
    if d < 2 or not 0 <= N <= d:
        raise ConfigError(f"d, N: need d >= 2 and 0 <= N <= d (got d={d}, N={N})")
    if k < 1:
        raise ConfigError("k: must be >= 1")
    if k == 2:
        analytic, bound = ens.fp_rh_exact2(N, d), False
    else:
        analytic, bound = ens.fp_rh_lower(N, d, k), True
    rng = make_rng(seed)
    samples = ens.frame_potential_samples(ens.rh_sampler(d, N), k, args.pairs, rng)
    rep = ens.EnsembleReport(d, N, k, float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(samples.size)),
                             analytic, bound, args.pairs, seed)
    doc = rep.to_dict()
    doc["lower_bound"] = ens.fp_rh_lower(N, d, k)
    doc["haar"] = ens.fp_haar(k)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(doc, indent=2))
        if args.dump_samples:
            np.savetxt(out / "samples.csv", samples, fmt="%.17g", header="abs_trace_pow_2k", comments="")
        write_manifest(out, "ensemble", None, [seed], t0, doc)
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def parse_axis(spec: str):
    """``key=v1|v2|...``; each value of ``targets`` is a comma list."""
    if "=" not in spec:
        raise ConfigError("axis: expected key=value1|value2|...")
    key, vals = spec.split("=", 1)
    key = key.strip()
    items = [v.strip() for v in vals.split("|") if v.strip()]
    if not items:
        raise ConfigError("axis: empty axis")
    if key == "targets":
        return key, [tuple(float(x) for x in v.split(",")) for v in items]
    if key in ("L", "n", "seed", "steps", "D"):
        return key, [int(v) for v in items]
    if key == "eta":
        return key, [float(v) for v in items]
    raise ConfigError(f"axis: unsupported key {key!r}")


def _late_means(tr: TrainingTrace, frac: float = 0.1) -> dict:
    w = tr.late_window(frac)
    i = np.arange(tr.N)
    lam = tr.lam_smooth[w][:, i, i, i]
    K = tr.K[w][:, i, i]
    mu = tr.mu[w][:, i, i, i]
    return {"K": K.mean(axis=0), "lam": mu.mean(axis=0) / K.mean(axis=0), "lam_smooth": np.nanmean(lam, axis=0)}


def cmd_sweep(args) -> int:
    t0 = time.time()
    base = build_config(args)
    axes = [parse_axis(a) for a in args.axis]
    cells = [{}]
    for key, vals in axes:
        cells = [dict(c, **{key: v}) for c in cells for v in vals]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for j, cell in enumerate(cells):
        d = base.to_dict()
        d.update(cell)
        if "seed" in cell:
            for k in ("structure_seed", "data_seed", "init_seed"):
                d[k] = None
        jobs.append((ExperimentConfig(**d).to_dict(), str(out / f"cell_{j:04d}"), cell))
    workers = args.workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_train_one, [j[0] for j in jobs], [j[1] for j in jobs]))
    else:
        results = [_train_one(j[0], j[1]) for j in jobs]
    Nmax = max(len(j[0]["targets"]) for j in jobs)
    head = (["cell", "axis", "status", "predicted", "empirical"] + [f"eps_inf_{a + 1}" for a in range(Nmax)]
            + [f"K_{a + 1}{a + 1}" for a in range(Nmax)] + [f"lambda_{a + 1}{a + 1}{a + 1}" for a in range(Nmax)]
            + [f"K_pred_{a + 1}{a + 1}" for a in range(Nmax)] + [f"lambda_pred_{a + 1}{a + 1}{a + 1}" for a in range(Nmax)])
    worst = EXIT_OK
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        for (cfg, d, cell), (status, rep) in zip(jobs, results):
            worst = max(worst, status, EXIT_INCONCLUSIVE if rep["empirical"] == dyn.INCONCLUSIVE else EXIT_OK)
            tr = TrainingTrace.load(Path(d) / "trace.npz")
            lm = _late_means(tr)
            pad = lambda v: [fmt(x) for x in v] + [""] * (Nmax - len(v))
            kp = lp = [np.nan] * tr.N
            if cfg["observable"] == "projector":
                o = np.clip(tr.eps_inf + tr.targets, 0, 1)
                kp = ens.predicted_K_diag(cfg["L"], 2 ** cfg["n"], o)
                lp = ens.predicted_lambda_diag(cfg["L"], 2 ** cfg["n"], o)
            w.writerow([Path(d).name, json.dumps(cell), status, rep["predicted"], rep["empirical"]]
                       + pad(tr.eps_inf) + pad(lm["K"]) + pad(lm["lam"]) + pad(kp) + pad(lp))
    write_manifest(out, "sweep", args.config and find_config(args.config), sorted({j[0]["seed"] for j in jobs}),
                   t0, base.to_dict())
    return worst


def cmd_validate(args) -> int:
    from .ansatz import evolve
    t0 = time.time()
    traces, unitaries = [], []
    for d in args.traces:
        tr = _load_trace(d)
        traces.append(tr)
        a, ds, _ = ExperimentConfig(**tr.config).build()
        U = np.array([evolve(a, tr.params[-1], e) for e in np.eye(a.dim, dtype=complex)]).T
        targets = np.array([o.target for o in ds.observables])
        unitaries.append(ens.aligned_unitary(U, ds.states, targets))
    cmp = ens.validate_against_training(traces, unitaries=unitaries, o_mode=args.o_mode)
    doc = _clean(cmp.to_dict())
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "validate.json").write_text(json.dumps(doc, indent=2))
        write_manifest(Path(args.out), "validate", None, sorted({t.config["seed"] for t in traces}), t0,
                       {"traces": [str(d) for d in args.traces], "o_mode": args.o_mode})
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qnnlab", description="Quantum neural network training-dynamics experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="INI file with an [experiment] section, or a bundled config name")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--eta", type=float)

    sp = sub.add_parser("train", help="train one configuration and classify its dynamics")
    common(sp)
    sp.set_defaults(func=cmd_train, out="run")

    sp = sub.add_parser("classify", help="classify a saved trace")
    sp.add_argument("trace")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("stability", help="fixed-point stability from a saved trace")
    sp.add_argument("trace")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("flowfield", help="reduced kernel flow on a grid (N = 2)")
    sp.add_argument("--C1", type=float, required=True)
    sp.add_argument("--C2", type=float, required=True)
    sp.add_argument("--lambda-file", dest="lambda_file")
    sp.add_argument("--grid", type=int, default=21)
    sp.add_argument("--gmax", type=float)
    sp.add_argument("--eta", type=float)
    sp.add_argument("--out", default="flowfield")
    sp.set_defaults(func=cmd_flowfield)

    sp = sub.add_parser("ensemble", help="Monte-Carlo frame potential of the restricted Haar ensemble")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--pairs", type=int, default=10_000)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--dump-samples", action="store_true")
    sp.set_defaults(func=cmd_ensemble)

    sp = sub.add_parser("sweep", help="run a grid of configurations")
    common(sp)
    sp.add_argument("--axis", action="append", required=True, help="key=v1|v2|... (repeatable)")
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_sweep, out="sweep")

    sp = sub.add_parser("validate", help="compare state-preparation traces with ensemble averages")
    sp.add_argument("traces", nargs="+")
    sp.add_argument("--out")
    sp.add_argument("--o-mode", choices=("limit", "window"), default="limit",
                    help="measure o at eps(inf) + y or along the late window")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
