"""Command-line front end: ``combifd {factorize,cluster,phasemap,gen,verify}``.

Exit codes: 0 success, 1 input error, 2 infeasible (or a solution that fails
verification), 3 search budget exhausted without a feasible point.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from combifd.amiqo import AmiqoOptions, run
from combifd.baselines import nmf_multiplicative
from combifd.constraints import (
    ConstraintSystem,
    Dims,
    InfeasibleSystemError,
    build_nonnegativity,
    build_semi_supervised,
    dump_json,
    load_json,
    validate,
)
from combifd.matrix import read_csv, residual_norm, write_csv
from combifd.metrics import (
    accuracy_hard,
    accuracy_soft,
    connectivity_violations,
    gibbs_violations,
    hard_assign,
    soft_supports,
)
from combifd.miqp import MiqpParams, NoIncumbentError
from combifd.phasemap import (
    ShiftConfig,
    build_phasemap_system,
    choose_shift_config,
    gen_synthetic,
    load_instance,
    phase_concentrations,
    save_instance,
)

__all__ = ["main", "build_parser", "sample_pairs", "synthetic_clusters", "pair_violations"]

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NO_INCUMBENT = 0, 1, 2, 3


class InputError(ValueError):
    """Bad command-line input: missing files, malformed data, bad option values."""


# ------------------------------------------------------------------ helpers

def example_path() -> Path:
    return Path(str(resources.files("combifd") / "data" / "tiny.csv"))


def _options(args, k=None, default_init="perturb") -> AmiqoOptions:
    # wall-clock limits make results machine dependent
    tl = float("inf") if args.deterministic or args.time_limit is None else args.time_limit
    params = MiqpParams(time_limit=tl)
    if args.node_limit is not None:
        params = MiqpParams(node_limit=args.node_limit, time_limit=tl)
    return AmiqoOptions(k=k, p=args.p, max_iters=args.iters, rel_tol=args.rel_tol, seed=args.seed,
                        improve_only=args.improve_only, miqp=params,
                        init=args.init or default_init)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_solution(out: Path, sys_: ConstraintSystem, model, trace) -> float:
    """Write factors, auxiliaries, constraints and trace; return the max violation."""
    write_csv(out / "W.csv", model.W)
    write_csv(out / "H.csv", model.H)
    (out / "solution.json").write_text(json.dumps({"x": model.x.tolist(), "b": model.b.tolist()}))
    (out / "constraints.json").write_text(json.dumps(dump_json(sys_)))
    with open(out / "trace.jsonl", "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec) + "\n")
    viol = validate(sys_, model.flat(sys_))
    return max((abs(v.amount) for v in viol if np.isfinite(v.amount)), default=0.0)


def _write_report(out: Path, report: dict) -> None:
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _read_matrix(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{p}: no such file")
    return read_csv(p)


def _read_pairs(path) -> list[tuple[int, int]]:
    if path is None:
        return []
    p = Path(path)
    if not p.exists():
        raise InputError(f"{p}: no such file")
    pairs = []
    with open(p, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells:
                continue
            if len(cells) != 2:
                raise InputError(f"{p}: line {lineno}: expected two indices")
            try:
                pairs.append((int(cells[0]), int(cells[1])))
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise InputError(f"{p}: line {lineno}: indices must be integers") from None
    return pairs


def _read_labels(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{p}: no such file")
    return np.asarray(read_csv(p).ravel(), int)


# --------------------------------------------------------------- clustering

def synthetic_clusters(seed: int = 0, n: int = 60, m: int = 4, k: int = 3, spread: float = 1.0):
    """Non-negative points around ``k`` centers; returns ``(A, labels)`` with A m x n."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 4.0, (m, k)) + 1.0
    labels = np.arange(n) % k
    rng.shuffle(labels)
    a = np.abs(centers[:, labels] + rng.normal(0.0, spread, (m, n)))
    return a, labels


def sample_pairs(labels, count: int, rng) -> tuple[list, list]:
    """Draw ``count`` distinct point pairs; same-label pairs become must-links."""
    labels = np.asarray(labels)
    n = labels.size
    total = n * (n - 1) // 2
    if count > total:
        raise InputError(f"asked for {count} pairs, only {total} exist")
    picks = set()
    while len(picks) < count:
        i, j = rng.choice(n, 2, replace=False)
        picks.add((int(min(i, j)), int(max(i, j))))
    pairs = sorted(picks)
    ml = [p for p in pairs if labels[p[0]] == labels[p[1]]]
    cl = [p for p in pairs if labels[p[0]] != labels[p[1]]]
    return ml, cl


def pair_violations(assign, ml, cl) -> int:
    lab = assign.labels if hasattr(assign, "labels") else np.asarray(assign)
    bad = sum(1 for i, j in ml if lab[i] < 0 or lab[i] != lab[j])
    bad += sum(1 for i, j in cl if lab[i] >= 0 and lab[i] == lab[j])
    return bad


def _cluster_run(a, k, ml, cl, opts):
    sys_ = build_semi_supervised(Dims(a.shape[0], k, a.shape[1]), 1, ml, cl)
    res = run(a, sys_, opts)
    return sys_, res


def _sweep_job(job):
    a, labels, k, level, seed, opts = job
    rng = np.random.default_rng([seed, level])
    ml, cl = sample_pairs(labels, level, rng)
    try:
        _, res = _cluster_run(a, k, ml, cl, AmiqoOptions(**{**opts.__dict__, "seed": seed}))
    except (InfeasibleSystemError, NoIncumbentError) as exc:
        return level, seed, None, None, str(exc)
    assign = hard_assign(res.model.W, res.model.H)
    return level, seed, accuracy_hard(assign, labels), pair_violations(assign, ml, cl), None


def cmd_cluster(args) -> int:
    if args.gen:
        a, labels = synthetic_clusters(args.seed, args.gen_n, args.gen_m, args.k)
    else:
        if args.data is None:
            raise InputError("cluster needs a data CSV or --gen")
        a = _read_matrix(args.data)
        labels = _read_labels(args.labels) if args.labels else None
    out = _outdir(args)
    k = args.k
    if labels is not None and labels.size != a.shape[1]:
        raise InputError(f"{labels.size} labels for {a.shape[1]} points")
    opts = _options(args, k, default_init="data")

    if args.supervision_sweep:
        if labels is None:
            raise InputError("--supervision-sweep needs --labels (or --gen)")
        levels = [int(x) for x in args.supervision_sweep.split(",")]
        jobs = [(a, labels, k, lv, args.seed + r, opts) for lv in levels for r in range(args.runs)]
        if args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                results = list(pool.map(_sweep_job, jobs))
        else:
            results = [_sweep_job(j) for j in jobs]
        rows = []
        for lv in levels:
            accs = [r[2] for r in results if r[0] == lv and r[2] is not None]
            skipped = sum(1 for r in results if r[0] == lv and r[2] is None)
            bad = sum(r[3] for r in results if r[0] == lv and r[3] is not None)
            rows.append([lv, float(np.mean(accs)) if accs else float("nan"),
                         float(np.std(accs)) if accs else float("nan"), len(accs), skipped, bad])
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pairs", "mean_accuracy", "sd_accuracy", "runs", "skipped", "pair_violations"])
            w.writerows(rows)
        with open(out / "runs.jsonl", "w") as fh:
            for lv, seed, acc, bad, err in results:
                fh.write(json.dumps({"pairs": lv, "seed": seed, "accuracy": acc,
                                     "pair_violations": bad, "error": err}) + "\n")
        for r in rows:
            print(f"pairs={r[0]:5d} accuracy={r[1]:.4f} sd={r[2]:.4f} runs={r[3]} skipped={r[4]}")
        return EXIT_OK

    ml = _read_pairs(args.ml)
    cl = _read_pairs(args.cl)
    t0 = time.monotonic()
    sys_, res = _cluster_run(a, k, ml, cl, opts)
    resid = _write_solution(out, sys_, res.model, res.trace)
    assign = hard_assign(res.model.W, res.model.H)
    write_csv(out / "labels.csv", assign.labels[:, None].astype(float))
    report = {
        "objective": res.model.objective,
        "iterations": res.model.iteration,
        "status": res.status,
        "feasibility_residual": resid,
        "pair_violations": pair_violations(assign, ml, cl),
        "wall_time": time.monotonic() - t0,
    }
    if labels is not None:
        report["accuracy"] = accuracy_hard(assign, labels)
    _write_report(out, report)
    print(f"objective={report['objective']:.6g} iterations={report['iterations']}")
    return EXIT_OK


# ---------------------------------------------------------------- factorize

def cmd_factorize(args) -> int:
    if args.example:
        a = read_csv(example_path())
    elif args.data is None:
        raise InputError("factorize needs a data CSV or --example")
    else:
        a = _read_matrix(args.data)
    if args.constraints:
        p = Path(args.constraints)
        if not p.exists():
            raise InputError(f"{p}: no such file")
        try:
            sys_ = load_json(p)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise InputError(f"{p}: malformed constraint file ({exc})") from None
    else:
        if args.k is None:
            raise InputError("--k is required without --constraints")
        sys_ = build_nonnegativity(Dims(a.shape[0], args.k, a.shape[1]))
    out = _outdir(args)
    t0 = time.monotonic()
    if args.baseline == "nmf":
        res = nmf_multiplicative(a, sys_.dims.k, iters=max(args.iters, 1) * 50, seed=args.seed)
        write_csv(out / "W.csv", res.W)
        write_csv(out / "H.csv", res.H)
        with open(out / "trace.jsonl", "w") as fh:
            for i, obj in enumerate(res.trace):
                fh.write(json.dumps({"iteration": i, "objective": obj}) + "\n")
        report = {"objective": residual_norm(a, res.W, res.H, args.p),
                  "iterations": len(res.trace), "baseline": "nmf",
                  "feasibility_residual": None}
    else:
        res = run(a, sys_, _options(args, sys_.dims.k))
        resid = _write_solution(out, sys_, res.model, res.trace)
        report = {"objective": res.model.objective, "iterations": res.model.iteration,
                  "status": res.status, "feasibility_residual": resid}
    report["p"] = args.p
    report["wall_time"] = time.monotonic() - t0
    _write_report(out, report)
    print(f"objective={report['objective']:.6g} iterations={report['iterations']}")
    return EXIT_OK


# ----------------------------------------------------------------- phasemap

def _shift_config(args, inst) -> ShiftConfig:
    if args.Q is not None:
        return ShiftConfig(args.Q, args.gamma if args.gamma is not None else 0.0)
    meta = inst.meta
    if all(key in meta for key in ("max_shift", "min_width", "shift_range")):
        return choose_shift_config(meta["max_shift"], meta["min_width"], meta["shift_range"])
    return ShiftConfig(1)


def _phase_report(conc, inst, M):
    sup = soft_supports(conc)
    rep = {
        "gibbs_violations": int(len(gibbs_violations(sup, M))),
        "connectivity_violations": [int(s) for s in connectivity_violations(sup, inst.edges)],
    }
    rep["supports_connected"] = not rep["connectivity_violations"]
    if inst.truth is not None and "concentrations" in inst.truth:
        truth = np.asarray(inst.truth["concentrations"]) > 0
        rep["accuracy_soft"] = accuracy_soft(sup, truth)
        rep["accuracy_soft_k"] = accuracy_soft(sup, truth, normalize="k")
    return rep


def cmd_phasemap(args) -> int:
    out = _outdir(args)
    if args.gen:
        inst = gen_synthetic(args.seed, n=args.n, m=args.m, k_true=args.phases, M=args.M,
                             noise=args.noise)
        save_instance(inst, out / "instance.json")
    elif args.instance is None:
        raise InputError("phasemap needs an instance file or --gen")
    else:
        p = Path(args.instance)
        if not p.exists():
            raise InputError(f"{p}: no such file")
        try:
            inst = load_instance(p)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise InputError(f"{p}: malformed instance ({exc})") from None
    k = args.phases
    cfg = _shift_config(args, inst)
    conn = None if args.connectivity == "none" else args.connectivity
    sys_ = build_phasemap_system(inst, k, args.M, cfg, conn)
    t0 = time.monotonic()
    res = run(inst.signals, sys_, _options(args, k * cfg.Q, default_init="nmf"))
    resid = _write_solution(out, sys_, res.model, res.trace)
    conc = phase_concentrations(res.model.H, cfg.Q)
    header = ["c1", "c2", "c3", "concentration"]
    for s in range(k):
        table = np.column_stack([inst.compositions, conc[s]])
        write_csv(out / f"phase_{s}.csv", table, header=header)
    report = {
        "objective": res.model.objective,
        "iterations": res.model.iteration,
        "status": res.status,
        "feasibility_residual": resid,
        "Q": cfg.Q,
        "gamma": cfg.gamma,
        "connectivity": args.connectivity,
        "combifd": _phase_report(conc, inst, args.M),
        "wall_time": time.monotonic() - t0,
    }
    if inst.truth is not None:
        nmf = nmf_multiplicative(inst.signals, k, iters=1000, seed=args.seed)
        report["nmf"] = _phase_report(nmf.H, inst, args.M)
        report["accuracy_soft"] = {"combifd": report["combifd"]["accuracy_soft"],
                                   "nmf": report["nmf"]["accuracy_soft"]}
    _write_report(out, report)
    msg = f"objective={report['objective']:.6g} iterations={report['iterations']}"
    if "accuracy_soft" in report:
        acc = report["accuracy_soft"]
        msg += f" accuracy_soft combifd={acc['combifd']:.3f} nmf={acc['nmf']:.3f}"
    print(msg)
    return EXIT_OK


# ---------------------------------------------------------------- gen, verify

def cmd_gen(args) -> int:
    out = _outdir(args)
    if args.kind == "clusters":
        a, labels = synthetic_clusters(args.seed, args.n or 60, args.m or 4, args.k or 3)
        write_csv(out / "data.csv", a)
        write_csv(out / "labels.csv", labels[:, None].astype(float))
        print(out / "data.csv")
        return EXIT_OK
    inst = gen_synthetic(args.seed, n=args.n, m=args.m or 650, k_true=args.phases, M=args.M,
                         noise=args.noise)
    path = save_instance(inst, out / "instance.json")
    print(path)
    return EXIT_OK


def cmd_verify(args) -> int:
    d = Path(args.dir)
    need = ["constraints.json", "W.csv", "H.csv", "solution.json"]
    missing = [f for f in need if not (d / f).exists()]
    if missing:
        raise InputError(f"{d}: missing {', '.join(missing)}")
    sys_ = load_json(d / "constraints.json")
    sol = json.loads((d / "solution.json").read_text())
    v = sys_.dims.flatten(read_csv(d / "W.csv"), read_csv(d / "H.csv"),
                          np.asarray(sol["x"], float), np.asarray(sol["b"], float))
    viol = validate(sys_, v, tol=args.tol)
    if viol:
        for item in viol[:20]:
            print(f"violated {item.kind} {item.index}: {item.amount:.3g}")
        print(f"{len(viol)} violations")
        return EXIT_INFEASIBLE
    print("ok")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _shared() -> argparse.ArgumentParser:
    # built per subcommand: set_defaults on a child mutates the parent's actions
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("solver")
    g.add_argument("--k", type=int, default=None, help="rank (number of patterns or clusters)")
    g.add_argument("--p", type=int, choices=(1, 2), default=2, help="norm of the residual")
    g.add_argument("--iters", type=int, default=20, help="maximum alternating sweeps")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rel-tol", type=float, default=1e-5, help="stop below this relative gain")
    g.add_argument("--node-limit", type=int, default=None, help="branch-and-bound nodes per step")
    g.add_argument("--time-limit", type=float, default=None, help="seconds per step")
    g.add_argument("--improve-only", action="store_true",
                   help="stop each step at the first improving point")
    g.add_argument("--deterministic", action="store_true",
                   help="ignore wall-clock limits so reruns are identical")
    g.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    g.add_argument("--init", choices=("perturb", "data", "nmf"), default=None,
                   help="starting point strategy")
    g.add_argument("--out", default="out", help="output directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="combifd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("factorize", parents=[_shared()], help="factorize a matrix CSV")
    f.add_argument("data", nargs="?", help="m x n matrix CSV")
    f.add_argument("--constraints", help="constraint JSON file")
    f.add_argument("--example", action="store_true", help="use the bundled tiny dataset")
    f.add_argument("--baseline", choices=("nmf",), default=None)
    f.set_defaults(func=cmd_factorize)

    c = sub.add_parser("cluster", parents=[_shared()], help="semi-supervised clustering")
    c.add_argument("data", nargs="?", help="m x n matrix CSV, one column per point")
    c.add_argument("--ml", help="CSV of must-link index pairs")
    c.add_argument("--cl", help="CSV of cannot-link index pairs")
    c.add_argument("--labels", help="CSV of true labels, one per point")
    c.add_argument("--supervision-sweep", help="comma separated pair counts, e.g. 0,50,100")
    c.add_argument("--runs", type=int, default=20, help="seeds per sweep level")
    c.add_argument("--gen", action="store_true", help="use a generated labeled dataset")
    c.add_argument("--gen-n", type=int, default=60)
    c.add_argument("--gen-m", type=int, default=4)
    c.set_defaults(func=cmd_cluster, k=3)

    ph = sub.add_parser("phasemap", parents=[_shared()], help="phase mapping of a composition spread")
    ph.add_argument("instance", nargs="?", help="instance JSON")
    ph.add_argument("--gen", action="store_true", help="generate an instance, then solve it")
    ph.add_argument("--phases", type=int, default=6)
    ph.add_argument("--M", type=int, default=3, help="maximum coexisting phases")
    ph.add_argument("--Q", type=int, default=None, help="shifted copies per phase")
    ph.add_argument("--gamma", type=float, default=None, help="stretch step between copies")
    ph.add_argument("--connectivity", choices=("collinear", "flow", "none"), default="collinear")
    ph.add_argument("--n", type=int, default=None)
    ph.add_argument("--m", type=int, default=650)
    ph.add_argument("--noise", type=float, default=0.0)
    ph.set_defaults(func=cmd_phasemap, node_limit=200, time_limit=60.0)

    g = sub.add_parser("gen", parents=[_shared()], help="write a synthetic instance")
    g.add_argument("--kind", choices=("phasemap", "clusters"), default="phasemap")
    g.add_argument("--phases", type=int, default=6)
    g.add_argument("--M", type=int, default=3)
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--m", type=int, default=None)
    g.add_argument("--noise", type=float, default=0.0)
    g.set_defaults(func=cmd_gen)

    v = sub.add_parser("verify", help="re-validate a solution directory")
    v.add_argument("dir")
    v.add_argument("--tol", type=float, default=1e-6)
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleSystemError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        cert = getattr(exc, "certificate", None)
        if cert:
            print(f"certificate: {json.dumps(cert, default=str)[:2000]}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NoIncumbentError as exc:
        print(f"no incumbent: {exc}", file=sys.stderr)
        return EXIT_NO_INCUMBENT
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
