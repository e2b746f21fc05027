"""Command line interface.

Subcommands: ``dominate`` (one certified domination run from files),
``weights-sweep`` (norm versus characteristic table), ``euclid-demo``
(lattice domination with per-grid collections), ``suite`` (random
certification suites).  Exit codes: 0 certified / success, 1 verification
failure, 2 bad input.
"""
from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import euclid as eu
from .domination import (
    dominate,
    dominate_paraproduct,
    dominate_truncation,
    local_paraproduct,
    local_transform,
    local_truncation,
    verify_domination,
)
from .operators import CarlesonFamily, SignSequence, check_sparse
from .suites import ExperimentConfig, run_suite
from .tree import CellFunction, TreeSpec, build_tree

EXIT_OK = 0
EXIT_CERTIFICATION = 1
EXIT_BAD_INPUT = 2


def _parse_args(argv):
    top = argparse.ArgumentParser(prog="sparsedom", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--no-plot", action="store_true", help="skip figure rendering")

    d = sub.add_parser("dominate", help="certify sparse domination for one instance")
    d.add_argument("--tree", required=True, help="tree spec file (json/yaml)")
    d.add_argument("--f", required=True, help="cell function csv (leaf_id,value)")
    d.add_argument("--eps", help="multiplier csv (node_id,eps)")
    d.add_argument("--truncation", action="store_true", help="dominate the maximal truncation")
    d.add_argument("--paraproduct", metavar="B_DIR", help="directory of <node_id>.csv coefficient functions")
    d.add_argument("--base", default="r", help="base cell id (default: root)")
    d.add_argument("--out", required=True, help="output json path")
    common(d)

    w = sub.add_parser("weights-sweep", help="weighted norm vs characteristic sweep")
    w.add_argument("--p", type=float, default=2.0)
    w.add_argument("--alphas", default="0,0.25,0.5,0.75,1.0,1.25,1.5")
    w.add_argument("--depths", default="8,9,10,11,12,13,14")
    w.add_argument("--eps-rule", default="alternating", choices=["all-ones", "alternating", "random"])
    w.add_argument("--out", required=True, help="output csv path")
    common(w)

    e = sub.add_parser("euclid-demo", help="lattice domination with shifted-grid collections")
    e.add_argument("--d", type=int, default=1)
    e.add_argument("--k", type=int, default=12, help="cells per axis = 2^k")
    e.add_argument("--kernel", default="hilbert", choices=["hilbert", "lipschitz", "custom"])
    e.add_argument("--kernel-expr", help="numpy expression in z for a custom displacement profile")
    e.add_argument("--omega", help="two-column modulus table file (t omega) for a custom kernel")
    e.add_argument("--f", required=True, help="lattice function csv (cell,value)")
    e.add_argument("--base", help="base cube 'lo,side' as exact fractions (default: unit cube)")
    e.add_argument("--out", required=True, help="output directory")
    common(e)

    s = sub.add_parser("suite", help="random certification suites")
    s.add_argument("--config", help="config file (json/yaml)")
    s.add_argument("--suite", help="suite name (overrides config)")
    s.add_argument("--instances", type=int, help="instance count (overrides config)")
    s.add_argument("--out", required=True, help="output directory")
    common(s)

    return top.parse_args(argv)


# ---------------------------------------------------------------------------
# dominate
# ---------------------------------------------------------------------------

def _load_carleson(tree, b_dir: str) -> CarlesonFamily:
    path = Path(b_dir)
    if not path.is_dir():
        raise ValueError(f"{b_dir} is not a directory")
    funcs = {}
    for fp in sorted(path.glob("*.csv")):
        node_id = fp.stem
        funcs[node_id] = CellFunction.from_csv(tree, fp)
    if not funcs:
        raise ValueError(f"no coefficient csv files in {b_dir}")
    return CarlesonFamily.from_cell_functions(tree, funcs)


def _cmd_dominate(args) -> int:
    tree = build_tree(TreeSpec.from_file(args.tree))
    f = CellFunction.from_csv(tree, args.f)
    base = tree.node(args.base)

    if args.paraproduct:
        fam = _load_carleson(tree, args.paraproduct)
        res = dominate_paraproduct(fam, f, base)
        lhs = abs(local_paraproduct(fam, f, base))
        mode = "paraproduct"
    else:
        if not args.eps:
            raise ValueError("--eps is required unless --paraproduct is given")
        eps = SignSequence.from_csv(tree, args.eps)
        if args.truncation:
            res = dominate_truncation(eps, f, base)
            lhs = local_truncation(eps, f, base)
            mode = "truncation"
        else:
            res = dominate(eps, f, base)
            lhs = abs(local_transform(eps, f, base))
            mode = "transform"

    sparse_rep = check_sparse(res.sparse)
    ver = verify_domination(lhs, res.sparse, f, base)
    ok = bool(sparse_rep.valid and ver.ok and ver.C_needed <= res.constant + 1e-9)

    out = {
        "mode": mode,
        "base": tree.ids[base],
        "members": res.sparse.member_ids(),
        "constant": res.constant,
        "verify_constant": ver.C_needed,
        "sparse_ratio": sparse_rep.worst_ratio,
        "sparse_valid": sparse_rep.valid,
        "verify_ok": ver.ok,
        "certified": ok,
        "recursion_depth": res.recursion_depth,
        "levels": {
            nid: {"threshold": ls.threshold, "exceptional_fraction": ls.exceptional_fraction}
            for nid, ls in res.levels.items()
        },
    }
    Path(args.out).write_text(json.dumps(out, indent=1) + "\n")
    print(f"{mode}: members={len(out['members'])} C={res.constant:.6g} "
          f"needed={ver.C_needed:.6g} sparse_ratio={sparse_rep.worst_ratio:.6g} certified={ok}")
    return EXIT_OK if ok else EXIT_CERTIFICATION


# ---------------------------------------------------------------------------
# weights sweep
# ---------------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _cmd_sweep(args) -> int:
    cfg = ExperimentConfig(
        suite="weights-sweep",
        seed=args.seed,
        depths=_ints(args.depths),
        alphas=_floats(args.alphas),
        eps_rule=args.eps_rule,
        p=args.p,
    )
    out_path = Path(args.out)
    out_dir = out_path.parent if out_path.suffix else out_path
    summary = run_suite(cfg, out_dir, jobs=args.jobs, plots=not args.no_plot)
    if out_path.suffix and (out_dir / "sweep.csv") != out_path:
        (out_dir / "sweep.csv").replace(out_path)
    print(
        f"sweep: cells={summary.instances} max_ratio={summary.max_constant:.4g} "
        f"slope={summary.extra['slope']:.4g} critical_slope={summary.extra['critical_slope']:.4g}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# euclid demo
# ---------------------------------------------------------------------------

def _load_lattice_csv(lat: eu.Lattice, path: str) -> np.ndarray:
    flat = np.zeros(lat.n**lat.d)
    seen = np.zeros(lat.n**lat.d, dtype=bool)
    with open(path) as fh:
        header = fh.readline().strip().replace(" ", "")
        if header != "cell,value":
            raise ValueError(f"{path}: expected header 'cell,value'")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cell, _, val = line.partition(",")
            i = int(cell)
            if not 0 <= i < flat.size:
                raise ValueError(f"{path}: cell index {i} out of range")
            flat[i] = float(val)
            seen[i] = True
    return flat.reshape(lat.shape)


def _load_omega_table(path: str):
    pts = []
    for line in Path(path).read_text().splitlines():
        line = line.strip().replace(",", " ")
        if not line or line.startswith("#"):
            continue
        t, v = line.split()[:2]
        pts.append((float(t), float(v)))
    if len(pts) < 2:
        raise ValueError(f"{path}: need at least two (t, omega) samples")
    pts.sort()
    ts = np.array([p[0] for p in pts])
    vs = np.array([p[1] for p in pts])
    if np.any(np.diff(vs) < 0):
        raise ValueError(f"{path}: modulus table must be nondecreasing")

    def omega(t):
        return np.interp(np.asarray(t, dtype=float), ts, vs)

    return omega


def _make_kernel(args) -> eu.DiniKernel:
    if args.kernel == "hilbert":
        return eu.hilbert_kernel()
    if args.kernel == "lipschitz":
        return eu.lipschitz_kernel()
    if not args.kernel_expr or not args.omega:
        raise ValueError("custom kernels need --kernel-expr and --omega")
    if args.d != 1:
        raise ValueError("custom kernel expressions are one-dimensional (in z)")
    expr = compile(args.kernel_expr, "<kernel-expr>", "eval")

    def profile(z):
        z = np.asarray(z, dtype=float)
        safe = np.where(z != 0.0, z, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = eval(expr, {"__builtins__": {}}, {"z": safe, "np": np, "abs": np.abs, "sign": np.sign})
        return np.where(z != 0.0, vals, 0.0)

    return eu.DiniKernel(
        d=1, modulus=_load_omega_table(args.omega), profile=profile, name="custom"
    )


def _parse_base(text: str, d: int):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != d + 1:
        raise ValueError(f"--base needs {d} coordinates and a side, e.g. '1/4,1/2'")
    lo = tuple(Fraction(p) for p in parts[:d])
    return lo, Fraction(parts[d])


def _cmd_euclid(args) -> int:
    lat = eu.Lattice(d=args.d, k=args.k)
    K = _make_kernel(args)
    f = _load_lattice_csv(lat, args.f)
    if args.base:
        lo, side = _parse_base(args.base, args.d)
        base = eu.cover_cube(lo, side)
    else:
        base = lat.domain_cube()

    res = eu.dominate_euclid(K, f, base, lat)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    reports = {}
    for u, cubes in res.collections.items():
        label = "".join(map(str, u))
        with open(out / f"sparse_u{label}.csv", "w") as fh:
            axes_lo = ",".join(f"lo_{i}" for i in range(args.d))
            axes_hi = ",".join(f"hi_{i}" for i in range(args.d))
            fh.write(f"u,scale_j,{axes_lo},{axes_hi},side\n")
            for q in cubes:
                los = ",".join(repr(float(q.lo(i))) for i in range(args.d))
                his = ",".join(repr(float(q.hi(i))) for i in range(args.d))
                fh.write(f"{label},{q.j},{los},{his},{float(q.side)!r}\n")
        reports[u] = eu.check_sparse_cubes(cubes)

    worst = max((r.worst_ratio for r in reports.values()), default=0.0)
    ok = bool(res.verify_ok and all(r.valid for r in reports.values()))
    with open(out / "summary.csv", "w") as fh:
        fh.write("constant,verify_ok,grids,members,max_sparse_ratio,weak_l1,exterior,certified\n")
        fh.write(
            f"{float(res.constant)!r},{str(res.verify_ok).lower()},{len(res.collections)},"
            f"{res.n_members},{float(worst)!r},{float(res.weak_l1)!r},{float(res.exterior_constant)!r},"
            f"{str(ok).lower()}\n"
        )

    lhs = eu.adapted_truncation(K, f, base, lat)
    rhs = np.zeros(lat.shape)
    absf = np.abs(f)
    for q in res.all_members():
        win = [lat.cell_window(q.lo(i), q.hi(i)) for i in range(lat.d)]
        if any(a >= b for a, b in win):
            continue
        sl = tuple(slice(a, b) for a, b in win)
        rhs[sl] += float(np.sum(absf[sl])) * lat.cell_measure / float(q.measure)

    if args.d == 1:
        x = lat.centers()
        with open(out / "truncation.dat", "w") as fh:
            for xi, vi in zip(x, lhs):
                fh.write(f"{float(xi)!r} {float(vi)!r}\n")
        with open(out / "sparse_sum.dat", "w") as fh:
            for xi, vi in zip(x, rhs):
                fh.write(f"{float(xi)!r} {float(vi)!r}\n")
        if not args.no_plot:
            from .report import plot_euclid_demo

            plot_euclid_demo(out, lat, f, lhs, rhs, res.constant, res.all_members())

    print(
        f"euclid: grids={len(res.collections)} members={res.n_members} C={res.constant:.6g} "
        f"sparse_ratio={worst:.4g} weak_l1={res.weak_l1:.4g} certified={ok}"
    )
    return EXIT_OK if ok else EXIT_CERTIFICATION


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def _cmd_suite(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig()
    if args.suite:
        cfg.suite = args.suite
    if args.instances is not None:
        cfg.instances = args.instances
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    summary = run_suite(cfg, args.out, jobs=args.jobs, plots=not args.no_plot)
    print(
        f"suite {summary.suite}: instances={summary.instances} all_ok={summary.all_ok} "
        f"max_C={summary.max_verify_constant:.6g} max_weak_l1={summary.max_weak_l1:.4g} "
        f"max_sparse_ratio={summary.max_sparse_ratio:.6g}"
        + "".join(f" {k}={v:.6g}" for k, v in sorted(summary.extra.items()))
    )
    return EXIT_OK if summary.all_ok else EXIT_CERTIFICATION


def main(argv=None) -> int:
    args = _parse_args(argv if argv is not None else sys.argv[1:])
    try:
        if args.command == "dominate":
            return _cmd_dominate(args)
        if args.command == "weights-sweep":
            return _cmd_sweep(args)
        if args.command == "euclid-demo":
            return _cmd_euclid(args)
        if args.command == "suite":
            return _cmd_suite(args)
        raise ValueError(f"unknown command {args.command!r}")
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
