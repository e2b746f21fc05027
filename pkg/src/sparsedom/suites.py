"""Reproducible experiment suites with CSV artifacts and failure witnesses.

Each suite draws its instances from a single seed, split per instance by
counter-based derivation (seed sequence spawn keys), so instance i can be
regenerated in isolation.  Rows are buffered and written in instance order
regardless of worker completion order, making output byte-identical for a
fixed (config, seed) on one platform.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
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
from .operators import (
    CarlesonFamily,
    SignSequence,
    check_sparse,
    maximal_truncation,
    paraproduct,
    weak_l1_ratio,
)
from .tree import CellFunction, random_tree
from .weights import sharpness_sweep

__all__ = [
    "ExperimentConfig",
    "SuiteSummary",
    "run_suite",
    "instance_rng",
    "random_instance",
    "replay_witness",
]

SUITES = ("domination", "truncation", "paraproduct", "weights-sweep", "euclid")
_SUITE_IDS = {name: i for i, name in enumerate(SUITES)}


@dataclass
class ExperimentConfig:
    suite: str = "domination"
    seed: int = 0
    instances: int = 100
    # random tree parameters (martingale suites)
    max_depth: int = 10
    max_branching: int = 4
    stop_prob: float = 0.1
    leaf_budget: int = 2048
    # weights sweep grids
    depths: list[int] = field(default_factory=lambda: list(range(8, 15)))
    alphas: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5])
    eps_rule: str = "alternating"
    p: float = 2.0
    # lattice suite
    lattice_k: int = 12
    kernel: str = "hilbert"

    def validate(self) -> None:
        if self.suite not in SUITES:
            raise ValueError(f"unknown suite {self.suite!r}; choose from {SUITES}")
        if self.instances < 1:
            raise ValueError("instances must be >= 1")
        if self.max_depth < 1 or self.max_branching < 2:
            raise ValueError("tree grids must allow depth >= 1 and branching >= 2")
        if not (0.0 <= self.stop_prob < 1.0):
            raise ValueError("stop_prob must lie in [0, 1)")
        if self.suite == "weights-sweep":
            if not self.depths or not self.alphas:
                raise ValueError("weights-sweep needs nonempty depth and alpha grids")
            if self.p <= 1:
                raise ValueError("p must exceed 1")
            if self.eps_rule not in ("all-ones", "alternating", "random"):
                raise ValueError(f"unknown eps rule {self.eps_rule!r}")
        if self.suite == "euclid":
            if self.lattice_k < 5:
                raise ValueError("lattice resolution exponent must be >= 5")
            if self.kernel not in ("hilbert", "lipschitz"):
                raise ValueError("suite kernels: hilbert or lipschitz")

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError(f"config {path} must be a mapping")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SuiteSummary:
    suite: str
    seed: int
    instances: int
    all_ok: bool
    max_constant: float
    max_verify_constant: float
    max_weak_l1: float
    max_sparse_ratio: float
    extra: dict = field(default_factory=dict)
    failures: list[int] = field(default_factory=list)


def instance_rng(seed: int, suite: str, i: int) -> np.random.Generator:
    """Counter-derived stream: instance i is reproducible in isolation."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_SUITE_IDS[suite], i))
    return np.random.default_rng(ss)


def random_instance(rng: np.random.Generator, cfg: ExperimentConfig):
    """One random (tree, f, eps) triple; f mixes diffuse and spiky shapes."""
    depth = int(rng.integers(2, cfg.max_depth + 1))
    tree = random_tree(
        rng,
        max_depth=depth,
        max_branching=cfg.max_branching,
        stop_prob=cfg.stop_prob,
        leaf_budget=cfg.leaf_budget,
    )
    style = rng.integers(0, 3)
    if style == 0:
        vals = rng.standard_normal(tree.n_leaves)
    elif style == 1:
        vals = rng.uniform(-1.0, 1.0, tree.n_leaves)
    else:
        vals = np.zeros(tree.n_leaves)
        hits = rng.integers(1, 4)
        for _ in range(hits):
            vals[rng.integers(0, tree.n_leaves)] += rng.choice([-1.0, 1.0]) * rng.uniform(1, 50)
    if not np.any(vals):
        vals[0] = 1.0
    f = CellFunction(tree, vals)
    eps = SignSequence.random_signs(tree, rng)
    return tree, f, eps


# ---------------------------------------------------------------------------
# per-instance workers
# ---------------------------------------------------------------------------

def _martingale_instance(args) -> dict:
    cfg_dict, suite, i = args
    cfg = ExperimentConfig(**cfg_dict)
    rng = instance_rng(cfg.seed, suite, i)
    tree, f, eps = random_instance(rng, cfg)

    fam = None
    if suite == "paraproduct":
        fam = CarlesonFamily.random(tree, rng)
        res = dominate_paraproduct(fam, f, 0)
        lhs = abs(local_paraproduct(fam, f, 0))
        pf = paraproduct(fam, f)
        l2f = f.norm_l2()
        embed = pf.norm_l2() / l2f if l2f > 0 else 0.0
        weak = weak_l1_ratio(abs(pf), f)
    else:
        if suite == "truncation":
            res = dominate_truncation(eps, f, 0)
            lhs = local_truncation(eps, f, 0)
        else:
            res = dominate(eps, f, 0)
            lhs = abs(local_transform(eps, f, 0))
        embed = 0.0
        weak = weak_l1_ratio(maximal_truncation(eps, f), f)

    sparse_rep = check_sparse(res.sparse)
    ver = verify_domination(lhs, res.sparse, f, 0)
    ok = bool(sparse_rep.valid and ver.ok and ver.C_needed <= res.constant + 1e-9)
    row = {
        "instance": i,
        "depth": tree.max_level,
        "leaves": tree.n_leaves,
        "members": res.node_count,
        "constant": res.constant,
        "verify_constant": ver.C_needed,
        "sparse_ratio": sparse_rep.worst_ratio,
        "weak_l1": weak,
        "embed_l2": embed,
        "ok": ok,
    }
    if not ok:
        row["witness"] = {
            "tree": tree.to_serializable(),
            "f": list(map(float, f.values)),
            "eps": {tree.ids[j]: float(eps.eps[j]) for j in tree.internal_nodes},
            "suite": suite,
        }
        if fam is not None:
            row["witness"]["carleson"] = {
                tree.ids[q]: [float(x) for x in c] for q, c in fam.coefficients.items()
            }
    return row


def _euclid_instance(args) -> dict:
    cfg_dict, suite, i = args
    cfg = ExperimentConfig(**cfg_dict)
    rng = instance_rng(cfg.seed, suite, i)
    lat = eu.Lattice(d=1, k=cfg.lattice_k)
    K = eu.hilbert_kernel() if cfg.kernel == "hilbert" else eu.lipschitz_kernel()

    f = np.zeros(lat.shape)
    n = lat.n
    a = int(rng.integers(n // 4, n // 2))
    b = int(rng.integers(a + 8, min(a + n // 3, 3 * n // 4)))
    style = rng.integers(0, 3)
    if style == 0:
        f[a:b] = rng.standard_normal(b - a)
    elif style == 1:
        f[a:b] = 1.0
    else:
        f[a:b] = rng.uniform(-1, 1, b - a)
        for _ in range(int(rng.integers(1, 4))):
            f[int(rng.integers(a, b))] += float(rng.choice([-1.0, 1.0])) * 40.0

    res = eu.dominate_euclid(K, f, lat.domain_cube(), lat)
    reports = {u: eu.check_sparse_cubes(c) for u, c in res.collections.items()}
    worst = max((r.worst_ratio for r in reports.values()), default=0.0)
    ok = bool(res.verify_ok and all(r.valid for r in reports.values()))
    row = {
        "instance": i,
        "cells": lat.n,
        "members": res.n_members,
        "grids": len(res.collections),
        "constant": res.constant,
        "verify_constant": res.constant,
        "sparse_ratio": worst,
        "weak_l1": res.weak_l1,
        "exterior": res.exterior_constant,
        "ok": ok,
    }
    if not ok:
        row["witness"] = {"f": list(map(float, f)), "k": cfg.lattice_k, "kernel": cfg.kernel}
    return row


def replay_witness(path: str | Path) -> dict:
    """Re-run a dumped failure witness and return its certification row.

    Witnesses carry the materialized instance, not its random seed, so the
    replay is independent of the suite that produced it.
    """
    data = json.loads(Path(path).read_text())
    if "k" in data:  # lattice witness
        lat = eu.Lattice(d=1, k=int(data["k"]))
        K = eu.hilbert_kernel() if data["kernel"] == "hilbert" else eu.lipschitz_kernel()
        f = np.asarray(data["f"], dtype=float).reshape(lat.shape)
        res = eu.dominate_euclid(K, f, lat.domain_cube(), lat)
        reports = [eu.check_sparse_cubes(c) for c in res.collections.values()]
        return {
            "ok": bool(res.verify_ok and all(r.valid for r in reports)),
            "constant": res.constant,
            "sparse_ratio": max((r.worst_ratio for r in reports), default=0.0),
        }

    from .tree import MeasureTree

    tree = MeasureTree.from_serializable(data["tree"])
    f = CellFunction(tree, np.asarray(data["f"], dtype=float))
    eps_vec = np.zeros(tree.n_nodes)
    for nid, val in data["eps"].items():
        eps_vec[tree.node(nid)] = val
    eps = SignSequence(tree, eps_vec)
    suite = data["suite"]
    if suite == "paraproduct":
        fam = CarlesonFamily(
            tree,
            {tree.node(nid): np.asarray(c, dtype=float) for nid, c in data["carleson"].items()},
            validate_norm=False,
        )
        res = dominate_paraproduct(fam, f, 0)
        lhs = abs(local_paraproduct(fam, f, 0))
    elif suite == "truncation":
        res = dominate_truncation(eps, f, 0)
        lhs = local_truncation(eps, f, 0)
    else:
        res = dominate(eps, f, 0)
        lhs = abs(local_transform(eps, f, 0))
    rep = check_sparse(res.sparse)
    ver = verify_domination(lhs, res.sparse, f, 0)
    return {
        "ok": bool(rep.valid and ver.ok and ver.C_needed <= res.constant + 1e-9),
        "constant": ver.C_needed,
        "sparse_ratio": rep.worst_ratio,
    }


# ---------------------------------------------------------------------------
# suite driver
# ---------------------------------------------------------------------------

def _format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(row[h]) for h in header) + "\n")


def run_suite(cfg: ExperimentConfig, out_dir: str | Path, jobs: int = 1, plots: bool = True) -> SuiteSummary:
    """Execute a suite, writing rows.csv, summary.csv, plot data and figures.

    The config is validated before anything is written; certification
    failures dump a replayable witness per failing instance.
    """
    cfg.validate()
    out = Path(out_dir)

    if cfg.suite == "weights-sweep":
        return _run_sweep(cfg, out, plots)

    worker = _euclid_instance if cfg.suite == "euclid" else _martingale_instance
    args = [(asdict(cfg), cfg.suite, i) for i in range(cfg.instances)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(worker, args, chunksize=1))
    else:
        rows = [worker(a) for a in args]
    rows.sort(key=lambda r: r["instance"])

    out.mkdir(parents=True, exist_ok=True)
    witnesses = []
    for row in rows:
        w = row.pop("witness", None)
        if w is not None:
            wdir = out / f"witness_{cfg.suite}_{row['instance']}"
            wdir.mkdir(parents=True, exist_ok=True)
            (wdir / "witness.json").write_text(json.dumps(w, indent=1))
            witnesses.append(row["instance"])

    header = [h for h in rows[0].keys()]
    _write_csv(out / "rows.csv", header, rows)

    summary = SuiteSummary(
        suite=cfg.suite,
        seed=cfg.seed,
        instances=cfg.instances,
        all_ok=all(r["ok"] for r in rows),
        max_constant=max(r["constant"] for r in rows),
        max_verify_constant=max(r["verify_constant"] for r in rows),
        max_weak_l1=max(r["weak_l1"] for r in rows),
        max_sparse_ratio=max(r["sparse_ratio"] for r in rows),
        failures=witnesses,
    )
    if cfg.suite == "paraproduct":
        summary.extra["max_embed_l2"] = max(r["embed_l2"] for r in rows)
    _write_summary(out / "summary.csv", summary)

    if plots:
        from .report import plot_suite

        plot_suite(out, cfg.suite, rows)
    return summary


def _run_sweep(cfg: ExperimentConfig, out: Path, plots: bool) -> SuiteSummary:
    res = sharpness_sweep(
        list(cfg.depths), list(cfg.alphas), cfg.eps_rule, p=cfg.p, seed=cfg.seed
    )
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        {
            "alpha": r.alpha,
            "depth": r.depth,
            "ap_char": r.ap_char,
            "norm": r.norm,
            "ratio": r.ratio,
            "argmax_node": r.argmax_node,
        }
        for r in res.rows
    ]
    _write_csv(out / "sweep.csv", ["alpha", "depth", "ap_char", "norm", "ratio", "argmax_node"], rows)
    with open(out / "sweep_norm_vs_char.dat", "w") as fh:
        for r in res.rows:
            fh.write(f"{r.ap_char!r} {r.norm!r}\n")

    summary = SuiteSummary(
        suite=cfg.suite,
        seed=cfg.seed,
        instances=len(rows),
        all_ok=True,
        max_constant=res.max_ratio,
        max_verify_constant=res.max_ratio,
        max_weak_l1=0.0,
        max_sparse_ratio=0.0,
        extra={"slope": res.slope, "critical_slope": res.critical_slope},
    )
    _write_summary(out / "summary.csv", summary)
    if plots:
        from .report import plot_sweep

        plot_sweep(out, res)
    return summary


def _write_summary(path: Path, s: SuiteSummary) -> None:
    cols = [
        ("suite", s.suite),
        ("seed", s.seed),
        ("instances", s.instances),
        ("all_ok", s.all_ok),
        ("max_constant", s.max_constant),
        ("max_verify_constant", s.max_verify_constant),
        ("max_weak_l1", s.max_weak_l1),
        ("max_sparse_ratio", s.max_sparse_ratio),
    ] + sorted(s.extra.items())
    with open(path, "w") as fh:
        fh.write(",".join(k for k, _ in cols) + "\n")
        fh.write(",".join(_format_cell(v) for _, v in cols) + "\n")
