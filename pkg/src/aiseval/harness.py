"""Experiment driver: synthetic pools, simulated oracles, method grids.

Everything here is deterministic given the config: repeat r always runs with
seed base_seed + r, stochastic oracles get their own offset stream, and the
bootstrap uses a seed derived from base_seed, so the same config produces
byte-identical output files.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .measures import Measure, measure_from_spec
from .partition import PartitionTree, grid_block_edges, stratify_pool
from .pool import TestPool
from .proposals import DegenerateProposalError, MeasureBinding, optimal_proposal
from .sampler import (RunConfig, pool_exact_measure, run_ais,
                      stratified_estimate)

__all__ = [
    "SyntheticPoolSpec",
    "ExperimentConfig",
    "DeterministicOracle",
    "StochasticLabelOracle",
    "simulate_oracle",
    "generate_synthetic_pool",
    "run_experiment",
    "export_results",
    "METHODS",
]

METHODS = ("ours-hierarchical", "ours-flat", "static-is", "passive", "stratified")


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

class DeterministicOracle:
    """Answers from stored labels; charges budget once per distinct item."""

    kind = "det"

    def __init__(self, labels: np.ndarray):
        self.labels = np.asarray(labels)
        self.observed = np.zeros(self.labels.shape[0], dtype=bool)
        self.budget_consumed = 0

    def query(self, item: int):
        if not self.observed[item]:
            self.observed[item] = True
            self.budget_consumed += 1
        return self.labels[item].item()

    def preload(self, items: np.ndarray, labels: np.ndarray) -> None:
        """Mark items as already charged (used when resuming a run)."""
        self.observed[np.asarray(items, dtype=np.int64)] = True
        self.budget_consumed = int(self.observed.sum())


class StochasticLabelOracle:
    """Draws a fresh label from each item's pmf; every query costs budget."""

    kind = "stoch"

    def __init__(self, pmf: np.ndarray, seed: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None):
        self.pmf = np.asarray(pmf, dtype=np.float64)
        if (self.pmf.ndim != 2 or (self.pmf < 0.0).any()
                or not np.allclose(self.pmf.sum(axis=1), 1.0, atol=1e-9)):
            raise ValueError("stochastic oracle needs an (M, C) row-stochastic pmf")
        self._cum = np.cumsum(self.pmf, axis=1)
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.budget_consumed = 0

    def query(self, item: int) -> int:
        self.budget_consumed += 1
        u = self.rng.random()
        return int(np.searchsorted(self._cum[item], u))


def simulate_oracle(pool: TestPool, stochastic_pmf: Optional[np.ndarray] = None,
                    seed: Optional[int] = None):
    """Build the simulated label source for an experiment pool."""
    if stochastic_pmf is not None:
        return StochasticLabelOracle(stochastic_pmf, seed=seed)
    if pool.true_labels is None:
        raise ValueError(f"pool {pool.name!r} has no labels to simulate an oracle from")
    bad = np.nonzero(pool.true_labels < 0)[0]
    if bad.size:
        raise ValueError(f"item {pool.item_ids[bad[0]]!r} has no label")
    return DeterministicOracle(pool.true_labels)


# ---------------------------------------------------------------------------
# Synthetic pools
# ---------------------------------------------------------------------------

@dataclass
class SyntheticPoolSpec:
    """Binary pool recipe: class rate 1/(1+imbalance), scores from a logit
    whose separation grows with ``quality`` (inf -> one-hot scores)."""

    M: int
    imbalance: float = 1.0
    quality: float = 2.0
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if self.imbalance <= 0:
            raise ValueError("imbalance ratio must be positive")

    def to_dict(self) -> dict:
        return {"M": self.M, "imbalance": self.imbalance, "quality": self.quality,
                "seed": self.seed, "name": self.name}

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticPoolSpec":
        return cls(**doc)


def generate_synthetic_pool(spec: SyntheticPoolSpec) -> TestPool:
    rng = np.random.default_rng(spec.seed)
    p_pos = 1.0 / (1.0 + spec.imbalance)
    y = (rng.random(spec.M) < p_pos).astype(np.int64)
    noise = rng.standard_normal(spec.M)
    if np.isinf(spec.quality):
        s1 = y.astype(np.float64)
    else:
        z = spec.quality * (2.0 * y - 1.0) + noise
        s1 = 1.0 / (1.0 + np.exp(-z))
    scores = np.stack([1.0 - s1, s1], axis=1)
    ids = [f"item-{i:06d}" for i in range(spec.M)]
    return TestPool(item_ids=ids, scores=scores, raw_scores=s1,
                    true_labels=y, name=spec.name)


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    measure: dict
    methods: list = field(default_factory=lambda: list(METHODS))
    pool_path: Optional[str] = None
    synthetic: Optional[SyntheticPoolSpec] = None
    K: int = 16
    branching: int = 2
    depth: int = 4
    epsilon0: float = 0.1
    delta: float = 0.2
    stage_size: int = 10
    budgets: list = field(default_factory=lambda: [100, 250, 500, 1000, 2000])
    repeats: int = 100
    base_seed: int = 0
    out_dir: str = "results"
    workers: int = 1
    bootstrap: int = 1000
    track_kl: bool = True

    def __post_init__(self):
        if isinstance(self.synthetic, dict):
            self.synthetic = SyntheticPoolSpec.from_dict(self.synthetic)
        if self.pool_path is None and self.synthetic is None:
            raise ValueError("config needs a pool path or a synthetic spec")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if list(self.budgets) != sorted(self.budgets):
            raise ValueError("budgets must be ascending")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; valid: {list(METHODS)}")
        if self.branching ** self.depth != self.K:
            raise ValueError(
                f"branching**depth must equal K ({self.branching}**{self.depth} != {self.K})")

    def to_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in (
            "measure", "methods", "pool_path", "K", "branching", "depth",
            "epsilon0", "delta", "stage_size", "budgets", "repeats",
            "base_seed", "out_dir", "workers", "bootstrap", "track_kl")}
        doc["synthetic"] = None if self.synthetic is None else self.synthetic.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if doc.get("synthetic") is not None:
            doc["synthetic"] = SyntheticPoolSpec.from_dict(doc["synthetic"])
        return cls(**doc)


def _experiment_pool(config: ExperimentConfig) -> TestPool:
    if config.synthetic is not None:
        return generate_synthetic_pool(config.synthetic)
    from .pool import load_pool_csv
    return load_pool_csv(config.pool_path)


def _method_tree(pool: TestPool, measure: Measure, method: str,
                 config: ExperimentConfig) -> Optional[PartitionTree]:
    """Partition for a method: CSF on scores normally, threshold-grid blocks
    for PR-curve measures (4 grid cells per block)."""
    if method in ("passive", "static-is"):
        return None
    if measure.name == "pr_curve":
        edges = grid_block_edges(np.asarray(measure.params["thresholds"]), 4)
        K = edges.shape[0] + 1
        if method == "ours-flat" or method == "stratified":
            branching, depth = K, 1
        else:
            depth = int(round(np.log2(K)))
            if 2 ** depth != K:
                raise ValueError("PR hierarchical partition needs a power-of-two block count")
            branching = 2
        return stratify_pool(pool, K, branching, depth, edges=edges)
    if method == "ours-hierarchical":
        return stratify_pool(pool, config.K, config.branching, config.depth)
    # flat variants: one level, branching = K
    return stratify_pool(pool, config.K, config.K, 1)


# ---------------------------------------------------------------------------
# The grid
# ---------------------------------------------------------------------------

def _sq_err(G_hat: np.ndarray, G_exact: np.ndarray) -> float:
    d = np.asarray(G_hat, dtype=np.float64) - G_exact
    return float(np.mean(d * d))


def _one_repeat(method: str, r: int, pool: TestPool, measure: Measure,
                tree: Optional[PartitionTree], config: ExperimentConfig,
                qstar: Optional[np.ndarray]) -> dict:
    seed = config.base_seed + r
    oracle = simulate_oracle(pool)
    max_budget = int(config.budgets[-1])
    out: dict = {"repeat": r, "G": {}, "kl": None, "undefined": {}}
    if method == "stratified":
        report = stratified_estimate(pool, tree, measure, oracle, max_budget,
                                     seed=seed, checkpoints=config.budgets)
        cps = report.checkpoints or {}
    else:
        run_cfg = RunConfig(
            stage_size=config.stage_size, budget=max_budget,
            epsilon0=config.epsilon0, delta=config.delta,
            adapt=method.startswith("ours"),
            initial={"passive": "uniform", "static-is": "scores"}.get(method, "model"),
            checkpoints=list(config.budgets),
            kl_reference=qstar if (method.startswith("ours") and config.track_kl) else None,
        )
        report, history = run_ais(pool, tree, measure, oracle,
                                  config=run_cfg, seed=seed)
        cps = report.checkpoints or {}
        if run_cfg.kl_reference is not None:
            out["kl"] = history.kl_trace
    for b in config.budgets:
        rep = cps.get(int(b))
        if rep is None:
            rep = report  # budget unreachable (pool smaller); use final
        out["G"][int(b)] = np.asarray(rep.G_hat, dtype=np.float64).tolist()
        out["undefined"][int(b)] = bool(rep.undefined)
    return out


def run_experiment(config: ExperimentConfig) -> dict:
    """Run the full method x budget x repeat grid.

    Returns a result document (plain dicts/lists, JSON-ready) with per-method
    MSE curves, bootstrap bands, failure counts, raw per-repeat estimates and
    KL traces for the adaptive methods.
    """
    pool = _experiment_pool(config)
    measure = measure_from_spec(config.measure, pool.predictions())
    G_exact, R_exact = _cached_exact(pool, measure, config.out_dir)

    qstar = None
    if config.track_kl and pool.true_labels is not None and measure.loss_table is not None:
        ref_tree = stratify_pool(pool, 1, 1, 0)
        binding = MeasureBinding(pool, ref_tree, measure)
        try:
            qstar = optimal_proposal(binding, pool.true_labels).probs
        except DegenerateProposalError:
            qstar = None   # no loss anywhere: KL reference is meaningless

    results: dict = {
        "schema": "experiment-result/1",
        "config": config.to_dict(),
        "exact_G": G_exact.tolist(),
        "exact_R": R_exact.tolist(),
        "methods": {},
    }
    boot_rng = np.random.default_rng(config.base_seed + 987654321)

    for method in config.methods:
        tree = _method_tree(pool, measure, method, config)
        repeats_out: list = [None] * config.repeats
        failures: list = []

        def job(r: int):
            try:
                return r, _one_repeat(method, r, pool, measure, tree, config, qstar), None
            except Exception as exc:   # recorded, never silently dropped
                return r, None, f"{type(exc).__name__}: {exc}"

        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as ex:
                for r, ok, err in ex.map(job, range(config.repeats)):
                    if err is None:
                        repeats_out[r] = ok
                    else:
                        failures.append({"repeat": r, "error": err})
        else:
            for r in range(config.repeats):
                _, ok, err = job(r)
                if err is None:
                    repeats_out[r] = ok
                else:
                    failures.append({"repeat": r, "error": err})

        good = [x for x in repeats_out if x is not None]
        curve = {}
        for b in config.budgets:
            errs = np.array([_sq_err(np.array(x["G"][int(b)]), G_exact) for x in good])
            mse = float(errs.mean()) if errs.size else float("nan")
            lo, hi = _bootstrap_band(errs, config.bootstrap, boot_rng)
            curve[int(b)] = {"mse": mse, "lo": lo, "hi": hi, "n": int(errs.size)}
        entry: dict = {
            "curve": curve,
            "failures": failures,
            "n_failures": len(failures),
            "repeats": good,
        }
        kl_traces = [x["kl"] for x in good if x.get("kl")]
        if kl_traces:
            entry["kl"] = _kl_summary(kl_traces, config.budgets)
        results["methods"][method] = entry
    return results


def _bootstrap_band(errs: np.ndarray, n_boot: int, rng: np.random.Generator):
    """95% percentile band for the mean squared error over repeats."""
    if errs.size == 0:
        return float("nan"), float("nan")
    if errs.size == 1 or n_boot < 1:
        v = float(errs.mean())
        return v, v
    means = rng.choice(errs, size=(n_boot, errs.size), replace=True).mean(axis=1)
    return float(np.percentile(means, 2.5)), float(np.percentile(means, 97.5))


def _kl_summary(kl_traces: list, budgets: list) -> dict:
    """Per-repeat stage-averaged KL up to each budget, plus the fraction of
    repeats where the average at the last budget beats the first budget."""
    first_b, last_b = int(budgets[0]), int(budgets[-1])

    def avg_upto(trace, b):
        vals = [t["kl"] for t in trace if t["budget"] <= b and np.isfinite(t["kl"])]
        return float(np.mean(vals)) if vals else float("nan")

    at_first = np.array([avg_upto(t, first_b) for t in kl_traces])
    at_last = np.array([avg_upto(t, last_b) for t in kl_traces])
    ok = np.isfinite(at_first) & np.isfinite(at_last)
    frac = float(np.mean(at_last[ok] < at_first[ok])) if ok.any() else float("nan")
    return {
        "budget_lo": first_b,
        "budget_hi": last_b,
        "avg_at_lo": [None if not np.isfinite(v) else v for v in at_first],
        "avg_at_hi": [None if not np.isfinite(v) else v for v in at_last],
        "improved_fraction": frac,
    }


# ---------------------------------------------------------------------------
# Exact-measure cache and export
# ---------------------------------------------------------------------------

def _cached_exact(pool: TestPool, measure: Measure, out_dir: str):
    """Exact pool (G, R), cached per (pool hash, measure spec) under out_dir."""
    key = f"{pool.content_hash()}:{json.dumps(measure.spec(), sort_keys=True)}"
    path = os.path.join(out_dir, "exact_measures.json")
    cache = {}
    if os.path.exists(path):
        try:
            with open(path) as fh:
                cache = json.load(fh)
        except (OSError, json.JSONDecodeError):
            cache = {}
    if key in cache:
        doc = cache[key]
        return np.asarray(doc["G"], dtype=np.float64), np.asarray(doc["R"], dtype=np.float64)
    G, R = pool_exact_measure(pool, measure)
    cache[key] = {"G": G.tolist(), "R": R.tolist()}
    os.makedirs(out_dir, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(cache, fh, indent=2, sort_keys=True)
    return G, R


def _json_safe(obj):
    """Replace non-finite floats with None so exports stay valid strict JSON."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def export_results(results: dict, out_dir: str) -> list:
    """Write per-method MSE curve CSVs, a JSON summary and a gnuplot-ready
    column file.  Overwrites (idempotent).  Returns the written paths."""
    if not results.get("methods"):
        raise ValueError("no method results to export")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    budgets = sorted({int(b) for m in results["methods"].values() for b in m["curve"]})

    for method, entry in results["methods"].items():
        path = os.path.join(out_dir, f"curve_{method}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("budget,mse,lo,hi,n_repeats,failures\n")
            for b in budgets:
                c = entry["curve"].get(b)
                if c is None:
                    continue
                fh.write(f"{b},{c['mse']!r},{c['lo']!r},{c['hi']!r},"
                         f"{c['n']},{entry['n_failures']}\n")
        written.append(path)

    summary = {
        "schema": results.get("schema"),
        "config": results.get("config"),
        "exact_G": results.get("exact_G"),
        "methods": {
            m: {
                "curve": e["curve"],
                "n_failures": e["n_failures"],
                "failures": e["failures"],
                **({"kl": {k: v for k, v in e["kl"].items()
                           if k in ("budget_lo", "budget_hi", "improved_fraction")}}
                   if "kl" in e else {}),
            } for m, e in results["methods"].items()
        },
    }
    spath = os.path.join(out_dir, "summary.json")
    with open(spath, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(spath)

    gpath = os.path.join(out_dir, "curves.dat")
    methods = list(results["methods"])
    with open(gpath, "w", encoding="utf-8") as fh:
        cols = " ".join(f"{m}_mse {m}_lo {m}_hi" for m in methods)
        fh.write(f"# budget {cols}\n")
        for b in budgets:
            row = [str(b)]
            for m in methods:
                c = results["methods"][m]["curve"].get(b)
                row += ([repr(c["mse"]), repr(c["lo"]), repr(c["hi"])]
                        if c else ["nan", "nan", "nan"])
            fh.write(" ".join(row) + "\n")
    written.append(gpath)
    return written
