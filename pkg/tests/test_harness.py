"""Simulated oracles, synthetic pools, and the experiment grid."""
import json
import os

import numpy as np
import pytest

from aiseval.harness import (
    METHODS,
    DeterministicOracle,
    ExperimentConfig,
    StochasticLabelOracle,
    SyntheticPoolSpec,
    _bootstrap_band,
    _cached_exact,
    _method_tree,
    export_results,
    generate_synthetic_pool,
    run_experiment,
    simulate_oracle,
)
from aiseval.measures import make_binary_measure, make_pr_curve_measure
from aiseval.pool import TestPool
from aiseval.sampler import pool_exact_measure


# ---------------------------------------------------------------------------
# Oracles.
# ---------------------------------------------------------------------------

def test_deterministic_oracle_dedup():
    oracle = DeterministicOracle(np.array([1, 0, 1, 0]))
    assert oracle.query(2) == 1
    assert oracle.budget_consumed == 1
    assert oracle.query(2) == 1          # cached repeat is free
    assert oracle.budget_consumed == 1
    oracle.query(0)
    assert oracle.budget_consumed == 2
    assert oracle.observed.tolist() == [True, False, True, False]
    assert isinstance(oracle.query(2), int)


def test_deterministic_oracle_preload():
    oracle = DeterministicOracle(np.array([1, 0, 1, 0]))
    oracle.query(0)
    oracle.preload(np.array([0, 3]), np.array([1, 0]))
    assert oracle.budget_consumed == 2   # item 0 already charged
    assert oracle.observed.tolist() == [True, False, False, True]


def test_stochastic_oracle_distribution_and_budget():
    pmf = np.array([[0.2, 0.8], [1.0, 0.0]])
    oracle = StochasticLabelOracle(pmf, seed=0)
    draws = np.array([oracle.query(0) for _ in range(4000)])
    assert oracle.budget_consumed == 4000     # every ask costs, repeats included
    assert abs(draws.mean() - 0.8) < 0.02
    assert all(oracle.query(1) == 0 for _ in range(50))


def test_stochastic_oracle_rejects_bad_pmf():
    with pytest.raises(ValueError):
        StochasticLabelOracle(np.array([[0.5, 0.4]]))
    with pytest.raises(ValueError):
        StochasticLabelOracle(np.array([[1.2, -0.2]]))


def test_simulate_oracle_dispatch():
    pool = generate_synthetic_pool(SyntheticPoolSpec(M=10, seed=1))
    assert isinstance(simulate_oracle(pool), DeterministicOracle)
    pmf = np.stack([1 - pool.raw_scores, pool.raw_scores], axis=1)
    assert isinstance(simulate_oracle(pool, stochastic_pmf=pmf), StochasticLabelOracle)

    unlabeled = TestPool(item_ids=pool.item_ids, scores=pool.scores,
                         raw_scores=pool.raw_scores, true_labels=None)
    with pytest.raises(ValueError):
        simulate_oracle(unlabeled)

    holey = pool.true_labels.copy()
    holey[3] = -1
    partial = TestPool(item_ids=pool.item_ids, scores=pool.scores,
                       raw_scores=pool.raw_scores, true_labels=holey)
    with pytest.raises(ValueError, match="item-000003"):
        simulate_oracle(partial)


# ---------------------------------------------------------------------------
# Synthetic pools.
# ---------------------------------------------------------------------------

def test_synthetic_pool_is_deterministic():
    spec = SyntheticPoolSpec(M=300, imbalance=4.0, quality=1.5, seed=11)
    a = generate_synthetic_pool(spec)
    b = generate_synthetic_pool(spec)
    assert a.content_hash() == b.content_hash()
    c = generate_synthetic_pool(SyntheticPoolSpec(M=300, imbalance=4.0,
                                                  quality=1.5, seed=12))
    assert a.content_hash() != c.content_hash()


def test_synthetic_pool_shape_and_rates():
    pool = generate_synthetic_pool(SyntheticPoolSpec(M=20000, imbalance=9.0, seed=2))
    assert pool.size == 20000
    assert np.allclose(pool.scores.sum(axis=1), 1.0)
    assert abs(pool.true_labels.mean() - 0.1) < 0.02
    assert pool.item_ids[0] == "item-000000"


def test_synthetic_pool_infinite_quality_is_perfect():
    pool = generate_synthetic_pool(SyntheticPoolSpec(M=100, quality=np.inf, seed=3))
    assert np.array_equal(pool.raw_scores, pool.true_labels.astype(float))
    assert np.array_equal(pool.predictions().predicted, pool.true_labels)


def test_synthetic_spec_validation_and_round_trip():
    with pytest.raises(ValueError):
        SyntheticPoolSpec(M=1)
    with pytest.raises(ValueError):
        SyntheticPoolSpec(M=10, imbalance=0.0)
    spec = SyntheticPoolSpec(M=50, imbalance=2.0, quality=3.0, seed=9, name="t")
    assert SyntheticPoolSpec.from_dict(spec.to_dict()) == spec


# ---------------------------------------------------------------------------
# Experiment configuration.
# ---------------------------------------------------------------------------

def test_config_validation():
    base = dict(measure={"kind": "accuracy"}, synthetic={"M": 40}, K=4,
                branching=2, depth=2, budgets=[10, 20], repeats=2)
    cfg = ExperimentConfig(**base)
    assert isinstance(cfg.synthetic, SyntheticPoolSpec)   # dict form coerced
    with pytest.raises(ValueError, match="pool path or a synthetic"):
        ExperimentConfig(measure={"kind": "accuracy"})
    with pytest.raises(ValueError, match="ascending"):
        ExperimentConfig(**{**base, "budgets": [20, 10]})
    with pytest.raises(ValueError, match="unknown methods"):
        ExperimentConfig(**{**base, "methods": ["ours-sideways"]})
    with pytest.raises(ValueError, match="branching"):
        ExperimentConfig(**{**base, "K": 6})
    with pytest.raises(ValueError):
        ExperimentConfig(**{**base, "repeats": 0})


def test_config_dict_round_trip():
    cfg = ExperimentConfig(measure={"kind": "f_beta", "beta": 2.0},
                           synthetic={"M": 40, "imbalance": 3.0},
                           K=4, branching=2, depth=2, budgets=[5, 10],
                           repeats=3, methods=["passive"], base_seed=7)
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back == cfg


def test_method_tree_layouts():
    pool = generate_synthetic_pool(SyntheticPoolSpec(M=200, seed=4))
    measure = make_binary_measure("accuracy", pool.predictions())
    cfg = ExperimentConfig(measure={"kind": "accuracy"}, synthetic={"M": 200},
                           K=4, branching=2, depth=2, budgets=[10], repeats=1)
    assert _method_tree(pool, measure, "passive", cfg) is None
    assert _method_tree(pool, measure, "static-is", cfg) is None
    hier = _method_tree(pool, measure, "ours-hierarchical", cfg)
    assert (hier.K, hier.branching, hier.depth) == (4, 2, 2)
    flat = _method_tree(pool, measure, "ours-flat", cfg)
    assert (flat.K, flat.branching, flat.depth) == (4, 4, 1)

    pr = make_pr_curve_measure(np.linspace(0.1, 0.9, 16), pool.predictions())
    tree = _method_tree(pool, pr, "ours-hierarchical", cfg)
    assert tree.K == 4 and tree.branching == 2 and tree.depth == 2
    tree = _method_tree(pool, pr, "ours-flat", cfg)
    assert tree.K == 4 and tree.branching == 4 and tree.depth == 1


# ---------------------------------------------------------------------------
# The grid.
# ---------------------------------------------------------------------------

def tiny_config(tmp_path, **over):
    base = dict(measure={"kind": "accuracy"},
                synthetic={"M": 60, "imbalance": 2.0, "quality": 0.8, "seed": 5},
                methods=["passive", "ours-hierarchical"],
                K=4, branching=2, depth=2, stage_size=5,
                budgets=[10, 20], repeats=3, bootstrap=50,
                base_seed=123, out_dir=str(tmp_path))
    base.update(over)
    return ExperimentConfig(**base)


def test_run_experiment_structure_and_determinism(tmp_path):
    cfg = tiny_config(tmp_path)
    res1 = run_experiment(cfg)
    res2 = run_experiment(tiny_config(tmp_path))
    assert set(res1["methods"]) == {"passive", "ours-hierarchical"}
    for method, entry in res1["methods"].items():
        assert entry["n_failures"] == 0
        for b in (10, 20):
            cell = entry["curve"][b]
            assert cell["n"] == 3
            assert np.isfinite(cell["mse"])
            assert cell["lo"] <= cell["mse"] <= cell["hi"]
        assert res2["methods"][method]["curve"] == entry["curve"]
    kl = res1["methods"]["ours-hierarchical"]["kl"]
    assert kl["budget_lo"] == 10 and kl["budget_hi"] == 20
    assert "kl" not in res1["methods"]["passive"]


def test_run_experiment_different_seed_differs(tmp_path):
    res1 = run_experiment(tiny_config(tmp_path, methods=["passive"]))
    res2 = run_experiment(tiny_config(tmp_path, methods=["passive"], base_seed=321))
    c1 = res1["methods"]["passive"]["curve"][20]["mse"]
    c2 = res2["methods"]["passive"]["curve"][20]["mse"]
    assert c1 != c2


def test_run_experiment_threaded_matches_serial(tmp_path):
    serial = run_experiment(tiny_config(tmp_path, methods=["stratified"]))
    threaded = run_experiment(tiny_config(tmp_path, methods=["stratified"], workers=3))
    assert serial["methods"]["stratified"]["curve"] == \
        threaded["methods"]["stratified"]["curve"]


def test_all_methods_run_one_repeat(tmp_path):
    cfg = tiny_config(tmp_path, methods=list(METHODS), repeats=1, track_kl=False)
    res = run_experiment(cfg)
    for method in METHODS:
        assert res["methods"][method]["n_failures"] == 0


# ---------------------------------------------------------------------------
# Bands, cache, export.
# ---------------------------------------------------------------------------

def test_bootstrap_band_edges():
    rng = np.random.default_rng(6)
    assert _bootstrap_band(np.array([]), 100, rng) == (pytest.approx(np.nan, nan_ok=True),) * 2
    assert _bootstrap_band(np.array([0.3]), 100, rng) == (0.3, 0.3)
    v = _bootstrap_band(np.array([0.1, 0.2]), 0, rng)
    assert v == (pytest.approx(0.15), pytest.approx(0.15))
    errs = rng.uniform(0, 1, size=200)
    lo, hi = _bootstrap_band(errs, 500, rng)
    assert lo < errs.mean() < hi
    assert hi - lo < 0.2


def test_exact_measure_cache(tmp_path):
    pool = generate_synthetic_pool(SyntheticPoolSpec(M=30, seed=7))
    measure = make_binary_measure("recall", pool.predictions())
    G1, R1 = _cached_exact(pool, measure, str(tmp_path))
    path = tmp_path / "exact_measures.json"
    assert path.exists()
    G_direct, R_direct = pool_exact_measure(pool, measure)
    assert np.array_equal(G1, G_direct) and np.array_equal(R1, R_direct)

    # prove the cache is consulted: poison the stored value, read it back
    cache = json.loads(path.read_text())
    (key,) = cache.keys()
    cache[key]["G"] = [0.123456]
    path.write_text(json.dumps(cache))
    G2, _ = _cached_exact(pool, measure, str(tmp_path))
    assert G2.tolist() == [0.123456]

    # corrupt file falls back to recomputation instead of crashing
    path.write_text("{ not json")
    G3, _ = _cached_exact(pool, measure, str(tmp_path))
    assert np.array_equal(G3, G_direct)


def test_export_results_files(tmp_path):
    cfg = tiny_config(tmp_path / "run", methods=["passive"], repeats=2)
    res = run_experiment(cfg)
    out = tmp_path / "exp"
    written = export_results(res, str(out))
    assert sorted(os.path.basename(p) for p in written) == \
        ["curve_passive.csv", "curves.dat", "summary.json"]

    lines = (out / "curve_passive.csv").read_text().splitlines()
    assert lines[0] == "budget,mse,lo,hi,n_repeats,failures"
    assert len(lines) == 3
    assert lines[1].startswith("10,") and lines[2].startswith("20,")

    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema"] == "experiment-result/1"
    assert "curve" in summary["methods"]["passive"]

    dat = (out / "curves.dat").read_text().splitlines()
    assert dat[0] == "# budget passive_mse passive_lo passive_hi"
    assert len(dat) == 3

    again = export_results(res, str(out))     # overwrite, no duplicate rows
    assert (out / "curve_passive.csv").read_text() == "\n".join(lines) + "\n"
    assert set(again) == set(written)


def test_export_results_nan_becomes_null(tmp_path):
    res = {"schema": "experiment-result/1", "config": {}, "exact_G": [0.5],
           "methods": {"passive": {
               "curve": {10: {"mse": float("nan"), "lo": float("nan"),
                              "hi": float("nan"), "n": 0}},
               "failures": [], "n_failures": 0, "repeats": []}}}
    export_results(res, str(tmp_path))
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["methods"]["passive"]["curve"]["10"]["mse"] is None


def test_export_results_empty_raises(tmp_path):
    with pytest.raises(ValueError):
        export_results({"methods": {}}, str(tmp_path))
