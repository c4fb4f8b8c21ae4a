"""Proposal builders: bindings, optimal and adapted forms, floors, mixing."""
import numpy as np
import pytest

from aiseval.measures import custom_measure, make_binary_measure, make_pr_curve_measure
from aiseval.oracle_model import init_hyperparams
from aiseval.partition import build_tree
from aiseval.pool import TestPool
from aiseval.proposals import (
    DegenerateProposalError,
    MeasureBinding,
    Proposal,
    adapted_proposal_det,
    adapted_proposal_stoch,
    epsilon_det,
    epsilon_stoch,
    kl_to_optimal,
    mix_with_marginal,
    optimal_proposal,
    static_score_proposal,
    uniform_proposal,
)


def make_pool(s1, labels=None):
    s1 = np.asarray(s1, dtype=np.float64)
    return TestPool(item_ids=[f"i{k}" for k in range(s1.size)],
                    scores=np.stack([1 - s1, s1], axis=1),
                    raw_scores=s1,
                    true_labels=None if labels is None else np.asarray(labels))


def make_binding(kind="accuracy", M=12, seed=0, K=4, depth=2):
    rng = np.random.default_rng(seed)
    s1 = rng.uniform(0.05, 0.95, size=M)
    labels = (rng.random(M) < s1).astype(int)
    pool = make_pool(s1, labels)
    tree = build_tree(K, 2, depth, rng.integers(0, K, size=M))
    measure = make_binary_measure(kind, pool.predictions())
    return MeasureBinding(pool, tree, measure), pool, tree


# ---------------------------------------------------------------------------
# Binding bookkeeping and risks.
# ---------------------------------------------------------------------------

def test_binding_requires_loss_table():
    _, pool, tree = make_binding()
    m = custom_measure("c", loss_fn=lambda i, y: np.array([float(y)]),
                       map_fn=lambda R: R, loss_dim=1, out_dim=1, loss_bound=1.0)
    with pytest.raises(TypeError):
        MeasureBinding(pool, tree, m)


def test_binding_counts_match_direct():
    binding, pool, tree = make_binding(M=30, seed=1)
    for k in range(tree.K):
        for g in range(binding.G):
            direct = int(((tree.block_of == k) & (binding.gid == g)).sum())
            assert binding.kg_all[k, g] == direct


def test_per_item_binding_for_score_losses():
    binding, pool, _ = make_binding()
    brier = make_binary_measure("brier", pool.predictions())
    per_item = MeasureBinding(pool, binding.tree, brier)
    assert per_item.per_item
    assert per_item.kg_all is None


def test_exact_risk_matches_loss_average():
    binding, pool, _ = make_binding(M=25, seed=2)
    labels = pool.true_labels
    direct = binding.measure.loss_values(np.arange(25), labels).mean(axis=0)
    assert np.allclose(binding.exact_risk(labels), direct, atol=1e-15)


def test_plug_in_risk_with_all_observed_is_exact():
    binding, pool, tree = make_binding(M=20, seed=3)
    model = init_hyperparams(pool, tree)
    for i, y in enumerate(pool.true_labels):
        model.observe(i, int(y))
        binding.observe(i, int(y))
    got = binding.plug_in_risk(model.pi_blocks, model.obs_label)
    assert np.allclose(got, binding.exact_risk(pool.true_labels), atol=1e-12)


def test_plug_in_risk_prior_only_averages_posterior():
    binding, pool, tree = make_binding(M=20, seed=4)
    model = init_hyperparams(pool, tree)
    pi = model.pi_blocks
    direct = np.zeros(binding.measure.loss_dim)
    for i in range(20):
        for y in range(2):
            direct += pi[tree.block_of[i], y] * binding.measure.loss(i, y)
    direct /= 20
    got = binding.plug_in_risk(pi, model.obs_label)
    assert np.allclose(got, direct, atol=1e-12)


def test_per_item_plug_in_risk_pins_observed():
    binding, pool, tree = make_binding(M=15, seed=5)
    brier = make_binary_measure("brier", pool.predictions())
    b = MeasureBinding(pool, tree, brier)
    model = init_hyperparams(pool, tree)
    model.observe(0, 1)
    got = b.plug_in_risk(model.pi_blocks, model.obs_label)
    pi = model.pi_blocks[tree.block_of]
    direct = 0.0
    for i in range(15):
        if i == 0:
            direct += brier.loss(0, 1)[0]
        else:
            direct += sum(pi[i, y] * brier.loss(i, y)[0] for y in range(2))
    assert got[0] == pytest.approx(direct / 15, rel=1e-12)


def test_reset_observed_rebuilds_tallies():
    binding, pool, tree = make_binding(M=18, seed=6)
    obs_label = np.full(18, -1, dtype=np.int64)
    for i in (2, 5, 11):
        y = int(pool.true_labels[i])
        binding.observe(i, y)
        obs_label[i] = y
    snap_sum = binding.obs_loss_sum.copy()
    snap_unobs = binding.kg_unobs.copy()
    binding.reset_observed(obs_label)
    assert np.array_equal(binding.obs_loss_sum, snap_sum)
    assert np.array_equal(binding.kg_unobs, snap_unobs)


def test_score_risk_uses_scores_as_pmf():
    binding, pool, _ = make_binding(M=10, seed=7)
    direct = np.zeros(binding.measure.loss_dim)
    for i in range(10):
        for y in range(2):
            direct += pool.scores[i, y] * binding.measure.loss(i, y)
    assert np.allclose(binding.score_risk(pool.scores), direct / 10, atol=1e-12)


def test_norms_for_accuracy_are_error_indicators():
    binding, pool, _ = make_binding(M=10, seed=8)
    R = binding.exact_risk(pool.true_labels)
    norm = binding.norms(R)       # |Dg| = 1, so norms equal the loss table
    f = pool.predictions().predicted
    for i in range(10):
        for y in range(2):
            assert norm[binding.gid[i], y] == float(y != f[i])


def test_norms_zero_out_nonfinite_jacobian():
    binding, pool, _ = make_binding(kind="precision", M=10, seed=9)
    norm = binding.norms(np.array([0.0, 0.0]))  # undefined point
    assert np.isfinite(norm).all()


# ---------------------------------------------------------------------------
# Proposal mechanics.
# ---------------------------------------------------------------------------

def test_uniform_proposal_unit_weights():
    q = uniform_proposal(8)
    assert np.allclose(q.probs, 1 / 8)
    assert np.allclose(q.weights(np.arange(8)), 1.0)


def test_proposal_normalizes_and_rejects():
    p = Proposal(np.array([2.0, 6.0]))
    assert np.allclose(p.probs, [0.25, 0.75])
    with pytest.raises(DegenerateProposalError):
        Proposal(np.zeros(3))
    with pytest.raises(DegenerateProposalError):
        Proposal(np.array([np.nan, 1.0]))


def test_weights_are_inverse_mass():
    q = Proposal(np.array([0.5, 0.5, 0.0]))
    w = q.weights(np.array([0, 2]))
    assert w[0] == pytest.approx(1.0 / (3 * 0.5))
    assert np.isinf(w[1])


def test_draws_respect_support_and_seed():
    q = Proposal(np.array([0.0, 0.3, 0.7, 0.0]))
    a = q.draw(np.random.default_rng(1), 400)
    b = Proposal(q.probs).draw(np.random.default_rng(1), 400)
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {1, 2}


# ---------------------------------------------------------------------------
# Optimal and adapted proposals.
# ---------------------------------------------------------------------------

def test_optimal_accuracy_targets_misclassified():
    binding, pool, _ = make_binding(M=20, seed=10)
    f = pool.predictions().predicted
    wrong = np.nonzero(pool.true_labels != f)[0]
    assert wrong.size > 0
    q = optimal_proposal(binding, pool.true_labels)
    assert np.allclose(q.probs[wrong], 1.0 / wrong.size)
    assert np.allclose(np.delete(q.probs, wrong), 0.0)


def test_optimal_degenerate_when_no_loss():
    binding, pool, _ = make_binding(M=10, seed=11)
    f = pool.predictions().predicted
    with pytest.raises(DegenerateProposalError):
        optimal_proposal(binding, f.astype(np.int64))  # all correct: no signal


def test_optimal_stochastic_form_hand_check():
    binding, pool, _ = make_binding(M=12, seed=12)
    rng = np.random.default_rng(0)
    pmf = rng.dirichlet(np.ones(2), size=12)
    q = optimal_proposal(binding, pmf)
    sg = np.zeros((binding.G, 2))
    np.add.at(sg, binding.gid, pmf)
    R = np.einsum("gy,gyd->d", sg, binding.table) / 12
    norm = binding.norms(R)
    v = np.sqrt(np.einsum("iy,iy->i", norm[binding.gid] ** 2, pmf))
    assert np.allclose(q.probs, v / v.sum(), atol=1e-15)


def test_adapted_det_equals_optimal_when_fully_observed():
    binding, pool, tree = make_binding(M=24, seed=13)
    model = init_hyperparams(pool, tree)
    for i, y in enumerate(pool.true_labels):
        model.observe(i, int(y))
        binding.observe(i, int(y))
    model.em_fit()
    q_hat = adapted_proposal_det(binding, model, epsilon=0.0, stage=5)
    q_star = optimal_proposal(binding, pool.true_labels)
    assert np.array_equal(q_hat.probs, q_star.probs)
    assert q_hat.stage == 5


def test_adapted_det_floor_keeps_lossy_items():
    binding, pool, tree = make_binding(M=20, seed=14)
    model = init_hyperparams(pool, tree)
    q = adapted_proposal_det(binding, model, epsilon=0.05, stage=0)
    # every item has a label with nonzero misclassification loss
    assert (q.probs > 0).all()
    assert q.epsilon == 0.05


def test_adapted_stoch_matches_direct_formula():
    binding, pool, tree = make_binding(M=16, seed=15)
    rng = np.random.default_rng(1)
    pred = rng.dirichlet(np.ones(2), size=tree.K)
    eps = 0.02
    q = adapted_proposal_stoch(binding, pred, epsilon=eps, stage=2)
    R = binding.predictive_risk(pred)
    norm_sq = binding.norms(R) ** 2
    floored = np.maximum(norm_sq, eps * binding.nz_float)
    v = np.sqrt(np.einsum("iy,iy->i",
                          floored[binding.gid], pred[tree.block_of]))
    assert np.allclose(q.probs, v / v.sum(), atol=1e-15)


def test_static_score_proposal_is_score_weighted():
    binding, pool, _ = make_binding(M=14, seed=16)
    q = static_score_proposal(binding, epsilon=0.1)
    R0 = binding.score_risk(pool.scores)
    norm_sq = binding.norms(R0) ** 2
    floored = np.maximum(norm_sq, 0.1 * binding.nz_float)
    v = np.sqrt(np.einsum("iy,iy->i", floored[binding.gid], pool.scores))
    assert np.allclose(q.probs, v / v.sum(), atol=1e-15)


def test_pr_curve_binding_builds_proposals():
    binding, pool, tree = make_binding(M=30, seed=17)
    pr = make_pr_curve_measure([0.3, 0.5, 0.7], pool.predictions())
    b = MeasureBinding(pool, tree, pr)
    model = init_hyperparams(pool, tree)
    q = adapted_proposal_det(b, model, epsilon=0.01, stage=0)
    assert q.probs.shape == (30,)
    assert (q.probs >= 0).all()


# ---------------------------------------------------------------------------
# Floors, mixing, divergence.
# ---------------------------------------------------------------------------

def test_epsilon_schedules():
    assert epsilon_det(0.1, 0.0) == pytest.approx(0.1)
    assert epsilon_det(0.1, 0.25) == pytest.approx(0.075)
    assert epsilon_det(0.1, 1.0) == 0.0
    assert epsilon_stoch(0.1, 0) == pytest.approx(0.1)
    assert epsilon_stoch(0.1, 9) == pytest.approx(0.01)


def test_mixing_keeps_full_support():
    q = np.array([0.0, 0.0, 1.0])
    mixed = mix_with_marginal(q, 0.3)
    assert np.allclose(mixed, [0.1, 0.1, 0.8])
    assert mixed.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mix_with_marginal(q, 1.5)


def test_mixing_applied_inside_builder():
    binding, pool, tree = make_binding(M=10, seed=18)
    model = init_hyperparams(pool, tree)
    q = adapted_proposal_det(binding, model, epsilon=0.0, stage=0, delta=0.2)
    assert (q.probs >= 0.2 / 10 - 1e-15).all()
    assert q.mixing == 0.2


def test_kl_to_optimal():
    p = np.array([0.5, 0.5, 0.0])
    assert kl_to_optimal(p, p) == 0.0
    q = np.array([0.25, 0.75, 0.0])
    expect = 0.5 * np.log(2.0) + 0.5 * np.log(0.5 / 0.75)
    assert kl_to_optimal(p, q) == pytest.approx(expect, rel=1e-12)
    assert kl_to_optimal(p, np.array([1.0, 0.0, 0.0])) == np.inf
    assert kl_to_optimal(p, q) >= 0.0
