"""Proposal construction for adaptive importance sampling over a finite pool.

A proposal is a probability vector over pool items.  The builders here share
one precomputed join (``MeasureBinding``) between a pool, its partition and a
table-mode measure: per-item loss group ids, per-group loss vectors, and the
group-by-block occupancy counts that make plug-in risks O(K*G*C*d) instead of
O(M).  Per-item weight evaluation runs through the compiled kernels.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import AliasSampler, det_weights, stoch_weights
from .measures import Measure
from .partition import PartitionTree

__all__ = [
    "DegenerateProposalError",
    "MeasureBinding",
    "Proposal",
    "uniform_proposal",
    "optimal_proposal",
    "adapted_proposal_det",
    "adapted_proposal_stoch",
    "static_score_proposal",
    "epsilon_det",
    "epsilon_stoch",
    "mix_with_marginal",
    "kl_to_optimal",
]

logger = logging.getLogger(__name__)


class DegenerateProposalError(ValueError):
    """The weight vector has no positive finite mass to normalize."""


class MeasureBinding:
    """Precomputed pool/partition/measure join used by every proposal builder.

    Only table-mode measures participate: adaptive proposals need a finite
    label alphabet.  When the measure's groups are per-item (one group per
    pool element, e.g. score-dependent losses) the block-by-group count
    matrix would be M*M, so that case switches to direct per-item reductions.
    """

    def __init__(self, pool, tree: PartitionTree, measure: Measure):
        if measure.loss_table is None:
            raise TypeError(
                f"measure {measure.name!r} has no finite-label loss table; "
                "adaptive proposals need categorical labels")
        self.pool = pool
        self.tree = tree
        self.measure = measure
        self.M = pool.size
        self.C = measure.n_classes
        self.gid = np.ascontiguousarray(measure.group_ids, dtype=np.int64)
        self.block = np.ascontiguousarray(tree.block_of, dtype=np.int64)
        self.table = np.ascontiguousarray(measure.loss_table, dtype=np.float64)
        self.G = self.table.shape[0]
        self.nz = (np.abs(self.table) > 0.0).any(axis=2)      # (G, C)
        self.nz_float = np.ascontiguousarray(self.nz, dtype=np.float64)

        self.per_item = bool(self.G == self.M and np.array_equal(
            self.gid, np.arange(self.M)))
        if not self.per_item:
            counts = np.zeros((tree.K, self.G))
            np.add.at(counts, (self.block, self.gid), 1.0)
            self.kg_all = counts
            self.kg_unobs = counts.copy()
        else:
            self.kg_all = None
            self.kg_unobs = None
        self.obs_loss_sum = np.zeros(self.table.shape[2])

    # -- observation bookkeeping ------------------------------------------------
    def observe(self, item: int, label: int) -> None:
        """Move one item from the unobserved tally to the observed loss sum.
        Call exactly once per distinct item."""
        self.obs_loss_sum += self.table[self.gid[item], label]
        if not self.per_item:
            self.kg_unobs[self.block[item], self.gid[item]] -= 1.0

    def reset_observed(self, obs_label: np.ndarray) -> None:
        """Rebuild observation tallies from scratch (used when restoring a
        persisted session)."""
        self.obs_loss_sum[:] = 0.0
        if not self.per_item:
            self.kg_unobs[:] = self.kg_all
        seen = np.nonzero(obs_label >= 0)[0]
        for i in seen:
            self.observe(int(i), int(obs_label[i]))

    # -- risks -------------------------------------------------------------------
    def plug_in_risk(self, pi_blocks: np.ndarray, obs_label: np.ndarray) -> np.ndarray:
        """Deterministic-oracle plug-in risk: observed losses exact, unobserved
        items integrated against their block posterior."""
        if self.per_item:
            pi = pi_blocks[self.block]
            obs = obs_label >= 0
            if obs.any():
                pi = pi.copy()
                pi[obs] = 0.0
                pi[obs, obs_label[obs]] = 1.0
            return np.einsum("my,myd->d", pi, self.table) / self.M
        unobs = np.einsum("kg,ky,gyd->d", self.kg_unobs, pi_blocks, self.table)
        return (unobs + self.obs_loss_sum) / self.M

    def predictive_risk(self, pred_blocks: np.ndarray) -> np.ndarray:
        """Stochastic-oracle plug-in risk: every item integrated against its
        block's posterior predictive."""
        if self.per_item:
            return np.einsum("my,myd->d", pred_blocks[self.block], self.table) / self.M
        return np.einsum("kg,ky,gyd->d", self.kg_all, pred_blocks, self.table) / self.M

    def score_risk(self, scores: np.ndarray) -> np.ndarray:
        """Plug-in risk treating per-item score rows as the label pmf."""
        sg = np.zeros((self.G, self.C))
        np.add.at(sg, self.gid, scores)
        return np.einsum("gy,gyd->d", sg, self.table) / self.M

    def exact_risk(self, labels: np.ndarray) -> np.ndarray:
        """Pool risk under fully known labels."""
        counts = np.zeros((self.G, self.C))
        np.add.at(counts, (self.gid, np.asarray(labels, dtype=np.int64)), 1.0)
        return np.einsum("gy,gyd->d", counts, self.table) / self.M

    # -- gradient norms -----------------------------------------------------------
    def norms(self, R_hat: np.ndarray) -> np.ndarray:
        """||Dg(R_hat) l(g, y)||_2 per (group, label).

        Non-finite Jacobian entries (measure undefined or on a boundary at
        R_hat) are treated as zero direction so the epsilon floor alone keeps
        the proposal alive; that situation is logged once per call site.
        """
        Dg = self.measure.jacobian(R_hat)
        if not np.isfinite(Dg).all():
            logger.warning("non-finite Jacobian for %s at R=%s; flooring only",
                           self.measure.name, np.array2string(R_hat, precision=4))
            Dg = np.where(np.isfinite(Dg), Dg, 0.0)
        z = np.tensordot(self.table, Dg, axes=([2], [1]))     # (G, C, m)
        return np.sqrt((z * z).sum(axis=2))


@dataclass
class Proposal:
    """A stage proposal: item probabilities plus the knobs that built it."""

    probs: np.ndarray
    stage: int = 0
    epsilon: float = 0.0
    mixing: float = 0.0
    _sampler: Optional[AliasSampler] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        total = self.probs.sum()
        if not np.isfinite(total) or total <= 0.0:
            raise DegenerateProposalError("proposal has no positive finite mass")
        if abs(total - 1.0) > 1e-9:
            self.probs = self.probs / total

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    @property
    def support(self) -> np.ndarray:
        return self.probs > 0.0

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self._sampler is None:
            self._sampler = AliasSampler(self.probs)
        return self._sampler.draw(rng, n)

    def weights(self, items: np.ndarray) -> np.ndarray:
        """Importance weights p/q for the uniform pool distribution p=1/M."""
        q = self.probs[items]
        with np.errstate(divide="ignore"):
            return np.where(q > 0.0, 1.0 / (self.size * q), np.inf)


def uniform_proposal(M: int, stage: int = 0) -> Proposal:
    return Proposal(np.full(M, 1.0 / M), stage=stage)


def _finalize(v: np.ndarray, stage: int, epsilon: float, delta: float) -> Proposal:
    total = v.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateProposalError(
            "all proposal weights vanished; measure carries no loss signal "
            "and the floor is zero")
    q = v / total
    if delta > 0.0:
        # Mix over the proposal's own support, not the whole pool: items the
        # measure provably cannot charge stay at zero mass, while every item
        # that can still carry loss gets at least delta/|support|, capping the
        # importance weights at |support|/(delta * M).
        support = v > 0.0
        q = (1.0 - delta) * q + (delta / support.sum()) * support
    return Proposal(q, stage=stage, epsilon=epsilon, mixing=delta)


def optimal_proposal(binding: MeasureBinding, truth, R: Optional[np.ndarray] = None,
                     stage: int = 0) -> Proposal:
    """Minimum-trace proposal given the true conditional label law.

    ``truth`` is either an integer label array (deterministic oracle) or an
    (M, C) pmf matrix.  The weight of item x is proportional to
    sqrt(sum_y ||Dg(R) l(x,y)||^2 p(y|x)), which collapses to the single
    norm at the known label when labels are deterministic.
    """
    truth = np.asarray(truth)
    if truth.ndim == 1:
        labels = truth.astype(np.int64)
        if R is None:
            R = binding.exact_risk(labels)
        norm = binding.norms(R)
        v = norm[binding.gid, labels]
    else:
        pmf = truth.astype(np.float64)
        if R is None:
            sg = np.zeros((binding.G, binding.C))
            np.add.at(sg, binding.gid, pmf)
            R = np.einsum("gy,gyd->d", sg, binding.table) / binding.M
        norm = binding.norms(R)
        v = np.sqrt(np.einsum("iy,iy->i", norm[binding.gid] ** 2, pmf))
    return _finalize(v, stage, 0.0, 0.0)


def adapted_proposal_det(binding: MeasureBinding, model, epsilon: float,
                         stage: int, delta: float = 0.0,
                         R_hat: Optional[np.ndarray] = None) -> Proposal:
    """Stage proposal for deterministic oracles from the fitted label model.

    Observed items contribute the norm at their known label; unobserved items
    average the floored norms over the block posterior.  epsilon > 0 keeps
    every lossy item in the support.
    """
    if R_hat is None:
        R_hat = binding.plug_in_risk(model.pi_blocks, model.obs_label)
    norm = binding.norms(R_hat)
    floored = epsilon * binding.nz_float
    v = np.empty(binding.M)
    det_weights(binding.gid, binding.block,
                np.ascontiguousarray(model.obs_label, dtype=np.int64),
                norm, floored,
                np.ascontiguousarray(model.pi_blocks), v)
    return _finalize(v, stage, epsilon, delta)


def adapted_proposal_stoch(binding: MeasureBinding, pred_blocks: np.ndarray,
                           epsilon: float, stage: int, delta: float = 0.0,
                           R_hat: Optional[np.ndarray] = None) -> Proposal:
    """Stage proposal for stochastic oracles from the posterior predictive.

    Uses the square-root form: v(x) = sqrt(sum_y max(norm^2, eps) p_hat(y|k)).
    """
    if R_hat is None:
        R_hat = binding.predictive_risk(pred_blocks)
    norm_sq = binding.norms(R_hat) ** 2
    floored = epsilon * binding.nz_float
    v = np.empty(binding.M)
    stoch_weights(binding.gid, binding.block, norm_sq, floored,
                  np.ascontiguousarray(pred_blocks, dtype=np.float64), v)
    return _finalize(v, stage, epsilon, delta)


def static_score_proposal(binding: MeasureBinding, epsilon: float = 0.0,
                          delta: float = 0.0) -> Proposal:
    """Non-adaptive importance proposal built once from the classifier scores.

    Treats each item's score row as its label pmf (both for the plug-in risk
    and for the expected squared norm), i.e. the stochastic-form proposal
    with the scores standing in for a fitted model.
    """
    scores = binding.pool.scores
    R0 = binding.score_risk(scores)
    norm_sq = binding.norms(R0) ** 2
    floored = epsilon * binding.nz_float
    v = np.empty(binding.M)
    # Reuse the per-block kernel with identity "blocks" so the predictive
    # matrix is the per-item score matrix.
    stoch_weights(binding.gid, np.arange(binding.M, dtype=np.int64),
                  norm_sq, floored, np.ascontiguousarray(scores, dtype=np.float64), v)
    return _finalize(v, 0, epsilon, delta)


def epsilon_det(epsilon0: float, fraction_observed: float) -> float:
    """Deterministic-oracle floor schedule: decays linearly in labels gathered
    and hits exactly zero when the pool is exhausted."""
    return epsilon0 * (1.0 - fraction_observed)


def epsilon_stoch(epsilon0: float, stage: int) -> float:
    """Stochastic-oracle floor schedule: harmonic decay, never zero."""
    return epsilon0 / (stage + 1.0)


def mix_with_marginal(probs: np.ndarray, delta: float) -> np.ndarray:
    """Defensive mixture (1-delta) q + delta p with the uniform marginal;
    guarantees full support for later sample reuse."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("mixing fraction must lie in [0, 1]")
    return (1.0 - delta) * probs + delta / probs.shape[0]


def kl_to_optimal(q_star: np.ndarray, q: np.ndarray) -> float:
    """KL(q* || q); +inf when q misses mass that q* requires."""
    s = q_star > 0.0
    if (q[s] <= 0.0).any():
        return float("inf")
    return float(np.sum(q_star[s] * np.log(q_star[s] / q[s])))
