"""Online Bayesian model of the label oracle.

The deterministic-oracle model places a Dirichlet prior on the global class
pmf theta and a Dirichlet-tree prior on each class's distribution psi_y over
partition blocks; labels observed so far are exact, unobserved labels are
filled in by EM expectations.  Because the tree factorizes psi into branch
choices, hierarchically nearby blocks share statistical strength.

The stochastic-oracle variant keeps importance-weighted pseudo-counts (the
weights debias the adaptively sampled records) and predicts labels through
the posterior-predictive product over branch ratios.

Everything is parameterized per block, never per item: an item's label
posterior depends on its position only through its block and its observation
status, so memory stays O(K*C) plus the observed set.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from ._kernels import em_loop
from .partition import PartitionTree

__all__ = [
    "DirichletTreeModel",
    "StochasticOracleModel",
    "init_hyperparams",
    "init_stochastic_model",
    "simplex_modes",
]

_FLOOR = 1e-12


def simplex_modes(coef: np.ndarray, floor: float = _FLOOR) -> np.ndarray:
    """Maximize sum_i c_i*log(x_i) over the floored simplex, rowwise.

    For all-positive coefficients with an interior optimum this reduces to
    c / sum(c).  Nonpositive coefficients (legal for Dirichlet-tree modes
    when priors are diffuse) pin their coordinates to the floor, which both
    keeps every probability strictly positive and makes each update an exact
    constrained maximizer, so fixed-point iteration on the posterior
    objective is monotone.
    """
    c = np.atleast_2d(np.asarray(coef, dtype=np.float64))
    b = c.shape[-1]
    c = c.reshape(-1, b)
    active = c > 0.0
    if active.all():
        # Interior optimum; the constrained machinery below is a no-op.
        return (c / c.sum(axis=1, keepdims=True)).reshape(np.shape(coef))
    x = np.full_like(c, floor)
    # Rows with no positive coefficient: all mass (minus floors) on the
    # least-harmful coordinate.
    dead = ~active.any(axis=1)
    if dead.any():
        top = np.argmax(c[dead], axis=1)
        active[dead] = False
        active[np.nonzero(dead)[0], top] = True
    for _ in range(b):
        budget = 1.0 - floor * (b - active.sum(axis=1))
        weight = np.where(active, c, 0.0)
        total = weight.sum(axis=1)
        # Coordinates forced active in dead rows may carry c <= 0; give them
        # the whole budget directly.
        safe = np.where(total > 0.0, total, 1.0)
        x = np.where(active, weight * (budget / safe)[:, None], floor)
        fix = total <= 0.0
        if fix.any():
            x[fix] = np.where(active[fix], budget[fix, None], floor)
        newly = active & (x < floor)
        if not newly.any():
            break
        active &= ~newly
    x = np.where(active, np.maximum(x, floor), floor)
    out = x / x.sum(axis=1, keepdims=True)
    return out.reshape(np.shape(coef))


def _block_mean_scores(pool, tree: PartitionTree) -> np.ndarray:
    """s_bar(y|k): mean classifier score per block; zero rows for empty blocks."""
    K, C = tree.K, pool.n_classes
    sums = np.zeros((K, C))
    np.add.at(sums, tree.block_of, pool.scores)
    counts = tree.block_sizes.astype(np.float64)
    out = np.zeros((K, C))
    nonempty = counts > 0
    out[nonempty] = sums[nonempty] / counts[nonempty, None]
    return out


def _node_sums(tree: PartitionTree, leaf_values: np.ndarray) -> np.ndarray:
    """Sum a (K, C) leaf array up the tree; returns (n_nodes, C)."""
    K, C = leaf_values.shape
    out = np.zeros((tree.n_nodes, C))
    level = leaf_values
    for l in range(tree.depth, -1, -1):
        lo = tree.level_offsets[l]
        out[lo:lo + level.shape[0]] = level
        if l > 0:
            level = level.reshape(-1, tree.branching, C).sum(axis=1)
    return out


class DirichletTreeModel:
    """Deterministic-oracle label model fitted by EM.

    Parameters alpha (C,) and beta (C, n_nodes) are the prior concentrations;
    beta's root column is unused.  The fitted state is theta (C,), the branch
    probabilities (C, n_nodes) with the root column fixed at 1, psi (C, K) as
    the product of branch probabilities along each root-to-leaf path, and the
    per-block posterior pi over labels for unobserved items.
    """

    schema = "dirichlet-tree-model/1"

    def __init__(self, tree: PartitionTree, n_classes: int,
                 alpha: np.ndarray, beta: np.ndarray):
        self.tree = tree
        self.C = int(n_classes)
        self.alpha = np.asarray(alpha, dtype=np.float64)
        self.beta = np.asarray(beta, dtype=np.float64)
        if self.alpha.shape != (self.C,):
            raise ValueError("alpha must have one entry per class")
        if self.beta.shape != (self.C, tree.n_nodes):
            raise ValueError("beta must have one column per tree node")

        M = tree.block_of.shape[0]
        self.obs_label = np.full(M, -1, dtype=np.int64)
        self.obs_counts = np.zeros((tree.K, self.C))
        self.unobs_counts = tree.block_sizes.astype(np.float64).copy()
        self.n_observed = 0
        self._fitted_at = -1  # n_observed of the last converged fit

        # Mode-of-prior initialization; em_fit warm-starts from here.
        self.theta = simplex_modes(self.alpha - 1.0)
        self.branch = np.ones((self.C, tree.n_nodes))
        self._mstep_branches(self.beta)
        self.psi = self._psi_from_branch()
        self.pi_blocks = self._posterior_blocks()
        # Posterior concentrations from the last E-step (diagnostics).
        self.post_alpha = self.alpha.copy()
        self.post_beta = self.beta.copy()

    # -- bookkeeping ---------------------------------------------------------
    def observe(self, item: int, label: int) -> bool:
        """Record an observed label; returns False if the item was already
        observed (the cache is authoritative, repeats are no-ops)."""
        if self.obs_label[item] >= 0:
            return False
        k = self.tree.block_of[item]
        self.obs_label[item] = label
        self.obs_counts[k, label] += 1.0
        self.unobs_counts[k] -= 1.0
        self.n_observed += 1
        return True

    @property
    def fraction_observed(self) -> float:
        return self.n_observed / self.obs_label.shape[0]

    # -- EM pieces -------------------------------------------------------------
    def _posterior_blocks(self) -> np.ndarray:
        """pi(y|k) for unobserved items: normalized psi_{yk} * theta_y."""
        raw = self.psi.T * self.theta[None, :]
        total = raw.sum(axis=1, keepdims=True)
        total[total <= 0.0] = 1.0
        return raw / total

    def _psi_from_branch(self) -> np.ndarray:
        tree = self.tree
        psi = np.ones((self.C, tree.K))
        blocks = np.arange(tree.K)
        for level in range(1, tree.depth + 1):
            span = tree.branching ** (tree.depth - level)
            nodes = tree.level_offsets[level] + blocks // span
            psi *= self.branch[:, nodes]
        return psi

    def _mstep_branches(self, beta_tilde: np.ndarray) -> None:
        """Branch update: mode of the per-node Dirichlet over branch choices,
        coefficient beta-count minus one for each child.

        Working in branch space (where the tree prior factorizes into
        independent Dirichlets node by node) keeps every coefficient positive
        under the score-based priors; the leaf-probability parameterization
        has no interior mode once a subtree's evidence is sparse, which would
        pin whole branches to the floor and starve the proposal of support.
        On depth-1 trees the two parameterizations coincide."""
        tree = self.tree
        for level in range(1, tree.depth + 1):
            lo, hi = tree.level_offsets[level], tree.level_offsets[level + 1]
            coef = beta_tilde[:, lo:hi] - 1.0
            shaped = coef.reshape(self.C, -1, tree.branching)
            self.branch[:, lo:hi] = simplex_modes(shaped).reshape(self.C, hi - lo)

    def expected_counts(self) -> np.ndarray:
        """E-step: expected per-block class counts (observed labels exact,
        unobserved filled from the current block posterior)."""
        return self.obs_counts + self.unobs_counts[:, None] * self.pi_blocks

    def em_fit(self, tol: float = 1e-8, max_iter: int = 100,
               trace: Optional[list] = None) -> "DirichletTreeModel":
        """Alternate expectation and mode updates until the parameters move
        less than ``tol`` in max-norm; warm-starts from the current fit.

        The fitted posterior is a function of the observed label set alone,
        so a refit with no new observations returns immediately (repeated
        draws of cached items between stages leave the model untouched)."""
        if self.n_observed == self._fitted_at and trace is None:
            return self
        if em_loop is not None and trace is None:
            tree = self.tree
            pi = np.ascontiguousarray(self.pi_blocks)
            psi = np.ascontiguousarray(self.psi)
            branch = np.ascontiguousarray(self.branch)
            beta = np.ascontiguousarray(self.beta)
            obs = np.ascontiguousarray(self.obs_counts)
            em_loop(self.alpha, beta, obs, self.unobs_counts,
                    tree.level_offsets.astype(np.int64), tree.branching,
                    tree.depth, self.theta, branch, psi, pi,
                    self.post_alpha, self.post_beta, tol, max_iter, _FLOOR)
            self.branch, self.psi, self.pi_blocks = branch, psi, pi
            self._fitted_at = self.n_observed
            return self
        for _ in range(max_iter):
            counts = self.expected_counts()             # (K, C)
            alpha_t = self.alpha + counts.sum(axis=0)
            beta_t = self.beta + _node_sums(self.tree, counts).T
            self.post_alpha, self.post_beta = alpha_t, beta_t

            theta_old = self.theta
            branch_old = self.branch.copy()
            self.theta = simplex_modes(alpha_t - 1.0)
            self._mstep_branches(beta_t)
            self.psi = self._psi_from_branch()
            self.pi_blocks = self._posterior_blocks()
            if trace is not None:
                trace.append(self.log_posterior_objective())
            delta = max(np.abs(self.theta - theta_old).max(),
                        np.abs(self.branch - branch_old).max() if self.branch.size else 0.0)
            if delta < tol:
                break
        self._fitted_at = self.n_observed
        return self

    def log_posterior_objective(self) -> float:
        """Observed-data log posterior (up to an additive constant): the
        quantity each EM iteration is guaranteed not to decrease."""
        tree = self.tree
        with np.errstate(divide="ignore"):
            log_theta = np.log(self.theta)
            log_branch = np.log(self.branch)
            log_psi = np.log(self.psi)
        val = float(((self.alpha - 1.0) * log_theta).sum())
        if tree.n_nodes > 1:
            lo = tree.level_offsets[1]
            prior_coef = self.beta[:, lo:] - 1.0
            val += float((prior_coef * log_branch[:, lo:]).sum())
        # Observed items: sum_k n_ky (log theta_y + log psi_yk).
        val += float((self.obs_counts * (log_theta[None, :] + log_psi.T)).sum())
        # Unobserved items: block counts times log marginal.
        marg = (self.psi.T * self.theta[None, :]).sum(axis=1)
        with np.errstate(divide="ignore"):
            log_marg = np.where(self.unobs_counts > 0, np.log(marg), 0.0)
        val += float((self.unobs_counts * log_marg).sum())
        return val

    # -- posteriors -------------------------------------------------------------
    def label_posterior(self, item: int) -> np.ndarray:
        """pi(y|x): point mass at the cached label once observed, otherwise the
        fitted block posterior (strictly positive by prior support)."""
        y = self.obs_label[item]
        if y >= 0:
            out = np.zeros(self.C)
            out[y] = 1.0
            return out
        return self.pi_blocks[self.tree.block_of[item]].copy()

    # -- persistence --------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "n_classes": self.C,
            "tree": self.tree.spec(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "theta": self.theta.tolist(),
            "branch": self.branch.tolist(),
            "post_alpha": self.post_alpha.tolist(),
            "post_beta": self.post_beta.tolist(),
            "observed": {str(i): int(y) for i, y in enumerate(self.obs_label) if y >= 0},
        }

    @classmethod
    def from_dict(cls, doc: dict, tree: PartitionTree) -> "DirichletTreeModel":
        if doc.get("schema") != cls.schema:
            raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
        model = cls(tree, doc["n_classes"], np.array(doc["alpha"]), np.array(doc["beta"]))
        for key, y in doc["observed"].items():
            model.observe(int(key), int(y))
        model.theta = np.asarray(doc["theta"], dtype=np.float64)
        model.branch = np.asarray(doc["branch"], dtype=np.float64)
        model.post_alpha = np.asarray(doc["post_alpha"], dtype=np.float64)
        model.post_beta = np.asarray(doc["post_beta"], dtype=np.float64)
        model.psi = model._psi_from_branch()
        model.pi_blocks = model._posterior_blocks()
        model._fitted_at = model.n_observed  # serialized params are the converged fit
        return model


def init_hyperparams(pool, tree: PartitionTree, predictions=None) -> DirichletTreeModel:
    """Score-based prior concentrations.

    alpha_y = 1 + sum_k s_bar(y|k); beta_{y,node} = depth(node)^2 plus the sum
    of s_bar(y|k) over the blocks below the node.  Empty blocks contribute
    nothing beyond the depth term, leaving their parameters prior-only.
    """
    sbar = _block_mean_scores(pool, tree)                     # (K, C)
    alpha = 1.0 + sbar.sum(axis=0)
    node_scores = _node_sums(tree, sbar)                      # (n_nodes, C)
    beta = (tree.node_depth.astype(np.float64) ** 2)[None, :] + node_scores.T
    return DirichletTreeModel(tree, pool.n_classes, alpha, beta)


class StochasticOracleModel:
    """Label model for stochastic oracles via weighted pseudo-counts.

    Each record contributes its importance weight to the class count and to
    every branch on its block's path; the posterior predictive multiplies
    branch-ratio factors down the tree.  Counts never fall below the priors.
    """

    schema = "stochastic-oracle-model/1"

    def __init__(self, tree: PartitionTree, n_classes: int,
                 alpha: np.ndarray, beta: np.ndarray):
        self.tree = tree
        self.C = int(n_classes)
        self.alpha = np.asarray(alpha, dtype=np.float64)
        self.beta = np.asarray(beta, dtype=np.float64)
        self.w_alpha = np.zeros(self.C)
        self.w_beta = np.zeros_like(self.beta)

    def stochastic_update(self, items, labels, weights) -> "StochasticOracleModel":
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))
        if (weights < 0).any():
            raise ValueError("negative importance weight in stochastic update")
        for i, y, w in zip(items, labels, weights):
            self.w_alpha[y] += w
            k = self.tree.block_of[i]
            for node in self.tree.path_nodes(int(k)):
                self.w_beta[y, node] += w
        return self

    @property
    def alpha_tilde(self) -> np.ndarray:
        return self.alpha + self.w_alpha

    @property
    def beta_tilde(self) -> np.ndarray:
        return self.beta + self.w_beta

    def predictive_matrix(self) -> np.ndarray:
        """p(y|k) for every block: alpha_tilde times the product of
        sibling-normalized beta ratios along the path, normalized over y."""
        tree = self.tree
        bt = self.beta_tilde
        raw = np.tile(self.alpha_tilde[None, :], (tree.K, 1)).astype(np.float64)
        blocks = np.arange(tree.K)
        for level in range(1, tree.depth + 1):
            lo, hi = tree.level_offsets[level], tree.level_offsets[level + 1]
            sib = bt[:, lo:hi].reshape(self.C, -1, tree.branching)
            ratios = (sib / sib.sum(axis=2, keepdims=True)).reshape(self.C, hi - lo)
            span = tree.branching ** (tree.depth - level)
            nodes = lo + blocks // span
            raw *= ratios[:, nodes - lo].T
        total = raw.sum(axis=1, keepdims=True)
        total[total <= 0.0] = 1.0
        return raw / total

    def posterior_predictive(self, block: int) -> np.ndarray:
        return self.predictive_matrix()[int(block)]

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "n_classes": self.C,
            "tree": self.tree.spec(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "w_alpha": self.w_alpha.tolist(),
            "w_beta": self.w_beta.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, tree: PartitionTree) -> "StochasticOracleModel":
        if doc.get("schema") != cls.schema:
            raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
        model = cls(tree, doc["n_classes"], np.array(doc["alpha"]), np.array(doc["beta"]))
        model.w_alpha = np.asarray(doc["w_alpha"], dtype=np.float64)
        model.w_beta = np.asarray(doc["w_beta"], dtype=np.float64)
        return model


def init_stochastic_model(pool, tree: PartitionTree) -> StochasticOracleModel:
    """Same score-based priors as the deterministic model."""
    det = init_hyperparams(pool, tree)
    return StochasticOracleModel(tree, pool.n_classes, det.alpha, det.beta)
