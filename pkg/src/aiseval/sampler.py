"""Adaptive importance sampling loop and every estimator built on its log.

The run log (``RunHistory``) is the single source of truth: each draw stores
the item, its label, the importance weight p/q at draw time, the stage and the
proposal probability.  ``estimate_G`` maps the weighted mean risk through the
measure, attaches the latest-proposal covariance and F-based confidence
region, and is reused verbatim for passive, static-IS and replayed histories,
so every number reported anywhere comes from one code path.

Budget semantics: a deterministic oracle charges only the first query per
item (the cache answers repeats for free); a stochastic oracle charges every
query.  Once a deterministic oracle has labeled the whole pool the measure is
known exactly and reports say so instead of carrying Monte-Carlo noise.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fstat import f_critical
from .measures import Measure
from .oracle_model import (DirichletTreeModel, StochasticOracleModel,
                           init_hyperparams, init_stochastic_model)
from .partition import PartitionTree
from .proposals import (DegenerateProposalError, MeasureBinding, Proposal,
                        adapted_proposal_det, adapted_proposal_stoch,
                        epsilon_det, epsilon_stoch, kl_to_optimal,
                        static_score_proposal, uniform_proposal)

__all__ = [
    "EmptyHistoryError",
    "SupportAuditError",
    "OracleUnavailable",
    "RunSuspended",
    "RunHistory",
    "EstimateReport",
    "RunConfig",
    "AISLoop",
    "run_ais",
    "resume_run",
    "estimate_G",
    "estimate_covariance",
    "confidence_region",
    "passive_estimate",
    "static_is_estimate",
    "stratified_estimate",
    "pool_exact_measure",
]

HISTORY_SCHEMA = "ais-history/1"
REPORT_SCHEMA = "estimate-report/1"


class EmptyHistoryError(ValueError):
    """No records to estimate from."""


class SupportAuditError(ValueError):
    """A logged proposal missed items the requested measure needs."""


class OracleUnavailable(RuntimeError):
    """Raised by an oracle that cannot answer right now; suspends the run."""


class RunSuspended(RuntimeError):
    """Carries the serialized loop state after a mid-run oracle failure.

    ``resume_run`` picks the run back up against a recovered oracle and
    produces output identical to an uninterrupted run.
    """

    def __init__(self, state: dict):
        super().__init__("run suspended: oracle unavailable")
        self.state = state


class RunHistory:
    """Append-only log of draws plus per-stage proposal bookkeeping."""

    def __init__(self, pool_size: int, measure_spec: dict, oracle_kind: str = "det",
                 seed: Optional[int] = None):
        self.pool_size = int(pool_size)
        self.measure_spec = dict(measure_spec)
        self.oracle_kind = oracle_kind
        self.seed = seed
        self.items: list = []
        self.labels: list = []
        self.weights: list = []
        self.stages: list = []
        self.draw_idx: list = []
        self.probs: list = []
        self.budget_consumed = 0
        self.stage_starts: list = [0]
        # Intersection of supports over proposals that actually drew samples;
        # the audit gate for reusing this log under a different measure.
        self.support_all = np.ones(self.pool_size, dtype=bool)
        self.latest_probs: Optional[np.ndarray] = None
        self._pending_support: Optional[np.ndarray] = None
        self.kl_trace: list = []
        self.checkpoint_reports: dict = {}
        self._arrays: Optional[dict] = None

    def __len__(self) -> int:
        return len(self.items)

    def note_stage(self, proposal: Proposal) -> None:
        """Register a new active proposal; its support only constrains reuse
        once it has contributed at least one draw."""
        self.latest_probs = proposal.probs
        self._pending_support = proposal.support
        if len(self.items) != self.stage_starts[-1]:
            self.stage_starts.append(len(self.items))

    def append(self, item: int, label, weight: float, stage: int,
               draw_idx: int, prob: float) -> None:
        if not (np.isfinite(weight) and weight > 0.0):
            raise ValueError(f"importance weight must be positive and finite, got {weight}")
        if self._pending_support is not None:
            self.support_all &= self._pending_support
            self._pending_support = None
        self.items.append(int(item))
        self.labels.append(label)
        self.weights.append(float(weight))
        self.stages.append(int(stage))
        self.draw_idx.append(int(draw_idx))
        self.probs.append(float(prob))
        self._arrays = None

    def arrays(self) -> dict:
        if self._arrays is None:
            labels = np.asarray(self.labels)
            if labels.dtype.kind in "iub":
                labels = labels.astype(np.int64)
            self._arrays = {
                "items": np.asarray(self.items, dtype=np.int64),
                "labels": labels,
                "weights": np.asarray(self.weights, dtype=np.float64),
                "stages": np.asarray(self.stages, dtype=np.int64),
                "probs": np.asarray(self.probs, dtype=np.float64),
            }
        return self._arrays

    @property
    def stage_boundaries(self) -> list:
        return self.stage_starts + [len(self.items)]

    # -- serialization: one JSON header line, then one line per record -------
    def to_jsonl(self) -> str:
        header = {
            "schema": HISTORY_SCHEMA,
            "pool_size": self.pool_size,
            "measure": self.measure_spec,
            "oracle_kind": self.oracle_kind,
            "seed": self.seed,
            "budget_consumed": self.budget_consumed,
            "stage_starts": self.stage_starts,
            "support_all": np.packbits(self.support_all).tobytes().hex(),
            "latest_probs": None if self.latest_probs is None else self.latest_probs.tolist(),
        }
        lines = [json.dumps(header)]
        for i in range(len(self.items)):
            lines.append(json.dumps({
                "i": self.items[i], "y": self.labels[i], "w": self.weights[i],
                "t": self.stages[i], "n": self.draw_idx[i], "q": self.probs[i],
            }))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "RunHistory":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty history document")
        header = json.loads(lines[0])
        if header.get("schema") != HISTORY_SCHEMA:
            raise ValueError(f"unsupported history schema {header.get('schema')!r}")
        hist = cls(header["pool_size"], header["measure"], header["oracle_kind"],
                   header.get("seed"))
        hist.budget_consumed = header["budget_consumed"]
        hist.stage_starts = list(header["stage_starts"])
        bits = np.frombuffer(bytes.fromhex(header["support_all"]), dtype=np.uint8)
        hist.support_all = np.unpackbits(bits)[:hist.pool_size].astype(bool)
        if header.get("latest_probs") is not None:
            hist.latest_probs = np.asarray(header["latest_probs"], dtype=np.float64)
        for ln in lines[1:]:
            rec = json.loads(ln)
            hist.items.append(rec["i"])
            hist.labels.append(rec["y"])
            hist.weights.append(rec["w"])
            hist.stages.append(rec["t"])
            hist.draw_idx.append(rec["n"])
            hist.probs.append(rec["q"])
        return hist


@dataclass
class EstimateReport:
    """Everything a caller needs to quote an estimate responsibly."""

    G_hat: np.ndarray
    R_hat: np.ndarray
    n_samples: int
    budget_consumed: int
    stage: int = 0
    alpha: Optional[float] = None
    covariance: Optional[np.ndarray] = None
    intervals: Optional[np.ndarray] = None
    ellipsoid: Optional[dict] = None
    undefined: bool = False
    degenerate: bool = False
    exhausted: bool = False
    checkpoints: Optional[dict] = None

    def to_dict(self) -> dict:
        def _arr(a):
            return None if a is None else np.asarray(a).tolist()
        doc = {
            "schema": REPORT_SCHEMA,
            "G_hat": _arr(self.G_hat),
            "R_hat": _arr(self.R_hat),
            "n_samples": self.n_samples,
            "budget_consumed": self.budget_consumed,
            "stage": self.stage,
            "alpha": self.alpha,
            "covariance": _arr(self.covariance),
            "intervals": _arr(self.intervals),
            "ellipsoid": self.ellipsoid,
            "undefined": self.undefined,
            "degenerate": self.degenerate,
            "exhausted": self.exhausted,
        }
        if self.checkpoints:
            doc["checkpoints"] = {str(b): r.to_dict() for b, r in self.checkpoints.items()}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "EstimateReport":
        if doc.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema {doc.get('schema')!r}")

        def _arr(a):
            return None if a is None else np.asarray(a, dtype=np.float64)
        cps = doc.get("checkpoints")
        return cls(
            G_hat=_arr(doc["G_hat"]), R_hat=_arr(doc["R_hat"]),
            n_samples=doc["n_samples"], budget_consumed=doc["budget_consumed"],
            stage=doc.get("stage", 0), alpha=doc.get("alpha"),
            covariance=_arr(doc.get("covariance")), intervals=_arr(doc.get("intervals")),
            ellipsoid=doc.get("ellipsoid"), undefined=doc.get("undefined", False),
            degenerate=doc.get("degenerate", False), exhausted=doc.get("exhausted", False),
            checkpoints=None if not cps else {int(b): cls.from_dict(r) for b, r in cps.items()},
        )


# ---------------------------------------------------------------------------
# Estimators over a history
# ---------------------------------------------------------------------------

def _loss_matrix(measure: Measure, items: np.ndarray, labels: np.ndarray) -> np.ndarray:
    if measure.loss_table is not None:
        return measure.loss_table[measure.group_ids[items], labels.astype(np.int64)]
    return measure.loss_values(items, labels)


def _lossy_items(measure: Measure, pool_size: int) -> np.ndarray:
    """Mask of items that carry loss under some label (the measure's support
    requirement).  Measures without a finite label table are conservatively
    treated as needing the whole pool."""
    if measure.loss_table is None:
        return np.ones(pool_size, dtype=bool)
    nz = (np.abs(measure.loss_table) > 0.0).any(axis=(1, 2))
    return nz[measure.group_ids]


def _exact_risk_from_records(history: RunHistory, measure: Measure) -> np.ndarray:
    """Pool risk reconstructed from the (complete) deterministic label cache
    embedded in the records: every pool item appears at least once."""
    arr = history.arrays()
    label_of = np.full(history.pool_size, -1, dtype=np.int64)
    label_of[arr["items"]] = arr["labels"].astype(np.int64)
    loss = _loss_matrix(measure, np.arange(history.pool_size), label_of)
    return loss.mean(axis=0)


def estimate_covariance(history: RunHistory, measure: Measure) -> np.ndarray:
    """Delta-method covariance of Ĝ from the run log.

    Every record's weighted loss w_j l_j has conditional mean R given the
    draws before it, whatever proposal it was drawn from, so the sample
    covariance of those terms estimates N * Var(R̂) for the staged estimator
    exactly as it does for a fixed proposal.  (Plugging the latest proposal
    in for the limiting one instead would estimate the asymptotic variance,
    which can be far below the finite-sample variance while the proposal is
    still moving, producing intervals that undercover badly.)
    """
    arr = history.arrays()
    n = len(history)
    if n < 2:
        raise ValueError("covariance needs at least two records")
    loss = _loss_matrix(measure, arr["items"], arr["labels"])
    z = arr["weights"][:, None] * loss
    R_hat = z.mean(axis=0)
    inner = z.T @ z / n - np.outer(R_hat, R_hat)
    Dg = measure.jacobian(R_hat)
    cov = Dg @ inner @ Dg.T
    cov = 0.5 * (cov + cov.T)
    d = np.diagonal(cov).copy()
    # The inner matrix is a sample covariance, PSD up to rounding.
    d[(d < 0.0) & (d > -1e-12)] = 0.0
    np.fill_diagonal(cov, d)
    return cov


def confidence_region(report: EstimateReport, alpha: float) -> EstimateReport:
    """Attach marginal intervals and the F-scaled ellipsoid to a report.

    Marginal half-widths are sqrt(cov_ii * F(alpha,1,N-1) / N); the ellipsoid
    is {G: (G-Ĝ)ᵀ Σ̂⁻¹ (G-Ĝ) <= (N-1)m/(N(N-m)) F(alpha,m,N-m)}.  A singular
    covariance drops the ellipsoid and flags the report degenerate; intervals
    from the diagonal are kept.
    """
    out = copy.copy(report)
    out.alpha = float(alpha)
    cov = report.covariance
    n = report.n_samples
    m = report.G_hat.shape[0]
    if cov is None or n < 2 or report.undefined:
        out.intervals = None
        out.ellipsoid = None
        return out
    diag = np.clip(np.diagonal(cov), 0.0, None)
    half = np.sqrt(diag * f_critical(alpha, 1, n - 1) / n)
    out.intervals = np.stack([report.G_hat - half, report.G_hat + half], axis=1)
    out.ellipsoid = None
    if n > m:
        try:
            prec = np.linalg.inv(cov)
            scale = (n - 1) * m / (n * (n - m)) * f_critical(alpha, m, n - m)
            out.ellipsoid = {"radius_sq": float(scale),
                             "precision": prec.tolist()}
        except np.linalg.LinAlgError:
            out.degenerate = True
    else:
        out.degenerate = True
    return out


def estimate_G(history: RunHistory, measure: Measure, *, alpha: float = 0.05,
               audit: Optional[bool] = None,
               exact_at_exhaustion: bool = True,
               stage: Optional[int] = None) -> EstimateReport:
    """Importance-weighted estimate of the measure from a run log.

    R̂ is the plain weighted mean (1/N) sum w l; Ĝ = g(R̂).  Reusing a log
    under a measure other than the one it was collected for triggers a
    support audit (override with ``audit``): every item the new measure can
    assign loss to must lie in the support of every proposal that drew.

    When a deterministic oracle has exhausted the pool the records contain
    every label, so the report switches to the exact pool value (flagged
    ``exhausted``, zero-width intervals); any replay of the same log makes the
    identical switch, keeping replays bit-consistent.
    """
    n = len(history)
    if n == 0:
        raise EmptyHistoryError("history contains no records")
    if audit is None:
        audit = measure.spec() != history.measure_spec
    if audit:
        lossy = _lossy_items(measure, history.pool_size)
        missing = int(np.count_nonzero(lossy & ~history.support_all))
        if missing:
            raise SupportAuditError(
                f"{missing} items carrying {measure.name!r} loss were outside "
                "some logged proposal's support; this history cannot be reused")
    arr = history.arrays()
    loss = _loss_matrix(measure, arr["items"], arr["labels"])
    w = arr["weights"]
    R_hat = (w[:, None] * loss).mean(axis=0)
    exhausted = (exact_at_exhaustion and history.oracle_kind == "det"
                 and history.budget_consumed == history.pool_size)
    if exhausted:
        R_hat = _exact_risk_from_records(history, measure)
    G_hat = measure.map(R_hat)
    undefined = bool(np.isnan(G_hat).any())
    if stage is None:
        stage = int(arr["stages"].max()) if n else 0
    report = EstimateReport(
        G_hat=G_hat, R_hat=R_hat, n_samples=n,
        budget_consumed=history.budget_consumed, stage=stage,
        undefined=undefined, exhausted=exhausted)
    if exhausted and not undefined:
        report.covariance = np.zeros((G_hat.shape[0],) * 2)
        report.intervals = np.stack([G_hat, G_hat], axis=1)
        report.alpha = alpha
        return report
    m = G_hat.shape[0]
    if n > m and not undefined:
        report.covariance = estimate_covariance(history, measure)
        report = confidence_region(report, alpha)
    return report


def pool_exact_measure(pool, measure: Measure):
    """Ground-truth (G, R) over a fully labeled pool."""
    if pool.true_labels is None:
        raise ValueError("pool has no true labels")
    loss = _loss_matrix(measure, np.arange(pool.size), pool.true_labels)
    R = loss.mean(axis=0)
    return measure.map(R), R


# ---------------------------------------------------------------------------
# The adaptive loop
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Knobs for run_ais; defaults target desk-scale deterministic oracles."""

    stage_size: int = 10
    budget: Optional[int] = None
    max_stages: Optional[int] = None
    epsilon0: float = 0.1
    delta: float = 0.2
    oracle_kind: str = "det"            # "det" | "stoch"
    adapt: bool = True
    initial: str = "model"              # "model" | "uniform" | "scores"
    alpha: float = 0.05
    em_tol: float = 1e-8
    em_max_iter: int = 100
    checkpoints: Sequence[int] = ()
    kl_reference: Optional[np.ndarray] = None
    track_proposals: bool = False
    exact_at_exhaustion: bool = True

    def to_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in (
            "stage_size", "budget", "max_stages", "epsilon0", "delta",
            "oracle_kind", "adapt", "initial", "alpha", "em_tol",
            "em_max_iter", "exact_at_exhaustion")}
        doc["checkpoints"] = list(self.checkpoints)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        return cls(**doc)


class AISLoop:
    """Stateful core of the staged adaptive sampling loop.

    Exposes draw/record/advance as separate steps so the batch runner, the
    HTTP service and exhaustive enumeration tests can all drive the identical
    machinery.  ``record`` never advances the stage on its own; the driver
    decides when a stage is complete.
    """

    def __init__(self, pool, tree: Optional[PartitionTree], measure: Measure,
                 config: RunConfig, rng: np.random.Generator,
                 seed: Optional[int] = None):
        self.pool = pool
        self.tree = tree
        self.measure = measure
        self.config = config
        self.rng = rng
        self.stage = 0
        self.draws_in_stage = 0
        self.pending_batch: list = []
        self.history = RunHistory(pool.size, measure.spec(), config.oracle_kind, seed)

        needs_binding = config.adapt or config.initial == "scores"
        if needs_binding:
            bind_tree = tree if tree is not None else _single_leaf_tree(pool.size)
            self.binding = MeasureBinding(pool, bind_tree, measure)
        else:
            self.binding = None
        self.model: Optional[DirichletTreeModel] = None
        self.stoch_model: Optional[StochasticOracleModel] = None
        if config.adapt:
            if tree is None:
                raise ValueError("adaptive runs need a partition tree")
            if config.oracle_kind == "det":
                self.model = init_hyperparams(pool, tree)
            else:
                self.stoch_model = init_stochastic_model(pool, tree)
        self.proposal = self._initial_proposal()
        self.history.note_stage(self.proposal)
        self.proposal_log: list = [self.proposal.probs.copy()] if config.track_proposals else []
        self._note_kl()

    def _initial_proposal(self) -> Proposal:
        cfg = self.config
        if cfg.initial == "uniform" or (not cfg.adapt and cfg.initial == "model"):
            return uniform_proposal(self.pool.size)
        if cfg.initial == "scores":
            return static_score_proposal(self.binding, epsilon=cfg.epsilon0, delta=cfg.delta)
        # "model": prior-mode proposal before any labels arrive.
        if cfg.oracle_kind == "det":
            eps = epsilon_det(cfg.epsilon0, 0.0)
            return adapted_proposal_det(self.binding, self.model, eps, 0, cfg.delta)
        eps = epsilon_stoch(cfg.epsilon0, 0)
        return adapted_proposal_stoch(self.binding, self.stoch_model.predictive_matrix(),
                                      eps, 0, cfg.delta)

    def _mixing(self) -> float:
        # Exploration mass decays on the same schedule as the norm floor, so
        # a fully observed pool gets the pure model proposal.
        cfg = self.config
        if cfg.oracle_kind == "det":
            return cfg.delta * (1.0 - self.model.fraction_observed)
        return cfg.delta / (self.stage + 1.0)

    def _note_kl(self) -> None:
        ref = self.config.kl_reference
        if ref is not None:
            self.history.kl_trace.append({
                "stage": self.stage,
                "budget": self.history.budget_consumed,
                "kl": kl_to_optimal(np.asarray(ref), self.proposal.probs),
            })

    # -- stepping -------------------------------------------------------------
    def draw(self, n: int) -> np.ndarray:
        return self.proposal.draw(self.rng, n)

    def record(self, item: int, oracle) -> None:
        """Query (cache-aware) and append one record under the current stage."""
        label = oracle.query(int(item))
        q = float(self.proposal.probs[item])
        w = 1.0 / (self.pool.size * q)
        self.history.append(item, label, w, self.stage, self.draws_in_stage, q)
        self.history.budget_consumed = oracle.budget_consumed
        self.draws_in_stage += 1
        if self.model is not None:
            if self.model.observe(int(item), int(label)):
                self.binding.observe(int(item), int(label))
        elif self.stoch_model is not None:
            self.stoch_model.stochastic_update(item, label, w)

    def advance_stage(self) -> None:
        """Refit the label model on everything seen and rebuild the proposal."""
        self.stage += 1
        self.draws_in_stage = 0
        if not self.config.adapt:
            return
        cfg = self.config
        try:
            if cfg.oracle_kind == "det":
                self.model.em_fit(tol=cfg.em_tol, max_iter=cfg.em_max_iter)
                eps = epsilon_det(cfg.epsilon0, self.model.fraction_observed)
                self.proposal = adapted_proposal_det(self.binding, self.model, eps,
                                                     self.stage, self._mixing())
            else:
                eps = epsilon_stoch(cfg.epsilon0, self.stage)
                self.proposal = adapted_proposal_stoch(
                    self.binding, self.stoch_model.predictive_matrix(), eps,
                    self.stage, self._mixing())
        except DegenerateProposalError:
            # No loss mass left anywhere (e.g. a fully observed, error-free
            # pool once the floor has decayed to zero).  Keep sampling from
            # the current proposal; it stays a valid importance distribution.
            pass
        self.history.note_stage(self.proposal)
        if cfg.track_proposals:
            self.proposal_log.append(self.proposal.probs.copy())
        self._note_kl()

    def report(self, alpha: Optional[float] = None) -> EstimateReport:
        return estimate_G(self.history, self.measure,
                          alpha=self.config.alpha if alpha is None else alpha,
                          audit=False,
                          exact_at_exhaustion=self.config.exact_at_exhaustion,
                          stage=self.stage)

    # -- persistence ---------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": "ais-loop/1",
            "config": self.config.to_dict(),
            "stage": self.stage,
            "draws_in_stage": self.draws_in_stage,
            "pending_batch": [int(i) for i in self.pending_batch],
            "rng_state": self.rng.bit_generator.state,
            "proposal": {"probs": self.proposal.probs.tolist(),
                         "epsilon": self.proposal.epsilon,
                         "mixing": self.proposal.mixing,
                         "stage": self.proposal.stage},
            "model": None if self.model is None else self.model.to_dict(),
            "stoch_model": None if self.stoch_model is None else self.stoch_model.to_dict(),
            "history": self.history.to_jsonl(),
            "kl_trace": self.history.kl_trace,
            "checkpoint_reports": {str(b): r.to_dict()
                                   for b, r in self.history.checkpoint_reports.items()},
            "kl_reference": None if self.config.kl_reference is None
                            else np.asarray(self.config.kl_reference).tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, pool, tree: Optional[PartitionTree],
                  measure: Measure) -> "AISLoop":
        if doc.get("schema") != "ais-loop/1":
            raise ValueError(f"unsupported loop schema {doc.get('schema')!r}")
        config = RunConfig.from_dict(doc["config"])
        if doc.get("kl_reference") is not None:
            config.kl_reference = np.asarray(doc["kl_reference"], dtype=np.float64)
        loop = cls.__new__(cls)
        loop.pool = pool
        loop.tree = tree
        loop.measure = measure
        loop.config = config
        loop.rng = np.random.default_rng()
        loop.rng.bit_generator.state = doc["rng_state"]
        loop.stage = doc["stage"]
        loop.draws_in_stage = doc["draws_in_stage"]
        loop.pending_batch = list(doc["pending_batch"])
        loop.history = RunHistory.from_jsonl(doc["history"])
        loop.history.kl_trace = list(doc.get("kl_trace", []))
        loop.history.checkpoint_reports = {
            int(b): EstimateReport.from_dict(r)
            for b, r in doc.get("checkpoint_reports", {}).items()}
        needs_binding = config.adapt or config.initial == "scores"
        loop.binding = MeasureBinding(pool, tree if tree is not None
                                      else _single_leaf_tree(pool.size), measure) \
            if needs_binding else None
        loop.model = None
        loop.stoch_model = None
        if doc.get("model") is not None:
            loop.model = DirichletTreeModel.from_dict(doc["model"], tree)
            loop.binding.reset_observed(loop.model.obs_label)
        if doc.get("stoch_model") is not None:
            loop.stoch_model = StochasticOracleModel.from_dict(doc["stoch_model"], tree)
        p = doc["proposal"]
        loop.proposal = Proposal(np.asarray(p["probs"], dtype=np.float64),
                                 stage=p["stage"], epsilon=p["epsilon"],
                                 mixing=p["mixing"])
        loop.proposal_log = []
        return loop


def _single_leaf_tree(pool_size: int) -> PartitionTree:
    return PartitionTree(branching=1, depth=0,
                         block_of=np.zeros(pool_size, dtype=np.int64))


def _drive(loop: AISLoop, oracle, schedule: Optional[Sequence[int]],
           config: RunConfig) -> None:
    """Run stages until the schedule, the budget, or the pool gives out."""
    pool_cap = loop.pool.size if config.oracle_kind == "det" else None
    target = config.budget
    if target is not None and pool_cap is not None:
        target = min(target, pool_cap)
    checkpoints = sorted(set(config.checkpoints or ()))
    cp_reports = loop.history.checkpoint_reports

    def budget_done() -> bool:
        return target is not None and loop.history.budget_consumed >= target

    stage_iter = iter(schedule) if schedule is not None else None
    stages_run = 0
    while not budget_done():
        if stage_iter is not None:
            try:
                n_t = int(next(stage_iter))
            except StopIteration:
                break
        else:
            if config.max_stages is not None and stages_run >= config.max_stages:
                break
            n_t = config.stage_size
        if n_t < 1:
            raise ValueError("stage sizes must be at least 1")
        if not loop.pending_batch:
            loop.pending_batch = list(loop.draw(n_t))
        while loop.pending_batch:
            item = loop.pending_batch[0]
            before = loop.history.budget_consumed
            try:
                loop.record(item, oracle)
            except OracleUnavailable:
                raise RunSuspended(loop.to_dict())
            loop.pending_batch.pop(0)
            after = loop.history.budget_consumed
            if after > before:
                for b in checkpoints:
                    if before < b <= after and b not in cp_reports:
                        cp_reports[b] = loop.report()
            if budget_done():
                loop.pending_batch.clear()
                break
        stages_run += 1
        loop.advance_stage()
        # A deterministic oracle can stall a budget target: if every item the
        # proposal can still reach is already labeled, no draw will ever
        # consume budget again.
        observed = getattr(oracle, "observed", None)
        if (target is not None and not budget_done() and observed is not None
                and not loop.proposal.probs[~observed].any()):
            break


def run_ais(pool, tree: Optional[PartitionTree], measure: Measure, oracle,
            schedule: Optional[Sequence[int]] = None,
            config: Optional[RunConfig] = None,
            rng: Optional[np.random.Generator] = None,
            seed: Optional[int] = None):
    """Run the adaptive loop and return ``(EstimateReport, RunHistory)``.

    ``schedule`` gives explicit stage sizes; otherwise stages of
    ``config.stage_size`` repeat until ``config.budget`` distinct labels are
    consumed (capped at the pool for deterministic oracles).  Checkpoint
    budgets in the config produce snapshot reports on
    ``history.checkpoint_reports`` as those budgets are crossed.
    """
    config = config or RunConfig()
    if rng is None:
        rng = np.random.default_rng(seed)
    if schedule is None and config.budget is None and config.max_stages is None:
        raise ValueError("provide a schedule, a budget, or max_stages")
    loop = AISLoop(pool, tree, measure, config, rng, seed=seed)
    _drive(loop, oracle, schedule, config)
    report = loop.report()
    if loop.history.checkpoint_reports:
        report.checkpoints = loop.history.checkpoint_reports
    return report, loop.history


def resume_run(state: dict, pool, tree: Optional[PartitionTree], measure: Measure,
               oracle, schedule: Optional[Sequence[int]] = None):
    """Continue a suspended run from its serialized state.

    The oracle must already reflect the labels charged before suspension
    (deterministic simulated oracles rebuild that from the history records).
    """
    loop = AISLoop.from_dict(state, pool, tree, measure)
    if hasattr(oracle, "preload") and len(loop.history):
        arr = loop.history.arrays()
        oracle.preload(arr["items"], arr["labels"])
    _drive(loop, oracle, schedule, loop.config)
    report = loop.report()
    if loop.history.checkpoint_reports:
        report.checkpoints = loop.history.checkpoint_reports
    return report, loop.history


# ---------------------------------------------------------------------------
# Baseline estimators
# ---------------------------------------------------------------------------

def passive_estimate(pool, measure: Measure, oracle, N: int, *,
                     rng: Optional[np.random.Generator] = None,
                     seed: Optional[int] = None, alpha: float = 0.05) -> EstimateReport:
    """Uniform sampling with replacement; weights are identically one."""
    config = RunConfig(adapt=False, initial="uniform", alpha=alpha,
                       oracle_kind=getattr(oracle, "kind", "det"))
    report, _ = run_ais(pool, None, measure, oracle, schedule=[N],
                        config=config, rng=rng, seed=seed)
    return report


def static_is_estimate(pool, measure: Measure, oracle, N: int,
                       prior_scores: Optional[np.ndarray] = None, *,
                       rng: Optional[np.random.Generator] = None,
                       seed: Optional[int] = None, alpha: float = 0.05,
                       epsilon: float = 0.1) -> EstimateReport:
    """Single-stage importance sampling from a score-derived proposal.

    The classifier scores stand in for the label law; the constant epsilon
    floor keeps every lossy item in the support, so the estimate stays
    consistent even under adversarially wrong scores.
    """
    work_pool = pool if prior_scores is None else pool.with_scores(prior_scores)
    config = RunConfig(adapt=False, initial="scores", alpha=alpha,
                       epsilon0=epsilon, oracle_kind=getattr(oracle, "kind", "det"))
    report, _ = run_ais(work_pool, None, measure, oracle, schedule=[N],
                        config=config, rng=rng, seed=seed)
    return report


def stratified_estimate(pool, tree: PartitionTree, measure: Measure, oracle,
                        N: int, *, rng: Optional[np.random.Generator] = None,
                        seed: Optional[int] = None, alpha: float = 0.05,
                        checkpoints: Sequence[int] = ()) -> EstimateReport:
    """Online proportional-allocation stratified baseline.

    One item at a time: pick a stratum with probability proportional to its
    size, then a uniform item inside it.  The risk estimate is the
    size-weighted mean of per-stratum loss means, renormalized over strata
    seen so far; empty strata carry zero probability and are never drawn.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    sizes = tree.block_sizes.astype(np.float64)
    strata = [np.nonzero(tree.block_of == k)[0] for k in range(tree.K)]
    stratum_p = sizes / sizes.sum()
    d = measure.loss_dim
    sums = np.zeros((tree.K, d))
    sqs = np.zeros((tree.K, d, d))
    counts = np.zeros(tree.K, dtype=np.int64)
    budget0 = oracle.budget_consumed
    target = min(N, pool.size) if getattr(oracle, "kind", "det") == "det" else N
    cps = sorted(set(checkpoints or ()))
    cp_reports: dict = {}

    def current_report() -> EstimateReport:
        seen = counts > 0
        wk = sizes[seen] / sizes[seen].sum()
        means = sums[seen] / counts[seen, None]
        R_hat = wk @ means
        G_hat = measure.map(R_hat)
        n = int(counts.sum())
        rep = EstimateReport(G_hat=G_hat, R_hat=R_hat, n_samples=n,
                             budget_consumed=oracle.budget_consumed - budget0,
                             undefined=bool(np.isnan(G_hat).any()))
        if n > measure.out_dim and not rep.undefined:
            V = np.zeros((d, d))
            degenerate = False
            for k in np.nonzero(seen)[0]:
                if counts[k] < 2:
                    degenerate = True
                    continue
                mk = sums[k] / counts[k]
                Sk = (sqs[k] - counts[k] * np.outer(mk, mk)) / (counts[k] - 1)
                wk_k = sizes[k] / sizes[seen].sum()
                V += wk_k ** 2 * Sk / counts[k]
            Dg = measure.jacobian(R_hat)
            rep.covariance = n * (Dg @ V @ Dg.T)
            rep.degenerate = degenerate
            rep = confidence_region(rep, alpha)
        return rep

    draws = 0
    max_draws = 50 * max(target, 1) + 1000   # stall guard for exhausted pools
    while oracle.budget_consumed - budget0 < target and draws < max_draws:
        k = int(rng.choice(tree.K, p=stratum_p))
        items_k = strata[k]
        item = int(items_k[int(rng.integers(items_k.shape[0]))])
        before = oracle.budget_consumed
        label = oracle.query(item)
        loss = measure.loss(item, label)
        sums[k] += loss
        sqs[k] += np.outer(loss, loss)
        counts[k] += 1
        draws += 1
        after = oracle.budget_consumed
        if after > before:
            for b in cps:
                if before - budget0 < b <= after - budget0 and b not in cp_reports:
                    cp_reports[b] = current_report()
    report = current_report()
    if cp_reports:
        report.checkpoints = cp_reports
    return report
