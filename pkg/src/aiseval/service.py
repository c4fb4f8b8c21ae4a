"""HTTP session layer: the adaptive sampling loop with humans as the oracle.

A session wraps one ``AISLoop`` over a registered pool.  Annotators lease
pending queries, submit labels, and read the running estimate; the service
owns all statistics (clients never compute anything).  Label submissions are
authoritative in first-answer-wins order for deterministic-oracle sessions;
stochastic-oracle sessions treat every answer as a fresh draw.

Sessions persist as JSON documents after every mutation, so a restarted
service resumes with bit-identical proposals and RNG state.
"""
from __future__ import annotations

import json
import os
import threading
import uuid
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from .measures import UndefinedMeasureError, measure_from_spec
from .partition import (DegenerateStratificationError, grid_block_edges,
                        stratify_pool)
from .pool import TestPool
from .sampler import AISLoop, RunConfig

__all__ = ["SessionConfig", "ServiceState", "LabelSession", "create_app"]

SESSION_SCHEMA = "label-session/1"


def _http_error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status,
                         detail={"code": code, "message": message})


class SessionConfig(BaseModel):
    stage_size: int = Field(default=10, ge=1)
    K: int = 16
    branching: int = 2
    depth: int = 4
    epsilon0: float = 0.1
    delta: float = 0.2
    oracle: str = "det"                  # "det" | "stoch"
    max_budget: Optional[int] = None
    alpha: float = 0.05
    seed: Optional[int] = None           # None: derive from the session id


class CreateSessionRequest(BaseModel):
    pool_id: str
    measure: dict
    config: SessionConfig = Field(default_factory=SessionConfig)


class SubmitLabelRequest(BaseModel):
    query_id: str
    label: int
    annotator: str = "default"


class _SessionOracle:
    """Oracle adapter: the service learns labels from humans, then feeds them
    to the loop through the standard query interface.  Deterministic sessions
    cache by item and charge budget once; stochastic sessions charge always."""

    def __init__(self, deterministic: bool):
        self.deterministic = deterministic
        self.cache: dict = {}
        self.budget_consumed = 0
        self._provided: Optional[int] = None

    def provide(self, label: int) -> None:
        self._provided = label

    def query(self, item: int) -> int:
        if self.deterministic:
            if item in self.cache:
                label = self.cache[item]
            else:
                label = self._provided
                self.cache[item] = label
                self.budget_consumed += 1
        else:
            label = self._provided
            self.budget_consumed += 1
        self._provided = None
        return label


def _session_tree(pool: TestPool, measure, cfg: SessionConfig):
    if measure.name == "pr_curve":
        edges = grid_block_edges(np.asarray(measure.params["thresholds"]), 4)
        K = edges.shape[0] + 1
        depth = int(round(np.log2(K)))
        if 2 ** depth == K:
            return stratify_pool(pool, K, 2, depth, edges=edges)
        return stratify_pool(pool, K, K, 1, edges=edges)
    if cfg.branching ** cfg.depth != cfg.K:
        raise ValueError(f"branching**depth must equal K "
                         f"({cfg.branching}**{cfg.depth} != {cfg.K})")
    return stratify_pool(pool, cfg.K, cfg.branching, cfg.depth)


class LabelSession:
    """One adaptive annotation session; all mutations serialized by a lock."""

    def __init__(self, session_id: str, pool_id: str, pool: TestPool,
                 measure_spec: dict, cfg: SessionConfig):
        self.session_id = session_id
        self.pool_id = pool_id
        self.pool = pool
        self.cfg = cfg
        self.lock = threading.RLock()
        self.measure = measure_from_spec(measure_spec, pool.predictions())
        self.measure_spec = dict(measure_spec)
        self.tree = _session_tree(pool, self.measure, cfg)
        run_cfg = RunConfig(
            stage_size=cfg.stage_size, epsilon0=cfg.epsilon0, delta=cfg.delta,
            oracle_kind=cfg.oracle, alpha=cfg.alpha, adapt=True, initial="model")
        if cfg.seed is not None:
            seed = cfg.seed
        else:
            seed = int.from_bytes(session_id.encode()[:8].ljust(8, b"\0"), "big") % (2 ** 63)
        self.loop = AISLoop(pool, self.tree, self.measure, run_cfg,
                            np.random.default_rng(seed), seed=seed)
        self.oracle = _SessionOracle(cfg.oracle == "det")
        self.pending: dict = {}      # query_id -> {item, stage, prob, annotator}
        self.answered: dict = {}     # query_id -> {item, label}
        self.status = "active"
        self._query_counter = 0
        self.stage_advances = 0

    # -- capacity -------------------------------------------------------------
    @property
    def drawn_in_stage(self) -> int:
        return self.loop.draws_in_stage + len(self.pending)

    @property
    def max_budget(self) -> Optional[int]:
        if self.cfg.max_budget is not None:
            return self.cfg.max_budget
        return self.pool.size if self.cfg.oracle == "det" else None

    def _check_complete(self) -> None:
        cap = self.max_budget
        if cap is not None and self.oracle.budget_consumed >= cap:
            self.status = "complete"
            self.pending.clear()

    def _record(self, item: int, label: int) -> bool:
        """Feed one labeled item to the loop; advance the stage when full.
        Returns True when this record completed a stage."""
        self.oracle.provide(int(label))
        self.loop.record(item, self.oracle)
        advanced = False
        if self.loop.draws_in_stage >= self.cfg.stage_size:
            self.loop.advance_stage()
            self.stage_advances += 1
            advanced = True
        self._check_complete()
        return advanced

    def _new_query(self, item: int, annotator: str) -> dict:
        self._query_counter += 1
        qid = f"q-{self._query_counter:06d}"
        q = {"query_id": qid, "item": int(item), "stage": self.loop.stage,
             "prob": float(self.loop.proposal.probs[item]), "annotator": annotator}
        self.pending[qid] = q
        return q

    # -- operations ------------------------------------------------------------
    def next_queries(self, count: int, annotator: str) -> list:
        with self.lock:
            if self.status != "active":
                raise _http_error(409, f"session_{self.status}",
                                  f"session is {self.status}")
            mine = [q for q in self.pending.values() if q["annotator"] == annotator]
            to_issue = count - len(mine)
            if to_issue <= 0:
                issued = mine[:count]
                return [self._payload(q) for q in issued]
            capacity = self.cfg.stage_size - self.drawn_in_stage
            if to_issue > capacity:
                raise _http_error(
                    400, "stage_capacity_exceeded",
                    f"requested {to_issue} new queries but only {capacity} "
                    f"draws remain in stage {self.loop.stage}")
            budget_cap = self.max_budget
            consecutive_cached = 0
            while to_issue > 0 and self.status == "active":
                if (budget_cap is not None
                        and self.oracle.budget_consumed + len(self.pending) >= budget_cap):
                    break
                item = int(self.loop.draw(1)[0])
                if self.cfg.oracle == "det" and item in self.oracle.cache:
                    # Cached item: answer it server-side, no human needed.
                    self._record(item, self.oracle.cache[item])
                    consecutive_cached += 1
                    if consecutive_cached >= 4 * self.cfg.stage_size:
                        # Bail out if the proposal can no longer reach an
                        # unlabeled item; otherwise this loop could spin.
                        uncached = np.ones(self.pool.size, dtype=bool)
                        uncached[list(self.oracle.cache)] = False
                        if not self.loop.proposal.probs[uncached].any():
                            break
                        consecutive_cached = 0
                    continue
                consecutive_cached = 0
                mine.append(self._new_query(item, annotator))
                to_issue -= 1
            return [self._payload(q) for q in mine]

    def _payload(self, q: dict) -> dict:
        return {"query_id": q["query_id"], "item_id": self.pool.item_ids[q["item"]],
                "display": self.pool.display_text(q["item"]), "stage": q["stage"]}

    def submit_label(self, query_id: str, label: int, annotator: str) -> dict:
        with self.lock:
            if query_id in self.answered:
                prev = self.answered[query_id]
                if prev["label"] == label:
                    return {"recorded": False, "duplicate": True,
                            "stage_advanced": False, **self._progress()}
                raise _http_error(409, "conflict",
                                  "query already answered differently; first answer wins")
            if self.status != "active":
                raise _http_error(409, f"session_{self.status}",
                                  f"session is {self.status}")
            q = self.pending.get(query_id)
            if q is None:
                raise _http_error(404, "unknown_query", f"no pending query {query_id!r}")
            if not (0 <= label < self.pool.n_classes):
                raise _http_error(400, "invalid_label",
                                  f"label must be in [0, {self.pool.n_classes})")
            item = q["item"]
            if (self.cfg.oracle == "det" and item in self.oracle.cache
                    and self.oracle.cache[item] != label):
                raise _http_error(409, "conflict",
                                  "item already labeled differently; first answer wins")
            del self.pending[query_id]
            self.answered[query_id] = {"item": item, "label": label}
            advanced = self._record(item, label)
            if self.cfg.oracle == "det":
                # Resolve any other pending queries on the same item from the cache.
                dupes = [k for k, v in self.pending.items() if v["item"] == item]
                for k in dupes:
                    v = self.pending.pop(k)
                    self.answered[k] = {"item": item, "label": label}
                    advanced = self._record(item, label) or advanced
            return {"recorded": True, "duplicate": False,
                    "stage_advanced": advanced, **self._progress()}

    def force_advance(self) -> dict:
        """Admin action: truncate the current stage (cancelling its pending
        queries) and refit now."""
        with self.lock:
            self.pending.clear()
            if self.loop.draws_in_stage > 0:
                self.loop.advance_stage()
                self.stage_advances += 1
            return {"stage": self.loop.stage, **self._progress()}

    def _progress(self) -> dict:
        return {
            "budget_consumed": self.oracle.budget_consumed,
            "stage": self.loop.stage,
            "n_records": len(self.loop.history),
            "status": self.status,
            "stage_advances": self.stage_advances,
        }

    def estimate(self) -> dict:
        with self.lock:
            if len(self.loop.history) == 0:
                return {"no_data": True, **self._progress()}
            self.loop.history.budget_consumed = self.oracle.budget_consumed
            report = self.loop.report(alpha=self.cfg.alpha)
            return {"no_data": False, "report": report.to_dict(), **self._progress()}

    def export_jsonl(self) -> str:
        with self.lock:
            return self.loop.history.to_jsonl()

    def meta(self) -> dict:
        return {
            "session_id": self.session_id,
            "pool_id": self.pool_id,
            "pool_size": self.pool.size,
            "n_classes": self.pool.n_classes,
            "measure": self.measure_spec,
            "stage_size": self.cfg.stage_size,
            "oracle": self.cfg.oracle,
            "max_budget": self.max_budget,
            **self._progress(),
        }

    # -- persistence --------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": SESSION_SCHEMA,
            "session_id": self.session_id,
            "pool_id": self.pool_id,
            "measure": self.measure_spec,
            "config": self.cfg.model_dump(),
            "status": self.status,
            "query_counter": self._query_counter,
            "stage_advances": self.stage_advances,
            "pending": list(self.pending.values()),
            "answered": self.answered,
            "oracle": {"cache": {str(k): v for k, v in self.oracle.cache.items()},
                       "budget_consumed": self.oracle.budget_consumed},
            "loop": self.loop.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict, pool: TestPool) -> "LabelSession":
        if doc.get("schema") != SESSION_SCHEMA:
            raise ValueError(f"unsupported session schema {doc.get('schema')!r}")
        cfg = SessionConfig(**doc["config"])
        sess = cls.__new__(cls)
        sess.session_id = doc["session_id"]
        sess.pool_id = doc["pool_id"]
        sess.pool = pool
        sess.cfg = cfg
        sess.lock = threading.RLock()
        sess.measure_spec = dict(doc["measure"])
        sess.measure = measure_from_spec(sess.measure_spec, pool.predictions())
        sess.tree = _session_tree(pool, sess.measure, cfg)
        sess.loop = AISLoop.from_dict(doc["loop"], pool, sess.tree, sess.measure)
        sess.oracle = _SessionOracle(cfg.oracle == "det")
        sess.oracle.cache = {int(k): v for k, v in doc["oracle"]["cache"].items()}
        sess.oracle.budget_consumed = doc["oracle"]["budget_consumed"]
        sess.pending = {q["query_id"]: q for q in doc["pending"]}
        sess.answered = dict(doc["answered"])
        sess.status = doc["status"]
        sess._query_counter = doc["query_counter"]
        sess.stage_advances = doc.get("stage_advances", 0)
        return sess

    def save(self, sessions_dir: str) -> None:
        os.makedirs(sessions_dir, exist_ok=True)
        path = os.path.join(sessions_dir, f"{self.session_id}.json")
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
        os.replace(tmp, path)


class ServiceState:
    """Pools and sessions; the app object holds exactly one of these."""

    def __init__(self, sessions_dir: Optional[str] = None):
        self.pools: dict = {}
        self.sessions: dict = {}
        self.sessions_dir = sessions_dir

    def add_pool(self, pool: TestPool, pool_id: Optional[str] = None) -> str:
        pid = pool_id or pool.name
        self.pools[pid] = pool
        return pid

    def load_sessions(self) -> int:
        if not self.sessions_dir or not os.path.isdir(self.sessions_dir):
            return 0
        n = 0
        for fn in sorted(os.listdir(self.sessions_dir)):
            if not fn.endswith(".json"):
                continue
            with open(os.path.join(self.sessions_dir, fn), encoding="utf-8") as fh:
                doc = json.load(fh)
            pool = self.pools.get(doc.get("pool_id"))
            if pool is None:
                continue
            sess = LabelSession.from_dict(doc, pool)
            self.sessions[sess.session_id] = sess
            n += 1
        return n

    def persist(self, sess: LabelSession) -> None:
        if self.sessions_dir:
            sess.save(self.sessions_dir)


def create_app(state: Optional[ServiceState] = None,
               static_dir: Optional[str] = None) -> FastAPI:
    state = state or ServiceState()
    app = FastAPI(title="adaptive labeling service")
    app.state.svc = state

    def _get_session(session_id: str) -> LabelSession:
        sess = state.sessions.get(session_id)
        if sess is None:
            raise _http_error(404, "unknown_session", f"no session {session_id!r}")
        return sess

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        pool = state.pools.get(req.pool_id)
        if pool is None:
            raise _http_error(404, "unknown_pool", f"no pool {req.pool_id!r}")
        if req.config.oracle not in ("det", "stoch"):
            raise _http_error(400, "invalid_config", "oracle must be 'det' or 'stoch'")
        sid = uuid.uuid4().hex[:12]
        try:
            sess = LabelSession(sid, req.pool_id, pool, req.measure, req.config)
        except (UndefinedMeasureError, KeyError, TypeError) as exc:
            raise _http_error(400, "invalid_measure", str(exc))
        except (DegenerateStratificationError, ValueError) as exc:
            raise _http_error(400, "invalid_config", str(exc))
        state.sessions[sid] = sess
        state.persist(sess)
        return sess.meta()

    @app.get("/sessions/{session_id}")
    def session_meta(session_id: str):
        return _get_session(session_id).meta()

    @app.get("/sessions/{session_id}/queries")
    def next_queries(session_id: str, count: int = Query(default=1, ge=0),
                     annotator: str = "default"):
        sess = _get_session(session_id)
        queries = sess.next_queries(count, annotator) if count > 0 else []
        state.persist(sess)
        return {"queries": queries, **sess._progress()}

    @app.post("/sessions/{session_id}/labels")
    def submit_label(session_id: str, req: SubmitLabelRequest):
        sess = _get_session(session_id)
        ack = sess.submit_label(req.query_id, req.label, req.annotator)
        state.persist(sess)
        return ack

    @app.get("/sessions/{session_id}/estimate")
    def get_estimate(session_id: str):
        return _get_session(session_id).estimate()

    @app.get("/sessions/{session_id}/export", response_class=PlainTextResponse)
    def export_history(session_id: str):
        return _get_session(session_id).export_jsonl()

    @app.post("/sessions/{session_id}/advance")
    def force_advance(session_id: str):
        sess = _get_session(session_id)
        out = sess.force_advance()
        state.persist(sess)
        return out

    @app.get("/pools")
    def list_pools():
        return {pid: {"size": p.size, "n_classes": p.n_classes}
                for pid, p in state.pools.items()}

    if static_dir and os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app
