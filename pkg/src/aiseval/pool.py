"""Test pools: finite item collections with classifier scores.

A pool is the sampling universe: M items with unique ids, per-class scores
(rows summing to one; softmax-normalized at ingestion when they do not), a
scalar raw score used for thresholds and stratification, optional true
labels (experiment mode) and optional display text for annotators.  The
item marginal is uniform, p(x) = 1/M.
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .measures import PredictionSource, softmax_rows

__all__ = ["TestPool", "PoolFormatError", "load_pool_csv", "save_pool_csv"]


class PoolFormatError(ValueError):
    """Malformed pool file; carries the offending row number when known."""


@dataclass
class TestPool:
    __test__ = False  # keep pytest from collecting this as a test class

    item_ids: list
    scores: np.ndarray                       # (M, C), rows sum to 1
    raw_scores: np.ndarray                   # (M,)
    true_labels: Optional[np.ndarray] = None  # (M,) int, experiment mode only
    display: Optional[list] = None
    name: str = "pool"
    _predictions: PredictionSource = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        M = len(self.item_ids)
        if M < 1:
            raise PoolFormatError("pool must contain at least one item")
        if len(set(self.item_ids)) != M:
            raise PoolFormatError("item ids must be unique")
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.raw_scores = np.asarray(self.raw_scores, dtype=np.float64)
        if self.scores.shape[0] != M or self.raw_scores.shape[0] != M:
            raise PoolFormatError("scores and ids disagree on pool size")
        sums = self.scores.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise PoolFormatError("score rows must sum to 1 (ingestion normalizes)")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)

    @property
    def size(self) -> int:
        return len(self.item_ids)

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]

    @property
    def marginal(self) -> float:
        """Uniform item probability p(x)."""
        return 1.0 / self.size

    def predictions(self) -> PredictionSource:
        if self._predictions is None:
            self._predictions = PredictionSource(
                predicted=self.scores.argmax(axis=1).astype(np.int32),
                raw=self.raw_scores,
                scores=self.scores,
            )
        return self._predictions

    def display_text(self, i: int) -> str:
        if self.display is not None:
            return self.display[i]
        return f"{self.item_ids[i]} (score {self.raw_scores[i]:.4f})"

    def with_scores(self, scores: np.ndarray) -> "TestPool":
        """Copy of the pool with a replacement score matrix (same items and
        labels); used to feed external prior scores into score-driven
        estimators."""
        scores = np.asarray(scores, dtype=np.float64)
        raw = scores[:, -1] if scores.shape[1] == 2 else scores.max(axis=1)
        return TestPool(item_ids=list(self.item_ids), scores=scores,
                        raw_scores=raw, true_labels=self.true_labels,
                        display=self.display, name=self.name)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(("\n".join(map(str, self.item_ids))).encode())
        h.update(np.ascontiguousarray(self.scores).tobytes())
        h.update(np.ascontiguousarray(self.raw_scores).tobytes())
        if self.true_labels is not None:
            h.update(np.ascontiguousarray(self.true_labels).tobytes())
        return h.hexdigest()[:16]


def _sniff_delimiter(first_line: str) -> str:
    return "\t" if "\t" in first_line else ","


def load_pool_csv(path_or_buffer, name: Optional[str] = None) -> TestPool:
    """Ingest a pool from CSV/TSV.

    Header must contain ``id`` plus either one ``score_<class>`` column per
    class or a single ``score`` column (binary).  Optional columns: ``label``
    (integer true label) and ``display`` (annotator-facing text).  Rows that
    fail to parse abort ingestion with their row number.  Score rows that do
    not already sum to one are softmax-normalized once, here.
    """
    if hasattr(path_or_buffer, "read"):
        text = path_or_buffer.read()
        src_name = name or "pool"
    else:
        with open(path_or_buffer, "r", encoding="utf-8") as fh:
            text = fh.read()
        src_name = name or str(path_or_buffer)

    lines = text.splitlines()
    if not lines:
        raise PoolFormatError("empty pool file")
    reader = csv.DictReader(io.StringIO(text), delimiter=_sniff_delimiter(lines[0]))
    header = reader.fieldnames or []
    if "id" not in header:
        raise PoolFormatError("missing required column 'id'")

    score_cols = sorted((c for c in header if c.startswith("score_")),
                        key=lambda c: int(c.split("_", 1)[1]))
    single = "score" in header
    if not score_cols and not single:
        raise PoolFormatError("need either score_<class> columns or a 'score' column")
    expect = [int(c.split("_", 1)[1]) for c in score_cols]
    if score_cols and expect != list(range(len(expect))):
        raise PoolFormatError(f"score columns must cover classes 0..C-1, got {expect}")

    ids, raw_rows, labels, display = [], [], [], []
    has_label = "label" in header
    has_display = "display" in header
    for rownum, row in enumerate(reader, start=2):  # header is row 1
        try:
            ids.append(row["id"])
            if single:
                raw_rows.append([float(row["score"])])
            else:
                raw_rows.append([float(row[c]) for c in score_cols])
            if has_label:
                labels.append(int(row["label"]))
            if has_display:
                display.append(row["display"])
        except (TypeError, ValueError, KeyError) as exc:
            raise PoolFormatError(f"row {rownum}: malformed record ({exc})") from exc

    values = np.asarray(raw_rows, dtype=np.float64)
    if single:
        s1 = values[:, 0]
        if ((s1 < 0) | (s1 > 1)).any():
            # Treat as a logit and squash; equivalent to a 2-class softmax.
            s1 = 1.0 / (1.0 + np.exp(-s1))
        scores = np.stack([1.0 - s1, s1], axis=1)
        raw = s1
    else:
        sums = values.sum(axis=1)
        if np.allclose(sums, 1.0, atol=1e-9) and (values >= 0).all():
            scores = values
        else:
            scores = softmax_rows(values)
        raw = scores[:, -1] if values.shape[1] == 2 else values.max(axis=1)

    return TestPool(
        item_ids=ids,
        scores=scores,
        raw_scores=raw,
        true_labels=np.asarray(labels, dtype=np.int64) if has_label else None,
        display=display if has_display else None,
        name=src_name,
    )


def save_pool_csv(pool: TestPool, path) -> None:
    cols = ["id"] + [f"score_{c}" for c in range(pool.n_classes)]
    if pool.true_labels is not None:
        cols.append("label")
    if pool.display is not None:
        cols.append("display")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i, item_id in enumerate(pool.item_ids):
            row = [item_id] + [repr(float(s)) for s in pool.scores[i]]
            if pool.true_labels is not None:
                row.append(int(pool.true_labels[i]))
            if pool.display is not None:
                row.append(pool.display[i])
            w.writerow(row)
