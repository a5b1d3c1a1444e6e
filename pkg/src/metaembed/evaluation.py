"""Scoring primitives and evaluation drivers for sentence pairs.

Unsupervised similarity: cosine between the two sentence vectors, mapped
onto the task's score range (negative cosines clamp to the range floor,
since the tasks treat cosine 0 as "least similar"), compared to gold scores
by Pearson correlation.  Classification: predicted label against gold label,
summarized by accuracy in percent.  Every driver returns an
:class:`EvalReport` whose fingerprint hashes all inputs and seeds, so two
reports with the same fingerprint are guaranteed to describe the same run;
the per-pair rows come back alongside so callers can write predictions next
to the summary.
"""

from __future__ import annotations

import hashlib
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .store import EmbeddingTable, sequence_views

__all__ = [
    "cosine",
    "scale_similarity",
    "pearson",
    "accuracy",
    "EvalReport",
    "config_fingerprint",
    "format_report_table",
    "evaluate_similarity",
    "evaluate_classification",
    "embed_table",
]


def _vector(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValidationError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite entries")
    return a


def cosine(u, v) -> float:
    """Cosine similarity, clamped into [-1, 1]; zero vectors are an error."""
    a = _vector(u, "u")
    b = _vector(v, "v")
    if a.size != b.size:
        raise ValidationError(f"length mismatch: {a.size} vs {b.size}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine of a zero vector is undefined")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def scale_similarity(cos: float, lo: float = 0.0, hi: float = 5.0) -> float:
    """Map a cosine onto [lo, hi]: lo + max(0, cos) * (hi - lo).

    Cosine 1 is the ceiling and cosine 0 the floor; negative cosines clamp
    to the floor rather than extending the scale below it, because the
    similarity tasks have no notion of "less similar than unrelated".
    """
    if not hi > lo:
        raise ValidationError(f"range must satisfy hi > lo, got [{lo}, {hi}]")
    return lo + max(0.0, float(cos)) * (hi - lo)


def pearson(x, y) -> float:
    """Pearson correlation of two equal-length samples, clamped into [-1, 1].

    Computed from centered sums (two passes) rather than the raw-moment
    arrangement; the two are algebraically equal and the centered form does
    not cancel catastrophically.
    """
    a = _vector(x, "x")
    b = _vector(y, "y")
    if a.size != b.size:
        raise ValidationError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValidationError("need at least two points")
    ac = a - a.mean()
    bc = b - b.mean()
    na = float(np.linalg.norm(ac))
    nb = float(np.linalg.norm(bc))
    if na == 0.0:
        raise ValidationError("zero variance in x; correlation is undefined")
    if nb == 0.0:
        raise ValidationError("zero variance in y; correlation is undefined")
    return float(np.clip(float(ac @ bc) / (na * nb), -1.0, 1.0))


def accuracy(golds, preds) -> float:
    """Percentage of positions where the two label sequences agree, in [0, 100]."""
    golds = list(golds)
    preds = list(preds)
    if len(golds) != len(preds):
        raise ValidationError(f"length mismatch: {len(golds)} vs {len(preds)}")
    if not golds:
        raise ValidationError("need at least one labeled example")
    return 100.0 * (sum(g == p for g, p in zip(golds, preds)) / len(golds))


class EvalReport(NamedTuple):
    """One evaluation outcome: a metric value plus its provenance hash."""

    task: str
    metric: str
    value: float
    n: int
    fingerprint: str


def config_fingerprint(*parts) -> str:
    """Stable hex digest of everything that determined a report.

    Accepts strings, numbers, sequences and numpy arrays; identical inputs
    (including seeds) always hash identically, so a fingerprint match means
    the reports are comparable.
    """
    h = hashlib.sha256()
    for part in _flatten(parts):
        h.update(part)
        h.update(b"\x1f")
    return h.hexdigest()


def _flatten(part):
    if isinstance(part, bytes):
        yield part
    elif isinstance(part, np.ndarray):
        a = np.ascontiguousarray(part, dtype=np.float64)
        yield str(a.shape).encode()
        yield a.tobytes()
    elif isinstance(part, (str, int, float, bool)) or part is None:
        yield repr(part).encode()
    elif isinstance(part, (list, tuple)):
        yield b"("
        for item in part:
            yield from _flatten(item)
        yield b")"
    else:
        raise ValidationError(f"cannot fingerprint a {type(part).__name__}")


def format_report_table(reports) -> str:
    """Aligned plain-text table of reports, one line per report."""
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to format")
    rows = [("task", "metric", "value", "n", "fingerprint")]
    for r in reports:
        rows.append((r.task, r.metric, f"{r.value:.6f}", str(r.n), r.fingerprint[:12]))
    widths = [max(len(row[c]) for row in rows) for c in range(5)]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def _table_digest(table: EmbeddingTable) -> list:
    return [table.ids, table.vectors]


def _check_pair_ids(table: EmbeddingTable, pairs) -> None:
    missing = sorted({i for p in pairs for i in (p.id_a, p.id_b) if i not in table})
    if missing:
        shown = ", ".join(repr(m) for m in missing[:10])
        more = "" if len(missing) <= 10 else f" (and {len(missing) - 10} more)"
        raise ValidationError(f"{len(missing)} pair id(s) have no vector: {shown}{more}")


def evaluate_similarity(table: EmbeddingTable, pairs, lo: float = 0.0, hi: float = 5.0,
                        task: str = "sts") -> tuple:
    """Score every pair by scaled cosine of its sentence vectors.

    *table* maps sentence ids to vectors; each pair carries a gold score as
    its label.  Returns (EvalReport with the Pearson correlation, rows of
    (id_a, id_b, gold, predicted)).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("no pairs to evaluate")
    _check_pair_ids(table, pairs)
    golds = []
    preds = []
    rows = []
    for p in pairs:
        try:
            gold = float(p.label)
        except (TypeError, ValueError):
            raise ValidationError(
                f"pair ({p.id_a}, {p.id_b}) has no usable gold score: {p.label!r}"
            ) from None
        pred = scale_similarity(cosine(table.row(p.id_a), table.row(p.id_b)), lo, hi)
        golds.append(gold)
        preds.append(pred)
        rows.append((p.id_a, p.id_b, gold, pred))
    value = pearson(preds, golds)
    fingerprint = config_fingerprint(
        task, "pearson", lo, hi,
        [(p.id_a, p.id_b, float(p.label)) for p in pairs],
        *_table_digest(table),
    )
    return EvalReport(task, "pearson", value, len(pairs), fingerprint), rows


def evaluate_classification(model, tables, pairs, task: str = "classification") -> tuple:
    """Predict a label for every pair with *model* and compare to gold.

    Returns (EvalReport with accuracy in percent, rows of
    (id_a, id_b, gold, predicted)).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("no pairs to evaluate")
    known = set(model.classes)
    golds = []
    preds = []
    rows = []
    for p in pairs:
        if p.label not in known:
            raise ValidationError(
                f"gold label {p.label!r} is not among the model classes {list(model.classes)}"
            )
        pred = model.predict_label(sequence_views(tables, p.id_a), sequence_views(tables, p.id_b))
        golds.append(p.label)
        preds.append(pred)
        rows.append((p.id_a, p.id_b, p.label, pred))
    value = accuracy(golds, preds)
    fingerprint = config_fingerprint(
        task, "accuracy", model.kind, model.seed,
        [(p.id_a, p.id_b, p.label) for p in pairs],
        [model.params[k] for k in sorted(model.params)],
    )
    return EvalReport(task, "accuracy", value, len(pairs), fingerprint), rows


def embed_table(model, tables, ids) -> EmbeddingTable:
    """Sentence vectors for *ids* computed by a dynamic model, as a table."""
    ids = list(ids)
    if not ids:
        raise ValidationError("no ids to embed")
    out = np.empty((len(ids), model.dim))
    for k, ident in enumerate(ids):
        out[k] = model.embed(sequence_views(tables, ident))[0]
    return EmbeddingTable(ids, out)
