"""Embedding tables and their on-disk text formats.

Two table kinds cover everything the combiners consume:

* vector table: one fixed-width vector per id.  File format is a header
  line ``N D`` followed by N rows ``id v1 ... vD``.
* sequence table: one (S, D) matrix per id, e.g. the token embeddings of a
  sentence.  File format is a header line ``N D`` followed by N blocks,
  each a line ``#id S`` and then S rows of D values.

Files are UTF-8 with LF line endings and single-space separators.  Values
are written with 17 significant digits so a save/load round trip reproduces
every float64 bit-for-bit.  Ids are arbitrary non-empty strings without
whitespace.  Parse failures raise :class:`FileFormatError` carrying the path
and the 1-based line number.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import FileFormatError, ValidationError
from .linalg import as_matrix

__all__ = [
    "EmbeddingTable",
    "SequenceTable",
    "load_vector_table",
    "save_vector_table",
    "load_sequence_table",
    "save_sequence_table",
    "sniff_table_kind",
    "intersect_ids",
    "AlignedViews",
    "align_by_id",
    "sequence_views",
]


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _check_ids(ids) -> tuple[str, ...]:
    out = tuple(ids)
    seen = set()
    for i, ident in enumerate(out):
        if not isinstance(ident, str) or not ident:
            raise ValidationError(f"id at position {i} is empty or not a string")
        if any(ch.isspace() for ch in ident):
            raise ValidationError(f"id {ident!r} contains whitespace")
        if ident in seen:
            raise ValidationError(f"duplicate id {ident!r}")
        seen.add(ident)
    return out


class EmbeddingTable:
    """An ordered id -> vector mapping backed by one (N, D) float64 matrix."""

    def __init__(self, ids, vectors):
        self.vectors = as_matrix(vectors, "vectors")
        self.ids = _check_ids(ids)
        if len(self.ids) != self.vectors.shape[0]:
            raise ValidationError(
                f"{len(self.ids)} ids for {self.vectors.shape[0]} vector rows"
            )
        self._index = {ident: i for i, ident in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, ident) -> bool:
        return ident in self._index

    def index(self, ident: str) -> int:
        try:
            return self._index[ident]
        except KeyError:
            raise ValidationError(f"unknown embedding id {ident!r}") from None

    def row(self, ident: str) -> np.ndarray:
        return self.vectors[self.index(ident)]

    def lookup(self, ids) -> np.ndarray:
        """Rows for *ids*, in order, as a new (len(ids), D) matrix."""
        ids = list(ids)
        missing = [i for i in ids if i not in self._index]
        if missing:
            shown = ", ".join(repr(m) for m in missing[:5])
            more = "" if len(missing) <= 5 else f" (and {len(missing) - 5} more)"
            raise ValidationError(f"unknown embedding id(s): {shown}{more}")
        rows = np.fromiter((self._index[i] for i in ids), dtype=np.intp, count=len(ids))
        return self.vectors[rows].copy()


class SequenceTable:
    """An ordered id -> (S, D) matrix mapping; all matrices share D."""

    def __init__(self, ids, matrices):
        self.ids = _check_ids(ids)
        mats = [as_matrix(m, f"sequence {ident!r}") for ident, m in zip(self.ids, matrices)]
        if len(self.ids) != len(mats):
            raise ValidationError(f"{len(self.ids)} ids for {len(mats)} sequences")
        if not mats:
            raise ValidationError("sequence table must contain at least one sequence")
        dims = {m.shape[1] for m in mats}
        if len(dims) != 1:
            raise ValidationError(f"sequences have mixed widths: {sorted(dims)}")
        self.matrices = mats
        self._index = {ident: i for i, ident in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.matrices[0].shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, ident) -> bool:
        return ident in self._index

    def lookup(self, ident: str) -> np.ndarray:
        try:
            return self.matrices[self._index[ident]]
        except KeyError:
            raise ValidationError(f"unknown sequence id {ident!r}") from None

    @classmethod
    def from_vector_table(cls, table: EmbeddingTable) -> "SequenceTable":
        """View each vector as a length-1 sequence."""
        return cls(table.ids, [table.vectors[i : i + 1] for i in range(len(table))])


def _read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise FileFormatError(path, 1, f"cannot read file: {exc}") from exc
    return text.splitlines()


def _parse_header(lines: list[str], path) -> tuple[int, int]:
    if not lines or not lines[0].strip():
        raise FileFormatError(path, 1, "empty file; expected header 'N D'")
    tokens = lines[0].split()
    if len(tokens) != 2:
        raise FileFormatError(path, 1, f"expected header 'N D', got {lines[0]!r}")
    try:
        n, d = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise FileFormatError(path, 1, f"expected header 'N D', got {lines[0]!r}") from None
    if n < 1 or d < 1:
        raise FileFormatError(path, 1, f"header counts must be positive, got {n} {d}")
    return n, d


def _parse_values(tokens: list[str], d: int, path, lineno: int) -> np.ndarray:
    if len(tokens) != d:
        raise FileFormatError(path, lineno, f"expected {d} values, got {len(tokens)}")
    try:
        return np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError:
        bad = next(t for t in tokens if not _is_float(t))
        raise FileFormatError(path, lineno, f"could not parse value {bad!r}") from None


def _is_float(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def _check_trailing(lines: list[str], used: int, path) -> None:
    for extra in range(used, len(lines)):
        if lines[extra].strip():
            raise FileFormatError(path, extra + 1, "unexpected content after the declared rows")


def _truncated(path, lines: list[str], what: str) -> FileFormatError:
    last = max(1, len(lines))
    return FileFormatError(path, last, f"{what}; file ends after line {last}")


def load_vector_table(path) -> EmbeddingTable:
    """Parse a vector table file."""
    lines = _read_lines(path)
    n, d = _parse_header(lines, path)
    ids: list[str] = []
    rows = np.empty((n, d), dtype=np.float64)
    seen: set[str] = set()
    for i in range(n):
        lineno = 2 + i
        if lineno > len(lines):
            raise _truncated(path, lines, f"expected {n} data rows")
        tokens = lines[lineno - 1].split()
        if not tokens:
            raise FileFormatError(path, lineno, "unexpected blank line")
        ident = tokens[0]
        if ident in seen:
            raise FileFormatError(path, lineno, f"duplicate id {ident!r}")
        seen.add(ident)
        rows[i] = _parse_values(tokens[1:], d, path, lineno)
        ids.append(ident)
    _check_trailing(lines, 1 + n, path)
    if not np.all(np.isfinite(rows)):
        bad = int(np.argwhere(~np.isfinite(rows).all(axis=1))[0, 0])
        raise FileFormatError(path, 2 + bad, "non-finite value")
    return EmbeddingTable(ids, rows)


def save_vector_table(path, table: EmbeddingTable) -> None:
    """Write *table* in the vector table format (17 significant digits)."""
    out = [f"{len(table)} {table.dim}"]
    for ident, row in zip(table.ids, table.vectors):
        out.append(ident + " " + " ".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(out) + "\n")


def load_sequence_table(path) -> SequenceTable:
    """Parse a sequence table file."""
    lines = _read_lines(path)
    n, d = _parse_header(lines, path)
    ids: list[str] = []
    mats: list[np.ndarray] = []
    seen: set[str] = set()
    cursor = 2  # 1-based line number of the next unread line
    for _ in range(n):
        if cursor > len(lines):
            raise _truncated(path, lines, f"expected {n} sequence blocks")
        tokens = lines[cursor - 1].split()
        if len(tokens) != 2 or not tokens[0].startswith("#"):
            raise FileFormatError(path, cursor, f"expected block header '#id S', got {lines[cursor - 1]!r}")
        ident = tokens[0][1:]
        if not ident:
            raise FileFormatError(path, cursor, "empty id in block header")
        if ident in seen:
            raise FileFormatError(path, cursor, f"duplicate id {ident!r}")
        seen.add(ident)
        try:
            steps = int(tokens[1])
        except ValueError:
            raise FileFormatError(path, cursor, f"expected integer row count, got {tokens[1]!r}") from None
        if steps < 1:
            raise FileFormatError(path, cursor, f"sequence length must be positive, got {steps}")
        cursor += 1
        mat = np.empty((steps, d), dtype=np.float64)
        for s in range(steps):
            if cursor > len(lines):
                raise _truncated(path, lines, f"expected {steps} rows in block {ident!r}")
            mat[s] = _parse_values(lines[cursor - 1].split(), d, path, cursor)
            cursor += 1
        if not np.all(np.isfinite(mat)):
            raise FileFormatError(path, cursor - 1, f"non-finite value in block {ident!r}")
        ids.append(ident)
        mats.append(mat)
    _check_trailing(lines, cursor - 1, path)
    return SequenceTable(ids, mats)


def save_sequence_table(path, table: SequenceTable) -> None:
    """Write *table* in the sequence table format (17 significant digits)."""
    out = [f"{len(table)} {table.dim}"]
    for ident, mat in zip(table.ids, table.matrices):
        out.append(f"#{ident} {mat.shape[0]}")
        for row in mat:
            out.append(" ".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(out) + "\n")


def sniff_table_kind(path) -> str:
    """Return ``"sequence"`` if the first data line is a block header, else ``"vector"``."""
    lines = _read_lines(path)
    _parse_header(lines, path)
    if len(lines) < 2:
        raise _truncated(path, lines, "expected at least one data row")
    first = lines[1].split()
    if first and first[0].startswith("#"):
        return "sequence"
    return "vector"


def intersect_ids(tables) -> list[str]:
    """Ids present in every table, sorted.

    Sorting (rather than keeping any one table's order) makes the aligned
    row order independent of the order the tables are passed in, so every
    downstream fit is reproducible across runs and platforms.
    """
    tables = list(tables)
    if not tables:
        raise ValidationError("need at least one table")
    shared = set(tables[0].ids)
    for t in tables[1:]:
        shared &= set(t.ids)
    return sorted(shared)


class AlignedViews(NamedTuple):
    """Row-aligned matrices over a sorted shared id list.

    ``dropped[i]`` counts the ids of table i that fell out of the
    intersection, so ``len(tables[i]) - len(ids) == dropped[i]``.
    """

    ids: list
    views: list
    dropped: tuple

    def __iter__(self):
        # unpacking as ``ids, views = align_by_id(...)`` stays supported
        return iter((self.ids, self.views))


def align_by_id(tables) -> AlignedViews:
    """Row-align several tables over the sorted intersection of their ids.

    Returns one (len(ids), D_i) matrix per table, rows in id order.  An
    empty intersection is an error that reports every table's size, since
    the usual cause is tables keyed by different id schemes.
    """
    tables = list(tables)
    ids = intersect_ids(tables)
    if not ids:
        sizes = ", ".join(str(len(t)) for t in tables)
        raise ValidationError(
            f"no shared ids across the {len(tables)} table(s) (sizes: {sizes})"
        )
    dropped = tuple(len(t) - len(ids) for t in tables)
    return AlignedViews(ids, [t.lookup(ids) for t in tables], dropped)


def sequence_views(tables, ident: str) -> list[np.ndarray]:
    """Per-source token matrices for one sequence id, validated to align.

    Every table must contain *ident* and the sequences must agree on length
    (token positions correspond across sources).
    """
    views = [t.lookup(ident) for t in tables]
    lengths = {v.shape[0] for v in views}
    if len(lengths) != 1:
        raise ValidationError(
            f"sequence {ident!r} has mismatched lengths across sources: {sorted(lengths)}"
        )
    return views
