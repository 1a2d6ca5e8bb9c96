"""Transaction databases: ingestion, synthesis and exact support counting."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Iterable, Sequence

import numpy as np

FORMATS = ("item-list", "dense")


class ParseError(ValueError):
    """Malformed transaction input. ``line`` is 1-based, or None."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ItemBoundsError(ParseError):
    pass


@dataclass(frozen=True)
class ItemSet:
    """Strictly increasing tuple of 0-based item indices."""

    items: tuple[int, ...]

    def __post_init__(self):
        items = tuple(int(i) for i in self.items)
        if any(i < 0 for i in items):
            raise ValueError(f"negative item index in {items}")
        if any(a >= b for a, b in zip(items, items[1:])):
            raise ValueError(f"items must be strictly increasing: {items}")
        object.__setattr__(self, "items", items)

    @classmethod
    def of(cls, *items: int) -> "ItemSet":
        return cls(tuple(sorted(set(items))))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __lt__(self, other: "ItemSet") -> bool:
        return self.items < other.items

    def union(self, other: "ItemSet") -> "ItemSet":
        return ItemSet.of(*self.items, *other.items)

    def isdisjoint(self, other: "ItemSet") -> bool:
        return set(self.items).isdisjoint(other.items)

    def __repr__(self) -> str:
        return "{" + ",".join(map(str, self.items)) + "}"


@dataclass(frozen=True, eq=False)
class TransactionDatabase:
    """N x M 0/1 matrix; row i is transaction i, column j is item j.

    ``item_ids`` holds the external token of each column. ``origin`` maps
    columns back to the parent database after :func:`project_columns`.
    """

    bits: np.ndarray
    item_ids: tuple[str, ...] = ()
    origin: tuple[int, ...] = ()

    def __post_init__(self):
        bits = np.array(self.bits, dtype=np.uint8, copy=True)
        if bits.ndim != 2:
            raise ValueError(f"bits must be 2-D, got shape {bits.shape}")
        n, m = bits.shape
        if n < 1 or m < 1:
            raise ValueError(f"database needs N >= 1 and M >= 1, got {bits.shape}")
        if np.any(bits > 1):
            raise ValueError("bits must be 0/1")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        ids = tuple(self.item_ids) or tuple(str(j + 1) for j in range(m))
        if len(ids) != m or len(set(ids)) != m:
            raise ValueError("item_ids must be M distinct tokens")
        object.__setattr__(self, "item_ids", ids)
        origin = tuple(self.origin) or tuple(range(m))
        if len(origin) != m:
            raise ValueError("origin must have one entry per column")
        object.__setattr__(self, "origin", origin)

    @property
    def num_transactions(self) -> int:
        return self.bits.shape[0]

    @property
    def num_items(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def __getitem__(self, ij: tuple[int, int]) -> int:
        i, j = ij
        if not (0 <= i < self.num_transactions and 0 <= j < self.num_items):
            raise IndexError(f"({i}, {j}) outside {self.shape}")
        return int(self.bits[i, j])

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransactionDatabase):
            return NotImplemented
        return (
            self.shape == other.shape
            and bool(np.array_equal(self.bits, other.bits))
            and self.item_ids == other.item_ids
        )

    def __hash__(self):
        return hash((self.shape, self.bits.tobytes(), self.item_ids))

    def transactions(self) -> list[frozenset[int]]:
        return [frozenset(np.flatnonzero(row).tolist()) for row in self.bits]


@dataclass(frozen=True)
class DatabaseStats:
    total_ones: int
    num_transactions: int

    @property
    def avg_items_per_transaction(self) -> Fraction:
        return Fraction(self.total_ones, self.num_transactions)

    @property
    def a(self) -> float:
        return float(self.avg_items_per_transaction)


@dataclass(frozen=True, eq=False)
class SupportMatrix:
    """All 1- and 2-itemset supports, kept as integer co-occurrence counts."""

    counts: np.ndarray
    num_transactions: int
    _values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        values = counts / self.num_transactions
        values.setflags(write=False)
        object.__setattr__(self, "_values", values)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def size(self) -> int:
        return self.counts.shape[0]

    def exact(self, i: int, j: int) -> Fraction:
        return Fraction(int(self.counts[i, j]), self.num_transactions)

    def support(self, itemset: ItemSet) -> float:
        items = itemset.items
        if len(items) == 1:
            return float(self._values[items[0], items[0]])
        if len(items) == 2:
            return float(self._values[items[0], items[1]])
        raise ValueError(f"support matrix holds 1- and 2-itemsets only, got {itemset}")

    def submatrix(self, keep: Sequence[int]) -> "SupportMatrix":
        idx = np.asarray(keep, dtype=int)
        return SupportMatrix(self.counts[np.ix_(idx, idx)], self.num_transactions)


def _read_text(source: str | bytes | IO) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def load_transactions(
    source: str | bytes | IO,
    format: str = "item-list",
    num_items: int | None = None,
) -> TransactionDatabase:
    """Parse a transaction database from text.

    item-list: one transaction per line, whitespace-separated tokens. When the
    item count is declared (``#items M`` header or ``num_items``), tokens are
    1-based integer item numbers. An ``#ids`` header names the columns instead.
    Otherwise tokens are arbitrary and get indices in first-seen order.

    dense: N lines of M space-separated 0/1 digits.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")
    text = _read_text(source)
    if not text.strip():
        raise ParseError("empty input")
    lines = text.splitlines()
    if format == "dense":
        return _load_dense(lines)
    return _load_item_list(lines, num_items)


def _load_dense(lines: list[str]) -> TransactionDatabase:
    rows = []
    width = None
    for lineno, line in enumerate(lines, 1):
        tokens = line.split()
        if not tokens:
            raise ParseError("blank row in dense matrix", lineno)
        if any(tok not in ("0", "1") for tok in tokens):
            raise ParseError(f"expected 0/1 digits, got {line.strip()!r}", lineno)
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise ParseError(f"row has {len(tokens)} entries, expected {width}", lineno)
        rows.append([int(tok) for tok in tokens])
    return TransactionDatabase(np.array(rows, dtype=np.uint8))


def _load_item_list(lines: list[str], num_items: int | None) -> TransactionDatabase:
    ids: list[str] | None = None
    declared = num_items
    body_start = 0
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped.startswith("#"):
            break
        head, _, rest = stripped.partition(" ")
        if head == "#items":
            try:
                value = int(rest)
            except ValueError:
                raise ParseError(f"bad item count {rest!r}", lineno) from None
            if value < 1:
                raise ParseError("item count must be positive", lineno)
            if declared is not None and declared != value:
                raise ParseError(f"header declares {value} items, caller {declared}", lineno)
            declared = value
        elif head == "#ids":
            ids = rest.split()
            if len(set(ids)) != len(ids):
                raise ParseError("duplicate tokens in #ids header", lineno)
        else:
            raise ParseError(f"unknown header {head!r}", lineno)
        body_start = lineno
    body = lines[body_start:]
    if not body:
        raise ParseError("no transactions")
    if ids is not None and declared is not None and len(ids) != declared:
        raise ParseError(f"#ids lists {len(ids)} tokens but #items is {declared}")

    rows: list[list[int]] = []
    if ids is not None:
        index = {tok: k for k, tok in enumerate(ids)}
        for lineno, line in enumerate(body, body_start + 1):
            row = []
            for tok in line.split():
                if tok not in index:
                    raise ItemBoundsError(f"token {tok!r} not in #ids header", lineno)
                row.append(index[tok])
            rows.append(row)
        m = len(ids)
    elif declared is not None:
        for lineno, line in enumerate(body, body_start + 1):
            row = []
            for tok in line.split():
                try:
                    k = int(tok)
                except ValueError:
                    raise ParseError(f"item token {tok!r} is not an integer", lineno) from None
                if not 1 <= k <= declared:
                    raise ItemBoundsError(f"item {k} outside 1..{declared}", lineno)
                row.append(k - 1)
            rows.append(row)
        m = declared
        ids = [str(k) for k in range(1, m + 1)]
    else:
        seen: dict[str, int] = {}
        for line in body:
            row = []
            for tok in line.split():
                row.append(seen.setdefault(tok, len(seen)))
            rows.append(row)
        if not seen:
            raise ParseError("no items in any transaction; declare #items M")
        m = len(seen)
        ids = list(seen)

    bits = np.zeros((len(rows), m), dtype=np.uint8)
    for i, row in enumerate(rows):
        bits[i, row] = 1
    return TransactionDatabase(bits, tuple(ids))


def save_transactions(db: TransactionDatabase, format: str = "item-list") -> str:
    """Serialize ``db`` so that :func:`load_transactions` restores it exactly."""
    if format == "dense":
        return "".join(" ".join(map(str, row)) + "\n" for row in db.bits.tolist())
    if format != "item-list":
        raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")
    default_ids = tuple(str(j + 1) for j in range(db.num_items))
    out = [f"#items {db.num_items}\n"]
    if db.item_ids != default_ids:
        if any(any(c.isspace() for c in tok) or not tok for tok in db.item_ids):
            raise ValueError("item ids containing whitespace cannot be saved as item-list")
        out.append("#ids " + " ".join(db.item_ids) + "\n")
        names = db.item_ids
    else:
        names = default_ids
    for row in db.bits:
        out.append(" ".join(names[j] for j in np.flatnonzero(row)) + "\n")
    return "".join(out)


def generate_synthetic(N: int, M: int, target_a: float, seed: int) -> TransactionDatabase:
    """Independent Bernoulli(target_a / M) bits."""
    if not 0 <= target_a <= M:
        raise ValueError(f"target_a must lie in [0, {M}], got {target_a}")
    rng = np.random.default_rng(seed)
    bits = rng.random((N, M)) < target_a / M
    return TransactionDatabase(bits.astype(np.uint8))


def generate_fixed_width(N: int, M: int, width: int, seed: int) -> TransactionDatabase:
    """Every transaction holds exactly ``width`` distinct items, so a = width."""
    if not 0 <= width <= M:
        raise ValueError(f"width must lie in [0, {M}], got {width}")
    rng = np.random.default_rng(seed)
    bits = np.zeros((N, M), dtype=np.uint8)
    for row in bits:
        row[rng.choice(M, size=width, replace=False)] = 1
    return TransactionDatabase(bits)


def db_stats(db: TransactionDatabase) -> DatabaseStats:
    return DatabaseStats(int(db.bits.sum(dtype=np.int64)), db.num_transactions)


def support_matrix_bruteforce(db: TransactionDatabase) -> SupportMatrix:
    """S = D^T D / N from integer co-occurrence counts."""
    d = db.bits.astype(np.int64)
    return SupportMatrix(d.T @ d, db.num_transactions)


def project_columns(db: TransactionDatabase, keep: ItemSet | Iterable[int]) -> TransactionDatabase:
    """Keep only the listed columns, in the listed order."""
    cols = list(keep.items if isinstance(keep, ItemSet) else keep)
    if not cols:
        raise ValueError("keep must name at least one item")
    for j in cols:
        if not 0 <= j < db.num_items:
            raise IndexError(f"item {j} outside 0..{db.num_items - 1}")
    return TransactionDatabase(
        db.bits[:, cols],
        tuple(db.item_ids[j] for j in cols),
        tuple(db.origin[j] for j in cols),
    )


def reference_database() -> TransactionDatabase:
    """The 4 x 3 worked example used throughout the tests and docs."""
    return load_transactions("1 2\n1 3\n1 2 3\n2\n", num_items=3)
