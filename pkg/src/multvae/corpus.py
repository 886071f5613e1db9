"""Loading, filtering, and splitting implicit-feedback click data.

The pipeline is: :func:`ingest` a delimited ratings file into raw
(user, item, rating) triples, :func:`binarize_and_filter` them into a
deduplicated binary click matrix, :func:`split_users` into disjoint
train/validation/test user groups (strong generalization: evaluation
users are never seen in training), and :func:`make_fold_in` to carve
each held-out user's clicks into a fold-in part the model may condition
on and a held-out part used only for scoring.

Click matrices are stored CSR-style with sorted, strictly increasing
column indices per row, plus the original string ids for both axes.
``write_corpus``/``read_corpus`` persist them in a little-endian binary
format (magic ``MRCX``).
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, EmptyCorpusError, ParseError, ShapeError
from .fileio import (atomic_write, read_exact, read_string_table, read_u32,
                     read_u64, write_string_table, write_u32, write_u64)

log = logging.getLogger(__name__)

_MAGIC = b"MRCX"
_VERSION = 1


@dataclass(frozen=True)
class FormatConfig:
    """How to read a delimited interactions file.

    Columns may be named (requires ``header=True``) or given as 0-based
    indices.  ``rating_col``/``timestamp_col`` may be ``None`` when the
    file has no such column; without ratings every interaction counts
    as a click.
    """

    delimiter: str = ","
    header: bool = True
    user_col: str | int = "userId"
    item_col: str | int = "movieId"
    rating_col: str | int | None = "rating"
    timestamp_col: str | int | None = None


@dataclass
class RawInteractions:
    """Parsed but unfiltered (user, item[, rating][, timestamp]) rows."""

    users: list[str]
    items: list[str]
    ratings: np.ndarray | None = None
    timestamps: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.users)


def _resolve_column(spec, header_row, what: str) -> int | None:
    if spec is None:
        return None
    if isinstance(spec, int):
        return spec
    if header_row is None:
        raise ConfigError(
            f"{what} given by name {spec!r} but the file has no header"
        )
    try:
        return header_row.index(spec)
    except ValueError:
        raise ConfigError(
            f"{what} {spec!r} not found in header {header_row}"
        ) from None


def ingest(path, fmt: FormatConfig = FormatConfig()) -> RawInteractions:
    """Read a delimited interactions file into :class:`RawInteractions`.

    Raises :class:`DataError` if the file is missing, :class:`ConfigError`
    if a named column is absent, and :class:`ParseError` (with the
    1-based line number) for malformed rows.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"input file does not exist: {path}")
    users: list[str] = []
    items: list[str] = []
    ratings: list[float] = []
    timestamps: list[int] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle, delimiter=fmt.delimiter)
        header_row = None
        start_line = 1
        if fmt.header:
            header_row = next(reader, None)
            if header_row is None:
                return RawInteractions([], [])
            start_line = 2
        u_col = _resolve_column(fmt.user_col, header_row, "user column")
        i_col = _resolve_column(fmt.item_col, header_row, "item column")
        r_col = _resolve_column(fmt.rating_col, header_row, "rating column")
        t_col = _resolve_column(fmt.timestamp_col, header_row,
                                "timestamp column")
        needed = max(c for c in (u_col, i_col, r_col, t_col) if c is not None)
        for line_number, row in enumerate(reader, start=start_line):
            if not row:
                continue
            if len(row) <= needed:
                raise ParseError(
                    f"expected at least {needed + 1} fields, got {len(row)}",
                    line_number,
                )
            users.append(row[u_col].strip())
            items.append(row[i_col].strip())
            if r_col is not None:
                try:
                    ratings.append(float(row[r_col]))
                except ValueError:
                    raise ParseError(
                        f"bad rating value {row[r_col]!r}", line_number
                    ) from None
            if t_col is not None:
                try:
                    timestamps.append(int(float(row[t_col])))
                except ValueError:
                    raise ParseError(
                        f"bad timestamp value {row[t_col]!r}", line_number
                    ) from None
    return RawInteractions(
        users, items,
        np.asarray(ratings, dtype=np.float64) if fmt.rating_col is not None else None,
        np.asarray(timestamps, dtype=np.int64) if fmt.timestamp_col is not None else None,
    )


@dataclass
class SparseClicks:
    """A binary user-by-item click matrix in CSR form.

    ``row_offsets`` has length ``n_users + 1``; the column indices of
    user ``u`` live in ``col_indices[row_offsets[u]:row_offsets[u+1]]``
    and are strictly increasing.  ``user_ids``/``item_ids`` map row and
    column indices back to the original string identifiers.
    """

    row_offsets: np.ndarray
    col_indices: np.ndarray
    user_ids: list[str]
    item_ids: list[str]

    def __post_init__(self):
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int32)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return int(self.row_offsets[-1])

    def row(self, u: int) -> np.ndarray:
        """Sorted item indices clicked by user ``u``."""
        return self.col_indices[self.row_offsets[u]:self.row_offsets[u + 1]]

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def item_counts(self) -> np.ndarray:
        """Number of users who clicked each item, shape (n_items,)."""
        return np.bincount(self.col_indices, minlength=self.n_items).astype(
            np.int64
        )

    def dense_rows(self, user_idx) -> np.ndarray:
        """Materialise the given users as a float64 0/1 matrix."""
        user_idx = np.atleast_1d(np.asarray(user_idx, dtype=np.int64))
        out = np.zeros((len(user_idx), self.n_items), dtype=np.float64)
        for k, u in enumerate(user_idx):
            out[k, self.row(int(u))] = 1.0
        return out

    def validate(self) -> None:
        """Check the CSR invariants; raises :class:`DataError` on failure."""
        if self.row_offsets.shape != (self.n_users + 1,):
            raise DataError("row_offsets length does not match user count")
        if self.row_offsets[0] != 0:
            raise DataError("row_offsets must start at 0")
        if np.any(np.diff(self.row_offsets) < 0):
            raise DataError("row_offsets must be non-decreasing")
        if self.row_offsets[-1] != len(self.col_indices):
            raise DataError("row_offsets must end at the interaction count")
        if len(self.col_indices):
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.n_items:
                raise DataError("column index out of range")
        for u in range(self.n_users):
            row = self.row(u)
            if len(row) > 1 and np.any(np.diff(row) <= 0):
                raise DataError(
                    f"columns of row {u} are not strictly increasing"
                )


@dataclass
class EvalSplit:
    """Per-user fold-in / held-out partition of an evaluation group.

    Both matrices cover the same users (same ``user_ids`` order) and the
    same item axis; each user's fold-in and held-out item sets are
    disjoint and their union is the user's original click row.
    """

    fold_in: SparseClicks
    held_out: SparseClicks

    def __post_init__(self):
        if self.fold_in.user_ids != self.held_out.user_ids:
            raise ShapeError("fold-in and held-out user tables differ")
        if self.fold_in.item_ids != self.held_out.item_ids:
            raise ShapeError("fold-in and held-out item tables differ")

    @property
    def n_users(self) -> int:
        return self.fold_in.n_users


def _factorize(values) -> tuple[np.ndarray, list[str]]:
    table: dict[str, int] = {}
    codes = np.empty(len(values), dtype=np.int64)
    for k, v in enumerate(values):
        codes[k] = table.setdefault(v, len(table))
    ids = [""] * len(table)
    for v, c in table.items():
        ids[c] = v
    return codes, ids


def _build_csr(u_codes: np.ndarray, i_codes: np.ndarray, n_users: int,
               n_items: int, user_ids: list[str],
               item_ids: list[str]) -> SparseClicks:
    order = np.lexsort((i_codes, u_codes))
    uu = u_codes[order]
    ii = i_codes[order]
    offsets = np.zeros(n_users + 1, dtype=np.int64)
    np.cumsum(np.bincount(uu, minlength=n_users), out=offsets[1:])
    return SparseClicks(offsets, ii.astype(np.int32), list(user_ids),
                        list(item_ids))


def binarize_and_filter(raw: RawInteractions, min_rating: float = 4.0,
                        min_user_items: int = 5,
                        min_item_users: int = 1) -> SparseClicks:
    """Threshold ratings into clicks and prune sparse users and items.

    An interaction becomes a click when its rating is at least
    ``min_rating`` (all interactions qualify when the corpus carries no
    ratings).  Duplicate (user, item) pairs collapse to one click.  Users
    with fewer than ``min_user_items`` clicks and items with fewer than
    ``min_item_users`` clicking users are then removed, repeatedly,
    because removing an item can push a user below threshold and vice
    versa; the loop ends at a fixed point where every surviving row and
    column meets both minima.

    Surviving ids are sorted lexicographically to make the output
    independent of input row order.  Raises :class:`EmptyCorpusError` if
    nothing survives.
    """
    if len(raw) == 0:
        raise EmptyCorpusError("no interactions to filter")
    u_codes, u_ids = _factorize(raw.users)
    i_codes, i_ids = _factorize(raw.items)
    if raw.ratings is not None and len(raw.ratings):
        keep = raw.ratings >= min_rating
        u_codes, i_codes = u_codes[keep], i_codes[keep]
    if len(u_codes) == 0:
        raise EmptyCorpusError(
            f"no interaction has rating >= {min_rating}"
        )
    pair = u_codes * len(i_ids) + i_codes
    unique_pair = np.unique(pair)
    uu = unique_pair // len(i_ids)
    ii = unique_pair % len(i_ids)
    while True:
        user_counts = np.bincount(uu, minlength=len(u_ids))
        item_counts = np.bincount(ii, minlength=len(i_ids))
        keep = (user_counts[uu] >= min_user_items) & \
               (item_counts[ii] >= min_item_users)
        if keep.all():
            break
        uu, ii = uu[keep], ii[keep]
        if len(uu) == 0:
            raise EmptyCorpusError(
                "filtering removed every interaction "
                f"(min_user_items={min_user_items}, "
                f"min_item_users={min_item_users})"
            )
    kept_users = np.unique(uu)
    kept_items = np.unique(ii)
    user_order = sorted(kept_users.tolist(), key=lambda c: u_ids[c])
    item_order = sorted(kept_items.tolist(), key=lambda c: i_ids[c])
    u_map = np.full(len(u_ids), -1, dtype=np.int64)
    i_map = np.full(len(i_ids), -1, dtype=np.int64)
    u_map[user_order] = np.arange(len(user_order))
    i_map[item_order] = np.arange(len(item_order))
    log.info(
        "binarize_and_filter: kept %d users, %d items, %d clicks "
        "(from %d raw interactions)",
        len(user_order), len(item_order), len(uu), len(raw),
    )
    return _build_csr(
        u_map[uu], i_map[ii], len(user_order), len(item_order),
        [u_ids[c] for c in user_order], [i_ids[c] for c in item_order],
    )


def _subset_users(clicks: SparseClicks, user_idx: np.ndarray,
                  item_keep: np.ndarray | None,
                  item_map: np.ndarray | None,
                  item_ids: list[str]) -> tuple[SparseClicks, int]:
    """Restrict to the given users (ascending order) and, optionally, to
    the items where ``item_keep`` is true.  Returns the matrix and the
    number of users dropped because their row became empty."""
    rows = []
    kept_users = []
    dropped = 0
    for u in user_idx:
        row = clicks.row(int(u))
        if item_keep is not None:
            row = row[item_keep[row]]
        if len(row) == 0:
            dropped += 1
            continue
        if item_map is not None:
            row = item_map[row]
        rows.append(row)
        kept_users.append(clicks.user_ids[int(u)])
    lengths = [len(r) for r in rows]
    offsets = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(np.asarray(lengths, dtype=np.int64), out=offsets[1:])
    cols = (np.concatenate(rows) if rows
            else np.empty(0, dtype=np.int32)).astype(np.int32)
    return SparseClicks(offsets, cols, kept_users, item_ids), dropped


def split_users(clicks: SparseClicks, n_val: int, n_test: int,
                seed: int) -> tuple[SparseClicks, SparseClicks, SparseClicks]:
    """Partition users into train / validation / test groups.

    ``n_val`` validation and ``n_test`` test users are drawn uniformly
    without replacement; everyone else trains.  The item axis is then
    restricted to items that occur in at least one training row, and
    clicks on any other item are removed from the held-out groups (those
    items cannot be scored by a model fit on the training rows).
    Held-out users left with no clicks are dropped with a logged count,
    so ``train.n_users + val.n_users + test.n_users + dropped`` equals
    the original user count.
    """
    total = clicks.n_users
    if n_val < 0 or n_test < 0:
        raise ConfigError("n_val and n_test must be non-negative")
    if n_val + n_test >= total:
        raise DataError(
            f"cannot hold out {n_val}+{n_test} users from a corpus of "
            f"{total}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(total)
    val_idx = np.sort(perm[:n_val])
    test_idx = np.sort(perm[n_val:n_val + n_test])
    train_idx = np.sort(perm[n_val + n_test:])

    train_items = np.zeros(clicks.n_items, dtype=bool)
    for u in train_idx:
        train_items[clicks.row(int(u))] = True
    n_train_items = int(train_items.sum())
    if n_train_items == 0:
        raise EmptyCorpusError("training rows contain no items")
    item_map = np.full(clicks.n_items, -1, dtype=np.int64)
    item_map[train_items] = np.arange(n_train_items)
    item_ids = [clicks.item_ids[j] for j in np.flatnonzero(train_items)]
    if n_train_items < clicks.n_items:
        log.info("split_users: dropping %d items absent from training rows",
                 clicks.n_items - n_train_items)

    train, _ = _subset_users(clicks, train_idx, train_items, item_map,
                             item_ids)
    val, dropped_val = _subset_users(clicks, val_idx, train_items, item_map,
                                     item_ids)
    test, dropped_test = _subset_users(clicks, test_idx, train_items,
                                       item_map, item_ids)
    if dropped_val or dropped_test:
        log.info(
            "split_users: dropped %d validation and %d test users whose "
            "clicks all fell on items unseen in training",
            dropped_val, dropped_test,
        )
    return train, val, test


def round_half_up(x: float) -> int:
    """Round to nearest integer with exact halves going up."""
    return int(math.floor(x + 0.5))


def make_fold_in(heldout: SparseClicks, fraction: float = 0.8,
                 seed: int = 0) -> EvalSplit:
    """Split each held-out user's clicks into fold-in and held-out parts.

    ``round_half_up(fraction * n)`` of a user's ``n`` clicks are chosen
    uniformly at random as fold-in; the rest are held out for scoring.
    Users whose held-out part would be empty are dropped with a logged
    count (there would be nothing to score them on).
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fold-in fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    fold_rows = []
    held_rows = []
    kept_users = []
    dropped = 0
    for u in range(heldout.n_users):
        row = heldout.row(u)
        k = round_half_up(fraction * len(row))
        if k >= len(row):
            dropped += 1
            continue
        chosen = rng.choice(row, size=k, replace=False) if k else \
            np.empty(0, dtype=row.dtype)
        mask = np.isin(row, chosen)
        fold_rows.append(row[mask])
        held_rows.append(row[~mask])
        kept_users.append(heldout.user_ids[u])
    if not kept_users:
        raise EmptyCorpusError("every held-out user was dropped by fold-in")
    if dropped:
        log.info("make_fold_in: dropped %d users with an empty held-out part",
                 dropped)

    def pack(rows):
        offsets = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(np.asarray([len(r) for r in rows], dtype=np.int64),
                  out=offsets[1:])
        cols = (np.concatenate(rows) if rows
                else np.empty(0, dtype=np.int32)).astype(np.int32)
        return SparseClicks(offsets, cols, list(kept_users),
                            list(heldout.item_ids))

    return EvalSplit(pack(fold_rows), pack(held_rows))


def summary(clicks: SparseClicks) -> dict:
    """Corpus statistics: user/item/interaction counts and density."""
    n = clicks.n_interactions
    return {
        "users": clicks.n_users,
        "items": clicks.n_items,
        "interactions": n,
        "density": n / (clicks.n_users * clicks.n_items),
    }


def write_corpus(clicks: SparseClicks, path) -> None:
    """Serialise a click matrix to the binary corpus format.

    Layout (little-endian): magic ``MRCX``, u32 version, u64 user count,
    u64 item count, the row offsets as u64, the column indices as u32,
    then the user and item string tables (u32 length + UTF-8 bytes per
    string).  The write is atomic.
    """
    with atomic_write(path) as handle:
        handle.write(_MAGIC)
        write_u32(handle, _VERSION)
        write_u64(handle, clicks.n_users)
        write_u64(handle, clicks.n_items)
        handle.write(clicks.row_offsets.astype("<u8").tobytes())
        handle.write(clicks.col_indices.astype("<u4").tobytes())
        write_string_table(handle, clicks.user_ids)
        write_string_table(handle, clicks.item_ids)


def read_corpus(path) -> SparseClicks:
    """Read a click matrix written by :func:`write_corpus`.

    Raises :class:`DataError` on a bad magic, an unsupported version, or
    structurally invalid contents.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"corpus file does not exist: {path}")
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != _MAGIC:
            raise DataError(f"{path}: not a corpus file (bad magic)")
        version = read_u32(handle)
        if version != _VERSION:
            raise DataError(f"{path}: unsupported corpus version {version}")
        n_users = read_u64(handle)
        n_items = read_u64(handle)
        offsets = np.frombuffer(
            read_exact(handle, 8 * (n_users + 1)), dtype="<u8"
        ).astype(np.int64)
        nnz = int(offsets[-1]) if len(offsets) else 0
        cols = np.frombuffer(
            read_exact(handle, 4 * nnz), dtype="<u4"
        ).astype(np.int32)
        user_ids = read_string_table(handle, n_users)
        item_ids = read_string_table(handle, n_items)
    clicks = SparseClicks(offsets, cols, user_ids, item_ids)
    clicks.validate()
    return clicks
