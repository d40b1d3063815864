"""Sparse user-by-item response data: triplet I/O, binary cache, held-out splits."""

from __future__ import annotations

import csv
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InvalidParameterError

CACHE_MAGIC = b"HCPFDSET"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<8sIqqq")


@dataclass
class LoadReport:
    rows_read: int = 0
    duplicates: int = 0
    zero_rows_rejected: int = 0


@dataclass
class SparseDataset:
    """Nonzero entries of a ``n_users x n_items`` matrix; zeros are implicit."""

    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)
    load_report: LoadReport | None = None

    def __post_init__(self):
        self.users = np.ascontiguousarray(self.users, dtype=np.int64)
        self.items = np.ascontiguousarray(self.items, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if not (self.users.shape == self.items.shape == self.values.shape) or self.users.ndim != 1:
            raise InvalidParameterError("users, items and values must be 1-d arrays of equal length")
        if self.n_users < 1 or self.n_items < 1:
            raise InvalidParameterError("matrix dimensions must be positive")
        if self.users.size:
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise InvalidParameterError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise InvalidParameterError("item index out of range")
        if np.any(self.values == 0):
            raise InvalidParameterError("stored responses must be nonzero")
        if not self.user_ids:
            self.user_ids = [str(u) for u in range(self.n_users)]
        if not self.item_ids:
            self.item_ids = [str(i) for i in range(self.n_items)]
        if len(self.user_ids) != self.n_users or len(self.item_ids) != self.n_items:
            raise InvalidParameterError("ID dictionaries do not match the matrix dimensions")

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def sparsity(self) -> float:
        """Fraction of missing entries."""
        return 1.0 - self.nnz / (self.n_users * self.n_items)

    def keys(self) -> np.ndarray:
        """Linear coordinates ``u * n_items + i``."""
        return self.users * self.n_items + self.items

    def lookup(self) -> dict[int, float]:
        return dict(zip(self.keys().tolist(), self.values.tolist()))

    def user_index(self) -> dict[str, int]:
        return {uid: k for k, uid in enumerate(self.user_ids)}

    def item_index(self) -> dict[str, int]:
        return {iid: k for k, iid in enumerate(self.item_ids)}

    def subset(self, index) -> "SparseDataset":
        """Entries selected by ``index``, keeping dimensions and ID dictionaries."""
        return SparseDataset(
            self.n_users,
            self.n_items,
            self.users[index],
            self.items[index],
            self.values[index],
            self.user_ids,
            self.item_ids,
        )


def load_triplets(path, format: str = "tsv", has_header: bool = False) -> SparseDataset:
    """Read ``user, item, value`` rows; IDs are remapped densely in first-appearance order.

    Duplicate ``(user, item)`` pairs keep the last occurrence. Zero-valued
    rows are dropped and counted in ``load_report``.
    """
    if format not in ("tsv", "csv"):
        raise InvalidParameterError(f"format must be 'tsv' or 'csv', got {format!r}")
    delimiter = "\t" if format == "tsv" else ","
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    entries: dict[tuple[int, int], float] = {}
    report = LoadReport()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            uid, iid, raw = (c.strip() for c in row)
            try:
                value = float(raw)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: value {raw!r} is not a number") from None
            if not math.isfinite(value):
                raise DataFormatError(f"{path}:{lineno}: value {raw!r} is not finite")
            report.rows_read += 1
            if value == 0.0:
                report.zero_rows_rejected += 1
                continue
            u = users.setdefault(uid, len(users))
            i = items.setdefault(iid, len(items))
            if (u, i) in entries:
                report.duplicates += 1
                del entries[(u, i)]  # re-insert so ordering follows the kept row
            entries[(u, i)] = value
    if not entries:
        raise DataFormatError(f"{path}: no nonzero entries")
    if report.duplicates:
        warnings.warn(f"{path}: {report.duplicates} duplicate (user, item) rows, kept the last", stacklevel=2)
    coords = np.array(list(entries.keys()), dtype=np.int64)
    return SparseDataset(
        len(users),
        len(items),
        coords[:, 0],
        coords[:, 1],
        np.fromiter(entries.values(), dtype=float, count=len(entries)),
        list(users),
        list(items),
        report,
    )


def _write_rows(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in rows:
            fh.write("\t".join(row) + "\n")


def save_triplets(data: SparseDataset, path) -> None:
    """Write ``user<TAB>item<TAB>value`` with exact float round-trip."""
    _write_rows(
        path,
        (
            (data.user_ids[u], data.item_ids[i], repr(float(v)))
            for u, i, v in zip(data.users.tolist(), data.items.tolist(), data.values.tolist())
        ),
    )


def save_cache(data: SparseDataset, path) -> None:
    ids = json.dumps({"users": data.user_ids, "items": data.item_ids}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, data.n_users, data.n_items, data.nnz))
        fh.write(struct.pack("<q", len(ids)))
        fh.write(ids)
        for arr, dtype in ((data.users, "<i8"), (data.items, "<i8"), (data.values, "<f8")):
            fh.write(arr.astype(dtype).tobytes())


def load_cache(path) -> SparseDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CACHE_HEADER.size or raw[:8] != CACHE_MAGIC:
        raise DataFormatError(f"{path}: not a dataset cache")
    _, version, n_users, n_items, nnz = _CACHE_HEADER.unpack_from(raw)
    if version != CACHE_VERSION:
        raise DataFormatError(f"{path}: unsupported cache version {version}")
    offset = _CACHE_HEADER.size
    (n_ids,) = struct.unpack_from("<q", raw, offset)
    offset += 8
    ids = json.loads(raw[offset:offset + n_ids].decode("utf-8"))
    offset += n_ids
    arrays = []
    for dtype in ("<i8", "<i8", "<f8"):
        arrays.append(np.frombuffer(raw, dtype=dtype, count=nnz, offset=offset).copy())
        offset += 8 * nnz
    return SparseDataset(n_users, n_items, *arrays, ids["users"], ids["items"])


# ---------------------------------------------------------------------------
# Held-out splits

@dataclass
class SplitSet:
    """Training entries plus held-out nonmissing entries and sampled missing coordinates.

    Missing coordinates are ``(m, 2)`` integer arrays of ``(user, item)``.
    """

    train: SparseDataset
    validation_nonmissing: SparseDataset
    test_nonmissing: SparseDataset
    validation_missing: np.ndarray
    test_missing: np.ndarray
    total_missing: int
    test_frac: float = 0.2
    valid_frac: float = 0.01

    @property
    def n_users(self) -> int:
        return self.train.n_users

    @property
    def n_items(self) -> int:
        return self.train.n_items

    def heldout_keys(self) -> set[int]:
        """Linear coordinates of every held-out entry (validation and test)."""
        n = self.n_items
        keys = set(self.validation_nonmissing.keys().tolist())
        keys.update(self.test_nonmissing.keys().tolist())
        for coords in (self.validation_missing, self.test_missing):
            keys.update((coords[:, 0] * n + coords[:, 1]).tolist())
        return keys

    def max_response(self) -> float:
        parts = (self.train, self.validation_nonmissing, self.test_nonmissing)
        return float(max(np.abs(p.values).max(initial=0.0) for p in parts))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "format": "hcpf-split",
            "version": 1,
            "n_users": self.n_users,
            "n_items": self.n_items,
            "total_missing": self.total_missing,
            "test_frac": self.test_frac,
            "valid_frac": self.valid_frac,
            "user_ids": self.train.user_ids,
            "item_ids": self.train.item_ids,
        }
        save_triplets(self.train, directory / "train.tsv")
        save_triplets(self.validation_nonmissing, directory / "validation.tsv")
        save_triplets(self.test_nonmissing, directory / "test.tsv")
        for name, coords in (("validation_missing", self.validation_missing), ("test_missing", self.test_missing)):
            _write_rows(
                directory / f"{name}.tsv",
                ((self.train.user_ids[u], self.train.item_ids[i]) for u, i in coords.tolist()),
            )
        with open(directory / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=1)

    @classmethod
    def load(cls, directory) -> "SplitSet":
        directory = Path(directory)
        try:
            with open(directory / "meta.json", encoding="utf-8") as fh:
                meta = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"{directory}: unreadable split metadata ({exc})") from exc
        user_ids, item_ids = meta["user_ids"], meta["item_ids"]
        uidx = {u: k for k, u in enumerate(user_ids)}
        iidx = {i: k for k, i in enumerate(item_ids)}

        def read(name, with_values):
            rows = []
            with open(directory / name, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    parts = line.rstrip("\n").split("\t")
                    if len(parts) != (3 if with_values else 2):
                        raise DataFormatError(f"{directory / name}:{lineno}: malformed row")
                    try:
                        rows.append((uidx[parts[0]], iidx[parts[1]], *map(float, parts[2:])))
                    except KeyError as exc:
                        raise DataFormatError(f"{directory / name}:{lineno}: unknown ID {exc}") from None
            return rows

        def dataset(name):
            rows = read(name, True)
            arr = np.array(rows, dtype=float).reshape(-1, 3)
            return SparseDataset(
                meta["n_users"], meta["n_items"], arr[:, 0], arr[:, 1], arr[:, 2], user_ids, item_ids
            )

        def coords(name):
            return np.array(read(name, False), dtype=np.int64).reshape(-1, 2)

        return cls(
            dataset("train.tsv"),
            dataset("validation.tsv"),
            dataset("test.tsv"),
            coords("validation_missing.tsv"),
            coords("test_missing.tsv"),
            int(meta["total_missing"]),
            float(meta["test_frac"]),
            float(meta["valid_frac"]),
        )


def _sample_missing(data: SparseDataset, count: int, rng: np.random.Generator, max_draws: int) -> np.ndarray:
    occupied = set(data.keys().tolist())
    grid = data.n_users * data.n_items
    chosen: dict[int, None] = {}
    draws = 0
    while len(chosen) < count:
        if draws >= max_draws:
            raise InvalidParameterError(
                f"could not find {count} missing coordinates after {draws} draws; matrix too dense"
            )
        batch = rng.integers(0, grid, size=max(64, 2 * (count - len(chosen))))
        for key in batch.tolist():
            draws += 1
            if key not in occupied and key not in chosen:
                chosen[key] = None
                if len(chosen) == count:
                    break
    keys = np.fromiter(chosen, dtype=np.int64, count=count)
    return np.stack([keys // data.n_items, keys % data.n_items], axis=1)


def split(data: SparseDataset, test_frac: float = 0.2, valid_frac: float = 0.01, seed: int = 0) -> SplitSet:
    """Hold out test and validation entries and an equal number of missing coordinates each."""
    if not (0 < test_frac < 1 and 0 < valid_frac < 1 and test_frac + valid_frac < 1):
        raise InvalidParameterError("fractions must be in (0, 1) and sum below 1")
    n_test = int(round(test_frac * data.nnz))
    n_valid = int(round(valid_frac * data.nnz))
    if n_test < 1 or n_valid < 1 or data.nnz - n_test - n_valid < 1:
        raise InvalidParameterError(f"{data.nnz} entries are too few for the requested split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.nnz)
    test_idx, valid_idx, train_idx = order[:n_test], order[n_test:n_test + n_valid], order[n_test + n_valid:]
    missing = _sample_missing(data, n_test + n_valid, rng, max_draws=100 * (n_test + n_valid) + 10_000)
    return SplitSet(
        train=data.subset(np.sort(train_idx)),
        validation_nonmissing=data.subset(np.sort(valid_idx)),
        test_nonmissing=data.subset(np.sort(test_idx)),
        validation_missing=missing[n_test:],
        test_missing=missing[:n_test],
        total_missing=data.n_users * data.n_items - data.nnz,
        test_frac=test_frac,
        valid_frac=valid_frac,
    )
