"""Examples, datasets, splits, deterministic random streams and length bins.

Dataset ids are positional: example ``i`` of a dataset has id ``i``.  A
:class:`Split` addresses one combined id space laid out as
``pool | validation | test`` so that every experiment artifact can be
replayed from stored index sets alone.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DimensionError, SizeError

__all__ = [
    "RngStream",
    "DenseExample",
    "TokenExample",
    "Example",
    "DenseData",
    "TokenData",
    "Split",
    "make_split",
    "length_bins",
    "sample_without_replacement",
    "write_dataset",
    "read_dataset",
]


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """A named, seed-keyed random stream.

    The stream is backed by the counter-based Philox bit generator whose key
    is a hash of ``(seed, label)``, so the draw sequence depends only on those
    two values and never on which thread consumes it or in what order
    streams are created.
    """

    seed: int
    label: str = "root"

    def _key(self) -> int:
        digest = hashlib.sha256(f"{self.seed & 0xFFFFFFFFFFFFFFFF}:{self.label}".encode()).digest()
        return int.from_bytes(digest[:16], "little")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self._key()))

    def child(self, *parts: object) -> "RngStream":
        suffix = "/".join(str(p) for p in parts)
        return RngStream(self.seed, f"{self.label}/{suffix}")


# ---------------------------------------------------------------------------
# Examples and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DenseExample:
    x: np.ndarray
    y: float


@dataclass(frozen=True)
class TokenExample:
    input_tokens: tuple[int, ...]
    output_tokens: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_tokens", tuple(int(t) for t in self.input_tokens))
        object.__setattr__(self, "output_tokens", tuple(int(t) for t in self.output_tokens))
        if len(self.output_tokens) < 1:
            raise DimensionError("a token example needs at least one output token")

    @property
    def T(self) -> int:
        return len(self.output_tokens)


@dataclass(frozen=True)
class Example:
    id: int
    payload: Union[DenseExample, TokenExample]


@dataclass
class DenseData:
    """Feature matrix ``X`` (n, d) with responses ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DimensionError(f"X {self.X.shape} and y {self.y.shape} disagree")
        if not np.all(np.isfinite(self.X)):
            raise DimensionError("features must be finite")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "DenseData":
        idx = np.asarray(idx, dtype=np.int64)
        return DenseData(self.X[idx], self.y[idx])

    def example(self, i: int) -> DenseExample:
        return DenseExample(self.X[i], float(self.y[i]))

    def concat(self, other: "DenseData") -> "DenseData":
        return DenseData(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]))

    def repeat(self, k: int) -> "DenseData":
        return DenseData(np.tile(self.X, (k, 1)), np.tile(self.y, k))


@dataclass
class TokenData:
    examples: list[TokenExample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def subset(self, idx) -> "TokenData":
        return TokenData([self.examples[int(i)] for i in idx])

    def example(self, i: int) -> TokenExample:
        return self.examples[i]

    def lengths(self) -> np.ndarray:
        return np.array([ex.T for ex in self.examples], dtype=np.int64)

    def concat(self, other: "TokenData") -> "TokenData":
        return TokenData(self.examples + other.examples)

    def repeat(self, k: int) -> "TokenData":
        return TokenData(self.examples * k)


Dataset = Union[DenseData, TokenData]


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    pool: np.ndarray
    base_u: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    @property
    def scored(self) -> np.ndarray:
        """Pool examples outside the base set, ascending."""
        return np.setdiff1d(self.pool, self.base_u, assume_unique=True)

    def check(self) -> None:
        sets = [set(self.pool.tolist()), set(self.validation.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise SizeError("pool, validation and test overlap")
        if not set(self.base_u.tolist()) <= sets[0]:
            raise SizeError("base set is not contained in the pool")


def sample_without_replacement(pool, k: int, rng: RngStream) -> np.ndarray:
    """Uniform ``k``-subset of ``pool``, returned sorted ascending."""
    pool = np.sort(np.asarray(pool, dtype=np.int64))
    if k < 0 or k > pool.size:
        raise SizeError(f"cannot draw {k} items from a pool of {pool.size}")
    if k == pool.size:
        return pool.copy()
    chosen = rng.generator().permutation(pool.size)[:k]
    return np.sort(pool[chosen])


def make_split(n_pool: int, m_base: int, m_val: int, m_test: int, rng: RngStream) -> Split:
    """Lay out ``pool | validation | test`` ids and draw the base set from the pool."""
    if min(n_pool, m_base, m_val, m_test) < 1:
        raise SizeError("all split sizes must be at least 1")
    if m_base > n_pool:
        raise SizeError(f"base set of {m_base} does not fit in a pool of {n_pool}")
    pool = np.arange(n_pool, dtype=np.int64)
    validation = np.arange(n_pool, n_pool + m_val, dtype=np.int64)
    test = np.arange(n_pool + m_val, n_pool + m_val + m_test, dtype=np.int64)
    base_u = sample_without_replacement(pool, m_base, rng)
    return Split(pool=pool, base_u=base_u, validation=validation, test=test)


def length_bins(examples: Sequence[TokenExample] | TokenData, n_bins: int, ids=None) -> list[np.ndarray]:
    """Partition examples into ``n_bins`` near-equal bins ordered by output length.

    Examples are sorted by ``(T, id)``; earlier bins take the remainder so bin
    sizes differ by at most one.  ``ids`` defaults to positions.
    """
    if n_bins < 1:
        raise SizeError("n_bins must be >= 1")
    exs = list(examples)
    if not exs:
        raise SizeError("cannot bin an empty example list")
    ids = np.arange(len(exs), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    lengths = np.array([ex.T for ex in exs], dtype=np.int64)
    order = np.lexsort((ids, lengths))
    return [ids[chunk] for chunk in np.array_split(order, n_bins)]


# ---------------------------------------------------------------------------
# On-disk format
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(path: Union[str, os.PathLike], data: Dataset) -> None:
    """Write one record per line (UTF-8, LF)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if isinstance(data, DenseData):
        for i in range(len(data)):
            lines.append(", ".join([str(i), _fmt(data.y[i])] + [_fmt(v) for v in data.X[i]]))
    else:
        for i, ex in enumerate(data.examples):
            inp = " ".join(str(t) for t in ex.input_tokens)
            out = " ".join(str(t) for t in ex.output_tokens)
            lines.append(f"{i} | in: {inp} | out: {out}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_tokens(field_text: str, tag: str) -> tuple[int, ...]:
    field_text = field_text.strip()
    if not field_text.startswith(tag):
        raise ValueError(f"expected '{tag}' field, got {field_text!r}")
    body = field_text[len(tag):].strip()
    return tuple(int(t) for t in body.split()) if body else ()


def read_dataset(path: Union[str, os.PathLike]) -> Dataset:
    """Read a dataset written by :func:`write_dataset`; the format is sniffed."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    if "|" in lines[0]:
        examples = []
        for k, ln in enumerate(lines):
            id_part, in_part, out_part = ln.split("|")
            if int(id_part) != k:
                raise ValueError(f"{path}:{k + 1}: ids must be contiguous from 0")
            examples.append(TokenExample(_parse_tokens(in_part, "in:"), _parse_tokens(out_part, "out:")))
        return TokenData(examples)
    rows = [[float(v) for v in ln.split(",")] for ln in lines]
    arr = np.array(rows, dtype=np.float64)
    if not np.array_equal(arr[:, 0], np.arange(len(rows))):
        raise ValueError(f"{path}: ids must be contiguous from 0")
    return DenseData(arr[:, 2:], arr[:, 1])


def concat_all(parts: Iterable[Dataset]) -> Dataset:
    parts = list(parts)
    out = parts[0]
    for p in parts[1:]:
        out = out.concat(p)
    return out
