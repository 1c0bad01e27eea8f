"""Benchmark objectives: synthetic distributed least squares and L2-regularised logistic regression.

Problems evaluate gradients for a whole stack of local models at once.  Model
arrays have shape ``(..., n, d)``: any leading batch axes, then one row per
user.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np
from scipy import sparse
from scipy.special import expit

from .errors import InvalidProblem, InvalidRegularizer, ParseError, TooFewRows
from .noise import sample_indices


@dataclass(frozen=True)
class AssumptionConstants:
    """Smoothness/PL/noise constants used by the theoretical stepsize schedules."""

    mu: float
    L: float
    P: float = 1.0
    M: float = 0.0
    sigma_star_sq: float = 0.0
    zeta_star_sq: float = 0.0


class LeastSquares:
    """User ``i`` (1-based) holds ``F_i(x) = 0.5 * ||(i/sqrt(n)) x - b_i||^2``, ``b_i ~ N(0, I/i^2)``."""

    name = "least_squares"

    def __init__(self, n: int, d: int, seed: int = 0):
        if n < 1 or d < 1:
            raise InvalidProblem("least squares needs n >= 1 and d >= 1")
        self.n, self.d, self.seed = n, d, seed
        idx = np.arange(1, n + 1, dtype=float)
        self.scale = idx / math.sqrt(n)  # A_i = scale[i] * I
        rng = np.random.default_rng(seed)
        self.b = rng.standard_normal((n, d)) / idx[:, None]
        self.curvature = self.scale**2
        self.mu = float(self.curvature.mean())
        self.L = float(self.curvature.max())
        self.x_star = (self.scale[:, None] * self.b).sum(axis=0) / self.curvature.sum()
        self.f_star = float(self.loss(self.x_star))

    def stochastic_grad(self, x: np.ndarray, round_index: int = 0, sampling_seed: int = 0) -> np.ndarray:
        # a single sample per user, so the stochastic gradient is exact
        return self.curvature[:, None] * x - (self.scale[:, None] * self.b)

    def local_losses(self, x: np.ndarray) -> np.ndarray:
        """``F_i(x_i)`` for stacked local models ``x`` of shape ``(..., n, d)``."""
        r = self.scale[:, None] * x - self.b
        return 0.5 * np.einsum("...ij,...ij->...i", r, r)

    def loss(self, x: np.ndarray) -> np.ndarray:
        """Global loss ``F(x)`` for models of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        r = self.scale[:, None] * x[..., None, :] - self.b
        return 0.5 * np.einsum("...ij,...ij->...", r, r) / self.n

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.mu * x - (self.scale[:, None] * self.b).sum(axis=0) / self.n

    def hvp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.mu * np.asarray(v, dtype=float)

    def constants(self) -> AssumptionConstants:
        # 1/n sum ||grad F_i(x)||^2 <= 2 mean(h_i^2)||x - x*||^2 + 2 zeta^2 and ||grad F||^2 = mu^2 ||x - x*||^2
        g_star = self.curvature[:, None] * self.x_star - self.scale[:, None] * self.b
        zeta = float(np.mean(np.sum(g_star**2, axis=1)))
        return AssumptionConstants(
            mu=self.mu,
            L=self.L,
            P=2.0 * float(np.mean(self.curvature**2)) / self.mu**2,
            M=0.0,
            sigma_star_sq=0.0,
            zeta_star_sq=2.0 * zeta,
        )

    def accuracy(self, x: np.ndarray):
        return None


def synthetic_least_squares(n: int, d: int, seed: int = 0) -> LeastSquares:
    return LeastSquares(n, d, seed)


# --------------------------------------------------------------------------- data


@dataclass(frozen=True)
class Dataset:
    """Sparse rows with labels in ``{-1, +1}``."""

    features: sparse.csr_matrix
    labels: np.ndarray
    d: int = field(default=0)

    def __post_init__(self):
        feats = sparse.csr_matrix(self.features)
        d = self.d or feats.shape[1]
        if feats.shape[1] != d:
            feats = sparse.csr_matrix((feats.data, feats.indices, feats.indptr), shape=(feats.shape[0], d))
        labels = np.asarray(self.labels, dtype=float)
        if labels.shape != (feats.shape[0],):
            raise InvalidProblem("one label per row required")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise InvalidProblem("labels must be -1 or +1")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "d", d)

    def __len__(self) -> int:
        return self.features.shape[0]

    def rows(self) -> Iterable[tuple[float, dict[int, float]]]:
        f = self.features
        for r in range(len(self)):
            lo, hi = f.indptr[r], f.indptr[r + 1]
            yield float(self.labels[r]), dict(zip(f.indices[lo:hi].tolist(), f.data[lo:hi].tolist()))

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], self.d)


def parse_libsvm(stream: TextIO | str, d: int | None = None) -> Dataset:
    """Parse ``label idx:val ...`` lines (1-based, strictly increasing indices).

    Labels ``{0, 1}`` are mapped to ``{-1, +1}``.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    raw_labels: list[float] = []
    indptr, indices, values = [0], [], []
    for lineno, line in enumerate(stream, start=1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        try:
            raw_labels.append(float(tokens[0]))
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
        last = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"expected idx:val, got {tok!r}", lineno)
            try:
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise ParseError(f"malformed feature {tok!r}", lineno) from None
            if idx <= last:
                raise ParseError(f"feature indices must be positive and strictly increasing at {tok!r}", lineno)
            last = idx
            indices.append(idx - 1)
            values.append(val)
        indptr.append(len(indices))
    labels = np.asarray(raw_labels, dtype=float)
    distinct = set(np.unique(labels).tolist())
    if distinct <= {0.0, 1.0}:
        labels = np.where(labels == 0.0, -1.0, 1.0)
    elif not distinct <= {-1.0, 1.0}:
        raise ParseError(f"labels must be binary, saw {sorted(distinct)}")
    seen = max(indices, default=-1) + 1
    if d is None:
        d = seen
    elif d < seen:
        raise ParseError(f"feature index {seen} exceeds declared dimension {d}")
    feats = sparse.csr_matrix(
        (np.asarray(values, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(labels), d),
    )
    return Dataset(feats, labels, d)


def load_libsvm(path, d: int | None = None) -> Dataset:
    with open(path) as fh:
        return parse_libsvm(fh, d)


def to_libsvm(data: Dataset) -> str:
    lines = []
    for label, feats in data.rows():
        parts = ["+1" if label > 0 else "-1"]
        parts += [f"{k + 1}:{v!r}" for k, v in sorted(feats.items())]
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def partition(data: Dataset, n: int, seed: int = 0) -> list[Dataset]:
    """Shuffle with ``seed`` then cut ``n`` contiguous equal shards, dropping the remainder."""
    if n < 1:
        raise InvalidProblem("need at least one shard")
    if len(data) < n:
        raise TooFewRows(f"{len(data)} rows cannot fill {n} shards")
    order = np.random.default_rng(seed).permutation(len(data))
    m = len(data) // n
    return [data.subset(order[k * m : (k + 1) * m]) for k in range(n)]


class Logistic:
    """Per-sample loss ``log(1 + exp(-y x.a)) + lam ||x||^2`` over equal user shards."""

    name = "logistic"

    def __init__(self, shards: list[Dataset], lam: float, batch_size: int = 1):
        if lam < 0:
            raise InvalidRegularizer(f"regulariser must be non-negative, got {lam}")
        if not shards or any(len(s) == 0 for s in shards):
            raise InvalidProblem("every user needs a non-empty shard")
        self.n = len(shards)
        self.d = shards[0].d
        self.lam = float(lam)
        self.batch_size = int(batch_size)
        self.features = np.stack([s.features.toarray() for s in shards])  # (n, m, d)
        self.labels = np.stack([s.labels for s in shards])  # (n, m)
        self.m = self.features.shape[1]
        self._all_a = self.features.reshape(-1, self.d)
        self._all_y = self.labels.reshape(-1)
        row_sq = np.einsum("ij,ij->i", self._all_a, self._all_a)
        self.L = 0.25 * float(row_sq.max()) + 2.0 * self.lam
        self.mu = 2.0 * self.lam
        self.f_star = None

    @staticmethod
    def sample_loss(x: np.ndarray, a: np.ndarray, y: float, lam: float) -> float:
        return float(np.logaddexp(0.0, -y * (a @ x)) + lam * (x @ x))

    @staticmethod
    def sample_grad(x: np.ndarray, a: np.ndarray, y: float, lam: float) -> np.ndarray:
        return -y * a * expit(-y * (a @ x)) + 2.0 * lam * x

    def stochastic_grad(self, x: np.ndarray, round_index: int, sampling_seed: int) -> np.ndarray:
        """Gradient at each user's model on ``batch_size`` rows drawn from its shard."""
        seeds = _user_sampling_seeds(sampling_seed, self.n, self.batch_size)
        picks = sample_indices(seeds, round_index, np.full(seeds.shape, self.m)).reshape(
            self.n, self.batch_size
        )
        users = np.arange(self.n)[:, None]
        a = self.features[users, picks]  # (n, b, d)
        y = self.labels[users, picks]  # (n, b)
        margins = np.einsum("...nd,nbd->...nb", x, a)
        weights = -y * expit(-y * margins)
        return np.einsum("...nb,nbd->...nd", weights, a) / self.batch_size + 2.0 * self.lam * x

    def loss(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        margins = x @ self._all_a.T
        data = np.logaddexp(0.0, -self._all_y * margins).mean(axis=-1)
        return data + self.lam * np.einsum("...d,...d->...", x, x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        margins = x @ self._all_a.T
        weights = -self._all_y * expit(-self._all_y * margins)
        return weights @ self._all_a / len(self._all_y) + 2.0 * self.lam * x

    def accuracy(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pred = np.where(x @ self._all_a.T >= 0, 1.0, -1.0)
        return (pred == self._all_y).mean(axis=-1)

    def constants(self, **overrides) -> AssumptionConstants:
        base = dict(mu=self.mu, L=self.L, P=1.0, M=0.0, sigma_star_sq=0.0, zeta_star_sq=0.0)
        base.update(overrides)
        return AssumptionConstants(**base)


def _user_sampling_seeds(sampling_seed: int, n: int, batch: int) -> np.ndarray:
    from .noise import MASK64, mix64

    base = mix64(np.uint64(sampling_seed & MASK64))
    with np.errstate(over="ignore"):
        return mix64(base + np.arange(n * batch, dtype=np.uint64))


def logistic_problem(data: Dataset, lam: float, n: int, seed: int = 0, batch_size: int = 1) -> Logistic:
    if lam < 0:
        raise InvalidRegularizer(f"regulariser must be non-negative, got {lam}")
    if len(data) == 0:
        raise TooFewRows("dataset is empty")
    return Logistic(partition(data, n, seed), lam, batch_size)
