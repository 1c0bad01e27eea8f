"""Keyed Gaussian noise: pairwise-cancelling correlated draws and per-user draws.

All randomness is counter based.  A draw is a pure function of
``(seed, round, coordinate)`` so it can be regenerated by either endpoint of an
edge, in any order, on any thread.

Generator
---------
``mix64`` is the SplitMix64 finaliser.  For a 64-bit ``seed`` and a round
``t`` the stream key is ``k = mix64(mix64(seed) ^ mix64(t + ROUND_SALT))`` and
the ``j``-th 64-bit word is ``mix64(k + (j + 1) * GOLDEN)``.  Words ``2b`` and
``2b + 1`` become two uniforms in ``(0, 1]`` (top 53 bits) that a Box-Muller
transform turns into coordinates ``2b`` and ``2b + 1``.

Seeds derived from a master seed ``m``::

    edge  {i, j}, i < j:  mix64(mix64(mix64(m ^ EDGE_DOMAIN) + i) + j)
    user  i:              mix64(mix64(m ^ USER_DOMAIN) + i)
    data sampling:        mix64(m ^ SAMPLE_DOMAIN)

Arithmetic is modulo 2**64 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import EdgeMismatch, MissingSeed
from .graph import Graph

MASK64 = (1 << 64) - 1
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
ROUND_SALT = 0x6A09E667F3BCC909
EDGE_DOMAIN = 0xED6E5EED00000001
USER_DOMAIN = 0x05E25EED00000002
SAMPLE_DOMAIN = 0x5A3B1E5EED000003

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / (1 << 53)


def mix64(x):
    """SplitMix64 finaliser on a uint64 array (wrapping arithmetic)."""
    z = np.array(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= _M1
        z ^= z >> np.uint64(27)
        z *= _M2
    z ^= z >> np.uint64(31)
    return z


def _mix_int(x: int) -> int:
    return int(mix64(np.uint64(x & MASK64)))


def edge_seed_from_master(master: int, i: int, j: int) -> int:
    lo, hi = min(i, j), max(i, j)
    base = _mix_int(master ^ EDGE_DOMAIN)
    return _mix_int(_mix_int((base + lo) & MASK64) + hi)


def user_seed_from_master(master: int, i: int) -> int:
    return _mix_int((_mix_int(master ^ USER_DOMAIN) + i) & MASK64)


def sampling_seed_from_master(master: int) -> int:
    return _mix_int(master ^ SAMPLE_DOMAIN)


def stream_words(seeds: np.ndarray, round_index: int, count: int) -> np.ndarray:
    """``count`` 64-bit words per seed for one round, shape ``(len(seeds), count)``."""
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1)
    round_key = mix64(np.uint64((round_index + ROUND_SALT) & MASK64))
    keys = mix64(mix64(seeds) ^ round_key)
    with np.errstate(over="ignore"):
        counters = np.arange(1, count + 1, dtype=np.uint64) * GOLDEN
        return mix64(keys[:, None] + counters[None, :])


def standard_normals(seeds: np.ndarray, round_index: int, d: int) -> np.ndarray:
    """Standard Gaussian vectors of length ``d``, one row per seed."""
    pairs = (d + 1) // 2
    words = stream_words(seeds, round_index, 2 * pairs)
    u = ((words >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
    radius = np.sqrt(-2.0 * np.log(u[:, 0::2]))
    angle = _TWO_PI * u[:, 1::2]
    out = np.empty((words.shape[0], 2 * pairs))
    out[:, 0::2] = radius * np.cos(angle)
    out[:, 1::2] = radius * np.sin(angle)
    return out[:, :d]


def sample_indices(seeds: np.ndarray, round_index: int, sizes: np.ndarray) -> np.ndarray:
    """One uniform index in ``range(sizes[k])`` per seed."""
    words = stream_words(seeds, round_index, 1)[:, 0]
    u = (words >> np.uint64(11)).astype(np.float64) * _INV_2_53
    return np.minimum((u * sizes).astype(np.int64), np.asarray(sizes) - 1)


def clip(g: np.ndarray, c: float) -> np.ndarray:
    """Scale ``g`` by ``min(1, c / ||g||)``; the zero vector maps to itself."""
    g = np.asarray(g, dtype=float)
    norm = float(np.linalg.norm(g))
    if norm <= c:
        return g.copy()
    return g * (c / norm)


def clip_rows(g: np.ndarray, c) -> np.ndarray:
    """Row-wise clipping along the last axis; ``c`` broadcasts against the leading axes."""
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    c = np.asarray(c, dtype=float)
    if c.ndim:
        c = c.reshape(c.shape + (1,) * (g.ndim - c.ndim))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > c, c / norms, 1.0)
    return g * scale


@dataclass(frozen=True)
class EdgeSeed:
    edge: tuple[int, int]
    seed: int

    def __post_init__(self):
        i, j = self.edge
        if i == j:
            raise EdgeMismatch("edge endpoints must differ")
        object.__setattr__(self, "edge", (min(i, j), max(i, j)))
        object.__setattr__(self, "seed", int(self.seed) & MASK64)


@dataclass(frozen=True)
class SeedBook:
    """Every seed a run needs, derived from one master seed."""

    master: int
    edges: tuple[EdgeSeed, ...]
    users: tuple[int, ...]
    sampling: int

    @classmethod
    def from_master(cls, master: int, g: Graph) -> "SeedBook":
        master = int(master) & MASK64
        return cls(
            master=master,
            edges=tuple(EdgeSeed(e, edge_seed_from_master(master, *e)) for e in g.edge_list()),
            users=tuple(user_seed_from_master(master, i) for i in range(g.n)),
            sampling=sampling_seed_from_master(master),
        )

    def edge_map(self) -> dict[tuple[int, int], EdgeSeed]:
        return {s.edge: s for s in self.edges}

    def edge_array(self) -> np.ndarray:
        return np.array([s.seed for s in self.edges], dtype=np.uint64)

    def user_array(self) -> np.ndarray:
        return np.array(self.users, dtype=np.uint64)


def correlated_noise(
    seed: EdgeSeed, round_index: int, direction: tuple[int, int], d: int, sigma_cor: float
) -> np.ndarray:
    """Draw ``v_ij`` for the ordered pair ``direction = (i, j)``.

    The lower-indexed endpoint receives ``+v``, the other ``-v``, so
    ``v_ij == -v_ji`` bit for bit.
    """
    i, j = direction
    if (min(i, j), max(i, j)) != seed.edge:
        raise EdgeMismatch(f"direction {direction} does not lie on seeded edge {seed.edge}")
    v = sigma_cor * standard_normals(np.array([seed.seed], dtype=np.uint64), round_index, d)[0]
    return v if i < j else -v


def uncorrelated_noise(user_seed: int, round_index: int, d: int, sigma_cdp: float) -> np.ndarray:
    if sigma_cdp == 0:
        return np.zeros(d)
    return sigma_cdp * standard_normals(np.array([user_seed], dtype=np.uint64), round_index, d)[0]


def total_injected_noise(
    user: int,
    round_index: int,
    seeds: Mapping[tuple[int, int], EdgeSeed],
    neighbors: Sequence[int],
    sigma_cor: float,
    sigma_cdp: float,
    d: int,
    user_seed: int,
) -> np.ndarray:
    """Sum of a user's signed correlated draws plus its own uncorrelated draw."""
    total = np.zeros(d)
    for j in neighbors:
        key = (min(user, j), max(user, j))
        if key not in seeds:
            raise MissingSeed(f"no seed for edge {key}")
        total += correlated_noise(seeds[key], round_index, (user, j), d, sigma_cor)
    return total + uncorrelated_noise(user_seed, round_index, d, sigma_cdp)


def correlated_sums(g: Graph, book: SeedBook, round_index: int, d: int) -> np.ndarray:
    """Per-user sums of unit-variance correlated draws for one round, shape ``(n, d)``.

    Multiply by ``sigma_cor`` to get the injected correlated noise.
    """
    out = np.zeros((g.n, d))
    if not book.edges:
        return out
    z = standard_normals(book.edge_array(), round_index, d)
    lo = np.array([s.edge[0] for s in book.edges])
    hi = np.array([s.edge[1] for s in book.edges])
    np.add.at(out, lo, z)
    np.add.at(out, hi, -z)
    return out
