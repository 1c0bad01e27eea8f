"""Gossip SGD with privacy noise: the correlated-noise algorithm and its CDP/LDP baselines.

The simulator is vectorised over a batch of hyperparameter settings that share
one topology, one problem and one master seed.  Every member of the batch sees
the same keyed noise draws, scaled by its own standard deviations, so a batch
of size one is exactly a single run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .accountant import NoiseConfig
from .errors import Diverged, InvalidConfig, InvalidConstants
from .graph import Graph, MixingMatrix, metropolis_weights, spectral_gap
from .noise import SeedBook, clip_rows, correlated_sums, standard_normals
from .problems import AssumptionConstants

ALGORITHMS = ("decor", "cdp_baseline", "ldp_baseline")
_ALGO_ALIASES = {"cdp": "cdp_baseline", "ldp": "ldp_baseline"}
DIVERGENCE_LIMIT = 1e12


def canonical_algorithm(name: str) -> str:
    name = _ALGO_ALIASES.get(name, name)
    if name not in ALGORITHMS:
        raise InvalidConfig(f"unknown algorithm {name!r}; expected one of {', '.join(ALGORITHMS)}")
    return name


# --------------------------------------------------------------------------- schedules


def schedule_constant(p: float, mu: float, L: float, P: float, M: float, n: int) -> float:
    """Constant ``c`` shared by both theoretical schedules."""
    return max(
        4.0 * math.sqrt(3.0 * (1.0 - p) * (3.0 * P + p * M)),
        mu / L,
        2.0 * p,
        4.0 * p * M / n,
    )


def _check_constants(mu: float, L: float, p: float) -> None:
    if not mu > 0:
        raise InvalidConstants(f"mu must be positive, got {mu}")
    if not 0 < p <= 1:
        raise InvalidConstants(f"spectral gap must lie in (0, 1], got {p}")
    if not L >= mu:
        raise InvalidConstants(f"need L >= mu, got L={L}, mu={mu}")


def pl_stepsize(t, mu: float, L: float, p: float, P: float, M: float, n: int):
    """Decreasing schedule ``16 / (mu (t + c L / (mu p)))`` for PL objectives."""
    _check_constants(mu, L, p)
    c = schedule_constant(p, mu, L, P, M, n)
    return 16.0 / (mu * (np.asarray(t, dtype=float) + c * L / (mu * p)))


def nonconvex_stepsize(
    consts: AssumptionConstants, p: float, f0_gap: float, steps: int, n: int, sigma_cdp: float, d: int
) -> float:
    """Constant stepsize ``min{p/(2cL), 2 sqrt(F0 n / (L T (sigma*^2 + d sigma_cdp^2)))}``."""
    if steps < 1:
        raise InvalidConstants("steps must be at least 1")
    if not consts.L > 0 or not 0 < p <= 1:
        raise InvalidConstants(f"need L > 0 and p in (0, 1], got L={consts.L}, p={p}")
    if f0_gap < 0:
        raise InvalidConstants(f"initial loss gap must be non-negative, got {f0_gap}")
    c = schedule_constant(p, consts.mu, consts.L, consts.P, consts.M, n)
    first = p / (2.0 * c * consts.L)
    variance = consts.sigma_star_sq + d * sigma_cdp**2
    if variance <= 0:
        return first
    return min(first, 2.0 * math.sqrt(f0_gap * n / (consts.L * steps * variance)))


def consensus_distance(models: np.ndarray) -> np.ndarray:
    """Mean squared distance of user models (axis ``-2``) to their average."""
    models = np.asarray(models, dtype=float)
    dev = models - models.mean(axis=-2, keepdims=True)
    return np.einsum("...ij,...ij->...", dev, dev) / models.shape[-2]


# --------------------------------------------------------------------------- config / state


@dataclass
class TrainConfig:
    """One training run.

    ``stepsize`` is a float for a constant stepsize, or ``"pl"`` / ``"nonconvex"``
    for the theoretical schedules, which read ``constants`` (defaulting to the
    problem's own) and the spectral gap of ``weights``.
    """

    algorithm: str
    steps: int
    noise: NoiseConfig
    graph: Graph
    problem: object
    seed: int = 0
    stepsize: float | str = 0.01
    weights: MixingMatrix | None = None
    constants: AssumptionConstants | None = None
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.algorithm = canonical_algorithm(self.algorithm)
        if self.steps < 0:
            raise InvalidConfig("steps must be non-negative")
        if self.graph.n != self.problem.n:
            raise InvalidConfig(f"graph has {self.graph.n} users, problem has {self.problem.n}")
        if self.weights is None:
            self.weights = metropolis_weights(self.graph)
        else:
            self.weights.check_support(self.graph)
        if isinstance(self.stepsize, str) and self.stepsize not in ("pl", "nonconvex"):
            raise InvalidConfig(f"unknown stepsize mode {self.stepsize!r}")

    @property
    def effective_noise(self) -> NoiseConfig:
        """Baselines carry no correlated noise."""
        if self.algorithm == "decor":
            return self.noise
        return replace(self.noise, sigma_cor=0.0)

    def initial_models(self) -> np.ndarray:
        return initial_models(self.problem, self.x0)

    def stepsizes(self) -> np.ndarray:
        """``eta_t`` for ``t = 0..T``."""
        t = np.arange(self.steps + 1)
        if not isinstance(self.stepsize, str):
            return np.full(self.steps + 1, float(self.stepsize))
        consts = self.constants or self.problem.constants()
        p = spectral_gap(self.weights)
        n = self.graph.n
        if self.stepsize == "pl":
            return pl_stepsize(t, consts.mu, consts.L, p, consts.P, consts.M, n)
        x0 = self.initial_models().mean(axis=0)
        f_star = getattr(self.problem, "f_star", None) or 0.0
        gap = max(float(self.problem.loss(x0)) - f_star, 0.0)
        eta = nonconvex_stepsize(
            consts, p, gap, max(self.steps, 1), n, self.effective_noise.sigma_cdp, self.problem.d
        )
        return np.full(self.steps + 1, eta)


def initial_models(problem, x0=None) -> np.ndarray:
    """Every user starts from ``x0`` (default: the all-ones vector)."""
    if x0 is None:
        x0 = np.ones(problem.d)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape == (problem.d,):
        return np.tile(x0, (problem.n, 1))
    if x0.shape == (problem.n, problem.d):
        return x0.copy()
    raise InvalidConfig(f"initial model has shape {x0.shape}, expected ({problem.d},) or ({problem.n}, {problem.d})")


@dataclass
class SimState:
    models: np.ndarray
    round: int
    seeds: SeedBook

    @classmethod
    def initial(cls, cfg: TrainConfig) -> "SimState":
        return cls(cfg.initial_models(), 0, SeedBook.from_master(cfg.seed, cfg.graph))

    @property
    def average(self) -> np.ndarray:
        return self.models.mean(axis=0)


@dataclass
class MetricsTrace:
    """Per-round metrics at ``rounds`` (all of ``0..T`` for a full run)."""

    rounds: np.ndarray
    loss: np.ndarray
    grad_norm_sq: np.ndarray
    consensus: np.ndarray
    stepsize: np.ndarray
    accuracy: np.ndarray | None = None

    COLUMNS = ("round", "loss", "grad_norm_sq", "consensus", "stepsize")

    def __len__(self) -> int:
        return len(self.rounds)

    def rows(self):
        for k in range(len(self)):
            yield (
                int(self.rounds[k]),
                float(self.loss[k]),
                float(self.grad_norm_sq[k]),
                float(self.consensus[k]),
                float(self.stepsize[k]),
            )


# --------------------------------------------------------------------------- simulation


@dataclass
class _Noise:
    """Keyed per-round draws shared by every batch member."""

    graph: Graph
    book: SeedBook
    user_seeds: np.ndarray = field(init=False)

    def __post_init__(self):
        self.user_seeds = self.book.user_array()

    def draws(self, round_index: int, d: int, need_cor: bool):
        z_cdp = standard_normals(self.user_seeds, round_index, d)
        z_cor = correlated_sums(self.graph, self.book, round_index, d) if need_cor else None
        return z_cdp, z_cor


def _col(values, batch: int) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(values, dtype=float), (batch,)).copy()
    return arr


def _step(models, w, problem, round_index, sampling_seed, eta, clip_c, sigma_cdp, sigma_cor, z_cdp, z_cor):
    """One round for stacked models of shape ``(B, n, d)``; returns (new models, noisy grads)."""
    grads = clip_rows(problem.stochastic_grad(models, round_index, sampling_seed), clip_c)
    noisy = grads + sigma_cdp[:, None, None] * z_cdp
    if z_cor is not None:
        noisy = noisy + sigma_cor[:, None, None] * z_cor
    half = models - eta[:, None, None] * noisy
    return np.matmul(w, half), noisy


def decor_step(state: SimState, w: MixingMatrix, cfg: TrainConfig, problem=None) -> SimState:
    """Local noisy clipped SGD step followed by one gossip round."""
    problem = cfg.problem if problem is None else problem
    noise = cfg.effective_noise
    t = state.round
    eta = cfg.stepsizes()[t] if t <= cfg.steps else cfg.stepsizes()[-1]
    keyed = _Noise(cfg.graph, state.seeds)
    z_cdp, z_cor = keyed.draws(t, problem.d, noise.sigma_cor != 0)
    new, _ = _step(
        state.models[None],
        w.w,
        problem,
        t,
        state.seeds.sampling,
        np.array([eta]),
        np.array([noise.clip_c]),
        np.array([noise.sigma_cdp]),
        np.array([noise.sigma_cor]),
        z_cdp,
        z_cor,
    )
    new = new[0]
    if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > DIVERGENCE_LIMIT:
        raise Diverged(t + 1, "model left the finite range")
    return SimState(new, t + 1, state.seeds)


@dataclass
class BatchResult:
    traces: list[MetricsTrace]
    final_models: np.ndarray
    status: list[str]
    diverged_round: np.ndarray


def simulate(
    problem,
    graph: Graph,
    w: MixingMatrix,
    seed: int,
    steps: int,
    stepsizes,
    clips,
    sigma_cdp,
    sigma_cor,
    x0=None,
    record_every: int = 1,
) -> BatchResult:
    """Run a batch of configurations side by side.

    ``stepsizes`` has shape ``(B, T+1)`` or ``(B,)`` for constant stepsizes;
    the other per-configuration arguments have shape ``(B,)``.  Members that
    leave the finite range are frozen at their last good iterate and reported
    with status ``"diverged"``.
    """
    etas = np.asarray(stepsizes, dtype=float)
    if etas.ndim == 0:
        etas = etas[None]
    batch = etas.shape[0]
    if etas.ndim == 1:
        etas = np.repeat(etas[:, None], steps + 1, axis=1)
    clips, s_cdp, s_cor = (_col(v, batch) for v in (clips, sigma_cdp, sigma_cor))
    need_cor = bool(np.any(s_cor != 0))

    book = SeedBook.from_master(seed, graph)
    keyed = _Noise(graph, book)
    models = np.repeat(initial_models(problem, x0)[None], batch, axis=0)
    alive = np.ones(batch, dtype=bool)
    diverged_at = np.full(batch, -1, dtype=np.int64)

    rounds = sorted(set(range(0, steps + 1, max(record_every, 1))) | {steps})
    record_at = set(rounds)
    k_of = {r: k for k, r in enumerate(rounds)}
    shape = (batch, len(rounds))
    loss, gns, cons = np.empty(shape), np.empty(shape), np.empty(shape)
    acc = np.empty(shape) if hasattr(problem, "accuracy") and problem.accuracy(np.zeros(problem.d)) is not None else None

    def record(t):
        k = k_of[t]
        avg = models.mean(axis=1)
        loss[:, k] = problem.loss(avg)
        g = problem.grad(avg)
        gns[:, k] = np.einsum("bd,bd->b", g, g)
        cons[:, k] = consensus_distance(models)
        if acc is not None:
            acc[:, k] = problem.accuracy(avg)

    record(0)
    for t in range(steps):
        z_cdp, z_cor = keyed.draws(t, problem.d, need_cor)
        new, _ = _step(models, w.w, problem, t, book.sampling, etas[:, t], clips, s_cdp, s_cor, z_cdp, z_cor)
        with np.errstate(invalid="ignore"):
            bad = ~np.all(np.isfinite(new) & (np.abs(new) <= DIVERGENCE_LIMIT), axis=(1, 2))
        fresh = bad & alive
        diverged_at[fresh] = t + 1
        alive &= ~bad
        models = np.where(alive[:, None, None], new, models)
        if t + 1 in record_at:
            record(t + 1)

    idx = np.asarray(rounds)
    traces = [
        MetricsTrace(
            rounds=idx,
            loss=loss[b],
            grad_norm_sq=gns[b],
            consensus=cons[b],
            stepsize=etas[b, idx],
            accuracy=None if acc is None else acc[b],
        )
        for b in range(batch)
    ]
    status = ["ok" if a else "diverged" for a in alive]
    return BatchResult(traces, models, status, diverged_at)


def run(cfg: TrainConfig, record_every: int = 1) -> MetricsTrace:
    """Full metrics trace of one run; raises :class:`Diverged` with the failing round."""
    noise = cfg.effective_noise
    res = simulate(
        cfg.problem,
        cfg.graph,
        cfg.weights,
        cfg.seed,
        cfg.steps,
        cfg.stepsizes()[None],
        [noise.clip_c],
        [noise.sigma_cdp],
        [noise.sigma_cor],
        x0=cfg.x0,
        record_every=record_every,
    )
    if res.status[0] != "ok":
        raise Diverged(int(res.diverged_round[0]), "model left the finite range")
    return res.traces[0]


def run_many(configs: Sequence[TrainConfig], record_every: int = 1) -> BatchResult:
    """Batch configurations that share graph, weights, problem, seed and length."""
    if not configs:
        raise InvalidConfig("no configurations to run")
    head = configs[0]
    for c in configs[1:]:
        if (c.graph, c.seed, c.steps) != (head.graph, head.seed, head.steps) or c.problem is not head.problem:
            raise InvalidConfig("batched runs must share graph, problem, seed and length")
        if not np.array_equal(c.weights.w, head.weights.w):
            raise InvalidConfig("batched runs must share mixing weights")
    noises = [c.effective_noise for c in configs]
    return simulate(
        head.problem,
        head.graph,
        head.weights,
        head.seed,
        head.steps,
        np.stack([c.stepsizes() for c in configs]),
        [nz.clip_c for nz in noises],
        [nz.sigma_cdp for nz in noises],
        [nz.sigma_cor for nz in noises],
        x0=head.x0,
        record_every=record_every,
    )
