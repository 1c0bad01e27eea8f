"""Privacy/utility sweeps: calibrate every algorithm to a common budget, tune, report per seed.

For each topology and target epsilon the per-step budget is obtained by
inverting composition.  The baselines get their unique Gaussian noise levels.
The correlated-noise algorithm gets a geometric grid of ``sigma_cdp`` values
between the two baseline levels, each paired by binary search with the
smallest ``sigma_cor`` meeting the budget; three couples (lowest, middle and
highest ``sigma_cdp``) enter the tuning grid.  Every algorithm is then tuned
over stepsize and clipping grids by mean final loss across seeds.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .accountant import (
    AdversaryModel,
    NoiseConfig,
    calibrate_binary_search,
    cdp_sigma,
    ldp_sigma,
    per_step_budget,
)
from .engine import ALGORITHMS, canonical_algorithm, simulate
from .errors import DecorError, InvalidConfig
from .graph import Graph, metropolis_weights, parse_topology

CSV_COLUMNS = (
    "algorithm",
    "topology",
    "epsilon",
    "seed",
    "eta",
    "clip",
    "sigma_cdp",
    "sigma_cor",
    "final_loss",
    "final_accuracy",
    "wall_seconds",
    "status",
)


@dataclass
class SweepSpec:
    topologies: Sequence[str]
    problem: object
    epsilons: Sequence[float] = (3.0, 10.0, 30.0)
    seeds: Sequence[int] = (0, 1, 2, 3)
    steps: int = 2000
    delta: float = 1e-5
    etas: Sequence[float] = (0.001, 0.003, 0.01, 0.03, 0.1)
    clips: Sequence[float] = (0.1, 0.3, 1.0, 3.0)
    algorithms: Sequence[str] = ALGORITHMS
    adversary: AdversaryModel = field(default_factory=AdversaryModel.eavesdropper)
    couple_grid: int = 16
    noise: NoiseConfig | None = None
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.algorithms = tuple(canonical_algorithm(a) for a in self.algorithms)
        for name in ("topologies", "epsilons", "seeds", "etas", "clips", "algorithms"):
            if not len(getattr(self, name)):
                raise InvalidConfig(f"sweep grid {name!r} is empty")
        if self.noise is None and self.couple_grid < 1:
            raise InvalidConfig("couple_grid must be at least 1")


@dataclass(frozen=True)
class Candidate:
    algorithm: str
    eta: float
    clip: float
    sigma_cdp: float
    sigma_cor: float


@dataclass
class SweepRow:
    algorithm: str
    topology: str
    epsilon: float
    seed: int
    eta: float | None
    clip: float | None
    sigma_cdp: float | None
    sigma_cor: float | None
    final_loss: float | None
    final_accuracy: float | None
    wall_seconds: float
    status: str

    def as_list(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)

        return [fmt(getattr(self, c)) for c in CSV_COLUMNS]


def noise_couples(
    g: Graph, clip: float, eps_iter: float, adv: AdversaryModel, grid: int
) -> list[tuple[float, float]]:
    """Feasible ``(sigma_cdp, sigma_cor)`` couples: lowest, middle and highest ``sigma_cdp``."""
    lo, hi = cdp_sigma(g.n - adv.q, clip, eps_iter), ldp_sigma(clip, eps_iter)
    found = []
    for s_cdp in np.geomspace(lo, hi, grid + 1)[1:]:
        try:
            s_cor = calibrate_binary_search(g, float(s_cdp), clip, eps_iter, adv)
        except DecorError:
            continue
        found.append((float(s_cdp), s_cor))
    if not found:
        return []
    picks = sorted({0, (len(found) - 1) // 2, len(found) - 1})
    return [found[k] for k in picks]


def candidates(spec: SweepSpec, g: Graph, epsilon: float) -> tuple[list[Candidate], dict[str, str]]:
    """Tuning grid for one (topology, epsilon); also returns per-algorithm calibration failures."""
    out: list[Candidate] = []
    failures: dict[str, str] = {}
    if spec.noise is not None:
        nz = spec.noise
        for algo in spec.algorithms:
            s_cor = nz.sigma_cor if algo == "decor" else 0.0
            out += [Candidate(algo, eta, nz.clip_c, nz.sigma_cdp, s_cor) for eta in spec.etas]
        return out, failures
    try:
        eps_iter = per_step_budget(epsilon, spec.steps, spec.delta)
    except DecorError as exc:
        return [], {a: exc.code for a in spec.algorithms}
    for algo in spec.algorithms:
        found = []
        try:
            for clip in spec.clips:
                if algo == "cdp_baseline":
                    couples = [(cdp_sigma(g.n, clip, eps_iter), 0.0)]
                elif algo == "ldp_baseline":
                    couples = [(ldp_sigma(clip, eps_iter), 0.0)]
                else:
                    couples = noise_couples(g, clip, eps_iter, spec.adversary, spec.couple_grid)
                found += [Candidate(algo, eta, clip, sc, sr) for sc, sr in couples for eta in spec.etas]
        except DecorError as exc:
            failures[algo] = exc.code
            continue
        if not found:
            failures[algo] = "unreachable-target"
        out += found
    return out, failures


def _threads() -> int:
    raw = os.environ.get("DECOR_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise InvalidConfig(f"DECOR_THREADS must be an integer, got {raw!r}") from None
    return max(1, os.cpu_count() or 1)


def _run_batch(spec: SweepSpec, g: Graph, w, cands: list[Candidate], seed: int):
    start = time.perf_counter()
    res = simulate(
        spec.problem,
        g,
        w,
        seed,
        spec.steps,
        [c.eta for c in cands],
        [c.clip for c in cands],
        [c.sigma_cdp for c in cands],
        [c.sigma_cor for c in cands],
        x0=spec.x0,
        record_every=max(spec.steps, 1),
    )
    share = (time.perf_counter() - start) / len(cands)
    loss = np.array([tr.loss[-1] for tr in res.traces])
    loss[np.array(res.status) != "ok"] = np.inf
    acc = [None if tr.accuracy is None else float(tr.accuracy[-1]) for tr in res.traces]
    return loss, acc, res.status, share


def run_sweep(spec: SweepSpec, progress: Callable[[str], None] | None = None) -> list[SweepRow]:
    """Rows ordered by topology, epsilon, algorithm, seed."""
    jobs = []
    plans = {}
    for topo in spec.topologies:
        g = parse_topology(topo, spec.problem.n)
        w = metropolis_weights(g)
        for eps in spec.epsilons:
            cands, failures = candidates(spec, g, eps)
            plans[(topo, eps)] = (cands, failures)
            if cands:
                jobs += [(topo, eps, seed, g, w, cands) for seed in spec.seeds]

    def work(job):
        topo, eps, seed, g, w, cands = job
        out = _run_batch(spec, g, w, cands, seed)
        if progress:
            progress(f"{topo} eps={eps:g} seed={seed}")
        return out

    with ThreadPoolExecutor(max_workers=min(_threads(), max(len(jobs), 1))) as pool:
        results = dict(zip(((j[0], j[1], j[2]) for j in jobs), pool.map(work, jobs)))

    rows: list[SweepRow] = []
    for topo in spec.topologies:
        for eps in spec.epsilons:
            cands, failures = plans[(topo, eps)]
            for algo in spec.algorithms:
                idx = [k for k, c in enumerate(cands) if c.algorithm == algo]
                if not idx:
                    code = failures.get(algo, "no-candidates")
                    rows += [
                        SweepRow(algo, topo, eps, s, None, None, None, None, None, None, 0.0, code)
                        for s in spec.seeds
                    ]
                    continue
                per_seed = [results[(topo, eps, s)] for s in spec.seeds]
                mean_loss = np.mean([r[0][idx] for r in per_seed], axis=0)
                best = idx[int(np.argmin(mean_loss))]
                c = cands[best]
                for s, (loss, acc, status, share) in zip(spec.seeds, per_seed):
                    rows.append(
                        SweepRow(
                            algo, topo, eps, s, c.eta, c.clip, c.sigma_cdp, c.sigma_cor,
                            float(loss[best]) if math.isfinite(loss[best]) else None,
                            acc[best], share, status[best],
                        )
                    )
    return rows


def rows_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow(r.as_list())
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    """Parse sweep CSV back into typed dictionaries."""
    numeric = {"epsilon", "eta", "clip", "sigma_cdp", "sigma_cor", "final_loss", "final_accuracy", "wall_seconds"}
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {}
        for k, v in rec.items():
            if k == "seed":
                row[k] = int(v)
            elif k in numeric:
                row[k] = float(v) if v != "" else None
            else:
                row[k] = v
        out.append(row)
    return out


def mean_final_loss(rows: Sequence[SweepRow], algorithm: str, topology: str, epsilon: float) -> float:
    vals = [
        r.final_loss if r.final_loss is not None else math.inf
        for r in rows
        if r.algorithm == algorithm and r.topology == topology and r.epsilon == epsilon
    ]
    return float(np.mean(vals)) if vals else math.nan
