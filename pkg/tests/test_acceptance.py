"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary block at
the end of the session lists every verdict.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import pytest

from decor.accountant import (
    AdversaryModel,
    NoiseConfig,
    calibrate_binary_search,
    calibrate_closed_form,
    compose_and_convert,
    step_epsilon_bound,
    step_epsilon_exact,
)
from decor.engine import TrainConfig, run
from decor.graph import (
    Graph,
    algebraic_connectivity,
    build_topology,
    metropolis_weights,
    uniform_weights,
    weight_heterogeneity,
)
from decor.noise import SeedBook, correlated_sums
from decor.problems import Logistic, load_libsvm, logistic_problem, synthetic_least_squares
from decor.sweep import SweepSpec, mean_final_loss, run_sweep
from oracles import central_difference, sherman_morrison_complete

DATA = Path(__file__).parent / "data" / "small.libsvm"
EAVES = AdversaryModel.eavesdropper()
CURIOUS = AdversaryModel.curious()


def _random_noise(rng):
    return NoiseConfig(
        float(10 ** rng.uniform(-1, 1)), float(10 ** rng.uniform(-1, 1.5)), float(10 ** rng.uniform(-1, 1))
    )


def _random_connected(rng, n):
    # random spanning tree plus a few random chords
    order = rng.permutation(n)
    edges = {tuple(sorted((int(order[k]), int(order[rng.integers(k)])))) for k in range(1, n)}
    for _ in range(int(rng.integers(0, n))):
        i, j = rng.choice(n, 2, replace=False)
        edges.add((int(min(i, j)), int(max(i, j))))
    return Graph.from_edges(n, edges)


def test_accountant_exactness(verdict):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for n in (2, 4, 8, 16, 32):
        g = build_topology("complete", n)
        for _ in range(50):
            nz = _random_noise(rng)
            got = step_epsilon_exact(g, nz, EAVES)
            want = sherman_morrison_complete(n, nz.sigma_cdp, nz.sigma_cor, nz.clip_c)
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-10 and elapsed < 1.0, f"max scaled error {worst:.2e}, {elapsed:.3f}s")


def test_bound_dominance(verdict):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    violations, equality_gap, checked = 0, 0.0, 0
    for kind in ("ring", "grid", "complete", "star"):
        for n in (4, 8, 16):
            g = build_topology(kind, n)
            for _ in range(20):
                nz = _random_noise(rng)
                for adv in (EAVES, CURIOUS):
                    exact = step_epsilon_exact(g, nz, adv)
                    bound = step_epsilon_bound(g, nz, adv)
                    checked += 1
                    if bound < exact * (1 - 1e-12):
                        violations += 1
                    if kind == "complete" and adv.q == 0:
                        equality_gap = max(equality_gap, abs(bound - exact) / max(1.0, exact))
    elapsed = time.perf_counter() - start
    ok = violations == 0 and equality_gap <= 1e-10 and elapsed < 5.0
    verdict(2, ok, f"{checked} cases, {violations} violations, complete gap {equality_gap:.2e}, {elapsed:.2f}s")


def test_hand_computed_anchors(verdict):
    g = build_topology("ring", 4)
    nz = NoiseConfig(1.0, 1.0, 1.0)
    eaves = step_epsilon_exact(g, nz, EAVES)
    curious = step_epsilon_exact(g, nz, CURIOUS)
    ok = abs(eaves - 14 / 15) <= 1e-10 and abs(curious - 1.25) <= 1e-10
    verdict(3, ok, f"eavesdropper {eaves:.12f} (14/15), curious {curious:.12f} (1.25)")


def test_calibration_round_trip(verdict):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    kinds = ("ring", "grid", "complete", "star")
    worst = 0.0
    for _ in range(50):
        g = build_topology(kinds[rng.integers(4)], int(rng.choice([4, 8, 9, 16])))
        s_cdp, clip = float(10 ** rng.uniform(-0.5, 1)), float(10 ** rng.uniform(-1, 1))
        planted = float(clip * 10 ** rng.uniform(-1, 1.5))
        target = step_epsilon_exact(g, NoiseConfig(s_cdp, planted, clip), EAVES)
        found = calibrate_binary_search(g, s_cdp, clip, target, EAVES)
        worst = max(worst, abs(found - planted) / planted)
    over = []
    for kind in kinds:
        g = build_topology(kind, 16)
        for steps in (1000, 2000):
            for eps in (1.0, 3.0, 10.0):
                for clip in (0.1, 1.0):
                    cal = calibrate_closed_form(16, clip, steps, eps, 1e-5, g, EAVES)
                    achieved = compose_and_convert(step_epsilon_exact(g, cal.noise, EAVES), steps, 1e-5)
                    if achieved > eps:
                        over.append((kind, steps, eps, clip, achieved))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and not over and elapsed < 10.0
    verdict(4, ok, f"max planted error {worst:.2e}, {len(over)} closed-form overruns, {elapsed:.2f}s")


def test_noise_reduction(verdict):
    start = time.perf_counter()
    d, rounds = 8, 10_000
    details, ok = [], True
    for kind in ("ring", "grid", "complete"):
        g = build_topology(kind, 16)
        w = metropolis_weights(g)
        book = SeedBook.from_master(7, g)
        acc = 0.0
        for t in range(rounds):
            acc += float(np.sum((w.w @ correlated_sums(g, book, t, d)) ** 2))
        ratio = acc / rounds / (2 * g.num_edges * d)
        h = weight_heterogeneity(g, w)
        # complete graphs average exactly (h = 0), where only an absolute check is meaningful
        ok &= abs(ratio - h) <= (0.03 * h if h > 0 else 1e-12)
        details.append(f"{kind} {ratio:.4f}/{h:.4f}")
    elapsed = time.perf_counter() - start
    verdict(5, ok and elapsed < 30.0, f"{', '.join(details)}, {elapsed:.1f}s")


def test_exact_cancellation(verdict):
    start = time.perf_counter()
    g = build_topology("complete", 16)
    prob = synthetic_least_squares(16, 10, seed=0)
    noise = NoiseConfig(0.5, 3.0, 1.0)
    traces = [
        run(TrainConfig(algo, 500, noise, g, prob, seed=11, stepsize=0.02, weights=uniform_weights(16)))
        for algo in ("decor", "cdp_baseline")
    ]
    a, b = traces
    worst = 0.0
    for name in ("loss", "grad_norm_sq"):
        x, y = getattr(a, name), getattr(b, name)
        worst = max(worst, float(np.max(np.abs(x - y) / np.abs(y))))
    # consensus is zero up to round-off after uniform averaging, so compare absolutely
    cons = float(np.max(np.abs(a.consensus - b.consensus)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and cons <= 1e-20 and elapsed < 10.0
    verdict(6, ok, f"max relative gap {worst:.2e}, consensus gap {cons:.1e}, {elapsed:.2f}s")


@pytest.mark.slow
def test_sweep_ordering(verdict):
    start = time.perf_counter()
    spec = SweepSpec(
        topologies=["ring:16", "grid:16", "complete:16"],
        problem=synthetic_least_squares(16, 10, seed=0),
        epsilons=[3.0, 10.0, 30.0],
        seeds=[0, 1, 2, 3],
        steps=2000,
        delta=1e-5,
    )
    rows = run_sweep(spec)
    elapsed = time.perf_counter() - start
    ok, failed = True, []
    for topo in spec.topologies:
        for eps in spec.epsilons:
            dec, cdp, ldp = (mean_final_loss(rows, a, topo, eps) for a in spec.algorithms)
            good = dec <= ldp and (topo.startswith("ring") or dec <= 2 * cdp)
            if not good:
                failed.append(f"{topo} eps={eps:g}: decor {dec:.3g} cdp {cdp:.3g} ldp {ldp:.3g}")
            ok &= good
    detail = "; ".join(failed) if failed else "all 9 (topology, epsilon) cells ordered"
    verdict(7, ok and elapsed < 300.0, f"{detail}, {elapsed:.0f}s")


def test_spectral_identities(verdict):
    ring_err = max(
        abs(algebraic_connectivity(build_topology("ring", n)) - 2 * (1 - math.cos(2 * math.pi / n)))
        for n in range(3, 33)
    )
    rng = np.random.default_rng(8)
    slack = math.inf
    for _ in range(100):
        g = _random_connected(rng, int(rng.integers(3, 25)))
        h = weight_heterogeneity(g, metropolis_weights(g))
        slack = min(slack, 2.0 / g.degrees().min() - h)
    ok = ring_err <= 1e-9 and slack >= 0
    verdict(8, ok, f"ring connectivity error {ring_err:.2e}, min slack of 2/k_min bound {slack:.3e}")


def test_gradient_correctness(verdict):
    rng = np.random.default_rng(9)
    prob = logistic_problem(load_libsvm(DATA), 0.01, 4)
    worst = 0.0
    for _ in range(20):
        x = rng.normal(size=prob.d)
        i, r = int(rng.integers(prob.n)), int(rng.integers(prob.m))
        a, y = prob.features[i, r], prob.labels[i, r]
        g = Logistic.sample_grad(x, a, y, 0.01)
        fd = central_difference(lambda z: Logistic.sample_loss(z, a, y, 0.01), x)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3))))
    ls = synthetic_least_squares(16, 10, seed=0)
    best = ls.loss(ls.x_star)
    beaten = sum(ls.loss(ls.x_star + rng.normal(size=10) * s) < best for s in np.geomspace(1e-3, 10, 100))
    ok = worst <= 1e-6 and beaten == 0
    verdict(9, ok, f"max finite-difference error {worst:.2e}, {beaten}/100 random points beat the minimizer")


def test_pl_convergence(verdict):
    steps = 2000
    g = build_topology("ring", 16)
    prob = synthetic_least_squares(16, 10, seed=0)
    runs = [(10.0, 1.0, s) for s in range(4)] + [(3.0, 0.1, s) for s in range(4)]
    failed = []
    for eps, clip, seed in runs:
        cal = calibrate_closed_form(16, clip, steps, eps, 1e-5, g, EAVES)
        tr = run(TrainConfig("decor", steps, cal.noise, g, prob, seed=seed, stepsize="pl"))
        tail = float(tr.loss[-steps // 10 :].mean())
        early = float(tr.loss[steps // 10])
        bounded = float(tr.consensus.max()) <= 1e3 * float(tr.consensus[10])
        if not (tail < early and bounded):
            failed.append(f"eps={eps:g} C={clip:g} seed={seed}: tail {tail:.3g} vs {early:.3g}")
    detail = "; ".join(failed) if failed else f"{len(runs)} calibrated ring runs decrease with bounded consensus"
    verdict(10, not failed, detail)
