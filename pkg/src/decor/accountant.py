"""Per-step SecRDP accounting, composition to (epsilon, delta) and noise calibration.

A single round of correlated-noise gossip SGD releases ``x + K v + vbar`` where
``K`` is the oriented incidence matrix of the graph the adversary cannot see
through, so the released vector is Gaussian with covariance
``sigma_cdp^2 I + sigma_cor^2 L``.  Changing one user's clipped gradient moves
the mean by at most ``2C`` along one coordinate, which gives the per-step
Renyi coefficient ``2 C^2 max_i [Sigma^-1]_ii``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg

from .errors import (
    GraphNotSufficientlyConnected,
    InvalidAdversary,
    InvalidCollusionLevel,
    InvalidConfig,
    InvalidNoise,
    InvalidSize,
    InvalidDelta,
    InvalidTarget,
    OutOfRegime,
    SingularCovariance,
    UnreachableTarget,
)
from .graph import (
    DEFAULT_SUBSET_CAP,
    Graph,
    deletion_subsets,
    laplacian,
    min_connectivity_after_deletion,
)

ADVERSARY_KINDS = ("eavesdropper", "curious_users", "colluding")


@dataclass(frozen=True)
class NoiseConfig:
    sigma_cdp: float
    sigma_cor: float
    clip_c: float

    def __post_init__(self):
        if self.sigma_cdp < 0 or self.sigma_cor < 0:
            raise InvalidNoise("noise standard deviations must be non-negative")
        if self.clip_c <= 0:
            raise InvalidNoise("clipping threshold must be positive")

    def as_dict(self) -> dict:
        return {"sigma_cdp": self.sigma_cdp, "sigma_cor": self.sigma_cor, "clip": self.clip_c}


@dataclass(frozen=True)
class AdversaryModel:
    """Which pairwise secrets stay hidden: none known (q=0), one user's (q=1), or q users'."""

    kind: str = "eavesdropper"
    q: int = 0

    def __post_init__(self):
        if self.kind not in ADVERSARY_KINDS:
            raise InvalidAdversary(f"unknown adversary kind {self.kind!r}")
        expected = {"eavesdropper": 0, "curious_users": 1}.get(self.kind)
        if expected is not None and self.q != expected:
            raise InvalidAdversary(f"{self.kind} implies q={expected}, got q={self.q}")
        if self.kind == "colluding" and self.q < 1:
            raise InvalidAdversary("colluding adversary needs q >= 1")

    @classmethod
    def eavesdropper(cls) -> "AdversaryModel":
        return cls("eavesdropper", 0)

    @classmethod
    def curious(cls) -> "AdversaryModel":
        return cls("curious_users", 1)

    @classmethod
    def colluding(cls, q: int) -> "AdversaryModel":
        return cls("colluding", q)

    @classmethod
    def parse(cls, text: str) -> "AdversaryModel":
        """Parse the CLI forms ``eaves``, ``curious`` and ``collude:q``."""
        text = text.strip().lower()
        if text in ("eaves", "eavesdropper"):
            return cls.eavesdropper()
        if text in ("curious", "curious_users"):
            return cls.curious()
        if text.startswith("collude:"):
            try:
                q = int(text.split(":", 1)[1])
            except ValueError:
                raise InvalidAdversary(f"bad collusion level in {text!r}") from None
            return cls.eavesdropper() if q == 0 else cls.colluding(q)
        raise InvalidAdversary(f"unknown adversary {text!r}; use eaves, curious or collude:q")

    def label(self) -> str:
        return {"eavesdropper": "eaves", "curious_users": "curious"}.get(self.kind, f"collude:{self.q}")


@dataclass(frozen=True)
class PrivacyReport:
    step_rdp_coefficient: float
    steps: int
    delta: float
    epsilon_dp: float
    adversary: AdversaryModel
    bound_rdp_coefficient: float | None = None


def _check_collusion(g: Graph, adv: AdversaryModel) -> None:
    if adv.q >= g.n - 1 or adv.q < 0:
        raise InvalidCollusionLevel(
            f"collusion level q={adv.q} leaves fewer than two honest users on n={g.n}"
        )


@dataclass(frozen=True)
class _Block:
    """One connected component: the Laplacian restricted to the complement of constants."""

    vertices: np.ndarray
    basis: np.ndarray  # (s, s-1), orthonormal, orthogonal to the all-ones vector
    reduced: np.ndarray  # basis^T L basis


@lru_cache(maxsize=4096)
def _blocks(g: Graph) -> tuple[_Block, ...]:
    lap = laplacian(g)
    out = []
    for comp in g.components():
        idx = np.asarray(comp)
        s = len(idx)
        if s == 1:
            out.append(_Block(idx, np.zeros((1, 0)), np.zeros((0, 0))))
            continue
        # Householder reflector whose first column is the normalised ones vector
        v = np.full(s, -1.0 / math.sqrt(s))
        v[0] += 1.0
        refl = np.eye(s) - 2.0 * np.outer(v, v) / (v @ v)
        basis = refl[:, 1:]
        reduced = basis.T @ lap[np.ix_(idx, idx)] @ basis
        out.append(_Block(idx, basis, 0.5 * (reduced + reduced.T)))
    return tuple(out)


def _max_inverse_diagonal(g: Graph, noise: NoiseConfig) -> float:
    """``max_i [(sigma_cdp^2 I + sigma_cor^2 L)^-1]_ii``.

    Constants on each component are exact eigenvectors of ``L`` with eigenvalue
    zero, so they contribute ``1/(s sigma_cdp^2)`` in closed form.  Only the
    complementary block is factorised, which keeps the result accurate even
    when ``sigma_cor^2 / sigma_cdp^2`` is huge.
    """
    s2, c2 = noise.sigma_cdp**2, noise.sigma_cor**2
    worst = 0.0
    for block in _blocks(g):
        s = len(block.vertices)
        diag = np.full(s, 1.0 / (s * s2))
        if s > 1:
            m = s2 * np.eye(s - 1) + c2 * block.reduced
            try:
                chol = linalg.cholesky(m, lower=True)
            except linalg.LinAlgError:
                raise SingularCovariance("noise covariance is singular; sigma_cdp must be positive") from None
            half = linalg.solve_triangular(chol, block.basis.T, lower=True)
            diag += np.einsum("ij,ij->j", half, half)
        worst = max(worst, float(diag.max()))
    return worst


def step_epsilon_exact(
    g: Graph, noise: NoiseConfig, adv: AdversaryModel, cap: int = DEFAULT_SUBSET_CAP
) -> float:
    """Exact per-step SecRDP coefficient: each step is (alpha, alpha*eps)-SecRDP for all alpha > 1.

    For collusion level ``q`` every set of ``q`` deleted users is tried and the
    worst honest residual graph is reported.
    """
    _check_collusion(g, adv)
    if noise.sigma_cdp <= 0:
        raise SingularCovariance("sigma_cdp must be positive for a finite privacy guarantee")
    worst = 0.0
    for removed in deletion_subsets(g.n, adv.q, cap):
        sub = g.remove_vertices(removed) if removed else g
        worst = max(worst, _max_inverse_diagonal(sub, noise))
    return 2.0 * noise.clip_c**2 * worst


def step_epsilon_bound(
    g: Graph, noise: NoiseConfig, adv: AdversaryModel, cap: int = DEFAULT_SUBSET_CAP
) -> float:
    """Closed-form upper bound on the per-step coefficient via ``a_q(G)``."""
    _check_collusion(g, adv)
    if noise.sigma_cdp <= 0:
        raise SingularCovariance("sigma_cdp must be positive for a finite privacy guarantee")
    m = g.n - adv.q
    a_q = min_connectivity_after_deletion(g, adv.q, cap)
    s2 = noise.sigma_cdp**2
    return 2.0 * noise.clip_c**2 * (
        1.0 / (m * s2) + (1.0 - 1.0 / m) / (s2 + a_q * noise.sigma_cor**2)
    )


def _check_delta(delta: float) -> None:
    if not (0.0 < delta < 1.0):
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")


def optimal_order(eps_step: float, steps: int, delta: float) -> float:
    """Renyi order minimising the RDP-to-DP conversion after ``steps`` compositions."""
    _check_delta(delta)
    if eps_step <= 0:
        return math.inf
    return 1.0 + math.sqrt(math.log(1.0 / delta) / (steps * eps_step))


def compose_and_convert(eps_step: float, steps: int, delta: float) -> float:
    """(epsilon, delta)-SecLDP guarantee after ``steps`` rounds.

    Minimises ``T*alpha*eps_step + log(1/delta)/(alpha-1)`` over ``alpha > 1``;
    the minimum is ``T*eps_step + 2*sqrt(T*eps_step*log(1/delta))``.
    """
    _check_delta(delta)
    if eps_step < 0:
        raise InvalidTarget("per-step coefficient must be non-negative")
    if steps < 1:
        raise InvalidConfig("steps must be at least 1")
    total = steps * eps_step
    return total + 2.0 * math.sqrt(total * math.log(1.0 / delta))


def per_step_budget(epsilon: float, steps: int, delta: float) -> float:
    """Largest per-step coefficient whose ``steps``-fold composition stays within ``epsilon``.

    Inverts :func:`compose_and_convert` exactly.
    """
    _check_delta(delta)
    if epsilon <= 0:
        raise InvalidTarget(f"epsilon must be positive, got {epsilon}")
    log_term = math.log(1.0 / delta)
    root = math.sqrt(log_term + epsilon) - math.sqrt(log_term)
    return root * root / steps


def privacy_report(
    g: Graph, noise: NoiseConfig, adv: AdversaryModel, steps: int, delta: float
) -> PrivacyReport:
    eps_step = step_epsilon_exact(g, noise, adv)
    return PrivacyReport(
        step_rdp_coefficient=eps_step,
        steps=steps,
        delta=delta,
        epsilon_dp=compose_and_convert(eps_step, steps, delta),
        adversary=adv,
        bound_rdp_coefficient=step_epsilon_bound(g, noise, adv),
    )


@dataclass(frozen=True)
class Calibration:
    noise: NoiseConfig
    epsilon_target: float
    epsilon_achieved: float
    step_rdp: float


def calibrate_closed_form(
    n: int,
    clip: float,
    steps: int,
    eps_target: float,
    delta: float,
    g: Graph,
    adv: AdversaryModel,
) -> Calibration:
    """Sufficient noise levels for an (eps, delta) budget over ``steps`` rounds.

    ``sigma_cdp^2 = 32 C^2 T log(1/delta) / ((n-q) eps^2)`` and
    ``sigma_cor^2 = 32 C^2 T log(1/delta) / (a_q(G) eps^2)``.  The achieved
    budget is recomputed with the exact accountant.
    """
    _check_delta(delta)
    if n != g.n:
        raise InvalidSize(f"n={n} does not match graph size {g.n}")
    if eps_target <= 0:
        raise InvalidTarget(f"epsilon must be positive, got {eps_target}")
    log_term = math.log(1.0 / delta)
    if eps_target > log_term:
        raise OutOfRegime(
            f"closed form needs epsilon <= log(1/delta) = {log_term:.4f}, got {eps_target}"
        )
    _check_collusion(g, adv)
    a_q = min_connectivity_after_deletion(g, adv.q)
    if a_q <= 0:
        raise GraphNotSufficientlyConnected(
            f"deleting {adv.q} vertices can disconnect the graph (a_q = 0)"
        )
    scale = 32.0 * clip**2 * steps * log_term / eps_target**2
    noise = NoiseConfig(
        sigma_cdp=math.sqrt(scale / (n - adv.q)),
        sigma_cor=math.sqrt(scale / a_q),
        clip_c=clip,
    )
    eps_step = step_epsilon_exact(g, noise, adv)
    return Calibration(noise, eps_target, compose_and_convert(eps_step, steps, delta), eps_step)


def calibrate_binary_search(
    g: Graph,
    sigma_cdp: float,
    clip: float,
    eps_step_target: float,
    adv: AdversaryModel,
    sigma_max: float | None = None,
    rtol: float = 1e-6,
    max_iter: int = 100,
) -> float:
    """Smallest ``sigma_cor`` in ``[0, sigma_max]`` meeting a per-step target.

    Relies on the exact coefficient being non-increasing in ``sigma_cor``.
    """
    if eps_step_target <= 0:
        raise InvalidTarget(f"per-step target must be positive, got {eps_step_target}")
    sigma_max = 1e3 * clip if sigma_max is None else sigma_max

    def eps_at(s: float) -> float:
        return step_epsilon_exact(g, NoiseConfig(sigma_cdp, s, clip), adv)

    if eps_at(0.0) <= eps_step_target:
        return 0.0
    if eps_at(sigma_max) > eps_step_target:
        raise UnreachableTarget(
            f"per-step target {eps_step_target:.6g} is below what sigma_cor <= {sigma_max:.6g} "
            f"can reach with sigma_cdp={sigma_cdp:.6g} (floor approaches "
            f"{2 * clip**2 / ((g.n - adv.q) * sigma_cdp**2):.6g})"
        )
    lo, hi = 0.0, sigma_max
    for _ in range(max_iter):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        if eps_at(mid) <= eps_step_target:
            hi = mid
        else:
            lo = mid
    return hi


def ldp_sigma(clip: float, eps_step_target: float) -> float:
    """Per-user Gaussian noise giving step coefficient ``eps_step_target`` with no secrets."""
    if eps_step_target <= 0:
        raise InvalidTarget(f"per-step target must be positive, got {eps_step_target}")
    return clip * math.sqrt(2.0 / eps_step_target)


def cdp_sigma(n: int, clip: float, eps_step_target: float) -> float:
    """Per-user noise protecting only the average of ``n`` users."""
    if eps_step_target <= 0:
        raise InvalidTarget(f"per-step target must be positive, got {eps_step_target}")
    return clip * math.sqrt(2.0 / (n * eps_step_target))
