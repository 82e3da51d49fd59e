"""Confidence-score defenses for broadcast inference results.

The centerpiece is a rank-aware multiplicative perturbation: split [0, 1]
into K equal sub-intervals I_1..I_K, give the class ranked j-th from the
top the sub-interval indexed K+1-j (so higher confidence draws from a
higher sub-interval), sample u_j uniformly from that sub-interval, and
release

    p = A c + u * sigma * c        (elementwise product)

where A is an orthonormal score transform and sigma a non-negative scale
vector. Because u and sigma are both non-decreasing in the source
confidence, descending order - and therefore the argmax and any
rank-based consumer - survives exactly, while magnitudes are randomized
afresh on every call. Two budget modes exist: a single scale shared by
all classes, and per-class scales assigned smallest-to-largest from the
least to the most confident class.

Baselines with the same call shape: no-op, decimal rounding, additive
Gaussian noise, and a keyed strictly-increasing piecewise-linear encoding.

``feasibility_probe`` quantifies non-invertibility: it enumerates grid
candidates (c, noise) consistent with a released vector and counts them;
two or more witnesses mean the release does not pin down the input.

The scale knob is calibrated through the standard Gaussian-mechanism
formula, but the bounded one-sided noise here does NOT carry a formal
(epsilon, delta) guarantee; epsilon is a tuning knob, nothing more.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache

import numpy as np

from .scores import (
    ConfidenceVector,
    TransformKind,
    TransformedScores,
    _rank_values,
    _transform_values,
)


@dataclass(frozen=True)
class PrivacyBudget:
    """Scale-calibration parameters: epsilon > 0, 0 < delta < 1, sensitivity > 0."""

    epsilon: float
    delta: float = 1e-5
    sensitivity: float = 1.0

    def __post_init__(self):
        if not (self.epsilon > 0.0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon!r}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")
        if not (self.sensitivity > 0.0 and math.isfinite(self.sensitivity)):
            raise ValueError(f"sensitivity must be positive and finite, got {self.sensitivity!r}")


def gaussian_sigma(budget: PrivacyBudget) -> float:
    """Gaussian-mechanism noise scale sqrt(2 ln(1.25/delta)) * sensitivity / epsilon.

    The log argument must exceed 1 (delta < 1.25), which the budget type
    already guarantees; the check stays for callers that bypass it.
    """
    log_term = math.log(1.25 / budget.delta)
    if log_term <= 0.0:
        raise ValueError(f"delta={budget.delta!r} makes the noise scale ill-defined (needs delta < 1.25)")
    return math.sqrt(2.0 * log_term) * budget.sensitivity / budget.epsilon


class PlanMode(Enum):
    UNIFORM_BUDGET = "uniform"
    PER_CLASS_BUDGET = "per_class"


@dataclass(frozen=True)
class PerturbationPlan:
    """Transform choice plus per-class noise scales for one release.

    In UNIFORM_BUDGET mode all scales must be equal. In PER_CLASS_BUDGET
    mode the scales are a free non-negative multiset; at release time they
    are sorted ascending and assigned by rank from the bottom, so the
    least confident class always gets the smallest scale.
    """

    kind: TransformKind
    sigmas: np.ndarray
    mode: PlanMode = PlanMode.UNIFORM_BUDGET

    def __post_init__(self):
        sigmas = np.asarray(self.sigmas, dtype=np.float64).copy()
        if sigmas.ndim != 1 or sigmas.shape[0] < 2:
            raise ValueError(f"sigmas must be 1-D with K >= 2, got shape {sigmas.shape}")
        if not np.all(np.isfinite(sigmas)):
            raise ValueError("sigmas contain non-finite entries")
        if float(np.min(sigmas)) < 0.0:
            raise ValueError(f"sigmas must be non-negative, got min {np.min(sigmas)}")
        if self.mode is PlanMode.UNIFORM_BUDGET and float(np.ptp(sigmas)) != 0.0:
            raise ValueError("uniform-budget plan requires all sigmas equal")
        sigmas.flags.writeable = False
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def k(self) -> int:
        return self.sigmas.shape[0]

    @cached_property
    def sigmas_ascending(self) -> tuple[float, ...]:
        """Scales sorted ascending, ready to be indexed by rank from the bottom."""
        return tuple(np.sort(self.sigmas).tolist())

    @staticmethod
    def uniform(kind: TransformKind, k: int, budget: PrivacyBudget) -> "PerturbationPlan":
        """One shared scale from ``budget`` for all K classes."""
        sigma = gaussian_sigma(budget)
        return PerturbationPlan(kind, np.full(k, sigma), PlanMode.UNIFORM_BUDGET)

    @staticmethod
    def per_class(
        kind: TransformKind,
        k: int,
        eps_min: float,
        eps_max: float,
        delta: float = 1e-5,
        sensitivity: float = 1.0,
    ) -> "PerturbationPlan":
        """K scales from epsilons log-spaced across [eps_min, eps_max], shared delta."""
        if not (0.0 < eps_min <= eps_max):
            raise ValueError(f"need 0 < eps_min <= eps_max, got [{eps_min!r}, {eps_max!r}]")
        epsilons = np.geomspace(eps_min, eps_max, k)
        sigmas = np.array([gaussian_sigma(PrivacyBudget(float(e), delta, sensitivity)) for e in epsilons])
        return PerturbationPlan(kind, sigmas, PlanMode.PER_CLASS_BUDGET)


@dataclass(frozen=True)
class NoiseDraw:
    """One realized noise vector.

    ``interval_indices`` holds k_j = K+1-rank_j in 1..K; ``u`` holds the
    uniform draws, u_j in [(k_j - 1)/K, k_j/K). Both are non-negative, and
    u is strictly increasing in the source confidence ordering.
    """

    u: np.ndarray
    interval_indices: np.ndarray


def sample_noise(
    c: ConfidenceVector,
    rng: np.random.Generator | None = None,
    *,
    midpoint: bool = False,
) -> NoiseDraw:
    """Draw the rank-aware noise vector for ``c``.

    Class ranked r from the top samples from sub-interval K+1-r, so the
    most confident class draws from [(K-1)/K, 1) and the least confident
    from [0, 1/K). With ``midpoint=True`` every u_j sits at its interval
    midpoint and ``rng`` is unused: a deterministic mode for tests and
    traceable examples.
    """
    k = c.k
    intervals = np.int64(k + 1) - _rank_values(c.values)
    if midpoint:
        u = (intervals - 0.5) / k
    else:
        if rng is None:
            raise ValueError("rng is required unless midpoint=True")
        # one scalar draw per class, in class order: the stream is a
        # function of K alone, and the cost stays proportional to K
        rand = rng.random
        scale = 1.0 / k
        u = np.array([(idx - 1 + rand()) * scale for idx in intervals.tolist()])
    return NoiseDraw(u=u, interval_indices=intervals)


def privee_perturb(
    c: ConfidenceVector,
    plan: PerturbationPlan,
    rng: np.random.Generator | None = None,
    *,
    midpoint: bool = False,
) -> TransformedScores:
    """Release p = A c + u * sigma * c under ``plan``.

    The per-class scales are sorted ascending and indexed by rank from the
    bottom (the same index that picks the sub-interval), which makes the
    whole noise term non-decreasing in source confidence: orders survive,
    zero entries stay exactly at their transformed value, and the result
    is intentionally NOT renormalized.
    """
    if plan.k != c.k:
        raise ValueError(f"plan is for K={plan.k}, vector has K={c.k}")
    draw = sample_noise(c, rng, midpoint=midpoint)
    base = _transform_values(plan.kind, c.values)
    sigmas = plan.sigmas_ascending
    noise = [
        u_j * sigmas[idx - 1] * c_j
        for u_j, idx, c_j in zip(draw.u.tolist(), draw.interval_indices.tolist(), c.values.tolist())
    ]
    return TransformedScores(base + np.asarray(noise))


# --- defense kinds -----------------------------------------------------------


@dataclass(frozen=True)
class NoDefense:
    """Broadcast the confidence vector unchanged."""


@dataclass(frozen=True)
class PriveeDp:
    """Rank-aware perturbation with one shared scale from ``budget``."""

    budget: PrivacyBudget
    transform: TransformKind = TransformKind.REFLECTION


@dataclass(frozen=True)
class PriveeDpPlusPlus:
    """Rank-aware perturbation with per-class scales.

    Epsilons are log-spaced across [eps_min, eps_max] with a shared delta
    and sensitivity; the resulting scales are assigned by rank at release
    time (smallest scale to the least confident class).
    """

    eps_min: float = 0.1
    eps_max: float = 1.0
    delta: float = 1e-5
    sensitivity: float = 1.0
    transform: TransformKind = TransformKind.REFLECTION

    def __post_init__(self):
        if not (0.0 < self.eps_min <= self.eps_max):
            raise ValueError(f"need 0 < eps_min <= eps_max, got [{self.eps_min!r}, {self.eps_max!r}]")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")
        if not self.sensitivity > 0.0:
            raise ValueError(f"sensitivity must be positive, got {self.sensitivity!r}")


@dataclass(frozen=True)
class Round:
    """Round every entry to ``digits`` decimal places (order NOT guaranteed)."""

    digits: int = 3

    def __post_init__(self):
        if not (isinstance(self.digits, int) and 1 <= self.digits <= 12):
            raise ValueError(f"digits must be an integer in 1..12, got {self.digits!r}")


@dataclass(frozen=True)
class GaussianDp:
    """Additive zero-mean Gaussian noise per entry; no clamp, no renormalization."""

    budget: PrivacyBudget


@dataclass(frozen=True)
class MonotoneEncode:
    """Keyed strictly-increasing piecewise-linear encoding applied entrywise.

    Order-preserving and magnitude-hiding; the map is a pure function of
    the 64-bit key, so equal inputs encode equally across calls.
    """

    key: int = 0x5EED

    def __post_init__(self):
        if not (isinstance(self.key, int) and 0 <= self.key < 2**64):
            raise ValueError(f"key must be a 64-bit unsigned integer, got {self.key!r}")


DefenseKind = NoDefense | PriveeDp | PriveeDpPlusPlus | Round | GaussianDp | MonotoneEncode


def _monotone_encode_values(values: np.ndarray, key: int, k: int) -> np.ndarray:
    gen = np.random.default_rng(np.uint64(key))
    # K+1 breakpoints with strictly increasing coordinates on both axes
    x_steps = gen.uniform(0.1, 1.0, k)
    xs = np.concatenate(([0.0], np.cumsum(x_steps) / float(np.sum(x_steps))))
    y_steps = gen.uniform(0.1, 1.0, k)
    ys = np.concatenate(([0.0], np.cumsum(y_steps))) * gen.uniform(0.5, 4.0) + gen.uniform(-5.0, 5.0)
    return np.interp(values, xs, ys)


@lru_cache(maxsize=512)
def _cached_plan(kind: PriveeDp | PriveeDpPlusPlus, k: int) -> PerturbationPlan:
    """Plans depend only on the defense parameters and K, so build each once.

    Safe because both the defense kinds and the plan (its scale array is
    marked read-only) are immutable.
    """
    if isinstance(kind, PriveeDp):
        return PerturbationPlan.uniform(kind.transform, k, kind.budget)
    return PerturbationPlan.per_class(
        kind.transform, k, kind.eps_min, kind.eps_max, kind.delta, kind.sensitivity
    )


def defend(
    c: ConfidenceVector,
    kind: DefenseKind,
    rng: np.random.Generator | None = None,
    *,
    midpoint: bool = False,
) -> TransformedScores:
    """Apply defense ``kind`` to one confidence vector and return the release.

    The broadcast value is this release alone; callers never forward the
    raw vector alongside it. ``midpoint`` is the deterministic test mode
    and only affects the rank-aware kinds.
    """
    if isinstance(kind, (PriveeDp, PriveeDpPlusPlus)):
        return privee_perturb(c, _cached_plan(kind, c.k), rng, midpoint=midpoint)
    if isinstance(kind, NoDefense):
        return TransformedScores(c.values)
    if isinstance(kind, Round):
        return TransformedScores(np.round(c.values, kind.digits))
    if isinstance(kind, GaussianDp):
        if rng is None:
            raise ValueError("GaussianDp needs an rng")
        sigma = gaussian_sigma(kind.budget)
        return TransformedScores(c.values + rng.normal(0.0, sigma, c.k))
    if isinstance(kind, MonotoneEncode):
        return TransformedScores(_monotone_encode_values(c.values, kind.key, c.k))
    raise ValueError(f"unknown defense kind: {kind!r}")


# --- non-invertibility probe -------------------------------------------------


def _simplex_grid(k: int, resolution: int) -> np.ndarray:
    """All grid points i/resolution on the K-simplex, K in {2, 3}."""
    g = resolution
    if k == 2:
        a = np.arange(g + 1) / g
        return np.stack([a, 1.0 - a], axis=1)
    ii, jj = np.meshgrid(np.arange(g + 1), np.arange(g + 1), indexing="ij")
    keep = ii + jj <= g
    a = ii[keep] / g
    b = jj[keep] / g
    return np.stack([a, b, 1.0 - a - b], axis=1)


def feasibility_probe(
    p: TransformedScores,
    kind: TransformKind,
    grid_resolution: int,
    tolerance: float = 1e-6,
) -> int:
    """Count grid-enumerable (c, noise) pairs that reproduce a release ``p``.

    A candidate c on the simplex grid is a witness when the noise it
    forces, n_j = (p_j - (A c)_j) / c_j, is non-negative and weakly
    ordered like the release (n_i <= n_j wherever p_i < p_j; degenerate
    all-zero noise is admitted). Entries with c_j = 0 demand p_j to match
    (A c)_j within ``tolerance``. A count of two or more shows the release
    does not identify the confidence vector. Supported for K in {2, 3},
    where exhaustive enumeration is affordable.
    """
    k = p.k
    if k not in (2, 3):
        raise ValueError(f"probe supports K in {{2, 3}}, got K={k}")
    if grid_resolution < 2:
        raise ValueError(f"grid_resolution must be >= 2, got {grid_resolution}")

    cand = _simplex_grid(k, grid_resolution)
    if kind is TransformKind.IDENTITY:
        base = cand
    elif kind is TransformKind.REFLECTION:
        base = cand - (2.0 / k) * cand.sum(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown transform kind: {kind!r}")

    need = p.values[None, :] - base
    positive = cand > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        noise = np.where(positive, need / np.where(positive, cand, 1.0), 0.0)

    ok = np.ones(cand.shape[0], dtype=bool)
    # zero-coordinate candidates carry no noise mass there: p must already match
    ok &= np.all(positive | (np.abs(need) <= tolerance), axis=1)
    ok &= np.all(noise >= -tolerance, axis=1)

    noise = np.clip(noise, 0.0, None)
    for i in range(k):
        for j in range(k):
            if p.values[i] < p.values[j]:
                ok &= noise[:, i] <= noise[:, j] + tolerance
    return int(np.count_nonzero(ok))
