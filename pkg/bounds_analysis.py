"""Approximation-guarantee quantities for the trace-of-inverse objective.

Exhaustive curvature, submodularity ratio and element-wise curvature enumerate every
subset of a small ground set once (as bitmasks) and read marginal gains off the
resulting table. The spectral bounds only need extreme eigenvalues and the increments'
traces and ranks, so they work at any N.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from config import DEFAULT_EPSILON_SAMPLE, EXHAUSTIVE_MAX_N, GAIN_EPS
from errors import BoundInapplicableError, CapExceededError, ConfigError
from feature_selectors import check_epsilon, sample_size
from info_matrix import (
    InfoMatrix,
    ProblemInstance,
    inverse_pd,
    leverage_scores,
    problem_fingerprint,
    trace_of_inverse,
)
from models import BoundReport, KappaCurvature

logger = logging.getLogger(__name__)

__all__ = [
    "SpectralBounds",
    "TaylorCheck",
    "build_bound_report",
    "curvature_exhaustive",
    "elementwise_curvature_max",
    "elementwise_curvatures",
    "greedy_factor",
    "leverage_scores",
    "randomized_factor",
    "spectral_bounds",
    "subset_objectives",
    "submodularity_ratio_exhaustive",
    "surrogate_error_bound",
    "taylor_remainder_check",
]


# ---------------------------------------------------------------------------
# Exhaustive quantities
# ---------------------------------------------------------------------------


def subset_objectives(problem: ProblemInstance, cap_N: int = EXHAUSTIVE_MAX_N) -> np.ndarray:
    """f(S) for every S, indexed by bitmask over problem.ids order."""
    N = problem.N
    if N > cap_N:
        raise CapExceededError(f"N={N} exceeds the exhaustive limit of {cap_N}", N=N, cap=cap_N)

    table = np.zeros(1 << N)
    base = problem.omega0.M
    deltas = [inc.delta for inc in problem.increments]
    for mask in range(1, 1 << N):
        M = base.copy()
        for i in range(N):
            if mask >> i & 1:
                M += deltas[i]
        table[mask] = problem.trace_inv0 - trace_of_inverse(M)
    logger.debug(f"Enumerated {1 << N} subsets for N={N}")
    return table


def _submasks(mask: int):
    """Every submask of `mask`, including 0 and mask itself."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def _popcount(mask: int) -> int:
    return bin(mask).count("1")


def _table(problem: ProblemInstance, cap_N: int, table: Optional[np.ndarray]) -> np.ndarray:
    return subset_objectives(problem, cap_N) if table is None else table


def curvature_exhaustive(
    problem: ProblemInstance,
    cap_N: int = EXHAUSTIVE_MAX_N,
    max_size: Optional[int] = None,
    table: Optional[np.ndarray] = None,
) -> float:
    """alpha = max 1 - f_l(B) / f_l(A) over A subset of B, l not in B.

    With max_size=k the sets are limited to |A| <= k - 1 and |B \\ A| <= k.
    Pairs with f_l(A) <= GAIN_EPS are skipped.
    """
    f = _table(problem, cap_N, table)
    N = problem.N
    full = (1 << N) - 1
    alpha = 0.0
    for l in range(N):
        bit = 1 << l
        others = full & ~bit
        for A in _submasks(others):
            if max_size is not None and _popcount(A) > max_size - 1:
                continue
            g_A = f[A | bit] - f[A]
            if g_A <= GAIN_EPS:
                continue
            for extra in _submasks(others & ~A):
                if max_size is not None and _popcount(extra) > max_size:
                    continue
                B = A | extra
                g_B = f[B | bit] - f[B]
                alpha = max(alpha, 1.0 - g_B / g_A)
    return float(min(max(alpha, 0.0), 1.0))


def submodularity_ratio_exhaustive(
    problem: ProblemInstance,
    cap_N: int = EXHAUSTIVE_MAX_N,
    max_size: Optional[int] = None,
    table: Optional[np.ndarray] = None,
) -> float:
    """gamma = min sum_{l in D} f_l(S) / (f(S u D) - f(S)) over disjoint S, D.

    With max_size=k both |S| and |D| are limited to k. Pairs whose joint gain is at
    most GAIN_EPS are skipped.
    """
    f = _table(problem, cap_N, table)
    N = problem.N
    full = (1 << N) - 1
    singles = [1 << i for i in range(N)]
    gamma = 1.0
    for S in range(1 << N):
        if max_size is not None and _popcount(S) > max_size:
            continue
        gains = {bit: f[S | bit] - f[S] for bit in singles if not S & bit}
        for D in _submasks(full & ~S):
            if D == 0 or (max_size is not None and _popcount(D) > max_size):
                continue
            joint = f[S | D] - f[S]
            if joint <= GAIN_EPS:
                continue
            total = sum(g for bit, g in gains.items() if D & bit)
            gamma = min(gamma, total / joint)
    return float(max(gamma, 0.0))


def elementwise_curvatures(
    problem: ProblemInstance,
    cap_N: int = EXHAUSTIVE_MAX_N,
    table: Optional[np.ndarray] = None,
) -> Dict[int, float]:
    """alpha_i = max f_l(R) / f_l(S) over S strictly inside R, |R \\ S| = i, l not in R."""
    f = _table(problem, cap_N, table)
    N = problem.N
    full = (1 << N) - 1
    curvatures = {i: 0.0 for i in range(1, N)}
    for l in range(N):
        bit = 1 << l
        others = full & ~bit
        for S in _submasks(others):
            g_S = f[S | bit] - f[S]
            if g_S <= GAIN_EPS:
                continue
            for extra in _submasks(others & ~S):
                if extra == 0:
                    continue
                R = S | extra
                i = _popcount(extra)
                curvatures[i] = max(curvatures[i], (f[R | bit] - f[R]) / g_S)
    return curvatures


def elementwise_curvature_max(
    problem: ProblemInstance,
    cap_N: int = EXHAUSTIVE_MAX_N,
    table: Optional[np.ndarray] = None,
) -> float:
    return max(elementwise_curvatures(problem, cap_N, table).values(), default=0.0)


# ---------------------------------------------------------------------------
# Spectral bounds and guarantee factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralBounds:
    """Spectral curvature/ratio bounds.

    `gamma_lower` divides the single-increment bound by the largest increment rank,
    which keeps it valid when landmark increments have rank above one; the
    `*_rank_one` fields are the undivided values, equal to the others at rank one.
    """

    alpha_bar: float
    gamma_lower: float
    delta_min: float
    alpha_bar_rank_one: float
    gamma_lower_rank_one: float
    max_rank: int
    lambda_min_base: float
    lambda_max_full: float


def spectral_bounds(problem: ProblemInstance) -> SpectralBounds:
    traces = [inc.trace for inc in problem.increments]
    delta_min = float(min(traces))
    if delta_min <= GAIN_EPS:
        uninformative = [inc.id for inc in problem.increments if inc.trace <= GAIN_EPS]
        raise BoundInapplicableError(
            f"min tr(Delta_l) = {delta_min:.3e}: spectral bound undefined "
            f"(uninformative landmarks {uninformative[:10]})",
            delta_min=delta_min,
        )

    lambda_min_base = float(np.linalg.eigvalsh(problem.omega0.M)[0])
    lambda_max_full = float(np.linalg.eigvalsh(problem.information(problem.ids))[-1])
    if lambda_max_full <= lambda_min_base:
        raise BoundInapplicableError(
            f"lambda_max(Omega_U) = {lambda_max_full:.6g} does not exceed lambda_min(Omega_0) = {lambda_min_base:.6g}",
        )

    max_rank = max(1, max(inc.rank for inc in problem.increments))
    gamma_rank_one = delta_min * lambda_min_base / (lambda_max_full * (lambda_max_full - lambda_min_base))
    gamma_lower = gamma_rank_one / max_rank
    return SpectralBounds(
        alpha_bar=1.0 - gamma_lower,
        gamma_lower=gamma_lower,
        delta_min=delta_min,
        alpha_bar_rank_one=1.0 - gamma_rank_one,
        gamma_lower_rank_one=gamma_rank_one,
        max_rank=max_rank,
        lambda_min_base=lambda_min_base,
        lambda_max_full=lambda_max_full,
    )


def greedy_factor(alpha: float, gamma: float) -> float:
    """(1 / alpha)(1 - exp(-alpha gamma)); gamma in the alpha -> 0 limit."""
    for name, value in (("alpha", alpha), ("gamma", gamma)):
        if not -1e-9 <= value <= 1.0 + 1e-9:
            raise ConfigError(f"{name} must lie in [0, 1], got {value}")
    if alpha < 1e-12:
        return float(gamma)
    return float((1.0 - math.exp(-alpha * gamma)) / alpha)


@dataclass(frozen=True)
class RandomizedFactor:
    factor: float
    c: float
    r: int
    eta: float


def randomized_factor(alpha_max: float, epsilon: float, kappa: int, N: int) -> RandomizedFactor:
    """1 - exp(-1/c) - epsilon^eta / c with c = max(alpha_max, 1).

    r is the unclamped first-iteration sample size. When r >= N every iteration scans
    the whole pool, and eta takes its limiting value 1. Negative values are reported
    as 0 (no guarantee).
    """
    if kappa < 1:
        raise ConfigError(f"kappa must be >= 1 for the randomized factor, got {kappa}")
    check_epsilon(epsilon, kappa)
    r = sample_size(N, kappa, epsilon)
    c = max(alpha_max, 1.0)
    if r >= N:
        eta = 1.0
    else:
        eta = 1.0 + max(0.0, r / (2 * N) - 1.0 / (2 * (N - r)))
    factor = 1.0 - math.exp(-1.0 / c) - epsilon ** eta / c
    return RandomizedFactor(factor=max(factor, 0.0), c=c, r=r, eta=eta)


# ---------------------------------------------------------------------------
# Linearization error
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaylorCheck:
    remainder: float
    quad_bound: float
    exact_quad: float


def taylor_remainder_check(
    omega0: Union[InfoMatrix, np.ndarray],
    deltaS: np.ndarray,
    eps: float,
) -> TaylorCheck:
    """Second-order remainder of tr((A + eps D)^-1) around A.

    With Y = D A^-1, the remainder equals eps^2 tr(Y^T (A + eps D)^-1 Y) exactly, which
    avoids cancellation between the three trace terms. exact_quad replaces the middle
    inverse by A^-1; quad_bound is eps^2 ||A^-1||_2^3 ||D||_F^2.
    """
    if eps < 0:
        raise ConfigError(f"eps must be >= 0, got {eps}")
    A = omega0.M if isinstance(omega0, InfoMatrix) else np.asarray(omega0, dtype=float)
    D = np.asarray(deltaS, dtype=float)
    if eps == 0 or not np.any(D):
        return TaylorCheck(0.0, 0.0, 0.0)

    A_inv = inverse_pd(A)
    Y = D @ A_inv
    C = inverse_pd(A + eps * D)
    remainder = eps ** 2 * float(np.sum(Y * (C @ Y)))
    exact_quad = eps ** 2 * float(np.sum(Y * (A_inv @ Y)))
    norm_inv = float(np.linalg.eigvalsh(A_inv)[-1])
    quad_bound = eps ** 2 * norm_inv ** 3 * float(np.sum(D ** 2))
    return TaylorCheck(remainder=remainder, quad_bound=quad_bound, exact_quad=exact_quad)


def surrogate_error_bound(problem: ProblemInstance, kappa: int, eps: float = 1.0) -> Tuple[float, float]:
    """(zeta, eps^2 ||Omega_0^-1||^3 (kappa zeta)^2) with zeta = max_l ||Delta_l||_F."""
    zeta = max(float(np.linalg.norm(inc.delta)) for inc in problem.increments)
    norm_inv = float(np.linalg.eigvalsh(problem.omega0_inv)[-1])
    return zeta, eps ** 2 * norm_inv ** 3 * (kappa * zeta) ** 2


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def build_bound_report(
    problem: ProblemInstance,
    kappa: int,
    epsilon_sample: float = DEFAULT_EPSILON_SAMPLE,
    cap_N: int = EXHAUSTIVE_MAX_N,
    alpha_max_assumed: Optional[float] = None,
) -> BoundReport:
    if kappa < 1:
        raise ConfigError(f"bounds need kappa >= 1, got {kappa}")
    spectral = spectral_bounds(problem)
    notes: List[str] = []
    if spectral.max_rank > 1:
        notes.append(f"gamma_lower divided by the largest increment rank {spectral.max_rank}")

    alpha = gamma = alpha_max = factor = None
    elementwise: Dict[int, float] = {}
    per_kappa: List[KappaCurvature] = []
    if problem.N <= cap_N:
        table = subset_objectives(problem, cap_N)
        alpha = curvature_exhaustive(problem, cap_N, table=table)
        gamma = submodularity_ratio_exhaustive(problem, cap_N, table=table)
        elementwise = elementwise_curvatures(problem, cap_N, table=table)
        alpha_max = max(elementwise.values(), default=0.0)
        factor = greedy_factor(alpha, gamma)
        for k in range(1, min(kappa, problem.N) + 1):
            a_k = curvature_exhaustive(problem, cap_N, max_size=k, table=table)
            g_k = submodularity_ratio_exhaustive(problem, cap_N, max_size=k, table=table)
            per_kappa.append(KappaCurvature(kappa=k, alpha=a_k, gamma=g_k, greedy_factor=greedy_factor(a_k, g_k)))
    else:
        notes.append(f"N={problem.N} above the exhaustive limit {cap_N}: alpha, gamma not computed")
        if alpha_max_assumed is not None:
            alpha_max = alpha_max_assumed

    r = sample_size(problem.N, kappa, epsilon_sample)
    randomized = None
    if alpha_max is not None:
        randomized = randomized_factor(alpha_max, epsilon_sample, kappa, problem.N)
        eta = randomized.eta
    else:
        check_epsilon(epsilon_sample, kappa)
        eta = 1.0 if r >= problem.N else 1.0 + max(0.0, r / (2 * problem.N) - 1.0 / (2 * (problem.N - r)))
        notes.append("alpha_max unavailable: randomized factor not computed")
    if r >= problem.N:
        notes.append("r >= N: eta taken at its limit 1")

    zeta, surrogate = surrogate_error_bound(problem, kappa)
    report = BoundReport(
        fingerprint=problem_fingerprint(problem),
        N=problem.N,
        n=problem.n,
        kappa=kappa,
        epsilon_sample=epsilon_sample,
        alpha=alpha,
        gamma=gamma,
        alpha_max=alpha_max,
        alpha_max_assumed=alpha_max is not None and problem.N > cap_N,
        elementwise=elementwise,
        per_kappa=per_kappa,
        alpha_bar=spectral.alpha_bar,
        gamma_lower=spectral.gamma_lower,
        alpha_bar_rank_one=spectral.alpha_bar_rank_one,
        gamma_lower_rank_one=spectral.gamma_lower_rank_one,
        max_rank=spectral.max_rank,
        delta_min=spectral.delta_min,
        lambda_min_base=spectral.lambda_min_base,
        lambda_max_full=spectral.lambda_max_full,
        greedy_factor=factor,
        greedy_factor_spectral=greedy_factor(min(max(spectral.alpha_bar, 0.0), 1.0), min(max(spectral.gamma_lower, 0.0), 1.0)),
        randomized_factor=None if randomized is None else randomized.factor,
        c=None if randomized is None else randomized.c,
        r=r,
        eta=eta,
        zeta=zeta,
        surrogate_bound=surrogate,
        notes=notes,
    )
    logger.info(
        f"Bounds: alpha={alpha} gamma={gamma} alpha_bar={spectral.alpha_bar:.6g} "
        f"gamma_lower={spectral.gamma_lower:.6g} greedy_factor={factor}"
    )
    return report
