"""Security-rate calculus for 1-2 ROT under a bounded noisy quantum memory.

Evaluates the per-round min-entropy coefficient, the positivity and memory
capacity conditions, the strong-converse exponent of a depolarizing memory,
and the extractable ROT string length, plus parameter sweeps and the maximum
tolerable detection error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .params import (
    AdversaryModel,
    DerivedProbabilities,
    ExperimentParams,
    SecurityConstants,
    binary_entropy,
    derived_probabilities,
)

__all__ = [
    "SecurityReport",
    "c_bb84",
    "check_positivity",
    "depolarizing_capacity",
    "strong_converse_gamma",
    "check_capacity_bound",
    "rot_length",
    "sweep",
    "sweep_csv",
    "max_tolerable_error",
    "SWEEP_CSV_HEADER",
]

_S_GRID = np.logspace(-7, 0, 10_000)
_ALPHA_GRID = 1.0 + np.logspace(-9, 6, 2_000)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SecurityReport:
    """Outcome of evaluating the full rate formula for one parameter set."""

    c_bb84: float
    min_entropy_bound: float
    capacity_cn: float
    storage_rate_R: float
    gamma: float
    l: int
    positivity_ok: bool
    capacity_ok: bool
    length_ok: bool
    term_storage: float
    term_ec: float
    term_margin: float
    m: float
    m1: float
    abort_reason: str | None = None

    @property
    def secure(self) -> bool:
        return self.positivity_ok and self.capacity_ok and self.length_ok

    @property
    def secure_length(self) -> int | None:
        """Extractable length, reported only when every check passes."""
        return self.l if self.secure else None


def _c_bb84_objective(s: np.ndarray, epsilon: float, m1: float) -> np.ndarray:
    first = (1.0 + s - np.log2(1.0 + 2.0**s)) / s
    penalty = math.log2(8.0 / epsilon**2) / (s * m1)
    return first - penalty


def c_bb84(epsilon: float, m1: float) -> float:
    """Per-round min-entropy coefficient for BB84 measurements.

    Maximizes over the Renyi parameter s in (0, 1] on a dense log grid with
    golden-section refinement; negative results are clamped to 0.
    """
    if m1 <= 0:
        raise ValueError("m1 must be positive")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must be in (0, 1)")
    vals = _c_bb84_objective(_S_GRID, epsilon, m1)
    i = int(np.argmax(vals))
    lo = _S_GRID[max(i - 1, 0)]
    hi = _S_GRID[min(i + 1, _S_GRID.size - 1)]
    # golden-section refinement on the bracketing interval
    a, b = math.log(lo), math.log(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    for _ in range(60):
        fc = _c_bb84_objective(np.array([math.exp(c)]), epsilon, m1)[0]
        fd = _c_bb84_objective(np.array([math.exp(d)]), epsilon, m1)[0]
        if fc > fd:
            b, d = d, c
            c = b - _GOLDEN * (b - a)
        else:
            a, c = c, d
            d = a + _GOLDEN * (b - a)
    best = float(
        _c_bb84_objective(np.array([math.exp((a + b) / 2)]), epsilon, m1)[0]
    )
    best = max(best, float(vals[i]))
    return max(best, 0.0)


def check_positivity(dp: DerivedProbabilities) -> bool:
    """Whether the single-photon round bound is positive."""
    return (dp.p1_sent - dp.ph_noclick + dp.pd_noclick - 3.0 * dp.zeta) > 0.0


def depolarizing_capacity(r: float, d: int = 2) -> float:
    """Classical capacity of a qubit depolarizing memory with retention r."""
    if d != 2:
        raise ValueError("only qubit memories (d = 2) are supported")
    if not 0.0 <= r <= 1.0:
        raise ValueError("r must be in [0, 1]")
    return 1.0 - binary_entropy((1.0 + r) / 2.0)


def _renyi_entropy(alpha: np.ndarray, q: float) -> np.ndarray:
    """Order-alpha Renyi entropy of {q, 1-q}, stable for large alpha."""
    with np.errstate(divide="ignore"):
        la = alpha * np.log2(q) if q > 0 else np.full_like(alpha, -np.inf)
        lb = alpha * np.log2(1.0 - q) if q < 1 else np.full_like(alpha, -np.inf)
    return np.logaddexp2(la, lb) / (1.0 - alpha)


def strong_converse_gamma(r: float, rate: float) -> float:
    """Strong-converse exponent of the depolarizing memory at a storage rate.

    sup over alpha > 1 of ((alpha-1)/alpha) (rate - C_alpha) with
    C_alpha = 1 - S_alpha the Renyi capacity; 0 when the rate is below the
    classical capacity.  The alpha -> infinity closed form supplements the
    log-spaced grid.
    """
    if rate < 0:
        raise ValueError("rate must be >= 0")
    if not 0.0 <= r <= 1.0:
        raise ValueError("r must be in [0, 1]")
    q = (1.0 + r) / 2.0
    if rate <= depolarizing_capacity(r):
        return 0.0
    cap_alpha = 1.0 - _renyi_entropy(_ALPHA_GRID, q)
    vals = (_ALPHA_GRID - 1.0) / _ALPHA_GRID * (rate - cap_alpha)
    limit = rate - (1.0 + math.log2(q))
    return max(float(np.max(vals)), limit, 0.0)


def check_capacity_bound(
    adv: AdversaryModel,
    c: float,
    m1: float,
    n: int,
    epsilon: float,
) -> bool:
    """Memory-capacity condition: stored capacity below the min-entropy margin."""
    lhs = depolarizing_capacity(adv.r, adv.d) * adv.nu * n
    rhs = c * m1 / 2.0 - 1.0 - math.log2(2.0 / epsilon)
    return lhs < rhs


def rot_length(
    params: ExperimentParams,
    adv: AdversaryModel,
    consts: SecurityConstants,
    dp: DerivedProbabilities,
) -> SecurityReport:
    """Extractable ROT length and all intermediate security quantities.

    Failures are reported through the booleans and ``abort_reason``, never
    raised.
    """
    eps = consts.epsilon
    n = params.n
    margin = math.log2(2.0 / eps)
    cap = depolarizing_capacity(adv.r, adv.d)

    positivity = check_positivity(dp)
    if not positivity or dp.m1 <= 0:
        return SecurityReport(
            c_bb84=0.0, min_entropy_bound=0.0, capacity_cn=cap,
            storage_rate_R=0.0, gamma=0.0, l=0,
            positivity_ok=False, capacity_ok=False, length_ok=False,
            term_storage=0.0, term_ec=0.0, term_margin=margin,
            m=dp.m, m1=dp.m1,
            abort_reason="positivity condition violated (m1 <= 0)",
        )

    c = c_bb84(eps, dp.m1)
    min_entropy = c * dp.m1
    capacity_ok = check_capacity_bound(adv, c, dp.m1, n, eps)
    rate = (c * dp.m1 / 2.0 - 1.0 - margin) / n

    if adv.nu > 0 and rate > 0:
        gamma = strong_converse_gamma(adv.r, rate / adv.nu)
        term_storage = 0.5 * adv.nu * gamma * n
    else:
        gamma = 0.0
        term_storage = 0.0
    term_ec = consts.f_ec * binary_entropy(dp.p_err) * dp.m / 2.0
    l = math.floor(term_storage - term_ec - margin)
    length_ok = l >= 1

    reason = None
    if not capacity_ok:
        reason = "memory capacity bound violated"
    elif not length_ok:
        reason = "no secure OT possible (l < 1)"
    return SecurityReport(
        c_bb84=c, min_entropy_bound=min_entropy, capacity_cn=cap,
        storage_rate_R=rate, gamma=gamma, l=l,
        positivity_ok=True, capacity_ok=capacity_ok, length_ok=length_ok,
        term_storage=term_storage, term_ec=term_ec, term_margin=margin,
        m=dp.m, m1=dp.m1, abort_reason=reason,
    )


def _report_at(
    params: ExperimentParams,
    adv: AdversaryModel,
    consts: SecurityConstants,
) -> SecurityReport:
    dp = derived_probabilities(params, consts, mode="model")
    return rot_length(params, adv, consts, dp)


def _with_eta(params: ExperimentParams, eta: float) -> ExperimentParams:
    # symmetric per-arm split when sweeping the total transmittance
    root = math.sqrt(eta)
    return replace(params, eta=eta, eta_a=root, eta_b=root)


SWEEP_CSV_HEADER = "axis,value,l,c_bb84,gamma,R,m,m1,positivity,capacity"


def sweep(
    params: ExperimentParams,
    adv: AdversaryModel,
    consts: SecurityConstants,
    axis: str,
    grid: list[float],
) -> list[tuple[float, SecurityReport]]:
    """One model-mode security report per grid value of ``eta`` or ``e_det``."""
    if axis not in ("eta", "e_det"):
        raise ValueError("axis must be 'eta' or 'e_det'")
    if not grid:
        raise ValueError("grid must be non-empty")
    if list(grid) != sorted(grid):
        raise ValueError("grid must be sorted")
    out = []
    for value in grid:
        if axis == "eta":
            p = _with_eta(params, value)
        else:
            p = replace(params, e_det=value)
        out.append((value, _report_at(p, adv, consts)))
    return out


def sweep_csv(
    axis: str, results: list[tuple[float, SecurityReport]]
) -> str:
    """Render sweep results in the stable CSV format."""
    lines = [SWEEP_CSV_HEADER]
    for value, rep in results:
        lines.append(
            f"{axis},{value:.10g},{rep.l},{rep.c_bb84:.6f},{rep.gamma:.6f},"
            f"{rep.storage_rate_R:.8g},{rep.m:.10g},{rep.m1:.10g},"
            f"{int(rep.positivity_ok)},{int(rep.capacity_ok)}"
        )
    return "\n".join(lines) + "\n"


def max_tolerable_error(
    params: ExperimentParams,
    adv: AdversaryModel,
    consts: SecurityConstants,
    eta: float | None = None,
    xtol: float = 1e-7,
) -> float | None:
    """Largest detection error still giving a positive ROT length, or None.

    Bisection on ``e_det`` at fixed transmittance; None when no positive
    length exists even for an error-free system.
    """
    base = _with_eta(params, eta) if eta is not None else params
    def length(e_det: float) -> int:
        return _report_at(replace(base, e_det=e_det), adv, consts).l

    if length(0.0) < 1:
        return None
    lo, hi = 0.0, 0.5
    if length(hi) >= 1:
        return hi
    while hi - lo > xtol:
        mid = (lo + hi) / 2.0
        if length(mid) >= 1:
            lo = mid
        else:
            hi = mid
    return lo
