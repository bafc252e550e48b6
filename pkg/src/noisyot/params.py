"""Device characterization, PDC source model, and the derived click probabilities.

Everything the security calculus consumes starts here: the honest-device
parameters, the adversary's memory model, and the conditional probabilities
(single-pair fraction, no-click probabilities, Hoeffding deviation) that feed
the rate formulas.

Two ways to obtain the derived probabilities are supported:

* ``anchored`` -- the expected detected-round count ``m``, the single-photon
  lower bound ``m1`` and the total error probability ``p_err`` are supplied
  directly (e.g. from an external characterization) and the individual
  probabilities are back-solved from the defining identities.
* ``model`` -- the probabilities are computed from the PDC pair-number
  distribution, the per-arm transmittances and the dark-count rate.  The
  model treats a round as one emission event of the source (at least one
  pair in a coherence window) and is a best-effort reconstruction; it lands
  within a few percent of measured reference values but is not exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ExperimentParams",
    "AdversaryModel",
    "SecurityConstants",
    "SourceCharacterization",
    "DerivedProbabilities",
    "estimate_mu",
    "estimate_transmittances",
    "pdc_pair_distribution",
    "hoeffding_zeta",
    "binary_entropy",
    "derived_probabilities",
    "load_config",
    "ConfigError",
]

#: Detectors in one party's passive polarization analyzer.
DETECTORS_PER_PARTY = 4

#: Default truncation for the pair-number distribution; the tail mass beyond
#: this is far below 1e-12 for every mu of interest (mu <= 0.1).
DEFAULT_N_MAX = 8


def _check_prob(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class ExperimentParams:
    """Honest-device characterization of the source, channel and detectors.

    ``mu`` is the mean photon-pair number per coherence time, ``eta`` the total
    transmittance, ``eta_a``/``eta_b`` the per-arm transmittances, ``e_det``
    the intrinsic error probability, ``p_dark`` the dark-count probability per
    detector per coherence time, and ``n`` the number of pairs exchanged
    before losses.
    """

    mu: float
    eta: float
    e_det: float
    p_dark: float
    n: int
    eta_a: float | None = None
    eta_b: float | None = None
    coherence_time: float = 1.0e-11

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        _check_prob("eta", self.eta)
        _check_prob("e_det", self.e_det)
        _check_prob("p_dark", self.p_dark)
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.coherence_time <= 0:
            raise ValueError("coherence_time must be positive")
        if (self.eta_a is None) != (self.eta_b is None):
            raise ValueError("eta_a and eta_b must be supplied together")
        if self.eta_a is not None:
            _check_prob("eta_a", self.eta_a)
            _check_prob("eta_b", self.eta_b)
            if abs(self.eta - self.eta_a * self.eta_b) > 1e-3:
                raise ValueError(
                    "eta inconsistent with eta_a * eta_b: "
                    f"{self.eta} vs {self.eta_a * self.eta_b}"
                )

    @property
    def arm_transmittances(self) -> tuple[float, float]:
        """Per-arm transmittances; a symmetric split of ``eta`` when only the
        total is known."""
        if self.eta_a is not None and self.eta_b is not None:
            return self.eta_a, self.eta_b
        root = math.sqrt(self.eta)
        return root, root


@dataclass(frozen=True)
class AdversaryModel:
    """Assumed limits of the dishonest party's quantum memory.

    ``d`` is the memory dimension, ``r`` the probability the depolarizing
    memory retains a state, ``nu`` the fraction of transmitted qubits that
    can be stored.
    """

    d: int = 2
    r: float = 0.75
    nu: float = 0.002

    def __post_init__(self) -> None:
        if self.d < 2:
            raise ValueError("memory dimension d must be >= 2")
        _check_prob("r", self.r)
        _check_prob("nu", self.nu)


@dataclass(frozen=True)
class SecurityConstants:
    """Error budgets and the error-correction efficiency."""

    epsilon: float = 2.5e-7
    epsilon_ec: float = 3.09e-3
    f_ec: float = 1.491

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")
        if not 0.0 < self.epsilon_ec < 1.0:
            raise ValueError("epsilon_ec must be in (0, 1)")
        if self.f_ec < 1.0:
            raise ValueError("f_ec must be >= 1")


@dataclass(frozen=True)
class SourceCharacterization:
    """Raw count rates measured while characterizing the source."""

    n_a: float
    n_b: float
    n_coin: float
    delta_t_coin: float = 3e-9
    pump_power_mw: float | None = None

    def __post_init__(self) -> None:
        if min(self.n_a, self.n_b, self.n_coin) < 0:
            raise ValueError("count rates must be >= 0")
        if self.n_coin > min(self.n_a, self.n_b):
            raise ValueError("coincidence rate cannot exceed the singles rates")


@dataclass(frozen=True)
class DerivedProbabilities:
    """Click probabilities and round counts entering the security formulas.

    ``p1_sent``: single-pair probability given the sender's click.
    ``ph_noclick``: probability a round yields no coincidence for honest Bob.
    ``pd_noclick``: no-click probability for a dishonest Bob with perfect
    devices (nonzero only through the sender's dark counts).
    ``zeta``: Hoeffding deviation for the chosen error budget.
    ``m``/``m1``: expected detected rounds and the finite-size lower bound on
    single-photon rounds.  ``p_err``: total error probability between matched
    subsets.
    """

    p1_sent: float
    ph_noclick: float
    pd_noclick: float
    zeta: float
    m: float = field(init=False)
    m1: float = field(init=False)
    p_err: float = 0.0
    n: int = 1

    def __post_init__(self) -> None:
        for name in ("p1_sent", "ph_noclick", "pd_noclick"):
            _check_prob(name, getattr(self, name))
        object.__setattr__(self, "m", (1.0 - self.ph_noclick) * self.n)
        object.__setattr__(
            self,
            "m1",
            (self.p1_sent - self.ph_noclick + self.pd_noclick - 3.0 * self.zeta)
            * self.n,
        )


def estimate_mu(pairs_per_second: float, coherence_time: float) -> float:
    """Mean photon-pair number per coherence time of a cw-pumped source."""
    if pairs_per_second < 0 or coherence_time < 0:
        raise ValueError("inputs must be >= 0")
    return pairs_per_second * coherence_time


def estimate_transmittances(
    src: SourceCharacterization,
) -> tuple[float, float, float]:
    """Per-arm transmittances and total pair rate from singles/coincidence rates.

    Returns ``(eta_a, eta_b, pair_rate)`` with ``eta_a = n_coin / n_b``,
    ``eta_b = n_coin / n_a`` and ``pair_rate = n_a / eta_a``.
    """
    if src.n_a <= 0 or src.n_b <= 0:
        raise ValueError("singles rates must be positive")
    eta_a = src.n_coin / src.n_b
    eta_b = src.n_coin / src.n_a
    pair_rate = src.n_a / eta_a
    return eta_a, eta_b, pair_rate


def pdc_pair_distribution(
    mu: float, n_max: int = DEFAULT_N_MAX
) -> tuple[np.ndarray, float]:
    """Pair-number distribution of a PDC source, truncated at ``n_max``.

    Returns ``(probs, tail)`` where ``probs[k]`` is the probability of ``k``
    pairs within one coherence time and ``tail`` is the truncated mass.
    """
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    k = np.arange(n_max + 1, dtype=np.float64)
    half = mu / 2.0
    probs = (k + 1.0) * half**k / (1.0 + half) ** (k + 2.0)
    tail = max(0.0, 1.0 - float(probs.sum()))
    return probs, tail


def hoeffding_zeta(epsilon: float, n: int) -> float:
    """Deviation bound sqrt(ln(1/eps) / (2 n)) from Hoeffding's inequality."""
    if epsilon <= 0 or epsilon > 1:
        raise ValueError("epsilon must be in (0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.sqrt(math.log(1.0 / epsilon) / (2.0 * n))


def binary_entropy(p: float) -> float:
    """Binary entropy in bits, with h(0) = h(1) = 0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def _model_click_probabilities(
    params: ExperimentParams,
) -> tuple[float, float, float, float]:
    """Per-round (one emission event) click probabilities from the PDC model.

    Returns ``(p1_sent, ph_noclick, pd_noclick, dark_coincidence_fraction)``.
    """
    eta_a, eta_b = params.arm_transmittances
    probs, _ = pdc_pair_distribution(params.mu)
    k = np.arange(1, probs.size, dtype=np.float64)
    p_src = probs[1:]
    total = p_src.sum()
    if total <= 0:
        # mu == 0: no pairs are ever emitted
        return 1.0, 0.0, 0.0, 0.0
    p_src = p_src / total

    p_dark_party = 1.0 - (1.0 - params.p_dark) ** DETECTORS_PER_PARTY
    a_click = 1.0 - (1.0 - eta_a) ** k * (1.0 - p_dark_party)
    b_click = 1.0 - (1.0 - eta_b) ** k * (1.0 - p_dark_party)
    a_photon = 1.0 - (1.0 - eta_a) ** k
    b_photon = 1.0 - (1.0 - eta_b) ** k

    p_a = float((p_src * a_click).sum())
    p1_sent = float(p_src[0] * a_click[0]) / p_a
    coincidence = float((p_src * a_click * b_click).sum())
    ph_noclick = 1.0 - coincidence
    # Dishonest Bob with perfect devices misses only Alice's pure dark clicks.
    pd_noclick = p_dark_party * float((p_src * (1.0 - eta_a) ** k).sum())
    photon_coincidence = float((p_src * a_photon * b_photon).sum())
    dark_fraction = (coincidence - photon_coincidence) / coincidence
    if not 0.0 <= ph_noclick <= 1.0 or not 0.0 <= p1_sent <= 1.0:
        raise ValueError("model produced probabilities outside [0, 1]")
    return p1_sent, ph_noclick, pd_noclick, dark_fraction


def derived_probabilities(
    params: ExperimentParams,
    consts: SecurityConstants,
    mode: str = "model",
    m: float | None = None,
    m1: float | None = None,
    p_err: float | None = None,
) -> DerivedProbabilities:
    """Derived probabilities, either from the PDC model or anchored to given
    round counts.

    In ``anchored`` mode ``m`` and ``m1`` are required; ``ph_noclick`` and the
    positivity combination are back-solved so the defining identities
    ``m = (1 - ph_noclick) n`` and
    ``m1 = (p1_sent - ph_noclick + pd_noclick - 3 zeta) n`` hold exactly.
    """
    zeta = hoeffding_zeta(consts.epsilon, params.n)
    if mode == "anchored":
        if m is None or m1 is None:
            raise ValueError("anchored mode requires m and m1")
        ph = 1.0 - m / params.n
        # back-solve with pd_noclick := 0; only the combination matters
        p1 = m1 / params.n + 3.0 * zeta + ph
        if p_err is None:
            p_err = params.e_det
        return DerivedProbabilities(
            p1_sent=p1, ph_noclick=ph, pd_noclick=0.0, zeta=zeta,
            p_err=p_err, n=params.n,
        )
    if mode != "model":
        raise ValueError(f"unknown mode {mode!r}")
    p1, ph, pd, dark_fraction = _model_click_probabilities(params)
    if p_err is None:
        # a dark count lands in a random detector, so half of the
        # dark-involved coincidences come out as errors
        p_err = params.e_det + 0.5 * dark_fraction
    return DerivedProbabilities(
        p1_sent=p1, ph_noclick=ph, pd_noclick=pd, zeta=zeta,
        p_err=p_err, n=params.n,
    )


class ConfigError(ValueError):
    """Raised for malformed or unknown configuration entries."""


_CONFIG_KEYS = {
    "mu", "eta", "eta_a", "eta_b", "e_det", "p_dark", "n",
    "epsilon", "epsilon_ec", "f_ec", "d", "r", "nu",
    "coherence_time", "mode", "m", "m1", "p_err",
}

_REQUIRED_KEYS = {"mu", "eta", "e_det", "p_dark", "n"}


def load_config(
    path: str | Path,
) -> tuple[ExperimentParams, AdversaryModel, SecurityConstants, dict]:
    """Parse a key=value configuration file.

    Returns the three parameter records plus a dict with the mode selection
    (``mode`` and the anchored values ``m``, ``m1``, ``p_err`` when present).
    Unknown keys raise :class:`ConfigError`.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = value.strip()

    missing = _REQUIRED_KEYS - values.keys()
    if missing:
        raise ConfigError(f"missing required keys: {sorted(missing)}")

    def fget(key: str, default: float | None = None) -> float | None:
        if key not in values:
            return default
        try:
            return float(values[key])
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: not a number: {values[key]!r}") from exc

    try:
        params = ExperimentParams(
            mu=fget("mu"),
            eta=fget("eta"),
            e_det=fget("e_det"),
            p_dark=fget("p_dark"),
            n=int(fget("n")),
            eta_a=fget("eta_a"),
            eta_b=fget("eta_b"),
            coherence_time=fget("coherence_time", 1.0e-11),
        )
        adv = AdversaryModel(
            d=int(fget("d", 2)),
            r=fget("r", 0.75),
            nu=fget("nu", 0.002),
        )
        consts = SecurityConstants(
            epsilon=fget("epsilon", 2.5e-7),
            epsilon_ec=fget("epsilon_ec", 3.09e-3),
            f_ec=fget("f_ec", 1.491),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    mode = values.get("mode", "model")
    if mode not in ("model", "anchored"):
        raise ConfigError(f"mode must be 'model' or 'anchored', got {mode!r}")
    extra = {
        "mode": mode,
        "m": fget("m"),
        "m1": fget("m1"),
        "p_err": fget("p_err"),
    }
    return params, adv, consts, extra
