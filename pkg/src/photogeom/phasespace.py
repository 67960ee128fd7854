"""Phase-space reconstruction from displaced click statistics.

The signal is displaced by ``-alpha`` and measured with an array detector.
Expectation values of the s-ordered operator
``2/(pi(1-s)) :exp(-2 n(alpha)/(1-s)):`` then give the quasiprobability
``P(alpha; s)``.  Because the displacement is applied to the state, the
operator coordinates are computed once at the origin and reused for every
phase-space point.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .clickdet import ArrayDetector, array_povm, contravariant_precise, f_coefficients, observable_mismatch, FCoefficients
from .errors import NotHSClassError, TailMassError
from .fockops import DiagonalOperator, geometric_tail, suggest_truncation

__all__ = [
    "GaussianState",
    "ClickHistogram",
    "QuasiprobabilityRow",
    "ReconstructionRow",
    "UhdMismatchRow",
    "quasiprobability_squeezed_vacuum",
    "wigner_squeezed_vacuum",
    "displaced_number_distribution",
    "click_probabilities",
    "sample_clicks",
    "alpha_stream",
    "simulate_uhd",
    "uhd_f_coefficients",
    "uhd_hs_norm",
    "uhd_operator",
    "uhd_coordinates",
    "reconstruct_quasiprobability",
    "uhd_mismatch_curve",
    "alpha_grid",
    "run_reconstruction",
]

_J = np.diag([1.0, -1.0])


@dataclass(frozen=True)
class GaussianState:
    """Squeezed vacuum with real squeezing parameter ``xi``; the real quadrature is squeezed."""

    xi: float

    @property
    def covariance(self) -> np.ndarray:
        c, s = math.cosh(2 * self.xi), math.sinh(2 * self.xi)
        return np.array([[c, s], [s, c]])

    V = covariance

    @property
    def mean_photons(self) -> float:
        return math.sinh(self.xi) ** 2


@dataclass(frozen=True)
class ClickHistogram:
    """Counts of ``0..N`` clicks recorded at one phase-space point."""

    counts: tuple[int, ...]
    samples: int
    alpha: complex = 0j

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise ValueError("counts must be non-negative")
        if sum(counts) != self.samples:
            raise ValueError(f"counts sum to {sum(counts)}, expected {self.samples}")
        if self.samples < 1:
            raise ValueError("a histogram needs at least one sample")

    @property
    def frequencies(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.float64) / self.samples


def quasiprobability_squeezed_vacuum(state: GaussianState, alpha: complex, s: float = 0.0) -> float:
    """s-parametrized quasiprobability of the squeezed vacuum.

    Raises:
        ValueError: ``V - s`` is not positive definite, so the distribution
            is not a regular function.
    """
    shifted = state.covariance - s * np.eye(2)
    det = float(np.linalg.det(shifted))
    if det <= 0 or shifted[0, 0] <= 0:
        raise ValueError(f"P(alpha; s={s}) is singular for squeezing {state.xi}")
    lam = np.array([alpha, np.conj(alpha)])
    jl = _J @ lam
    quad = np.real(np.conj(jl) @ np.linalg.solve(shifted, jl))
    return float(2.0 / (math.pi * math.sqrt(det)) * math.exp(-quad))


def wigner_squeezed_vacuum(state: GaussianState, alpha: complex) -> float:
    return quasiprobability_squeezed_vacuum(state, alpha, 0.0)


def _amplitudes(state: GaussianState, beta: complex, size: int) -> np.ndarray:
    """Fock amplitudes of ``D(beta) S(xi)|0>`` by the two-term recurrence."""
    r = state.xi
    ch, sh, th = math.cosh(r), math.sinh(r), math.tanh(r)
    gamma = beta * ch + beta.conjugate() * sh
    amps = np.zeros(size, dtype=np.complex128)
    amps[0] = cmath.exp(-0.5 * abs(beta) ** 2 - 0.5 * beta.conjugate() ** 2 * th) / math.sqrt(ch)
    for n in range(size - 1):
        prev = amps[n - 1] if n else 0.0
        amps[n + 1] = (gamma * amps[n] - sh * math.sqrt(n) * prev) / (ch * math.sqrt(n + 1))
    return amps


def displaced_number_distribution(
    state: GaussianState,
    alpha: complex,
    M: int | None = None,
    *,
    tail_tol: float = 1e-10,
) -> np.ndarray:
    """Photon-number distribution ``p_0 .. p_M`` of the state displaced by ``-alpha``.

    Without ``M`` the cutoff is chosen so that the neglected mass is below
    ``1e-13``.

    Raises:
        TailMassError: a given ``M`` leaves more than ``tail_tol`` outside.
    """
    beta = -complex(alpha)
    if M is not None:
        p = np.abs(_amplitudes(state, beta, M + 1)) ** 2
        tail = 1.0 - math.fsum(p)
        if tail > tail_tol:
            raise TailMassError(f"cutoff M={M} leaves probability {tail:.3e} outside the window")
        return p
    mean = abs(alpha) ** 2 + state.mean_photons
    size = int(mean + 12 * math.sqrt(mean + 1) + 40)
    while True:
        p = np.abs(_amplitudes(state, beta, size)) ** 2
        if 1.0 - math.fsum(p) < 1e-13:
            break
        size *= 2
    cum = np.cumsum(p)
    keep = int(np.searchsorted(cum, 1.0 - 1e-13)) + 1
    return p[: min(max(keep, 1), size)]


@lru_cache(maxsize=32)
def _povm_table(det: ArrayDetector, size: int) -> np.ndarray:
    return np.vstack([op.diag for op in array_povm(det, size)])


def click_probabilities(det: ArrayDetector, p: Sequence[float]) -> np.ndarray:
    """Born-rule click distribution ``sum_k p_k <k|Pi_n|k>`` for a diagonal state."""
    p = np.asarray(p, dtype=np.float64)
    total = math.fsum(p)
    if abs(total - 1) > 1e-10:
        raise ValueError(f"photon-number distribution sums to {total}")
    table = _povm_table(det, len(p))
    return table @ p


def alpha_stream(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based generator for grid point ``index`` under a master seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def sample_clicks(
    probabilities: Sequence[float],
    samples: int,
    seed: int | None = None,
    *,
    rng: np.random.Generator | None = None,
    alpha: complex = 0j,
) -> ClickHistogram:
    """Multinomial draw of ``samples`` outcomes."""
    if samples < 1:
        raise ValueError("samples must be positive")
    p = np.clip(np.asarray(probabilities, dtype=np.float64), 0.0, None)
    p = p / p.sum()
    gen = rng if rng is not None else np.random.default_rng(seed)
    counts = gen.multinomial(samples, p)
    return ClickHistogram(tuple(int(c) for c in counts), samples, complex(alpha))


def simulate_uhd(
    state: GaussianState,
    det: ArrayDetector,
    alphas: Sequence[complex],
    samples: int,
    seed: int,
) -> list[ClickHistogram]:
    """Displaced click histograms, one independent stream per phase-space point."""
    out = []
    for i, alpha in enumerate(alphas):
        probs = click_probabilities(det, displaced_number_distribution(state, alpha))
        out.append(sample_clicks(probs, samples, rng=alpha_stream(seed, i), alpha=alpha))
    return out


# Operator and its coordinates ---------------------------------------------------

def uhd_f_coefficients(det: ArrayDetector, s: float) -> FCoefficients:
    return f_coefficients(det, "uhd", s)


def uhd_hs_norm(s: float, truncation: int | None = None) -> float:
    """HS norm of the s-ordered operator, or of its truncation after ``M`` photons."""
    if s >= 1:
        raise ValueError("s must be below 1")
    pref = 2 / (math.pi * (1 - s))
    ratio = (1 + s) / (1 - s)
    if truncation is None:
        if s >= 0:
            raise NotHSClassError(f"s = {s} gives an operator outside the HS class; truncate first")
        return math.sqrt(-1 / (math.pi**2 * s))
    return pref * math.sqrt(math.fsum(ratio ** (2 * k) for k in range(truncation + 1)))


def uhd_operator(s: float, truncation: int | None = None, truncation_dim: int | None = None) -> DiagonalOperator:
    """The s-ordered operator at the origin, diagonal ``2/(pi(1-s)) (-(1+s)/(1-s))^k``."""
    pref = 2 / (math.pi * (1 - s))
    ratio = -(1 + s) / (1 - s)
    if truncation is not None:
        dim = max(truncation + 1, truncation_dim or 0)
        k = np.arange(dim)
        diag = np.where(k <= truncation, pref * ratio ** k.astype(float), 0.0)
        return DiagonalOperator(diag, 0.0, 0.0, f"P(s={s:g}, M={truncation})")
    if abs(ratio) < 1:
        dim = truncation_dim or suggest_truncation(ratio, pref)
        diag = pref * ratio ** np.arange(dim, dtype=np.float64)
        return DiagonalOperator(diag, geometric_tail(ratio, dim, pref), 0.0, f"P(s={s:g})")
    dim = truncation_dim or 64
    diag = pref * ratio ** np.arange(dim, dtype=np.float64)
    return DiagonalOperator(diag, math.inf, None, f"P(s={s:g})")


@lru_cache(maxsize=64)
def uhd_coordinates(det: ArrayDetector, s: float, truncation: int | None = None) -> tuple[np.ndarray, float]:
    """Contravariant coordinates over the effective click set and HS mismatch."""
    if truncation is None and s >= 0:
        raise NotHSClassError(f"s = {s} needs a truncation M")
    coords = contravariant_precise(det, "uhd", s, truncation)
    _, mismatch = observable_mismatch(det, "uhd", s, truncation)
    coords.flags.writeable = False
    return coords, mismatch


@dataclass(frozen=True)
class QuasiprobabilityRow:
    alpha: complex
    estimate: float
    statistical_error: float
    hs_mismatch: float


def _estimate(coords: np.ndarray, probs: np.ndarray, samples: int | None) -> tuple[float, float]:
    p = probs[: len(coords)]
    est = math.fsum(coords * p)
    if not samples:
        return est, 0.0
    # full multinomial covariance; the all-click outcome has coordinate zero
    second = math.fsum(coords**2 * p)
    return est, math.sqrt(max(second - est * est, 0.0) / samples)


def reconstruct_quasiprobability(
    det: ArrayDetector,
    s: float,
    histograms: Sequence[ClickHistogram],
    *,
    truncation: int | None = None,
) -> list[QuasiprobabilityRow]:
    """Estimate ``P(alpha; s)`` at every histogram's phase-space point."""
    if not histograms:
        raise ValueError("no histograms given")
    if truncation is None and s >= 0:
        raise ValueError(f"s = {s} requires a truncation M")
    coords, mismatch = uhd_coordinates(det, s, truncation)
    rows = []
    for h in histograms:
        if len(h.counts) != det.n_detectors + 1:
            raise ValueError(f"histogram has {len(h.counts)} bins, detector has {det.n_detectors + 1} outcomes")
        est, err = _estimate(coords, h.frequencies, h.samples)
        rows.append(QuasiprobabilityRow(h.alpha, est, err, mismatch))
    return rows


@dataclass(frozen=True)
class UhdMismatchRow:
    s: float
    truncation: int | None
    hs_norm: float
    hs_mismatch: float


def uhd_mismatch_curve(
    det: ArrayDetector,
    s_grid: Iterable[float],
    truncations: Sequence[int | None],
) -> list[UhdMismatchRow]:
    """HS mismatch of the s-ordered operator per ``(s, M)``; undefined entries are ``inf``."""
    rows = []
    for M in truncations:
        for s in s_grid:
            if M is None and s >= 0:
                rows.append(UhdMismatchRow(float(s), None, math.inf, math.inf))
                continue
            norm, mismatch = observable_mismatch(det, "uhd", s, M)
            rows.append(UhdMismatchRow(float(s), M, norm, mismatch))
    return rows


# Experiment driver ------------------------------------------------------------------

@dataclass(frozen=True)
class ReconstructionRow:
    re_alpha: float
    im_alpha: float
    s: float
    estimate: float
    statistical_error: float
    hs_mismatch: float
    theory_value: float


def alpha_grid(re_values: Iterable[float], im_values: Iterable[float]) -> list[complex]:
    """Phase-space points ordered slice by slice (imaginary part outer)."""
    re_values = list(re_values)
    return [complex(x, y) for y in im_values for x in re_values]


def run_reconstruction(
    state: GaussianState,
    det: ArrayDetector,
    alphas: Sequence[complex],
    s: float,
    *,
    truncation: int | None = None,
    samples: int | None = 100_000,
    seed: int = 0,
) -> list[ReconstructionRow]:
    """Simulate and reconstruct ``P(alpha; s)`` of a squeezed vacuum on a grid.

    ``samples=None`` feeds exact click probabilities instead of sampled
    frequencies.
    """
    if truncation is None and s >= 0:
        raise ValueError(f"s = {s} requires a truncation M")
    coords, mismatch = uhd_coordinates(det, s, truncation)
    rows = []
    for i, alpha in enumerate(alphas):
        probs = click_probabilities(det, displaced_number_distribution(state, alpha))
        if samples is None:
            est, err = _estimate(coords, probs, None)
        else:
            h = sample_clicks(probs, samples, rng=alpha_stream(seed, i), alpha=alpha)
            est, err = _estimate(coords, h.frequencies, h.samples)
        theory = quasiprobability_squeezed_vacuum(state, alpha, s)
        rows.append(ReconstructionRow(alpha.real, alpha.imag, s, est, err, mismatch, theory))
    return rows
