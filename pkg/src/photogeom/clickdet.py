"""Arrays of on-off detectors.

``N`` on-off detectors share the light uniformly; each photon is registered
with efficiency ``eta`` and every detector fires spontaneously with
probability ``1 - exp(-nu / N)``.  The outcome is the number of detectors
that fired.  The ``N``-click element does not decay in the photon number and
drops out of the effective index set.

Closed-form traces are alternating binomial sums whose terms grow like
``2^N``.  They are evaluated in 50-digit arithmetic (or exactly, with
``exact=True``, when ``nu = 0``) and rounded to float at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import mpmath
import numpy as np

from .errors import InconsistentMetricError, NotHSClassError
from .fockops import (
    DEFAULT_TAIL_TOL,
    MIN_TRUNCATION,
    DiagonalOperator,
    binomial,
    geometric_tail,
    stirling2,
)
from .geometry import CoordinateVector, MeasurementBasis, build_basis

__all__ = [
    "ArrayDetector",
    "FCoefficients",
    "MismatchRow",
    "array_povm",
    "array_povm_element",
    "array_metric_cov",
    "array_metric_matrix",
    "array_contr_matrix",
    "array_basis",
    "f_coefficients",
    "f_closed_form",
    "f_ideal",
    "covariant_coords_from_f",
    "fock_projector_coords",
    "click_operator",
    "observable_diagonal",
    "observable_mismatch",
    "contravariant_precise",
    "mismatch_profile",
    "F_KINDS",
    "FAMILIES",
]

_MP = mpmath.MPContext()
_MP.dps = 50
# radicands below this fraction of |B|^2 are indistinguishable from zero at working precision
_ZERO_FLOOR = 1e-30

F_KINDS = ("fock_projector", "exp", "normal_exp", "moment", "normal_moment", "uhd")
FAMILIES = F_KINDS


@dataclass(frozen=True)
class ArrayDetector:
    """``N`` identical on-off detectors with efficiency ``eta`` and dark-count intensity ``nu``."""

    n_detectors: int
    eta: float | Fraction = 1.0
    nu: float | Fraction = 0.0

    def __post_init__(self):
        if int(self.n_detectors) != self.n_detectors or self.n_detectors < 1:
            raise ValueError(f"n_detectors must be a positive integer, got {self.n_detectors}")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.nu < 0:
            raise ValueError(f"nu must be non-negative, got {self.nu}")

    @property
    def index_set(self) -> tuple[int, ...]:
        return tuple(range(self.n_detectors + 1))

    @property
    def effective_set(self) -> tuple[int, ...]:
        return tuple(range(self.n_detectors))

    @property
    def is_ideal(self) -> bool:
        return self.eta == 1 and self.nu == 0


@dataclass(frozen=True, eq=False)
class FCoefficients:
    """Traces ``F_k = Tr[B :exp(-(N - k) g(n) / N):]`` for ``k < N``.

    ``values`` is the float rounding; ``precise`` keeps the extended
    precision (or exact) numbers the coordinates are built from.
    """

    values: np.ndarray
    kind: str
    param: float | int | None
    precise: tuple


# Arithmetic backends -------------------------------------------------------

class _Exact:
    @staticmethod
    def num(x):
        return Fraction(x)

    @staticmethod
    def exp(x):
        if x != 0:
            raise ValueError("exact arithmetic needs nu = 0")
        return Fraction(1)

    @staticmethod
    def to_float(x) -> float:
        return float(x)


class _Precise:
    @staticmethod
    def num(x):
        if isinstance(x, Fraction):
            return _MP.mpf(x.numerator) / x.denominator
        return _MP.mpf(x)

    @staticmethod
    def exp(x):
        return _MP.exp(x)

    @staticmethod
    def to_float(x) -> float:
        return float(x)


def _backend(exact: bool):
    return _Exact if exact else _Precise


def _params(det: ArrayDetector, ar):
    return det.n_detectors, ar.num(det.eta), ar.num(det.nu)


# POVM ----------------------------------------------------------------------

def _element_terms(det: ArrayDetector, n: int) -> list[tuple[float, float]]:
    """(coefficient, ratio) pairs of the element diagonal ``sum_j c_j r_j^k``."""
    N, eta, nu = det.n_detectors, float(det.eta), float(det.nu)
    out = []
    for j in range(n + 1):
        coef = binomial(N, n) * binomial(n, j) * (-1) ** (n - j) * math.exp(-nu * (N - j) / N)
        out.append((coef, 1.0 - eta * (N - j) / N))
    return out


def _element_tail(det: ArrayDetector, n: int, start: int) -> float:
    tail = 0.0
    for coef, ratio in _element_terms(det, n):
        if ratio < 1:
            tail += geometric_tail(ratio, start, coef)
    return tail


def _array_window(det: ArrayDetector, tol: float = DEFAULT_TAIL_TOL) -> int:
    dim = MIN_TRUNCATION
    while max(_element_tail(det, n, dim) for n in det.index_set) >= tol:
        dim = int(dim * 1.25) + 1
    return dim


def array_povm(
    det: ArrayDetector,
    truncation_dim: int | None = None,
    *,
    exact: bool = False,
) -> list[DiagonalOperator]:
    """All ``N + 1`` elements on a common window.

    Entries are generated photon by photon: an extra photon either leaves
    the click count unchanged (lost, or absorbed by a detector that already
    fired) or raises it by one.  This recursion only adds non-negative
    numbers, unlike the alternating closed form.
    """
    N = det.n_detectors
    dim = truncation_dim or _array_window(det)
    if exact:
        eta, nu = Fraction(det.eta), Fraction(det.nu)
        if nu != 0:
            raise ValueError("exact arithmetic needs nu = 0")
        q = [Fraction(int(n == 0)) for n in range(N + 1)]
        table = np.empty((N + 1, dim), dtype=object)
    else:
        eta, nu = float(det.eta), float(det.nu)
        fire = -math.expm1(-nu / N)
        q = [binomial(N, n) * fire**n * math.exp(-nu * (N - n) / N) for n in range(N + 1)]
        table = np.empty((N + 1, dim))
    stay = [1 - eta + eta * n / N for n in range(N + 1)]
    move = [eta * (N - n + 1) / N for n in range(N + 1)]
    for k in range(dim):
        table[:, k] = q
        q = [q[n] * stay[n] + (q[n - 1] * move[n] if n else 0) for n in range(N + 1)]
    ops = []
    for n in range(N + 1):
        tail = _element_tail(det, n, dim)
        if n == N:
            ops.append(DiagonalOperator(table[n], tail, Fraction(1) if exact else 1.0, f"Pi_{n}"))
        else:
            ops.append(DiagonalOperator(table[n], tail, 0, f"Pi_{n}"))
    return ops


def array_povm_element(
    det: ArrayDetector,
    n: int,
    truncation_dim: int | None = None,
    *,
    exact: bool = False,
) -> DiagonalOperator:
    """Element for ``n`` clicks; ``n = N`` tends to the identity."""
    if not 0 <= n <= det.n_detectors:
        raise ValueError(f"click number {n} outside 0..{det.n_detectors}")
    return array_povm(det, truncation_dim, exact=exact)[n]


# Metric --------------------------------------------------------------------

def _f_pair(det: ArrayDetector, other: ArrayDetector, k: int, l: int, ar):
    """``Tr[:exp(-(N-k) g/N): :exp(-(N'-l) g'/N'):]``."""
    N, eta, nu = _params(det, ar)
    Np, etap, nup = _params(other, ar)
    den = N * (Np - l) * etap + Np * (N - k) * eta - eta * etap * (N - k) * (Np - l)
    num = N * Np * ar.exp(-nu * ar.num(Fraction(N - k, N))) * ar.exp(-nup * ar.num(Fraction(Np - l, Np)))
    return num / den


def _alternating(N: int, n: int):
    """Row ``n`` of the matrix ``C(N, n) C(n, k) (-1)^(n-k)``."""
    return [binomial(N, n) * binomial(n, k) * (-1) ** (n - k) for k in range(n + 1)]


def array_metric_cov(
    det: ArrayDetector,
    n: int,
    m: int,
    other: ArrayDetector | None = None,
    *,
    exact: bool = False,
):
    """``Tr[Pi_n(det) Pi_m(other)]`` in closed form.

    Returns ``math.inf`` when both elements are the non-decaying all-click
    elements.
    """
    other = other or det
    N, Np = det.n_detectors, other.n_detectors
    if n == N and m == Np:
        return math.inf
    ar = _backend(exact)
    total = ar.num(0)
    for k, a in enumerate(_alternating(N, n)):
        for l, b in enumerate(_alternating(Np, m)):
            total += a * b * _f_pair(det, other, k, l, ar)
    return total if exact else float(total)


@lru_cache(maxsize=64)
def _metric_precise(det: ArrayDetector, exact: bool):
    N = det.n_detectors
    ar = _backend(exact)
    F = [[_f_pair(det, det, k, l, ar) for l in range(N)] for k in range(N)]
    A = [_alternating(N, n) + [0] * (N - n - 1) for n in range(N)]
    AF = [[sum((A[n][k] * F[k][l] for k in range(n + 1)), ar.num(0)) for l in range(N)] for n in range(N)]
    return tuple(
        tuple(sum((AF[n][l] * A[m][l] for l in range(m + 1)), ar.num(0)) for m in range(N)) for n in range(N)
    )


@lru_cache(maxsize=64)
def _contr_precise(det: ArrayDetector):
    g = _MP.matrix([list(row) for row in _metric_precise(det, False)])
    inv = _MP.inverse(g)
    N = det.n_detectors
    return tuple(tuple(inv[i, j] for j in range(N)) for i in range(N))


def array_metric_matrix(det: ArrayDetector, *, exact: bool = False, full: bool = False):
    """Covariant metric over the effective set.

    ``exact=True`` returns nested lists of fractions (``nu = 0`` only).
    ``full=True`` returns the ``(N+1) x (N+1)`` float matrix including the
    all-click row and column, with ``inf`` in the corner.
    """
    rows = _metric_precise(det, exact)
    if exact:
        return [list(r) for r in rows]
    g = np.array([[float(x) for x in r] for r in rows])
    if not full:
        return g
    N = det.n_detectors
    out = np.empty((N + 1, N + 1))
    out[:N, :N] = g
    for m in range(N):
        out[N, m] = out[m, N] = array_metric_cov(det, N, m)
    out[N, N] = math.inf
    return out


def array_contr_matrix(det: ArrayDetector) -> np.ndarray:
    """Contravariant metric over the effective set, inverted at 50 digits."""
    return np.array([[float(x) for x in r] for r in _contr_precise(det)])


def array_basis(det: ArrayDetector, truncation_dim: int | None = None) -> MeasurementBasis:
    """Measurement basis with closed-form metrics; the ``N``-click element is removed."""
    povm = array_povm(det, truncation_dim)
    meta = {"family": "array", "n_detectors": det.n_detectors, "eta": float(det.eta), "nu": float(det.nu)}
    return build_basis(
        povm,
        g_cov=array_metric_matrix(det),
        g_contr=array_contr_matrix(det),
        metadata=meta,
    )


# Covariant coordinates -------------------------------------------------------

def _check_kind(kind: str, param) -> None:
    if kind not in F_KINDS:
        raise ValueError(f"unknown observable kind {kind!r}; expected one of {F_KINDS}")
    if kind == "uhd" and not param < 1:
        raise ValueError("ordering parameter s must be below 1")
    if kind in ("fock_projector", "moment", "normal_moment") and (int(param) != param or param < 0):
        raise ValueError(f"{kind} needs a non-negative integer parameter")


def _uhd_rate(s, ar):
    return 2 / (1 - ar.num(s))


def _uhd_prefactor(s, ar, exact: bool):
    pref = 2 / (1 - ar.num(s))
    return pref if exact else pref / _MP.pi


def f_closed_form(det: ArrayDetector, kind: str, param, *, exact: bool = False) -> list:
    """Closed-form ``F_k`` for general efficiency and dark counts.

    In exact mode two parameters change meaning because the numbers
    involved are irrational: for ``exp`` the parameter is the decay factor
    ``exp(-t)`` itself, and for ``uhd`` the values are multiplied by ``pi``.
    """
    _check_kind(kind, param)
    ar = _backend(exact)
    N, eta, nu = _params(det, ar)
    out = []
    for k in range(N):
        c = ar.num(Fraction(N - k, N))
        damp = ar.exp(-c * nu)
        x = 1 - c * eta
        if kind == "fock_projector":
            val = damp * x ** int(param)
        elif kind == "exp":
            decay = ar.num(param) if exact else _MP.exp(-ar.num(param))
            val = N * damp / (N * (1 - decay) + eta * (N - k) * decay)
        elif kind == "normal_exp":
            t = ar.num(param)
            val = N * damp / (eta * (N - k) * (1 - t) + t * N)
        elif kind == "moment":
            m = int(param)
            val = damp * sum(
                (stirling2(m, i) * math.factorial(i) * x**i / (1 - x) ** (i + 1) for i in range(m + 1)),
                ar.num(0),
            )
        elif kind == "normal_moment":
            m = int(param)
            ratio = N / (eta * (N - k))
            val = damp * math.factorial(m) * ratio * (ratio - 1) ** m
        else:  # uhd
            t = _uhd_rate(param, ar)
            val = _uhd_prefactor(param, ar, exact) * N * damp / (eta * (N - k) * (1 - t) + t * N)
        out.append(val)
    return out


def _eulerian_moment(m: int, x: Fraction | mpmath.mpf):
    """``(x d/dx)^m 1/(1-x)`` via numerator polynomials ``P_m(x) / (1-x)^(m+1)``."""
    poly = [Fraction(1)]
    for j in range(m):
        # P_{j+1} = x [P_j' (1 - x) + (j + 1) P_j]
        deriv = [i * c for i, c in enumerate(poly)][1:] or [Fraction(0)]
        nxt = [Fraction(0)] * (len(poly) + 2)
        for i, c in enumerate(deriv):
            nxt[i + 1] += c
            nxt[i + 2] -= c
        for i, c in enumerate(poly):
            nxt[i + 1] += (j + 1) * c
        poly = nxt
    value = sum((c * x**i for i, c in enumerate(poly)), 0 * x)
    return value / (1 - x) ** (m + 1)


def f_ideal(n_detectors: int, kind: str, param, *, exact: bool = False) -> list:
    """Closed-form ``F_k`` for unit efficiency without dark counts.

    Same conventions as :func:`f_closed_form` in exact mode.
    """
    _check_kind(kind, param)
    ar = _backend(exact)
    N = n_detectors
    out = []
    for k in range(N):
        if kind == "fock_projector":
            val = ar.num(Fraction(k, N)) ** int(param)
        elif kind == "exp":
            decay = ar.num(param) if exact else _MP.exp(-ar.num(param))
            val = N / (N - k * decay)
        elif kind == "normal_exp":
            val = N / (N - k * (1 - ar.num(param)))
        elif kind == "moment":
            val = _eulerian_moment(int(param), ar.num(Fraction(k, N)))
        elif kind == "normal_moment":
            m = int(param)
            val = ar.num(math.factorial(m) * N * k**m) / (N - k) ** (m + 1)
        else:
            s = ar.num(param)
            val = 2 * N / (N * (1 - s) + k * (1 + s))
            if not exact:
                val = val / _MP.pi
        out.append(val)
    return out


def f_coefficients(det: ArrayDetector, kind: str, param) -> FCoefficients:
    """``F_k`` of the observable family ``kind`` at parameter ``param``.

    Kinds: ``fock_projector`` (``|m><m|``), ``exp`` (``exp(-t n)``),
    ``normal_exp`` (``:exp(-t n):``), ``moment`` (``n^m``),
    ``normal_moment`` (``:n^m:``) and ``uhd`` (the s-ordered phase-space
    operator at the origin).  Values are returned even where the
    observable itself is not HS-class.
    """
    precise = f_closed_form(det, kind, param)
    return FCoefficients(np.array([float(v) for v in precise]), kind, param, tuple(precise))


def _cov_from_precise(det: ArrayDetector, F: Sequence, ar) -> list:
    N = det.n_detectors
    return [sum((a * F[k] for k, a in enumerate(_alternating(N, n))), ar.num(0)) for n in range(N)]


def covariant_coords_from_f(det: ArrayDetector, f: FCoefficients) -> CoordinateVector:
    """``B_n = C(N, n) sum_k C(n, k) (-1)^(n-k) F_k`` over the effective set."""
    cov = _cov_from_precise(det, f.precise, _Precise)
    return CoordinateVector(np.array([float(x) for x in cov]), "covariant", det.effective_set)


def fock_projector_coords(det: ArrayDetector, m: int, *, exact: bool = False, method: str = "binomial") -> list:
    """Covariant coordinates of ``|m><m|``.

    ``method="stirling"`` uses ``C(N, n) n! S(m, n) / N^m`` and needs unit
    efficiency without dark counts; ``"binomial"`` goes through ``F_k``.
    """
    ar = _backend(exact)
    N = det.n_detectors
    if method == "stirling":
        if not det.is_ideal:
            raise ValueError("the Stirling form holds for eta = 1, nu = 0 only")
        vals = [ar.num(Fraction(binomial(N, n) * math.factorial(n) * stirling2(m, n), N**m)) for n in range(N)]
    elif method == "binomial":
        vals = _cov_from_precise(det, f_closed_form(det, "fock_projector", m, exact=exact), ar)
    else:
        raise ValueError(f"unknown method {method!r}")
    return vals if exact else [float(v) for v in vals]


# Observables ------------------------------------------------------------------

def click_operator(det: ArrayDetector, truncation_dim: int | None = None) -> DiagonalOperator:
    """``sum_n n Pi_n = N (1 - :exp(-g(n) / N):)``; bounded with limit ``N``."""
    N, eta, nu = det.n_detectors, float(det.eta), float(det.nu)
    ratio = 1 - eta / N
    scale = N * math.exp(-nu / N)
    if truncation_dim is None:
        truncation_dim = _array_window(det)
    diag = N - scale * ratio ** np.arange(truncation_dim, dtype=np.float64)
    return DiagonalOperator(diag, geometric_tail(ratio, truncation_dim, scale), float(N), "click operator")


def observable_diagonal(kind: str, param) -> Callable[[int], float]:
    """Fock diagonal ``k -> <k|B|k>`` of an observable family (used for truncation)."""
    _check_kind(kind, param)
    if kind == "fock_projector":
        return lambda k: 1.0 if k == param else 0.0
    if kind == "exp":
        return lambda k: math.exp(-param * k)
    if kind == "normal_exp":
        return lambda k: (1 - param) ** k
    if kind == "moment":
        return lambda k: float(k) ** param
    if kind == "normal_moment":
        return lambda k: float(math.perm(k, param))
    pref = 2 / (math.pi * (1 - param))
    ratio = -(1 + param) / (1 - param)
    return lambda k: pref * ratio**k


def _precise_diag(kind: str, param, k: int):
    if kind == "fock_projector":
        return _MP.mpf(int(k == param))
    if kind == "exp":
        return _MP.exp(-_MP.mpf(param) * k)
    if kind == "normal_exp":
        return (1 - _MP.mpf(param)) ** k
    if kind == "moment":
        return _MP.mpf(k) ** param
    if kind == "normal_moment":
        return _MP.mpf(math.perm(k, param))
    s = _MP.mpf(param)
    return 2 / (_MP.pi * (1 - s)) * (-(1 + s) / (1 - s)) ** k


def _precise_norm_sq(kind: str, param):
    if kind == "fock_projector":
        return _MP.mpf(1)
    if kind == "exp":
        if param <= 0:
            raise NotHSClassError("exp(-t n) is HS-class only for t > 0")
        return 1 / (1 - _MP.exp(-2 * _MP.mpf(param)))
    if kind == "normal_exp":
        if not 0 < param < 2:
            raise NotHSClassError(":exp(-t n): is HS-class only for 0 < t < 2")
        t = _MP.mpf(param)
        return 1 / (t * (2 - t))
    if kind == "uhd":
        if param >= 0:
            raise NotHSClassError("the phase-space operator is HS-class only for s < 0; truncate first")
        return -1 / (_MP.pi**2 * _MP.mpf(param))
    raise NotHSClassError(f"{kind} observables are not HS-class; truncation required")


@lru_cache(maxsize=64)
def _povm_rows_precise(det: ArrayDetector, size: int):
    """Element diagonals for ``k < size`` at working precision (effective set only)."""
    N = det.n_detectors
    eta, nu = _Precise.num(det.eta), _Precise.num(det.nu)
    fire = -_MP.expm1(-nu / N)
    q = [binomial(N, n) * fire**n * _MP.exp(-nu * (N - n) / N) for n in range(N + 1)]
    stay = [1 - eta + eta * n / N for n in range(N + 1)]
    move = [eta * (N - n + 1) / N for n in range(N + 1)]
    rows = [[] for _ in range(N)]
    for _ in range(size):
        for n in range(N):
            rows[n].append(q[n])
        q = [q[n] * stay[n] + (q[n - 1] * move[n] if n else 0) for n in range(N + 1)]
    return tuple(tuple(r) for r in rows)


def _precise_cov(det: ArrayDetector, kind: str, param, truncation: int | None) -> list:
    if truncation is None:
        return _cov_from_precise(det, f_closed_form(det, kind, param), _Precise)
    diag = [_precise_diag(kind, param, k) for k in range(truncation + 1)]
    rows = _povm_rows_precise(det, truncation + 1)
    return [_MP.fsum(a * b for a, b in zip(row, diag)) for row in rows]


def observable_mismatch(
    det: ArrayDetector,
    kind: str,
    param,
    truncation: int | None = None,
) -> tuple[float, float]:
    """HS norm of an observable and of its component outside the POVM span.

    With ``truncation = M`` the observable's diagonal is cut after entry
    ``M``.  Radicands below ``1e-30 |B|^2`` are reported as an exact zero,
    since the observable then lies in the span to working precision.

    Raises:
        NotHSClassError: the untruncated observable is not HS-class.
        InconsistentMetricError: the radicand is negative beyond the floor.
    """
    _check_kind(kind, param)
    if truncation is None:
        norm_sq = _precise_norm_sq(kind, param)
    else:
        if truncation < 0:
            raise ValueError("truncation must be non-negative")
        norm_sq = _MP.fsum(_precise_diag(kind, param, k) ** 2 for k in range(truncation + 1))
    cov = _precise_cov(det, kind, param, truncation)
    contr = _contr_precise(det)
    N = det.n_detectors
    raised = [_MP.fsum(contr[n][m] * cov[m] for m in range(N)) for n in range(N)]
    radicand = norm_sq - _MP.fsum(a * b for a, b in zip(cov, raised))
    floor = _ZERO_FLOOR * norm_sq
    if radicand < -floor:
        raise InconsistentMetricError(f"negative mismatch radicand {float(radicand):.3e}")
    mismatch = 0.0 if radicand <= floor else float(_MP.sqrt(radicand))
    return float(_MP.sqrt(norm_sq)), mismatch


def contravariant_precise(det: ArrayDetector, kind: str, param, truncation: int | None = None) -> np.ndarray:
    """Contravariant coordinates over the effective set, raised at working precision."""
    cov = _precise_cov(det, kind, param, truncation)
    contr = _contr_precise(det)
    N = det.n_detectors
    return np.array([float(_MP.fsum(contr[n][m] * cov[m] for m in range(N))) for n in range(N)])


@dataclass(frozen=True)
class MismatchRow:
    parameter: float
    hs_norm_b: float
    hs_mismatch: float
    condition_number: float


def mismatch_profile(
    det: ArrayDetector,
    family: str,
    grid: Iterable,
    *,
    truncation: int | None = None,
) -> list[MismatchRow]:
    """HS mismatch of an observable family over a parameter grid, in grid order."""
    cond = float(np.linalg.cond(array_metric_matrix(det)))
    rows = []
    for p in grid:
        norm, mismatch = observable_mismatch(det, family, p, truncation)
        rows.append(MismatchRow(float(p), norm, mismatch, cond))
    return rows
