"""Operators diagonal in the photon-number basis.

Everything in this package acts on functions of the number operator, so an
operator is fully described by its diagonal ``<k|A|k>``.  A finite window of
that diagonal is stored together with two pieces of metadata describing what
lies beyond it:

* ``asymptote`` is the limit of the diagonal as ``k -> inf`` when the operator
  is bounded and converges (``0`` for Hilbert-Schmidt operators, ``1`` for the
  identity, ``None`` when no limit is known).
* ``tail_bound`` is a certified upper bound on the l2 norm of
  ``diag[k] - asymptote`` over ``k >= truncation_dim``.

An operator belongs to the Hilbert-Schmidt class exactly when its asymptote is
zero and its tail bound is finite.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import NotHSClassError

__all__ = [
    "DiagonalOperator",
    "hs_inner",
    "hs_norm",
    "normal_exp_diag",
    "exp_diag",
    "fock_projector",
    "identity",
    "geometric_tail",
    "decay_tail_bound",
    "suggest_truncation",
    "binomial",
    "falling_factorial",
    "stirling2",
    "stirling1",
    "DEFAULT_TAIL_TOL",
    "MIN_TRUNCATION",
]

DEFAULT_TAIL_TOL = 1e-12
MIN_TRUNCATION = 64


def _as_diag(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError("diagonal must be one-dimensional")
    if arr.dtype == object:
        arr = arr.copy()
    else:
        arr = arr.astype(np.float64, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class DiagonalOperator:
    """Finite window of a Fock-diagonal operator plus tail metadata.

    Attributes:
        diag: entries ``<k|A|k>`` for ``k < truncation_dim``.  Either float64
            or an object array of ``Fraction`` for exact arithmetic.
        tail_bound: bound on the l2 norm of ``diag[k] - asymptote`` for
            ``k >= truncation_dim``; ``inf`` if unknown.
        asymptote: limit of the diagonal, ``None`` if there is none.
        label: free-form description used in reports.
    """

    diag: np.ndarray
    tail_bound: float = 0.0
    asymptote: float | Fraction | None = 0.0
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "diag", _as_diag(self.diag))
        if len(self.diag) < 1:
            raise ValueError("truncation_dim must be positive")
        tail = float(self.tail_bound)
        if math.isnan(tail) or tail < 0:
            raise ValueError(f"tail_bound must be non-negative, got {self.tail_bound}")
        object.__setattr__(self, "tail_bound", tail)
        if self.asymptote is None and math.isfinite(tail):
            raise ValueError("an operator without asymptote needs an infinite tail bound")

    @property
    def truncation_dim(self) -> int:
        return len(self.diag)

    @property
    def is_exact(self) -> bool:
        return self.diag.dtype == object

    @property
    def is_hs(self) -> bool:
        return self.asymptote is not None and self.asymptote == 0 and math.isfinite(self.tail_bound)

    def to_float(self) -> "DiagonalOperator":
        if not self.is_exact:
            return self
        asym = None if self.asymptote is None else float(self.asymptote)
        return DiagonalOperator(self.diag.astype(np.float64), self.tail_bound, asym, self.label)

    def restricted(self, dim: int) -> "DiagonalOperator":
        """Return the operator on a window of size ``dim``.

        Shrinking moves the dropped entries into the tail bound.  Growing is
        only possible when the tail is known to vanish, in which case the new
        entries equal the asymptote.
        """
        n = self.truncation_dim
        if dim == n:
            return self
        if dim < n:
            dropped = self.diag[dim:]
            asym = self.asymptote
            if asym is None:
                tail = math.inf
            else:
                dev = np.asarray(dropped - asym, dtype=np.float64)
                tail = math.hypot(float(np.linalg.norm(dev)), self.tail_bound)
            return DiagonalOperator(self.diag[:dim], tail, asym, self.label)
        if self.tail_bound != 0 or self.asymptote is None:
            raise ValueError(
                f"cannot extend {self.label or 'operator'} beyond its window: tail is not exactly known"
            )
        fill = np.full(dim - n, self.asymptote, dtype=self.diag.dtype)
        return DiagonalOperator(np.concatenate([self.diag, fill]), 0.0, self.asymptote, self.label)

    def _combine(self, other: "DiagonalOperator", sign: int) -> "DiagonalOperator":
        dim = common_dim(self, other)
        a, b = self.restricted(dim), other.restricted(dim)
        asym = None
        if a.asymptote is not None and b.asymptote is not None:
            asym = a.asymptote + sign * b.asymptote
        tail = a.tail_bound + b.tail_bound
        if asym is None:
            tail = math.inf
        return DiagonalOperator(a.diag + sign * b.diag, tail, asym)

    def __add__(self, other: "DiagonalOperator") -> "DiagonalOperator":
        return self._combine(other, 1)

    def __sub__(self, other: "DiagonalOperator") -> "DiagonalOperator":
        return self._combine(other, -1)

    def __neg__(self) -> "DiagonalOperator":
        return self * -1

    def __mul__(self, scalar) -> "DiagonalOperator":
        if isinstance(scalar, DiagonalOperator):
            return NotImplemented
        asym = None if self.asymptote is None else self.asymptote * scalar
        if asym is None or math.isinf(self.tail_bound):
            tail = math.inf
        else:
            tail = self.tail_bound * abs(float(scalar))
        return DiagonalOperator(self.diag * scalar, tail, asym, self.label)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        head = ", ".join(f"{float(x):.6g}" for x in self.diag[:4])
        more = ", ..." if self.truncation_dim > 4 else ""
        return (
            f"DiagonalOperator([{head}{more}], dim={self.truncation_dim}, "
            f"tail_bound={self.tail_bound:.3g}, asymptote={self.asymptote!r})"
        )


def common_dim(a: DiagonalOperator, b: DiagonalOperator) -> int:
    """Window size on which two operators can be combined without losing certification."""
    short, long_ = (a, b) if a.truncation_dim <= b.truncation_dim else (b, a)
    if short.tail_bound == 0 and short.asymptote is not None:
        return long_.truncation_dim
    return short.truncation_dim


def identity(truncation_dim: int) -> DiagonalOperator:
    return DiagonalOperator(np.ones(truncation_dim), 0.0, 1.0, "identity")


def fock_projector(m: int, truncation_dim: int | None = None, *, exact: bool = False) -> DiagonalOperator:
    """The projector ``|m><m|``; the window is always large enough to hold it."""
    dim = max(m + 1, truncation_dim or 0)
    if exact:
        diag = np.array([Fraction(int(k == m)) for k in range(dim)], dtype=object)
    else:
        diag = np.zeros(dim)
        diag[m] = 1.0
    return DiagonalOperator(diag, 0.0, 0, f"|{m}><{m}|")


def _dot(x: np.ndarray, y: np.ndarray):
    if x.dtype == object or y.dtype == object:
        return sum((p * q for p, q in zip(x, y)), Fraction(0))
    return math.fsum(x * y)


def hs_inner(
    a: DiagonalOperator,
    b: DiagonalOperator,
    *,
    formal: bool = False,
    return_error: bool = False,
):
    """Hilbert-Schmidt product ``Tr(A B)`` of two diagonal operators.

    Args:
        a, b: operands.  Windows of different size are reconciled with
            :meth:`DiagonalOperator.restricted`.
        formal: allow operands outside the HS class and return the plain
            windowed sum.  Used for traces like ``Tr(A 1)`` where ``A`` is
            trace class.
        return_error: also return the Cauchy-Schwarz bound on the neglected
            tail, ``a.tail_bound * b.tail_bound``.

    Raises:
        NotHSClassError: an operand is not HS-class and ``formal`` is false.
    """
    if not formal:
        for op in (a, b):
            if not op.is_hs:
                raise NotHSClassError(f"{op.label or 'operand'} is not a Hilbert-Schmidt operator")
    dim = common_dim(a, b)
    ra, rb = a.restricted(dim), b.restricted(dim)
    value = _dot(ra.diag, rb.diag)
    if not return_error:
        return value
    if ra.tail_bound == 0 or rb.tail_bound == 0:
        err = 0.0
    else:
        err = ra.tail_bound * rb.tail_bound
    return value, err


def hs_norm(a: DiagonalOperator, *, return_error: bool = False):
    """Hilbert-Schmidt norm; the error bound is the operand's tail bound."""
    if not a.is_hs:
        raise NotHSClassError(f"{a.label or 'operand'} is not a Hilbert-Schmidt operator")
    sq = _dot(a.diag, a.diag)
    value = math.sqrt(sq)
    if return_error:
        return value, a.tail_bound
    return value


def geometric_tail(ratio: float, start: int, scale: float = 1.0) -> float:
    """l2 norm of ``scale * ratio**k`` summed over ``k >= start``."""
    r = abs(float(ratio))
    if r >= 1:
        return math.inf
    if r == 0:
        return abs(scale) if start == 0 else 0.0
    return abs(scale) * r**start / math.sqrt(1.0 - r * r)


def decay_tail_bound(diag: Sequence[float], decay_ratio: float) -> float:
    """Tail bound for a diagonal whose entries shrink at least by ``decay_ratio`` per step.

    The caller vouches for the ratio; the bound is ``|last| q / sqrt(1 - q^2)``.
    """
    q = abs(float(decay_ratio))
    if q >= 1:
        return math.inf
    last = abs(float(diag[-1]))
    return last * q / math.sqrt(1.0 - q * q)


def suggest_truncation(
    ratio: float,
    scale: float = 1.0,
    tol: float = DEFAULT_TAIL_TOL,
    minimum: int = MIN_TRUNCATION,
) -> int:
    """Smallest window for which a geometric tail ``scale * ratio**k`` drops below ``tol``."""
    r = abs(float(ratio))
    if r >= 1:
        raise NotHSClassError("diagonal does not decay; no finite truncation certifies it")
    if r == 0 or scale == 0:
        return minimum
    need = math.log(tol * math.sqrt(1 - r * r) / abs(scale)) / math.log(r)
    return max(minimum, int(math.ceil(need)) + 1)


def normal_exp_diag(c: float, truncation_dim: int | None = None) -> DiagonalOperator:
    """``:exp(-c n):`` with diagonal ``(1 - c)**k``."""
    r = 1.0 - c
    if truncation_dim is None:
        truncation_dim = suggest_truncation(r) if abs(r) < 1 else MIN_TRUNCATION
    diag = r ** np.arange(truncation_dim, dtype=np.float64)
    label = f":exp(-{c:g} n):"
    if abs(r) < 1:
        return DiagonalOperator(diag, geometric_tail(r, truncation_dim), 0.0, label)
    if r == 1:
        return DiagonalOperator(diag, 0.0, 1.0, label)
    return DiagonalOperator(diag, math.inf, None, label)


def exp_diag(t: float, truncation_dim: int | None = None) -> DiagonalOperator:
    """``exp(-t n)`` with diagonal ``exp(-t k)``."""
    r = math.exp(-t)
    if truncation_dim is None:
        truncation_dim = suggest_truncation(r) if r < 1 else MIN_TRUNCATION
    diag = np.exp(-t * np.arange(truncation_dim, dtype=np.float64))
    label = f"exp(-{t:g} n)"
    if r < 1:
        return DiagonalOperator(diag, geometric_tail(r, truncation_dim), 0.0, label)
    if r == 1:
        return DiagonalOperator(diag, 0.0, 1.0, label)
    return DiagonalOperator(diag, math.inf, None, label)


def from_function(
    fn: Callable[[int], float],
    truncation_dim: int,
    *,
    decay_ratio: float | None = None,
    label: str = "",
) -> DiagonalOperator:
    """Tabulate ``fn(k)``; without a decay ratio the operator is marked non-HS."""
    diag = np.array([fn(k) for k in range(truncation_dim)], dtype=np.float64)
    if decay_ratio is None:
        return DiagonalOperator(diag, math.inf, None, label)
    return DiagonalOperator(diag, decay_tail_bound(diag, decay_ratio), 0.0, label)


# Exact combinatorics -------------------------------------------------------

def binomial(n: int, k: int) -> int:
    """Binomial coefficient, zero outside ``0 <= k <= n``."""
    if k < 0 or n < 0 or k > n:
        return 0
    return math.comb(n, k)


def falling_factorial(x: int, n: int) -> int:
    out = 1
    for i in range(n):
        out *= x - i
    return out


class _TriangleTable:
    """Lazily grown triangular table of exact integers built row by row."""

    def __init__(self, step: Callable[[list[int], int], list[int]]):
        self._rows: list[list[int]] = [[1]]
        self._step = step
        self._lock = threading.Lock()

    def row(self, n: int) -> list[int]:
        if n < len(self._rows):
            return self._rows[n]
        with self._lock:
            while len(self._rows) <= n:
                prev = self._rows[-1]
                self._rows.append(self._step(prev, len(self._rows) - 1))
        return self._rows[n]


def _stirling2_step(prev: list[int], m: int) -> list[int]:
    # S(m+1, n) = n S(m, n) + S(m, n-1)
    nxt = [0] * (m + 2)
    for n in range(1, m + 2):
        left = prev[n - 1]
        here = prev[n] if n <= m else 0
        nxt[n] = n * here + left
    return nxt


def _stirling1_step(prev: list[int], n: int) -> list[int]:
    # unsigned: c(n+1, m) = c(n, m-1) + n c(n, m)
    nxt = [0] * (n + 2)
    for m in range(0, n + 2):
        left = prev[m - 1] if m >= 1 else 0
        here = prev[m] if m <= n else 0
        nxt[m] = left + n * here
    return nxt


_S2 = _TriangleTable(_stirling2_step)
_S1 = _TriangleTable(_stirling1_step)


def stirling2(m: int, n: int) -> int:
    """Stirling number of the second kind: partitions of ``m`` items into ``n`` blocks."""
    if m < 0 or n < 0 or n > m:
        return 0
    return _S2.row(m)[n]


def stirling1(n: int, m: int, *, signed: bool = False) -> int:
    """Unsigned Stirling number of the first kind (``signed=True`` applies ``(-1)**(n-m)``)."""
    if n < 0 or m < 0 or m > n:
        return 0
    value = _S1.row(n)[m]
    if signed and (n - m) % 2:
        return -value
    return value
