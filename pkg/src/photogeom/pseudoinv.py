"""Transformation between photocounting and click-detector bases.

``T`` expands the click elements in the photocounting elements,
``Pi_m = sum_n T[m, n] Lambda_n``.  Its entries are the Stirling forms
``C(N, m) m! S(n, m) / N^n`` and do not depend on efficiency or dark
counts.  The least-squares inverse is the Moore-Penrose pseudoinverse
``S = T^+``; applied to click statistics it gives the best approximate
photocount statistics ``p = S rho``.

Rows of ``T`` run over the effective click set ``0..N-1``, columns over a
Fock window ``0..K-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Sequence

import numpy as np
import scipy.linalg
from scipy.stats import binom, poisson

from .clickdet import ArrayDetector, array_basis
from .errors import RankDeficientError
from .fockops import DiagonalOperator, binomial, decay_tail_bound, stirling1, stirling2
from .geometry import contravariant_coords
from .phasespace import ClickHistogram

__all__ = [
    "TransformPair",
    "PhotonNumberReconstruction",
    "default_fock_window",
    "t_matrix",
    "moore_penrose",
    "transform_pair",
    "penrose_conditions",
    "stirling_pseudoinverse",
    "reconstruct_pn_least_squares",
    "photocount_element",
    "s_matrix_from_duals",
    "dump_matrix",
]


@dataclass(frozen=True)
class TransformPair:
    T: np.ndarray
    S: np.ndarray

    @property
    def fock_window(self) -> int:
        return self.T.shape[1]


@dataclass(frozen=True)
class PhotonNumberReconstruction:
    """Raw least-squares photocount estimate.

    ``p_tilde`` may contain negative entries or entries above one.
    ``completion_norms[n]`` is the norm of the part of ``|n><n|`` (within
    the window) that the click basis cannot represent.
    """

    p_tilde: np.ndarray
    residual: float
    completion_norms: np.ndarray


def default_fock_window(det: ArrayDetector) -> int:
    return 4 * det.n_detectors


def t_matrix(det: ArrayDetector, fock_window: int | None = None, *, include_saturated: bool = False) -> np.ndarray:
    """``T[m, n] = C(N, m) m! S(n, m) / N^n`` from exact Stirling numbers.

    ``include_saturated`` appends the ``m = N`` row, making every column a
    probability vector.
    """
    N = det.n_detectors
    K = default_fock_window(det) if fock_window is None else fock_window
    if K < N:
        raise ValueError(f"Fock window {K} is smaller than the detector count {N}")
    rows = N + 1 if include_saturated else N
    T = np.empty((rows, K))
    for m in range(rows):
        head = binomial(N, m) * math.factorial(m)
        for n in range(K):
            T[m, n] = float(Fraction(head * stirling2(n, m), N**n))
    return T


def moore_penrose(T: np.ndarray, *, rtol: float | None = None) -> np.ndarray:
    """Pseudoinverse of a full-row-rank matrix by singular value decomposition.

    Raises:
        RankDeficientError: a singular value falls below ``rtol`` times the
            largest one; the exception carries all singular values.
    """
    T = np.asarray(T, dtype=np.float64)
    U, sv, Vt = scipy.linalg.svd(T, full_matrices=False)
    if rtol is None:
        rtol = max(T.shape) * np.finfo(float).eps
    if sv.size < T.shape[0] or sv[-1] <= rtol * sv[0]:
        raise RankDeficientError(f"matrix is rank deficient (smallest singular value {sv[-1]:.3e})", sv)
    return (Vt.T / sv) @ U.T


def transform_pair(det: ArrayDetector, fock_window: int | None = None) -> TransformPair:
    T = t_matrix(det, fock_window)
    return TransformPair(T, moore_penrose(T))


def penrose_conditions(T: np.ndarray, S: np.ndarray) -> dict[str, float]:
    """Largest absolute residual of each standard Moore-Penrose condition."""
    TS, ST = T @ S, S @ T
    return {
        "TST=T": float(np.max(np.abs(TS @ T - T))),
        "STS=S": float(np.max(np.abs(ST @ S - S))),
        "(TS)^T=TS": float(np.max(np.abs(TS.T - TS))),
        "(ST)^T=ST": float(np.max(np.abs(ST.T - ST))),
    }


def stirling_pseudoinverse(det: ArrayDetector, fock_window: int | None = None, *, exact: bool = False):
    """``S~[m, n] = C(N, n)^-1 N^m / n! (-1)^(m-n) s1(n, m)`` with unsigned Stirling numbers of the first kind.

    Entries vanish for ``m > n``, so only the first ``N`` rows are nonzero.
    It is a right inverse of ``T`` but ``S~ T`` is not symmetric.
    """
    N = det.n_detectors
    K = default_fock_window(det) if fock_window is None else fock_window
    rows = [[Fraction(0)] * N for _ in range(K)]
    for m in range(min(K, N)):
        for n in range(m, N):
            rows[m][n] = Fraction((-1) ** ((n - m) % 2) * N**m * stirling1(n, m), binomial(N, n) * math.factorial(n))
    if exact:
        return rows
    return np.array([[float(v) for v in r] for r in rows])


def _click_vector(det: ArrayDetector, data) -> np.ndarray:
    N = det.n_detectors
    if isinstance(data, ClickHistogram):
        rho = data.frequencies
    else:
        rho = np.asarray(data, dtype=np.float64)
    if len(rho) not in (N, N + 1):
        raise ValueError(f"expected {N + 1} click probabilities, got {len(rho)}")
    return rho[:N]


def reconstruct_pn_least_squares(
    det: ArrayDetector,
    data: ClickHistogram | Sequence[float],
    fock_window: int | None = None,
    *,
    pair: TransformPair | None = None,
) -> PhotonNumberReconstruction:
    """Least-squares photocount statistics ``S rho`` from click data.

    For a lossy or noisy detector the result estimates the statistics of
    registered photons (efficiency and dark counts included), since ``T``
    is the same for every ``eta`` and ``nu``.
    """
    pair = pair or transform_pair(det, fock_window)
    rho = _click_vector(det, data)
    p = pair.S @ rho
    residual = float(np.linalg.norm(pair.T @ p - rho))
    projector_diag = np.einsum("nm,mn->n", pair.S, pair.T)
    completion = np.sqrt(np.clip(1.0 - projector_diag, 0.0, None))
    return PhotonNumberReconstruction(p, residual, completion)


def photocount_element(n: int, eta: float, nu: float, truncation_dim: int) -> DiagonalOperator:
    """Lossy photocounting element with Poissonian dark counts, ``<k|Lambda_n|k>``."""
    k = np.arange(truncation_dim)
    diag = np.zeros(truncation_dim)
    for j in range(n + 1):
        diag += binom.pmf(j, k, eta) * poisson.pmf(n - j, nu)
    if eta == 1:
        tail = 0.0
    elif truncation_dim > n:
        # consecutive binomial terms shrink by at most (1 - eta)(k + 1)/(k + 1 - n)
        tail = decay_tail_bound(diag, (1 - eta) * truncation_dim / (truncation_dim - n))
    else:
        tail = math.inf
    return DiagonalOperator(diag, tail, 0.0, f"Lambda_{n}")


def s_matrix_from_duals(det: ArrayDetector, fock_window: int, truncation_dim: int | None = None) -> np.ndarray:
    """``S[m, n] = <Pi^n, Lambda_m>`` with both families taken at the detector's ``eta`` and ``nu``.

    This is the pseudoinverse computed through the dual click basis over
    the full Fock space.  For ``eta = 1, nu = 0`` it coincides with
    ``moore_penrose(t_matrix(det, K))`` once ``K`` covers the decay of
    ``T``; for other detectors it generally differs.
    """
    basis = array_basis(det, truncation_dim)
    dim = max(op.truncation_dim for op in basis.povm)
    out = np.empty((fock_window, det.n_detectors))
    for m in range(fock_window):
        lam = photocount_element(m, float(det.eta), float(det.nu), dim)
        out[m] = contravariant_coords(basis, lam).values
    return out


def dump_matrix(stream: IO[str], matrix: np.ndarray, name: str) -> None:
    """Plain-text matrix dump.

    Format: a header line ``# <name> <rows> <cols>`` followed by one line per
    row of space-separated values with 12 significant digits.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    stream.write(f"# {name} {matrix.shape[0]} {matrix.shape[1]}\n")
    for row in matrix:
        stream.write(" ".join(format(v, ".12g") for v in row) + "\n")
