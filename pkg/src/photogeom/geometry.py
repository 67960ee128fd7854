"""Dual bases of diagonal POVMs and estimation of expectation values.

A :class:`MeasurementBasis` bundles a POVM with its Gram matrix under the
Hilbert-Schmidt product (the covariant metric), the inverse of that matrix
(the contravariant metric) and the dual family of operators obtained by
raising indices.  An element whose Gram entry diverges, like the "all
detectors fired" outcome of a click detector, is dropped from the effective
index set and receives a zero dual element.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .errors import (
    ConditioningWarning,
    DegeneratePOVMError,
    InconsistentMetricError,
    NotHSClassError,
)
from .fockops import DiagonalOperator, hs_inner, hs_norm

__all__ = [
    "CoordinateVector",
    "MeasurementBasis",
    "EstimationReport",
    "build_basis",
    "raise_indices",
    "covariant_coords",
    "contravariant_coords",
    "estimate_expectation",
    "mismatch_from_coords",
    "orthogonal_completion",
    "star_function",
    "truncate_observable",
    "duality_defect",
    "exact_inverse",
    "exact_inverse_deviation",
    "basis_to_json",
    "basis_from_json",
    "COND_WARN",
    "RADICAND_TOL",
]

COND_WARN = 1e12
RADICAND_TOL = 1e-8
# below this fraction of |b|^2 the mismatch is recomputed from the explicit residual
_CANCELLATION_RATIO = 1e-6


@dataclass(frozen=True, eq=False)
class CoordinateVector:
    """Coordinates of an operator or a state over an index set.

    ``samples`` is set for empirical click frequencies, in which case the
    sampling covariance is the multinomial one.  ``variance`` holds
    independent per-entry variances when only those are known.
    """

    values: np.ndarray
    kind: str
    indices: tuple[int, ...]
    variance: np.ndarray | None = None
    samples: int | None = None

    def __post_init__(self):
        if self.kind not in ("covariant", "contravariant"):
            raise ValueError(f"unknown coordinate kind {self.kind!r}")
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if len(values) != len(self.indices):
            raise ValueError("values and indices differ in length")
        if self.variance is not None:
            var = np.asarray(self.variance, dtype=np.float64)
            if var.shape != values.shape:
                raise ValueError("variance must match values")
            object.__setattr__(self, "variance", var)

    @classmethod
    def probabilities(cls, probs: Sequence[float], samples: int | None = None) -> "CoordinateVector":
        """Outcome probabilities (or frequencies) as covariant coordinates of the state."""
        p = np.asarray(probs, dtype=np.float64)
        return cls(p, "covariant", tuple(range(len(p))), samples=samples)

    def restricted_to(self, indices: Sequence[int]) -> np.ndarray:
        lookup = dict(zip(self.indices, self.values))
        try:
            return np.array([lookup[i] for i in indices], dtype=np.float64)
        except KeyError as exc:
            raise ValueError(f"coordinate for index {exc.args[0]} missing") from None


@dataclass(frozen=True, eq=False)
class EstimationReport:
    estimate: float
    hs_mismatch: float
    error_bound: float
    statistical_error: float | None = None


@dataclass(frozen=True, eq=False)
class MeasurementBasis:
    """A POVM with its metric tensors and dual (COVM) elements.

    ``g_cov`` and ``g_contr`` are indexed by ``effective_set``.  ``covm`` runs
    over the full index set; removed indices carry the zero operator.
    ``complete`` records whether the POVM resolves the identity, which is what
    allows bounded observables with a constant asymptote to be expanded.

    ``duals`` is ``"gram"`` when the dual elements come from inverting the
    Gram matrix of the listed elements, so that expansions are orthogonal
    projections onto their span.  It is ``"closed_form"`` when the listed
    elements are a finite window of an infinite POVM and the dual elements
    (and ``g_contr``) are the exact ones of the infinite family.
    """

    povm: tuple[DiagonalOperator, ...]
    g_cov: np.ndarray
    g_contr: np.ndarray
    covm: tuple[DiagonalOperator, ...]
    effective_set: tuple[int, ...]
    removed: tuple[int, ...]
    condition_number: float
    complete: bool = True
    metadata: dict = field(default_factory=dict)
    duals: str = "gram"

    @property
    def index_set(self) -> tuple[int, ...]:
        return tuple(range(len(self.povm)))

    def g_contr_full(self) -> np.ndarray:
        """Contravariant metric over the full index set, zero on removed rows and columns."""
        n = len(self.povm)
        out = np.zeros((n, n))
        eff = np.array(self.effective_set)
        out[np.ix_(eff, eff)] = self.g_contr
        return out

    def povm_matrix(self, dim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Effective POVM diagonals stacked row-wise on a common window, plus their tails."""
        ops = [self.povm[i].to_float() for i in self.effective_set]
        if dim is None:
            dim = common_window(ops)
        rows = [op.restricted(dim) for op in ops]
        return np.vstack([r.diag for r in rows]), np.array([r.tail_bound for r in rows])


def common_window(ops: Iterable[DiagonalOperator]) -> int:
    """Largest window every operand can be placed on without extrapolating an unknown tail."""
    ops = list(ops)
    open_ended = [op.truncation_dim for op in ops if op.tail_bound != 0]
    if open_ended:
        return min(open_ended)
    return max(op.truncation_dim for op in ops)


def _pivoted_cholesky_inverse(g: np.ndarray) -> np.ndarray:
    n = g.shape[0]
    factor, piv, rank, info = lapack.dpstrf(g, lower=1)
    if info < 0:
        raise ValueError(f"dpstrf argument error {info}")
    if rank < n:
        cond = float(np.linalg.cond(g))
        raise DegeneratePOVMError(
            f"restricted covariant metric has numerical rank {rank} < {n}", cond
        )
    lower = np.tril(factor)
    perm = piv - 1
    # g[perm][:, perm] = L L^T
    linv = solve_triangular(lower, np.eye(n), lower=True)
    inv_perm = linv.T @ linv
    inv = np.empty_like(inv_perm)
    inv[np.ix_(perm, perm)] = inv_perm
    return inv


def invert_metric(g: np.ndarray, *, warn_threshold: float = COND_WARN) -> tuple[np.ndarray, float]:
    """Invert a symmetric positive-definite metric.

    Pivoted Cholesky followed by one step of iterative refinement.  Returns
    the inverse and the 2-norm condition number.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape[0] != g.shape[1]:
        raise ValueError("metric must be square")
    if not np.allclose(g, g.T, rtol=1e-12, atol=0):
        raise ValueError("metric must be symmetric")
    if not np.all(np.isfinite(g)):
        raise DegeneratePOVMError("metric has non-finite entries", math.inf)
    cond = float(np.linalg.cond(g))
    if not math.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise DegeneratePOVMError("restricted covariant metric is numerically singular", cond)
    inv = _pivoted_cholesky_inverse(g)
    eye = np.eye(g.shape[0])
    inv = inv + inv @ (eye - g @ inv)
    inv = 0.5 * (inv + inv.T)
    if cond > warn_threshold:
        warnings.warn(f"metric condition number {cond:.3e} exceeds {warn_threshold:.0e}", ConditioningWarning, stacklevel=3)
    return inv, cond


def _check_resolution(povm: Sequence[DiagonalOperator], tol: float) -> None:
    dim = min(op.truncation_dim for op in povm)
    total = np.zeros(dim)
    for op in povm:
        total += np.asarray(op.diag[:dim], dtype=np.float64)
    err = float(np.max(np.abs(total - 1.0)))
    if err > tol:
        raise ValueError(f"POVM does not resolve the identity (max deviation {err:.3e})")


def build_basis(
    povm: Sequence[DiagonalOperator],
    *,
    g_cov: np.ndarray | None = None,
    g_contr: np.ndarray | None = None,
    check_resolution: bool = True,
    resolution_tol: float = 1e-10,
    warn_threshold: float = COND_WARN,
    metadata: dict | None = None,
) -> MeasurementBasis:
    """Construct the dual basis of a diagonal POVM.

    Args:
        povm: the elements; at most one may lie outside the HS class, and
            that one is removed from the effective index set.
        g_cov: the covariant metric over the effective set if known in closed
            form; otherwise it is computed from the windowed diagonals.
        g_contr: its inverse, when it is available more accurately than a
            double-precision inversion would give.  It is checked against
            ``g_cov`` before use.
        check_resolution: require the elements to sum to the identity on
            their common window.  Finite sections of infinite POVMs turn this
            off and are marked incomplete.

    Raises:
        DegeneratePOVMError: the restricted metric is singular.
    """
    povm = tuple(povm)
    if not povm:
        raise ValueError("empty POVM")
    if check_resolution:
        _check_resolution(povm, resolution_tol)
    removed = tuple(i for i, op in enumerate(povm) if not op.is_hs)
    if len(removed) > 1:
        raise ValueError(f"more than one non-HS element: indices {removed}")
    effective = tuple(i for i in range(len(povm)) if i not in removed)
    if not effective:
        raise DegeneratePOVMError("no Hilbert-Schmidt elements", math.inf)

    if g_cov is None:
        size = len(effective)
        g_cov = np.empty((size, size))
        for a, i in enumerate(effective):
            for b, j in enumerate(effective[a:], start=a):
                g_cov[a, b] = g_cov[b, a] = float(hs_inner(povm[i], povm[j]))
    else:
        g_cov = np.array(g_cov, dtype=np.float64)
        if g_cov.shape != (len(effective), len(effective)):
            raise ValueError("supplied metric does not match the effective index set")
    if g_contr is None:
        g_contr, cond = invert_metric(g_cov, warn_threshold=warn_threshold)
    else:
        g_contr = np.array(g_contr, dtype=np.float64)
        cond = float(np.linalg.cond(g_cov))
        resid = float(np.max(np.abs(g_contr @ g_cov - np.eye(len(effective)))))
        if resid > 1e-6:
            raise InconsistentMetricError(f"supplied contravariant metric is not the inverse (residual {resid:.3e})")
        if cond > warn_threshold:
            warnings.warn(f"metric condition number {cond:.3e} exceeds {warn_threshold:.0e}", ConditioningWarning, stacklevel=2)

    proto = MeasurementBasis(povm, g_cov, g_contr, (), effective, removed, cond, check_resolution)
    rows, tails = proto.povm_matrix()
    dual = g_contr @ rows
    dual_tails = np.abs(g_contr) @ tails
    covm: list[DiagonalOperator] = []
    pos = {idx: a for a, idx in enumerate(effective)}
    for i in range(len(povm)):
        if i in pos:
            a = pos[i]
            covm.append(DiagonalOperator(dual[a], float(dual_tails[a]), 0.0, f"covm[{i}]"))
        else:
            covm.append(DiagonalOperator(np.zeros(rows.shape[1]), 0.0, 0.0, f"covm[{i}]"))

    g_cov.flags.writeable = False
    g_contr.flags.writeable = False
    return MeasurementBasis(
        povm, g_cov, g_contr, tuple(covm), effective, removed, cond, check_resolution, dict(metadata or {})
    )


def duality_defect(basis: MeasurementBasis) -> float:
    """Largest ``|Tr(Pi^n Pi_m) - delta|`` over the effective set.

    Removed indices are skipped: their dual element is zero by construction.
    """
    worst = 0.0
    for n in basis.effective_set:
        for m in basis.effective_set:
            value = hs_inner(basis.covm[n], basis.povm[m])
            worst = max(worst, abs(float(value - (n == m))))
    return worst


def raise_indices(basis: MeasurementBasis, cov: CoordinateVector) -> CoordinateVector:
    """Contravariant coordinates ``B^n = sum_m g^{nm} B_m`` over the effective set."""
    if cov.kind != "covariant":
        raise ValueError("raise_indices expects covariant coordinates")
    values = cov.restricted_to(basis.effective_set)
    return CoordinateVector(basis.g_contr @ values, "contravariant", basis.effective_set)


def covariant_coords(basis: MeasurementBasis, b: DiagonalOperator, *, formal: bool = False) -> CoordinateVector:
    """``B_n = Tr(Pi_n B)`` over the effective set.

    ``formal=True`` accepts bounded operators outside the HS class; the
    windowed sum then equals the trace because the POVM elements are trace
    class.
    """
    if not formal and not b.is_hs:
        raise NotHSClassError("observable is not HS-class; truncate first")
    values = [float(hs_inner(basis.povm[i], b, formal=formal)) for i in basis.effective_set]
    return CoordinateVector(np.array(values), "covariant", basis.effective_set)


def _hs_part(basis: MeasurementBasis, b: DiagonalOperator) -> tuple[DiagonalOperator, float]:
    """Split ``b = c 1 + h`` with ``h`` HS-class; returns ``(h, c)``."""
    if b.is_hs:
        return b.to_float(), 0.0
    if b.asymptote is None or not math.isfinite(b.tail_bound):
        raise NotHSClassError("observable is not HS-class; truncate first")
    if not basis.complete:
        raise NotHSClassError("observable with nonzero asymptote needs a POVM that resolves the identity")
    c = float(b.asymptote)
    hs = DiagonalOperator(np.asarray(b.diag, dtype=np.float64) - c, b.tail_bound, 0.0, b.label)
    return hs, c


def contravariant_coords(
    basis: MeasurementBasis,
    b: DiagonalOperator,
    *,
    include_removed: bool = False,
) -> CoordinateVector:
    """``B^n = Tr(Pi^n B)``.

    Bounded observables that tend to a constant ``c`` are handled through
    ``B = c 1 + H``: the identity has all coordinates equal to one, so
    ``B^n = c + Tr(Pi^n H)``, and the removed index gets ``c``.
    """
    hs, c = _hs_part(basis, b)
    values = _dual_dot(basis, hs) + c
    indices = basis.effective_set
    if include_removed:
        full = np.empty(len(basis.povm))
        full[list(basis.effective_set)] = values
        full[list(basis.removed)] = c
        values, indices = full, basis.index_set
    return CoordinateVector(values, "contravariant", indices)


def _dual_dot(basis: MeasurementBasis, h: DiagonalOperator) -> np.ndarray:
    dual = [basis.covm[i] for i in basis.effective_set]
    dim = common_window(dual + [h])
    rows = np.vstack([op.restricted(dim).diag for op in dual])
    return rows @ h.restricted(dim).diag


def mismatch_from_coords(norm_sq: float, cov: np.ndarray, contr: np.ndarray, *, tol: float = RADICAND_TOL) -> float:
    """``sqrt(|B|^2 - sum_n B_n B^n)`` with round-off clamping.

    Raises:
        InconsistentMetricError: the radicand is below ``-tol``.
    """
    radicand = norm_sq - math.fsum(np.asarray(cov) * np.asarray(contr))
    if radicand < -tol:
        raise InconsistentMetricError(f"negative mismatch radicand {radicand:.3e}")
    return math.sqrt(max(radicand, 0.0))


def _residual(basis: MeasurementBasis, hs: DiagonalOperator, contr: np.ndarray) -> DiagonalOperator:
    ops = [basis.povm[i] for i in basis.effective_set]
    dim = common_window(ops + [hs])
    rows, tails = basis.povm_matrix(dim)
    h = hs.restricted(dim)
    diag = h.diag - contr @ rows
    tail = h.tail_bound + float(np.abs(contr) @ tails)
    return DiagonalOperator(diag, tail, 0.0, "residual")


def _mismatch(basis: MeasurementBasis, hs: DiagonalOperator, contr: np.ndarray) -> float:
    norm_sq = float(hs_inner(hs, hs))
    cov = covariant_coords(basis, hs).values
    radicand = norm_sq - math.fsum(cov * contr)
    if radicand < -RADICAND_TOL:
        raise InconsistentMetricError(f"negative mismatch radicand {radicand:.3e}")
    if basis.duals == "gram" and radicand < _CANCELLATION_RATIO * norm_sq:
        # the closed form has cancelled to round-off; the residual is better conditioned
        return hs_norm(_residual(basis, hs, contr))
    return math.sqrt(radicand)


def estimate_expectation(
    basis: MeasurementBasis,
    b: DiagonalOperator,
    stats: CoordinateVector,
) -> EstimationReport:
    """Estimate ``<B>`` from outcome probabilities as ``sum_n B^n p_n``.

    ``stats`` may cover the full index set or only the effective one.  The
    systematic error bound is the HS norm of the part of ``B`` orthogonal to
    the POVM span.  With ``stats.samples`` set, the statistical error uses
    the full multinomial covariance.
    """
    if stats.kind != "covariant":
        raise ValueError("statistics must be covariant coordinates (outcome probabilities)")
    if np.any(stats.values < -1e-12):
        raise ValueError("probabilities must be non-negative")
    if stats.values.sum() > 1 + 1e-8:
        raise ValueError("probabilities sum to more than one")
    hs, c = _hs_part(basis, b)
    coords = contravariant_coords(basis, b, include_removed=True)
    covered = [i for i in coords.indices if i in set(stats.indices)]
    missing = [i for i in coords.indices if i not in set(stats.indices)]
    if any(i not in basis.removed for i in missing):
        raise ValueError(f"statistics lack effective outcomes {missing}")
    if missing and c != 0:
        raise ValueError("observable has a constant part; statistics must include every outcome")
    weights = coords.restricted_to(covered)
    probs = stats.restricted_to(covered)
    estimate = math.fsum(weights * probs)
    contr_eff = coords.restricted_to(basis.effective_set)
    mismatch = _mismatch(basis, hs, contr_eff - c)

    stat = None
    if stats.samples:
        second = math.fsum(weights**2 * probs)
        stat = math.sqrt(max(second - estimate**2, 0.0) / stats.samples)
    elif stats.variance is not None:
        var = CoordinateVector(stats.variance, "covariant", stats.indices).restricted_to(covered)
        stat = math.sqrt(math.fsum(weights**2 * var))
    return EstimationReport(estimate, mismatch, mismatch, stat)


def orthogonal_completion(basis: MeasurementBasis, b: DiagonalOperator) -> DiagonalOperator:
    """``R = B - sum_n B^n Pi_n``, the part of ``B`` outside the POVM span."""
    if not b.is_hs:
        raise NotHSClassError("observable is not HS-class; truncate first")
    contr = contravariant_coords(basis, b).values
    return _residual(basis, b.to_float(), contr)


def star_function(
    basis: MeasurementBasis,
    c: DiagonalOperator,
    f: Callable[[float], float],
) -> DiagonalOperator:
    """``sum_n f(C^n) Pi_n`` over the full index set."""
    coords = contravariant_coords(basis, c, include_removed=True).values
    total = None
    for weight, op in zip(coords, basis.povm):
        term = op.to_float() * float(f(weight))
        total = term if total is None else total + term
    total = DiagonalOperator(total.diag, total.tail_bound, total.asymptote, f"star({c.label})")
    return total


def truncate_observable(
    b_spec: Callable[[int], float],
    M: int,
    truncation_dim: int | None = None,
    *,
    exact: bool = False,
) -> DiagonalOperator:
    """Keep ``b_spec(k)`` for ``k <= M`` and zero the rest."""
    if M < 0:
        raise ValueError("M must be non-negative")
    dim = max(M + 1, truncation_dim or 0)
    if exact:
        diag = np.array([Fraction(b_spec(k)) if k <= M else Fraction(0) for k in range(dim)], dtype=object)
    else:
        diag = np.array([float(b_spec(k)) if k <= M else 0.0 for k in range(dim)])
    return DiagonalOperator(diag, 0.0, 0, f"truncated(M={M})")


def exact_inverse(matrix: Sequence[Sequence]) -> list[list[Fraction]]:
    """Gauss-Jordan inverse in rational arithmetic."""
    n = len(matrix)
    aug = [[Fraction(x) for x in row] + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(matrix)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if pivot is None:
            raise DegeneratePOVMError("exact metric is singular", math.inf)
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv_p = 1 / aug[col][col]
        aug[col] = [x * inv_p for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col]
                aug[r] = [x - factor * y for x, y in zip(aug[r], aug[col])]
    return [row[n:] for row in aug]


def exact_inverse_deviation(basis: MeasurementBasis, exact_g_cov: Sequence[Sequence]) -> float:
    """Largest relative deviation of the floating contravariant metric from the exact inverse."""
    exact = exact_inverse(exact_g_cov)
    ref = np.array([[float(x) for x in row] for row in exact])
    scale = np.max(np.abs(ref))
    return float(np.max(np.abs(basis.g_contr - ref)) / scale)


def _op_to_json(op: DiagonalOperator) -> dict:
    return {
        "diag": [float(x) for x in op.diag],
        "tail_bound": op.tail_bound if math.isfinite(op.tail_bound) else None,
        "asymptote": None if op.asymptote is None else float(op.asymptote),
        "label": op.label,
    }


def _op_from_json(doc: dict) -> DiagonalOperator:
    tail = math.inf if doc["tail_bound"] is None else doc["tail_bound"]
    return DiagonalOperator(np.array(doc["diag"], dtype=np.float64), tail, doc["asymptote"], doc.get("label", ""))


def basis_to_json(basis: MeasurementBasis) -> dict:
    """JSON-compatible document; infinities are encoded as ``null``."""
    return {
        "index_set": list(basis.index_set),
        "effective_set": list(basis.effective_set),
        "removed": list(basis.removed),
        "complete": basis.complete,
        "condition_number": basis.condition_number,
        "g_cov": basis.g_cov.tolist(),
        "g_contr": basis.g_contr.tolist(),
        "povm": [_op_to_json(op) for op in basis.povm],
        "covm": [_op_to_json(op) for op in basis.covm],
        "metadata": basis.metadata,
        "duals": basis.duals,
    }


def basis_from_json(doc: dict) -> MeasurementBasis:
    g_cov = np.array(doc["g_cov"], dtype=np.float64)
    g_contr = np.array(doc["g_contr"], dtype=np.float64)
    g_cov.flags.writeable = False
    g_contr.flags.writeable = False
    return MeasurementBasis(
        povm=tuple(_op_from_json(d) for d in doc["povm"]),
        g_cov=g_cov,
        g_contr=g_contr,
        covm=tuple(_op_from_json(d) for d in doc["covm"]),
        effective_set=tuple(doc["effective_set"]),
        removed=tuple(doc["removed"]),
        condition_number=float(doc["condition_number"]),
        complete=bool(doc.get("complete", True)),
        metadata=dict(doc.get("metadata", {})),
        duals=doc.get("duals", "gram"),
    )
