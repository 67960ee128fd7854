"""Lossy photoelectric counting without dark counts.

With efficiency ``eta`` the outcome-``n`` element has diagonal
``C(k, n) eta^n (1 - eta)^(k - n)``.  Its dual family has finite support,
``C(n, k) (eta - 1)^(n - k) / eta^n`` for ``k <= n``, so every catalogue
coordinate is a finite sum.  All closed forms are available in floating point
and, by passing ``exact=True``, in rational arithmetic (a float ``eta`` is
converted to the rational number it represents exactly).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numpy.polynomial import legendre
from scipy.special import j0
from scipy.stats import binom, poisson

from .errors import ConditioningWarning, NotApplicableError, NotHSClassError
from .fockops import DiagonalOperator, MIN_TRUNCATION, DEFAULT_TAIL_TOL, binomial
from .geometry import CoordinateVector, MeasurementBasis, build_basis

__all__ = [
    "PhotocountingModel",
    "pc_povm_element",
    "pc_povm",
    "pc_metric_cov",
    "pc_metric_contr",
    "pc_metric_matrices",
    "pc_covm_element",
    "pc_duality_defect",
    "pc_covm_laguerre_diag",
    "pc_covm_q_symbol",
    "laguerre",
    "laguerre_coefficients",
    "pc_click_operator",
    "pc_contravariant_catalog",
    "pc_efficiency_transform",
    "pc_efficiency_matrix",
    "pc_basis",
    "trace_formula_check",
    "CATALOG_KINDS",
]

CATALOG_KINDS = (
    "number",
    "click_operator",
    "exp_generating",
    "moment",
    "normal_exp_generating",
    "normal_moment",
    "lossless_projector",
)


@dataclass(frozen=True)
class PhotocountingModel:
    """Detection efficiency ``eta`` in (0, 1] and dark-count intensity ``nu``.

    Only ``nu == 0`` has closed forms; every function here rejects ``nu > 0``.
    """

    eta: float | Fraction
    nu: float = 0.0

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.nu < 0:
            raise ValueError(f"nu must be non-negative, got {self.nu}")

    def require_closed_form(self) -> None:
        if self.nu > 0:
            raise ValueError("photocounting closed forms are only available for nu = 0")

    def efficiency(self, exact: bool):
        return Fraction(self.eta) if exact else float(self.eta)


def _pc_entry(eta, n: int, k: int):
    if k < n:
        return 0
    return binomial(k, n) * eta**n * (1 - eta) ** (k - n)


def _pc_tail(eta: float, n: int, start: int) -> float:
    """Bound on the l2 norm of the POVM diagonal over ``k >= start``."""
    if eta == 1:
        return 1.0 if start <= n else 0.0
    # successive ratios (1-eta)(k+1)/(k+1-n) decrease in k; beyond k1 they stay below q
    k1 = max(start, int(math.ceil((n + 1) / eta)) + 1)
    explicit = binom.pmf(n, np.arange(start, k1), eta) if k1 > start else np.zeros(0)
    q = (1 - eta) * (k1 + 1) / (k1 + 1 - n)
    head = float(binom.pmf(n, k1, eta))
    rest = head / math.sqrt(1 - q * q)
    return math.hypot(float(np.linalg.norm(explicit)), rest)


def _pc_window(eta: float, n: int, tol: float = DEFAULT_TAIL_TOL) -> int:
    dim = max(MIN_TRUNCATION, n + 1)
    while _pc_tail(eta, n, dim) >= tol:
        dim = int(dim * 1.5) + 1
    return dim


def pc_povm_element(
    model: PhotocountingModel,
    n: int,
    truncation_dim: int | None = None,
    *,
    exact: bool = False,
) -> DiagonalOperator:
    """Outcome-``n`` element; the default window certifies a tail below 1e-12."""
    model.require_closed_form()
    if n < 0:
        raise ValueError("n must be non-negative")
    eta_f = float(model.eta)
    dim = truncation_dim or _pc_window(eta_f, n)
    if exact:
        eta = model.efficiency(True)
        diag = np.array([Fraction(_pc_entry(eta, n, k)) for k in range(dim)], dtype=object)
    else:
        diag = binom.pmf(n, np.arange(dim), eta_f)
    return DiagonalOperator(diag, _pc_tail(eta_f, n, dim), 0, f"Pi_{n}(eta={eta_f:g})")


def pc_povm(
    model: PhotocountingModel,
    n_max: int,
    truncation_dim: int | None = None,
    *,
    exact: bool = False,
) -> list[DiagonalOperator]:
    """Elements ``0 .. n_max - 1`` on a shared window."""
    dim = truncation_dim or _pc_window(float(model.eta), n_max - 1)
    return [pc_povm_element(model, n, dim, exact=exact) for n in range(n_max)]


def _sum(terms, exact: bool):
    terms = list(terms)
    if exact:
        return sum(terms, Fraction(0))
    return math.fsum(terms)


def pc_metric_cov(model: PhotocountingModel, n: int, m: int, *, exact: bool = False):
    """Closed-form ``Tr(Pi_n Pi_m)``."""
    model.require_closed_form()
    eta = model.efficiency(exact)
    one = Fraction(1) if exact else 1.0
    terms = (
        one
        * math.factorial(k)
        / (math.factorial(k - n) * math.factorial(k - m) * math.factorial(n + m - k))
        * (1 - eta) ** (2 * k - n - m)
        * eta ** (n + m - 1 - k)
        / (2 - eta) ** (k + 1)
        for k in range(max(n, m), n + m + 1)
    )
    return _sum(terms, exact)


def pc_metric_contr(model: PhotocountingModel, n: int, m: int, *, exact: bool = False):
    """Closed-form contravariant metric of the infinite family."""
    model.require_closed_form()
    eta = model.efficiency(exact)
    if not exact and eta < 1e-3:
        warnings.warn(f"eta = {eta:g}: contravariant metric entries grow like eta^-(n+m)", ConditioningWarning, stacklevel=2)
    terms = (
        binomial(n, k) * binomial(m, k) * (eta - 1) ** (n + m - 2 * k) / eta ** (n + m)
        for k in range(min(n, m) + 1)
    )
    return _sum(terms, exact)


def pc_metric_matrices(model: PhotocountingModel, size: int, *, exact: bool = False):
    """Sections ``[0, size)`` of the covariant and contravariant metrics."""
    cov = [[pc_metric_cov(model, n, m, exact=exact) for m in range(size)] for n in range(size)]
    contr = [[pc_metric_contr(model, n, m, exact=exact) for m in range(size)] for n in range(size)]
    if exact:
        return cov, contr
    return np.array(cov), np.array(contr)


def pc_covm_element(
    model: PhotocountingModel,
    n: int,
    truncation_dim: int | None = None,
    *,
    exact: bool = False,
) -> DiagonalOperator:
    """Dual element of outcome ``n``; supported on ``k <= n``."""
    model.require_closed_form()
    eta = model.efficiency(exact)
    dim = max(n + 1, truncation_dim or 0)
    vals = [
        binomial(n, k) * (eta - 1) ** (n - k) / eta**n if k <= n else 0
        for k in range(dim)
    ]
    if exact:
        diag = np.array([Fraction(v) for v in vals], dtype=object)
    else:
        diag = np.array(vals, dtype=np.float64)
    return DiagonalOperator(diag, 0.0, 0, f"Pi^{n}(eta={float(model.eta):g})")


def pc_duality_defect(model: PhotocountingModel, size: int, *, exact: bool = True) -> float:
    """Largest ``|Tr(Pi^n Pi_m) - delta|`` for ``n, m < size``.

    The dual elements have finite support, so the traces are finite sums.
    In rational arithmetic they are exact; in floating point the alternating
    terms lose accuracy quickly for small efficiencies.
    """
    worst = 0.0
    for n in range(size):
        dual = pc_covm_element(model, n, exact=exact).diag
        for m in range(size):
            elem = pc_povm_element(model, m, n + 1, exact=exact).diag
            value = _sum((dual[k] * elem[k] for k in range(n + 1)), exact)
            worst = max(worst, abs(float(value - (n == m))))
    return worst


def laguerre_coefficients(n: int) -> list[Fraction]:
    """Power-series coefficients of the Laguerre polynomial, by the three-term recurrence."""
    prev, cur = [Fraction(0)], [Fraction(1)]
    for j in range(n):
        # (j+1) L_{j+1} = (2j+1 - y) L_j - j L_{j-1}
        nxt = [Fraction(0)] * (j + 2)
        for i, c in enumerate(cur):
            nxt[i] += (2 * j + 1) * c
            nxt[i + 1] -= c
        for i, c in enumerate(prev):
            nxt[i] -= j * c
        prev, cur = cur, [c / (j + 1) for c in nxt]
    return cur


def laguerre(n: int, x):
    """Laguerre polynomial evaluated by the three-term recurrence."""
    x = np.asarray(x, dtype=np.float64)
    prev, cur = np.zeros_like(x), np.ones_like(x)
    for j in range(n):
        prev, cur = cur, ((2 * j + 1 - x) * cur - j * prev) / (j + 1)
    return cur


def pc_covm_laguerre_diag(model: PhotocountingModel, n: int, truncation_dim: int | None = None) -> np.ndarray:
    """Dual-element diagonal read off the normal-ordered Laguerre form.

    For ``:f(n):`` with ``f(y) = sum_j c_j y^j`` the diagonal is ``k! c_k``.
    """
    model.require_closed_form()
    eta = float(model.eta)
    if eta == 1:
        raise ValueError("the Laguerre form is singular at eta = 1")
    coeffs = laguerre_coefficients(n)
    dim = max(n + 1, truncation_dim or 0)
    pref = ((eta - 1) / eta) ** n
    out = np.zeros(dim)
    for k, c in enumerate(coeffs):
        out[k] = pref * float(math.factorial(k) * c) / (1 - eta) ** k
    return out


def pc_covm_q_symbol(model: PhotocountingModel, n: int, x):
    """``<alpha|Pi^n|alpha>`` as a function of ``x = |alpha|^2``."""
    model.require_closed_form()
    eta = float(model.eta)
    x = np.asarray(x, dtype=np.float64)
    if eta == 1:
        return np.exp(-x) * x**n / math.factorial(n)
    return ((eta - 1) / eta) ** n * np.exp(-x) * laguerre(n, x / (1 - eta))


def pc_click_operator(model: PhotocountingModel, truncation_dim: int, *, exact: bool = False) -> DiagonalOperator:
    """``sum_n n Pi_n`` evaluated on a window (only ``n <= k`` contribute to entry ``k``)."""
    ops = pc_povm(model, truncation_dim, truncation_dim, exact=exact)
    total = np.zeros(truncation_dim, dtype=object if exact else np.float64)
    for n, op in enumerate(ops):
        total = total + n * op.diag
    return DiagonalOperator(total, math.inf, None, "photocount operator")


def pc_contravariant_catalog(
    model: PhotocountingModel,
    kind: str,
    param: float | int | None = None,
    n_max: int = 15,
    *,
    exact: bool = False,
) -> CoordinateVector:
    """Closed-form ``B^n`` for ``n < n_max`` of the catalogued observables.

    Kinds: ``number`` (photon number), ``click_operator`` (sum of outcomes
    times elements), ``exp_generating`` (``exp(t n)``), ``moment``
    (``n^m``), ``normal_exp_generating`` (``:exp(t n):``), ``normal_moment``
    (``:n^m:``) and ``lossless_projector`` (``|m><m|``).  With
    ``exact=True`` a plain list of fractions is returned instead.
    """
    model.require_closed_form()
    eta = model.efficiency(exact)
    ns = range(n_max)
    if kind == "number":
        vals = [n / eta for n in ns]
    elif kind == "click_operator":
        vals = [n for n in ns]
    elif kind == "exp_generating":
        if exact:
            raise ValueError("exp_generating has no rational form")
        vals = [(1 + math.expm1(param) / eta) ** n for n in ns]
    elif kind == "moment":
        m = int(param)
        vals = [
            _sum((k**m * binomial(n, k) * (eta - 1) ** (n - k) / eta**n for k in range(n + 1)), exact)
            for n in ns
        ]
    elif kind == "normal_exp_generating":
        t = Fraction(param) if exact else float(param)
        vals = [(1 + t / eta) ** n for n in ns]
    elif kind == "normal_moment":
        m = int(param)
        vals = [
            Fraction(math.factorial(n), math.factorial(n - m)) / eta**m if n >= m else 0
            for n in ns
        ] if exact else [
            math.factorial(n) / (eta**m * math.factorial(n - m)) if n >= m else 0.0 for n in ns
        ]
    elif kind == "lossless_projector":
        m = int(param)
        vals = [binomial(n, m) * (eta - 1) ** (n - m) / eta**n if n >= m else 0 for n in ns]
    else:
        raise ValueError(f"unknown observable kind {kind!r}; expected one of {CATALOG_KINDS}")
    if exact:
        return [Fraction(v) for v in vals]
    return CoordinateVector(np.array(vals, dtype=np.float64), "contravariant", tuple(ns))


def pc_efficiency_transform(eta_from, eta_to, m: int, n: int, *, exact: bool = False):
    """``Tr(Pi^n(eta_from) Pi_m(eta_to))``: re-expresses counts at ``eta_from`` as counts at ``eta_to``."""
    for e in (eta_from, eta_to):
        if not 0 < e <= 1:
            raise ValueError(f"efficiencies must lie in (0, 1], got {e}")
    if n < m:
        return Fraction(0) if exact else 0.0
    if exact:
        a, b = Fraction(eta_from), Fraction(eta_to)
    else:
        a, b = float(eta_from), float(eta_to)
    return binomial(n, m) * b**m * (a - b) ** (n - m) / a**n


def pc_efficiency_matrix(eta_from, eta_to, size: int, *, exact: bool = False):
    """Rows ``m`` (target outcome), columns ``n`` (source outcome)."""
    rows = [[pc_efficiency_transform(eta_from, eta_to, m, n, exact=exact) for n in range(size)] for m in range(size)]
    return rows if exact else np.array(rows, dtype=np.float64)


def pc_basis(
    model: PhotocountingModel,
    n_max: int,
    truncation_dim: int | None = None,
    *,
    duals: str = "closed_form",
) -> MeasurementBasis:
    """Measurement basis for the outcomes ``0 .. n_max - 1``.

    ``duals="closed_form"`` attaches the exact dual elements and metric of the
    infinite POVM (coordinates then agree with the catalogue).
    ``duals="gram"`` treats the window as a POVM of its own and inverts its
    Gram matrix, which gives the orthogonal projection onto its span.
    """
    model.require_closed_form()
    povm = pc_povm(model, n_max, truncation_dim)
    g_cov, g_contr = pc_metric_matrices(model, n_max)
    meta = {"family": "photocounting", "eta": float(model.eta), "n_max": n_max}
    if duals == "gram":
        return build_basis(povm, g_cov=g_cov, check_resolution=False, metadata=meta)
    if duals != "closed_form":
        raise ValueError(f"unknown duals {duals!r}")
    dim = povm[0].truncation_dim
    covm = tuple(pc_covm_element(model, n, dim) for n in range(n_max))
    g_cov.flags.writeable = False
    g_contr.flags.writeable = False
    return MeasurementBasis(
        povm=tuple(povm),
        g_cov=g_cov,
        g_contr=g_contr,
        covm=covm,
        effective_set=tuple(range(n_max)),
        removed=(),
        condition_number=float(np.linalg.cond(g_cov)),
        complete=True,
        metadata=meta,
        duals="closed_form",
    )


# Phase-space trace formula ---------------------------------------------------

_GL_NODES = 600


def _q_symbol(op: DiagonalOperator, x: np.ndarray) -> np.ndarray:
    k = np.arange(op.truncation_dim)
    return poisson.pmf(k[:, None], x[None, :]).T @ np.asarray(op.diag, dtype=np.float64)


def _radial_cut(op: DiagonalOperator) -> float:
    """Radius beyond which the Q symbol is negligible."""
    r = np.linspace(0, 40, 4001)
    q = np.abs(_q_symbol(op, r**2))
    peak = q.max()
    if peak == 0:
        return 1.0
    tail_max = np.maximum.accumulate(q[::-1])[::-1]
    beyond = np.nonzero(tail_max < 1e-16 * peak)[0]
    if len(beyond) == 0:
        raise NotApplicableError("Q symbol does not decay fast enough")
    return float(r[beyond[0]])


def _char_q(op: DiagonalOperator, rho: np.ndarray) -> np.ndarray:
    """Radial Hankel transform ``(2/pi) int r Q(r^2) J0(2 r rho) dr`` by Gauss-Legendre."""
    cut = _radial_cut(op)
    nodes, weights = legendre.leggauss(_GL_NODES)
    r = 0.5 * cut * (nodes + 1)
    w = 0.5 * cut * weights
    q = _q_symbol(op, r**2)
    kernel = j0(2.0 * np.outer(rho, r))
    return (2.0 / math.pi) * kernel @ (w * r * q)


def trace_formula_check(a: DiagonalOperator, b: DiagonalOperator) -> float:
    """``Tr(A B)`` from the characteristic functions of the Q symbols.

    For diagonal operators the phase-space integral reduces to
    ``2 pi^2 int rho A(rho) B(rho) exp(rho^2) d rho`` with radial transforms
    ``A``, ``B``.  This is an independent route to :func:`hs_inner`.

    Raises:
        NotApplicableError: the integrand does not decay within the range
            where it can be evaluated reliably.
    """
    for op in (a, b):
        if not op.is_hs:
            raise NotHSClassError(f"{op.label or 'operand'} is not HS-class")
        if op.tail_bound > 1e-12:
            raise NotApplicableError("operand window does not resolve its Q symbol")
    grid = np.linspace(0, 8, 801)
    f = grid * _char_q(a, grid) * _char_q(b, grid) * np.exp(grid**2)
    peak = np.max(np.abs(f))
    below = np.nonzero(np.abs(f) < 1e-13 * peak)[0]
    below = below[below > int(np.argmax(np.abs(f)))]
    if len(below) == 0:
        raise NotApplicableError("trace-formula integrand does not decay")
    cut = float(grid[below[0]])
    nodes, weights = legendre.leggauss(200)

    def integral(upper: float) -> float:
        rho = 0.5 * upper * (nodes + 1)
        vals = rho * _char_q(a, rho) * _char_q(b, rho) * np.exp(rho**2)
        return 2 * math.pi**2 * float(0.5 * upper * weights @ vals)

    value = integral(cut)
    check = integral(cut * 1.15)
    if abs(check - value) > 1e-9 * max(1.0, abs(value)):
        raise NotApplicableError("trace-formula integral is not stable under the cutoff")
    return value
