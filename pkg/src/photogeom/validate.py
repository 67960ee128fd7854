"""Self-check suite run by ``photogeom validate``."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .clickdet import ArrayDetector, array_metric_matrix, array_povm, click_operator, f_closed_form, f_ideal
from .fockops import hs_inner
from .geometry import build_basis, contravariant_coords, duality_defect
from .photocounting import PhotocountingModel, pc_duality_defect, pc_metric_matrices, pc_povm
from .pseudoinv import moore_penrose, penrose_conditions, t_matrix

__all__ = ["CheckResult", "run_validation", "FAULT_SIZE"]

FAULT_SIZE = 1e-6
TOL = 1e-8


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.value < self.tolerance


def _perturbed(g: np.ndarray, fault: bool) -> np.ndarray:
    if not fault:
        return g
    g = g.copy()
    g[0, 0] += FAULT_SIZE
    return g


def _gram(ops) -> np.ndarray:
    return np.array([[float(hs_inner(a, b)) for b in ops] for a in ops])


def _array_checks(det: ArrayDetector, fault: bool) -> list[CheckResult]:
    povm = array_povm(det)
    g = _perturbed(array_metric_matrix(det), fault)
    basis = build_basis(povm, g_cov=g)
    label = f"N={det.n_detectors} eta={float(det.eta):g} nu={float(det.nu):g}"
    brute = _gram(povm[:-1])
    out = [
        CheckResult(f"array duality {label}", duality_defect(basis), TOL),
        CheckResult(f"array metric vs Fock sum {label}", float(np.max(np.abs(g - brute))), 1e-9),
    ]
    if det.n_detectors == 8:
        coords = contravariant_coords(basis, click_operator(det), include_removed=True).values
        out.append(CheckResult(f"click operator coordinates {label}", float(np.max(np.abs(coords - np.arange(9)))), 1e-9))
    return out


def _pc_checks(eta: float, fault: bool) -> list[CheckResult]:
    model = PhotocountingModel(eta)
    g, _ = pc_metric_matrices(model, 15)
    g = _perturbed(g, fault)
    brute = _gram(pc_povm(model, 15))
    return [
        CheckResult(f"photocounting duality eta={eta:g}", pc_duality_defect(model, 15), TOL),
        CheckResult(f"photocounting metric vs Fock sum eta={eta:g}", float(np.max(np.abs(g - brute))), 1e-9),
    ]


def _reduction_check() -> CheckResult:
    params = {
        "fock_projector": 3,
        "exp": Fraction(1, 3),
        "normal_exp": Fraction(1, 2),
        "moment": 3,
        "normal_moment": 2,
        "uhd": Fraction(-1, 2),
    }
    mismatches = 0
    for N in range(1, 11):
        for kind, param in params.items():
            general = f_closed_form(ArrayDetector(N), kind, param, exact=True)
            mismatches += sum(a != b for a, b in zip(general, f_ideal(N, kind, param, exact=True)))
    return CheckResult("general coordinates reduce to ideal ones (exact)", float(mismatches), 0.5)


def _penrose_check() -> CheckResult:
    T = t_matrix(ArrayDetector(10), 40)
    worst = max(penrose_conditions(T, moore_penrose(T)).values())
    return CheckResult("Moore-Penrose conditions N=10 window 40", worst, TOL)


def run_validation(eta: float | None = None, *, inject_fault: bool = False) -> list[CheckResult]:
    """Run the invariant suite.

    ``eta`` restricts detector checks to one efficiency.  ``inject_fault``
    perturbs every covariant metric by ``FAULT_SIZE`` to show that the suite
    detects it.
    """
    pc_etas = (0.3, 0.5, 0.7, 1.0) if eta is None else (eta,)
    array_etas = (0.7, 1.0) if eta is None else (eta,)
    results: list[CheckResult] = []
    for e in pc_etas:
        results.extend(_pc_checks(e, inject_fault))
    for N in (4, 8):
        for e in array_etas:
            for nu in (0.0, 0.1):
                results.extend(_array_checks(ArrayDetector(N, e, nu), inject_fault))
    results.append(_reduction_check())
    results.append(_penrose_check())
    return results
