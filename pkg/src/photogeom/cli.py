"""Command-line driver: ``photogeom <command> [options]``.

Every command writes CSV files with a header row and a JSON manifest next to
them.  The manifest records the full argument vector, so ``photogeom replay
<manifest>`` regenerates the same bytes.

Exit status: 0 on success, 1 for usage errors, 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .clickdet import (
    F_KINDS,
    ArrayDetector,
    array_basis,
    array_contr_matrix,
    array_metric_matrix,
    contravariant_precise,
    covariant_coords_from_f,
    f_coefficients,
    observable_mismatch,
)
from .phasespace import GaussianState, alpha_grid, click_probabilities, run_reconstruction, simulate_uhd
from .photocounting import PhotocountingModel, pc_basis, pc_metric_matrices
from .pseudoinv import (
    dump_matrix,
    penrose_conditions,
    reconstruct_pn_least_squares,
    stirling_pseudoinverse,
    transform_pair,
)
from .validate import run_validation

__all__ = ["main", "ExperimentManifest", "parse_grid", "OUT_ENV"]

OUT_ENV = "PHOTOGEOM_OUT"
EXIT_USAGE = 1
EXIT_NUMERIC = 2
INTEGER_FAMILIES = ("fock_projector", "moment", "normal_moment")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class ExperimentManifest:
    """Everything needed to rerun a command, serialized next to its outputs."""

    command: str
    argv: list[str]
    detector: dict
    state: dict | None = None
    grid: list | None = None
    seed: int | None = None
    samples: int | None = None
    truncation: list | None = None
    outputs: list[str] = field(default_factory=list)
    results: dict = field(default_factory=dict)
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    return format(float(x), ".12g")


def parse_grid(text: str) -> list[float]:
    """``"a:b:step"`` (inclusive) or a comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} is not of the form start:stop:step")
        a, b, step = (float(p) for p in parts)
        if step <= 0 or b < a:
            raise UsageError(f"grid {text!r} is empty")
        count = int(round((b - a) / step)) + 1
        return [round(a + i * step, 12) for i in range(count)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse grid {text!r}") from exc


def _parse_truncations(text: str | None) -> list[int | None]:
    if text is None:
        return [None]
    out: list[int | None] = []
    for part in text.split(","):
        part = part.strip().lower()
        out.append(None if part in ("none", "") else int(part))
    return out


class _Writer:
    def __init__(self, out_dir: Path, manifest: ExperimentManifest):
        self.out_dir = out_dir
        self.manifest = manifest
        out_dir.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        self.text(name, buf.getvalue())

    def text(self, name: str, content: str) -> None:
        (self.out_dir / name).write_text(content)
        self.manifest.outputs.append(name)

    def finish(self) -> None:
        path = self.out_dir / f"{self.manifest.command}.manifest.json"
        path.write_text(self.manifest.to_json())


def _detector(args) -> ArrayDetector:
    return ArrayDetector(args.detectors, args.eta, args.nu)


def _detector_dict(args) -> dict:
    return {"n_detectors": args.detectors, "eta": args.eta, "nu": args.nu}


# Commands ----------------------------------------------------------------------

def cmd_metric(args, w: _Writer) -> int:
    if args.family == "photocounting":
        size = args.fock_window or 15
        g, gi = pc_metric_matrices(PhotocountingModel(args.eta, args.nu), size)
    else:
        det = _detector(args)
        g, gi = array_metric_matrix(det), array_contr_matrix(det)
    cond = float(np.linalg.cond(g))
    rows = [(n, m, g[n, m], gi[n, m]) for n in range(len(g)) for m in range(len(g))]
    w.csv("metric.csv", ["n", "m", "g_cov", "g_contr"], rows)
    w.manifest.results["condition_number"] = float(_fmt(cond))
    print(f"condition number {cond:.6g}")
    return 0


def cmd_covm(args, w: _Writer) -> int:
    if args.family == "photocounting":
        size = args.fock_window or 15
        basis = pc_basis(PhotocountingModel(args.eta, args.nu), size)
        window = size
    else:
        basis = array_basis(_detector(args))
        window = args.fock_window or 4 * args.detectors
    idx = basis.effective_set
    ops = [basis.covm[i].restricted(window) for i in idx]
    rows = [[k] + [op.diag[k] for op in ops] for k in range(window)]
    w.csv("covm.csv", ["k"] + [f"covm_{i}" for i in idx], rows)
    return 0


def _family_param(family: str, value: float):
    return int(value) if family in INTEGER_FAMILIES else value


def cmd_mismatch(args, w: _Writer) -> int:
    det = _detector(args)
    family = args.observable
    if args.grid:
        grid = parse_grid(args.grid)
    elif family == "fock_projector":
        grid = list(range(args.detectors + 1))
    else:
        raise UsageError(f"--grid is required for {family}")
    truncations = _parse_truncations(args.truncation)
    rows = []
    for M in truncations:
        for p in grid:
            param = _family_param(family, p)
            norm, mismatch = observable_mismatch(det, family, param, M)
            rows.append((family, param, "none" if M is None else M, norm, mismatch, mismatch / norm))
    w.manifest.grid = grid
    w.manifest.truncation = truncations
    w.csv("mismatch.csv", ["observable", "parameter", "truncation", "hs_norm", "hs_mismatch", "relative_mismatch"], rows)
    return 0


def cmd_coords(args, w: _Writer) -> int:
    det = _detector(args)
    family = args.observable
    if args.param is None:
        raise UsageError("--param is required")
    param = _family_param(family, args.param)
    M = args.truncation and _parse_truncations(args.truncation)[0]
    contr = contravariant_precise(det, family, param, M)
    if M is None:
        cov = covariant_coords_from_f(det, f_coefficients(det, family, param)).values
    else:
        g = array_metric_matrix(det)
        cov = g @ contr
    rows = [(n, cov[n], contr[n]) for n in range(det.n_detectors)]
    w.csv("coords.csv", ["n", "covariant", "contravariant"], rows)
    return 0


def _click_data(args, det: ArrayDetector) -> np.ndarray:
    if args.counts:
        counts = [int(c) for c in args.counts.split(",")]
        if len(counts) != det.n_detectors + 1:
            raise UsageError(f"--counts needs {det.n_detectors + 1} entries")
        total = sum(counts)
        if total <= 0 or min(counts) < 0:
            raise UsageError("--counts must be non-negative with a positive total")
        return np.array(counts, dtype=float) / total
    if args.fock is None:
        raise UsageError("give --counts or --fock")
    p = np.zeros(args.fock + 1)
    p[args.fock] = 1.0
    return click_probabilities(det, p)


def cmd_reconstruct_pn(args, w: _Writer) -> int:
    det = _detector(args)
    window = args.fock_window or 4 * args.detectors
    rho = _click_data(args, det)
    result = reconstruct_pn_least_squares(det, rho, window)
    rows = [(n, result.p_tilde[n], result.completion_norms[n]) for n in range(window)]
    w.csv("pn.csv", ["n", "p_tilde", "completion_norm"], rows)
    w.manifest.results["residual"] = float(_fmt(result.residual))
    w.manifest.state = {"fock": args.fock} if args.fock is not None else {"counts": args.counts}
    return 0


def _alphas(args) -> list[complex]:
    re_values = parse_grid(args.grid) if args.grid else parse_grid("-3:3:0.25")
    im_values = parse_grid(args.imag) if args.imag else [0.0, 1.0]
    return alpha_grid(re_values, im_values)


def cmd_simulate_uhd(args, w: _Writer) -> int:
    det = _detector(args)
    alphas = _alphas(args)
    hists = simulate_uhd(GaussianState(args.squeezing), det, alphas, args.samples, args.seed)
    rows = [(h.alpha.real, h.alpha.imag, h.samples, *h.counts) for h in hists]
    header = ["re_alpha", "im_alpha", "samples"] + [f"count_{n}" for n in range(det.n_detectors + 1)]
    w.csv("histograms.csv", header, rows)
    w.manifest.state = {"squeezing": args.squeezing}
    w.manifest.grid = [[a.real, a.imag] for a in alphas]
    return 0


def cmd_reconstruct_qp(args, w: _Writer) -> int:
    det = _detector(args)
    M = _parse_truncations(args.truncation)[0]
    if M is None and args.s >= 0:
        raise UsageError(f"s = {args.s} requires --truncation")
    alphas = _alphas(args)
    samples = None if args.samples == 0 else args.samples
    rows = run_reconstruction(GaussianState(args.squeezing), det, alphas, args.s, truncation=M, samples=samples, seed=args.seed)
    header = ["re_alpha", "im_alpha", "s", "estimate", "statistical_error", "hs_mismatch", "theory_value"]
    w.csv("reconstruction.csv", header, [tuple(asdict(r).values()) for r in rows])
    w.manifest.truncation = [M]
    w.manifest.state = {"squeezing": args.squeezing}
    w.manifest.grid = [[a.real, a.imag] for a in alphas]
    return 0


def cmd_pseudoinverse(args, w: _Writer) -> int:
    det = _detector(args)
    window = args.fock_window or 4 * args.detectors
    pair = transform_pair(det, window)
    tilde = stirling_pseudoinverse(det, window)
    buf = io.StringIO()
    dump_matrix(buf, pair.T, "T")
    dump_matrix(buf, pair.S, "S")
    dump_matrix(buf, tilde, "S_stirling")
    w.text("matrices.txt", buf.getvalue())
    rows = []
    for name, S in (("moore_penrose", pair.S), ("stirling", tilde)):
        for cond, value in penrose_conditions(pair.T, S).items():
            rows.append((name, cond, value))
    w.csv("penrose.csv", ["matrix", "condition", "max_residual"], rows)
    return 0


def cmd_validate(args, w: _Writer) -> int:
    results = run_validation(args.eta_filter, inject_fault=args.inject_fault)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.value:.3e} (tol {r.tolerance:.0e})")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    w.csv("validate.csv", ["check", "value", "tolerance", "passed"], [(r.name, r.value, r.tolerance, str(r.passed).lower()) for r in results])
    return EXIT_NUMERIC if failed else 0


COMMANDS = {
    "metric": cmd_metric,
    "covm": cmd_covm,
    "mismatch": cmd_mismatch,
    "coords": cmd_coords,
    "reconstruct-pn": cmd_reconstruct_pn,
    "simulate-uhd": cmd_simulate_uhd,
    "reconstruct-qp": cmd_reconstruct_qp,
    "pseudoinverse": cmd_pseudoinverse,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--detectors", type=int, default=8, help="number of on-off detectors N")
    common.add_argument("--eta", type=float, default=1.0, help="detection efficiency")
    common.add_argument("--nu", type=float, default=0.0, help="dark-count intensity")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or the working directory)")

    parser = _Parser(prog="photogeom", description="Geometric analysis of photocounting measurements.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name in ("metric", "covm"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--family", choices=("array", "photocounting"), default="array")
        p.add_argument("--fock-window", type=int)

    p = sub.add_parser("mismatch", parents=[common])
    p.add_argument("--observable", choices=F_KINDS, default="fock_projector")
    p.add_argument("--grid")
    p.add_argument("--truncation", help="comma list of photon cutoffs; 'none' for the full operator")

    p = sub.add_parser("coords", parents=[common])
    p.add_argument("--observable", choices=F_KINDS, default="fock_projector")
    p.add_argument("--param", type=float)
    p.add_argument("--truncation")

    p = sub.add_parser("reconstruct-pn", parents=[common])
    p.add_argument("--fock-window", type=int)
    p.add_argument("--counts", help="comma list of click counts 0..N")
    p.add_argument("--fock", type=int, help="use exact statistics of this photon-number state")

    for name in ("simulate-uhd", "reconstruct-qp"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--squeezing", type=float, default=0.8)
        p.add_argument("--samples", type=int, default=100_000, help="samples per point; 0 uses exact probabilities")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--grid", help="real parts of alpha (default -3:3:0.25)")
        p.add_argument("--imag", help="imaginary parts of alpha (default 0,1)")
        if name == "reconstruct-qp":
            p.add_argument("--s", type=float, default=0.0)
            p.add_argument("--truncation")

    p = sub.add_parser("pseudoinverse", parents=[common])
    p.add_argument("--fock-window", type=int)

    p = sub.add_parser("validate", parents=[common])
    p.add_argument("--only-eta", dest="eta_filter", type=float, help="restrict detector checks to one efficiency")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("replay")
    p.add_argument("manifest", help="manifest written by an earlier run")
    p.add_argument("--out")
    return parser


def _run(argv: list[str]) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        doc = json.loads(Path(args.manifest).read_text())
        replay = list(doc["argv"])
        if args.out:
            replay += ["--out", args.out]
        return _run(replay)
    if args.command == "simulate-uhd" and args.samples < 1:
        raise UsageError("--samples must be positive")
    if getattr(args, "samples", 1) < 0:
        raise UsageError("--samples must be non-negative")
    out_dir = Path(args.out or os.environ.get(OUT_ENV) or ".")
    # the recorded argv omits --out so that a manifest can be replayed elsewhere
    recorded = _strip_out(argv)
    manifest = ExperimentManifest(
        command=args.command,
        argv=recorded,
        detector=_detector_dict(args),
        seed=getattr(args, "seed", None),
        samples=getattr(args, "samples", None),
    )
    writer = _Writer(out_dir, manifest)
    status = COMMANDS[args.command](args, writer)
    writer.finish()
    return status


def _strip_out(argv: list[str]) -> list[str]:
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        out.append(a)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _run(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (UsageError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"photogeom: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as exc:
        print(f"photogeom: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
