"""Batch front-end: normalize / verify / check-diophantine / constants / lie-check.

Outputs are deterministic: fixed key order, floats at 17 significant digits,
no timestamps.  Exit codes are a stable contract per subcommand; see the
individual command docstrings.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import jsonio
from .dynamics import lie_vs_flow_check, torus_persistence_report, write_trajectory
from .errors import (
    DivergenceError,
    PoissonKamError,
    ProblemFormatError,
    ResonanceError,
    StepRefusedError,
)
from .bracket import ExtendedPoint
from .homological import diophantine_profile, divisor_shells
from .kolmogorov import ChiRecord, run
from .problems import Problem

import numpy as np


def _load_problem(path):
    if not Path(path).exists():
        raise ProblemFormatError("problem file not found: %s" % path)
    return Problem.load(path)


def _write(path, payload):
    Path(path).write_text(jsonio.dumps(payload) + "\n")


def _trace_lines(trace):
    lines = [jsonio.dumps({"header": trace.header})]
    lines.extend(jsonio.dumps(row) for row in trace.rows)
    return "\n".join(lines) + "\n"


def cmd_normalize(args) -> int:
    """Exit 0 converged, 1 malformed input/resonance, 2 refused smallness,
    3 divergence, 4 step budget exhausted before the target."""
    try:
        problem = _load_problem(args.problem)
        setup = problem.initialize(
            max_steps=args.max_steps,
            target_eps=args.target_eps,
            d_floor=args.d_floor,
        )
    except (ProblemFormatError, ResonanceError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run(setup)
    (out / "trace.jsonl").write_text(_trace_lines(result.trace))
    _write(out / "normal_form.json", result.normal_form.to_payload())
    _write(
        out / "generators.json",
        {"chi": [rec.to_payload() for rec in result.chi_records]},
    )
    print(
        "status=%s steps=%d eps_final=%s"
        % (
            result.status,
            len(result.trace.rows),
            jsonio.fmt_float(result.trace.header["eps_final"]),
        )
    )
    return {"converged": 0, "refused": 2, "diverged": 3, "max_steps": 4}[result.status]


def cmd_verify(args) -> int:
    """Exit 0 iff the settled-action improvement meets the threshold; 2 when
    the run exists but misses it; 1 when normalize outputs are absent."""
    out = Path(args.out)
    gen_path = out / "generators.json"
    if not gen_path.exists():
        print("error: missing run artifacts in %s" % out, file=sys.stderr)
        return 1
    try:
        problem = _load_problem(args.problem)
    except ProblemFormatError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    setup = problem.initialize()
    payload = jsonio.loads(gen_path.read_text())
    chi_records = [ChiRecord.from_payload(p) for p in payload["chi"]]
    seed = int(problem.option("seed", args.seed))
    n_angles = args.angles
    offset = (seed % 1000) / 1000.0 * 2.0 * np.pi / n_angles
    report = torus_persistence_report(
        setup.decomp.full,
        setup.structure,
        chi_records,
        t_end=float(problem.option("t_end", args.t_end)),
        tol=float(problem.option("tol", args.tol)),
        n_angles=n_angles,
        threshold=float(problem.option("threshold", args.threshold)),
        angle_offset=offset,
        omega=setup.freq.omega,
    )
    _write(out / "persistence_report.json", report.as_dict())
    if args.write_trajectories:
        from .dynamics import integrate
        from .kolmogorov import compose_map

        tol = float(problem.option("tol", args.tol))
        t_end = float(problem.option("t_end", args.t_end))
        for i, angle in enumerate(report.angles):
            x0 = np.asarray(angle.x0)
            naive_start = ExtendedPoint(np.zeros(problem.m), x0, 0.0, 0.0)
            mapped = compose_map(chi_records, naive_start, setup.structure)
            for tag, start in (("naive", naive_start), ("mapped", mapped)):
                samples = integrate(
                    setup.decomp.full,
                    setup.structure,
                    ExtendedPoint(
                        np.real(start.y).astype(float),
                        np.real(start.x).astype(float),
                        float(np.real(start.eta)),
                        start.xi,
                    ),
                    t_end,
                    tol,
                    omega=setup.freq.omega,
                )
                write_trajectory(samples, out / ("trajectory_%s_%02d.csv" % (tag, i)))
    print(
        "min_improvement=%r threshold=%r"
        % (report.min_improvement, report.threshold)
    )
    return 0 if report.passed else 2


def cmd_check_diophantine(args) -> int:
    """Exit 0 with the gamma profile; 2 on resonance within the scan."""
    try:
        problem = _load_problem(args.problem)
    except ProblemFormatError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    k_max = args.k_max or problem.trunc.K_max
    try:
        setup = problem.initialize()
    except ResonanceError as exc:
        print("resonance: %s" % exc, file=sys.stderr)
        return 2
    omega = setup.freq.omega
    try:
        gamma = diophantine_profile(omega, problem.tau, k_max)
        shells = divisor_shells(omega, problem.tau, k_max)
    except ResonanceError as exc:
        print("resonance: %s" % exc, file=sys.stderr)
        return 2
    table = {
        "omega": [float(v) for v in omega],
        "tau": problem.tau,
        "K_max": k_max,
        "gamma_K": gamma,
        "shells": shells,
    }
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write(Path(args.out) / "diophantine.json", table)
    print(jsonio.dumps(table))
    return 0


def cmd_constants(args) -> int:
    """Write the constants ledger (M0..M8, D, thresholds); exit 0."""
    try:
        problem = _load_problem(args.problem)
        setup = problem.initialize()
    except (ProblemFormatError, ResonanceError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    payload = {
        "constants": setup.ledger.as_dict(),
        "eps0_rating": setup.eps0_rating,
        "eps0_measured": setup.params.eps,
        "empirical_mode": setup.empirical_mode,
        "u0": setup.params.as_dict(),
    }
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write(Path(args.out) / "constants.json", payload)
    print(jsonio.dumps(payload))
    return 0


def cmd_lie_check(args) -> int:
    """Check series transform vs time-1 flow for every stored generator.
    Exit 0 when all distances are within tolerance, 2 otherwise."""
    out = Path(args.out)
    gen_path = out / "generators.json"
    if not gen_path.exists():
        print("error: missing run artifacts in %s" % out, file=sys.stderr)
        return 1
    try:
        problem = _load_problem(args.problem)
        setup = problem.initialize()
    except (ProblemFormatError, ResonanceError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    payload = jsonio.loads(gen_path.read_text())
    chi_records = [ChiRecord.from_payload(p) for p in payload["chi"]]
    point = ExtendedPoint(
        np.zeros(problem.m), np.full(problem.n, 0.3), 0.0, 0.0
    )
    tol = args.tol or 1e-12
    rows = []
    ok = True
    for rec in chi_records:
        dist = lie_vs_flow_check(rec.chi, setup.structure, point, tol=tol)
        bound = max(10.0 * tol, 1e-8)
        rows.append({"step": rec.step, "distance": dist, "bound": bound})
        ok = ok and dist <= bound
    _write(out / "lie_check.json", {"rows": rows, "passed": ok})
    print(jsonio.dumps({"rows": rows, "passed": ok}))
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poisson-kam",
        description="Kolmogorov normal form for Poisson systems with decaying forcing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required):
        p.add_argument("--problem", required=True, help="problem file (JSON)")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("normalize", help="run the normalization iteration")
    common(p, True)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--target-eps", type=float, default=None)
    p.add_argument("--d-floor", type=float, default=None)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("verify", help="torus persistence report for a finished run")
    common(p, True)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--angles", type=int, default=8)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--write-trajectories", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("check-diophantine", help="scan small divisors per |k| shell")
    common(p, False)
    p.add_argument("--k-max", type=int, default=None)
    p.set_defaults(func=cmd_check_diophantine)

    p = sub.add_parser("constants", help="evaluate the constants ledger")
    common(p, False)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("lie-check", help="series transform vs numerical flow")
    common(p, True)
    p.add_argument("--tol", type=float, default=None)
    p.set_defaults(func=cmd_lie_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProblemFormatError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (StepRefusedError,) as exc:
        print("refused: %s" % exc, file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print("diverged: %s" % exc, file=sys.stderr)
        return 3
    except PoissonKamError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
