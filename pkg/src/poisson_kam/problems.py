"""Problem files: the single structured-text format shared by library and CLI.

A problem bundles the integrable part h(y), the decaying perturbation f, the
structure matrix blocks, the expansion point y*, the decay rate a, the
perturbation scale epsilon, the Diophantine exponent tau and the truncation
orders, plus free-form options (norm radii, step budgets, tolerances).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import jsonio
from .bracket import StructureMatrix
from .errors import ProblemFormatError
from .kolmogorov import RunOptions, RunSetup, init_from_problem
from .series import FourierTaylorSeries, Truncation

GOLDEN = (1.0 + 5 ** 0.5) / 2.0

_OPTION_DEFAULTS = {
    "rho": 0.5,
    "sigma": 1.0,
    "max_steps": 12,
    "target_eps": 1e-9,
    "d_floor": 1e-3,
    "d_total": 1.0,
    "t_end": 100.0,
    "tol": 1e-10,
    "threshold": 10.0,
    "seed": 0,
}


@dataclass
class Problem:
    n: int
    m: int
    a: float
    epsilon: float
    tau: float
    y_star: np.ndarray
    trunc: Truncation
    h: FourierTaylorSeries
    f: FourierTaylorSeries
    structure: StructureMatrix
    options: dict = field(default_factory=dict)

    def option(self, name, override=None):
        if override is not None:
            return override
        if name in self.options:
            return self.options[name]
        return _OPTION_DEFAULTS[name]

    def run_options(self, **overrides) -> RunOptions:
        opts = RunOptions(
            max_steps=int(self.option("max_steps", overrides.get("max_steps"))),
            target_eps=float(self.option("target_eps", overrides.get("target_eps"))),
            d_floor=float(self.option("d_floor", overrides.get("d_floor"))),
            d_total=float(self.option("d_total", overrides.get("d_total"))),
            theta1=self.options.get("theta1"),
            theta2=self.options.get("theta2"),
        )
        if "lie_tol" in self.options:
            opts.lie_tol = float(self.options["lie_tol"])
        if "lie_cap" in self.options:
            opts.lie_cap = int(self.options["lie_cap"])
        if "enforce_theoretical" in self.options:
            opts.enforce_theoretical = bool(self.options["enforce_theoretical"])
        if "prune_rel" in self.options:
            opts.prune_rel = float(self.options["prune_rel"])
        return opts

    def initialize(self, **overrides) -> RunSetup:
        setup = init_from_problem(
            self.h,
            self.f,
            self.structure,
            self.y_star,
            self.epsilon,
            self.a,
            self.trunc,
            rho=float(self.option("rho")),
            sigma=float(self.option("sigma")),
            tau=self.tau,
            options=self.run_options(**overrides),
        )
        setup.problem_echo = self.echo()
        return setup

    def echo(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "a": self.a,
            "epsilon": self.epsilon,
            "tau": self.tau,
            "y_star": [float(v) for v in self.y_star],
            "trunc": {
                "K_max": self.trunc.K_max,
                "L_max": self.trunc.L_max,
                "P_max": self.trunc.P_max,
            },
            "options": {k: self.options[k] for k in sorted(self.options)},
        }

    def to_payload(self) -> dict:
        payload = self.echo()
        payload["h"] = self.h.to_payload()
        payload["f"] = self.f.to_payload()
        payload["B12"] = [[e.to_payload() for e in row] for row in self.structure.B12]
        payload["B22"] = [[e.to_payload() for e in row] for row in self.structure.B22]
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "Problem":
        try:
            trunc = Truncation(
                int(payload["trunc"]["K_max"]),
                int(payload["trunc"]["L_max"]),
                int(payload["trunc"]["P_max"]),
            )
            h = FourierTaylorSeries.from_payload(payload["h"])
            f = FourierTaylorSeries.from_payload(payload["f"])
            B12 = [
                [FourierTaylorSeries.from_payload(e) for e in row]
                for row in payload["B12"]
            ]
            B22 = [
                [FourierTaylorSeries.from_payload(e) for e in row]
                for row in payload["B22"]
            ]
            return cls(
                n=int(payload["n"]),
                m=int(payload["m"]),
                a=float(payload["a"]),
                epsilon=float(payload["epsilon"]),
                tau=float(payload["tau"]),
                y_star=np.asarray(payload["y_star"], dtype=float),
                trunc=trunc,
                h=h,
                f=f,
                structure=StructureMatrix(B12, B22),
                options=dict(payload.get("options", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProblemFormatError("bad problem payload: %s" % exc) from exc

    def save(self, path):
        Path(path).write_text(jsonio.dumps(self.to_payload()) + "\n")

    @classmethod
    def load(cls, path) -> "Problem":
        text = Path(path).read_text()
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProblemFormatError(
                "%s: line %d column %d: %s" % (path, exc.lineno, exc.colno, exc.msg)
            ) from exc
        return cls.from_payload(payload)


def benchmark_problem(
    epsilon=1e-3,
    a=0.5,
    y_star=1.0,
    tau=1.0,
    trunc=(16, 4, 16),
    rho=0.5,
    sigma=1.0,
    **options,
) -> Problem:
    """Canonical one-degree benchmark: h = y^2/2, f = exp(-a xi) cos x."""
    trunc = Truncation(*trunc)
    h = FourierTaylorSeries.from_terms(
        1, 1, a, trunc, [((0,), (2,), 0, 0, 0.5)]
    )
    f = FourierTaylorSeries.from_terms(
        1,
        1,
        a,
        trunc,
        [((1,), (0,), 0, 1, 0.5), ((-1,), (0,), 0, 1, 0.5)],
    )
    S = StructureMatrix.canonical(1, a, trunc)
    opts = {"rho": rho, "sigma": sigma}
    opts.update(options)
    return Problem(
        n=1,
        m=1,
        a=a,
        epsilon=epsilon,
        tau=tau,
        y_star=np.array([float(y_star)]),
        trunc=trunc,
        h=h,
        f=f,
        structure=S,
        options=opts,
    )


def rescaled_benchmark_problem(
    epsilon=3e-4,
    a=0.5,
    y_star=1.0,
    tau=1.2,
    trunc=(8, 3, 6),
    rho=0.5,
    sigma=1.0,
    slope=0.3,
    skew=0.2,
    **options,
) -> Problem:
    """Genuinely non-canonical instance: one action, two angles,
    B12(y) = -((1-slope) + slope*y) (1, 1/phi) and a constant skew B22.

    B12 keeps a constant direction, so the bracket satisfies Jacobi for any
    action profile; B12(y*) = -(1, 1/phi) makes the torus frequency
    Diophantine, and the first-order block B1 is nonzero, exercising the
    full E-matrix path.
    """
    trunc = Truncation(*trunc)
    n, m = 2, 1
    beta = 1.0 / GOLDEN

    def entry(c):
        return FourierTaylorSeries.from_terms(
            n, m, a, trunc,
            [((0, 0), (0,), 0, 0, -(1.0 - slope) * c), ((0, 0), (1,), 0, 0, -slope * c)],
        )

    zero = FourierTaylorSeries.zeros(n, m, a, trunc)
    b22 = FourierTaylorSeries.constant(skew, zero)
    S = StructureMatrix(
        [[entry(1.0), entry(beta)]], [[zero, b22], [b22.scale(-1.0), zero]]
    )
    h = FourierTaylorSeries.from_terms(n, m, a, trunc, [((0, 0), (2,), 0, 0, 0.5)])
    f = FourierTaylorSeries.from_terms(
        n, m, a, trunc,
        [
            ((1, 0), (0,), 0, 1, 0.5),
            ((-1, 0), (0,), 0, 1, 0.5),
            ((1, 1), (0,), 0, 1, 0.25),
            ((-1, -1), (0,), 0, 1, 0.25),
        ],
    )
    opts = {"rho": rho, "sigma": sigma}
    opts.update(options)
    return Problem(
        n=n,
        m=m,
        a=a,
        epsilon=epsilon,
        tau=tau,
        y_star=np.array([float(y_star)]),
        trunc=trunc,
        h=h,
        f=f,
        structure=S,
        options=opts,
    )


def two_dof_problem(
    omega=(1.0, GOLDEN),
    epsilon=1e-4,
    a=0.5,
    tau=1.2,
    trunc=(10, 4, 10),
    rho=0.5,
    sigma=1.0,
    **options,
) -> Problem:
    """Canonical two-degree problem with y* chosen so omega is as given."""
    trunc = Truncation(*trunc)
    h = FourierTaylorSeries.from_terms(
        2,
        2,
        a,
        trunc,
        [((0, 0), (2, 0), 0, 0, 0.5), ((0, 0), (0, 2), 0, 0, 0.5)],
    )
    f = FourierTaylorSeries.from_terms(
        2,
        2,
        a,
        trunc,
        [
            ((1, 0), (0, 0), 0, 1, 0.5),
            ((-1, 0), (0, 0), 0, 1, 0.5),
            ((1, 1), (0, 0), 0, 1, 0.25),
            ((-1, -1), (0, 0), 0, 1, 0.25),
        ],
    )
    S = StructureMatrix.canonical(2, a, trunc)
    opts = {"rho": rho, "sigma": sigma}
    opts.update(options)
    return Problem(
        n=2,
        m=2,
        a=a,
        epsilon=epsilon,
        tau=tau,
        y_star=np.asarray(omega, dtype=float),
        trunc=trunc,
        h=h,
        f=f,
        structure=S,
        options=opts,
    )
