"""Structure matrices, the extended Poisson bracket, and Lie transforms.

The phase space is (y, x, eta, xi) with y the actions, x the angles, xi the
time made autonomous and eta its conjugate.  The bracket is

    {F, G} = F_y^T B12 G_x - F_x^T B12^T G_y + F_x^T B22 G_x
             + F_xi G_eta - F_eta G_xi,

with B12 (m x n) and skew B22 (n x n) depending on the actions only.  Sign
conventions are pinned by the identities L_chi eta = chi_xi, L_chi xi = 0 and
L_chi y = -chi_x B12^T, which the tests assert literally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import LieDivergenceError, StructureMismatchError
from .series import (
    FourierTaylorSeries,
    WeightedNormParams,
    discard_tracker,
    majorant_with_eta,
    weighted_norm,
)

E_SQ = math.e ** 2

# Lie series stopping: relative term tolerance and hard cap on the order.
LIE_REL_TOL = 1e-14
LIE_MAX_TERMS = 40


@dataclass
class ExtendedPoint:
    y: np.ndarray
    x: np.ndarray
    eta: complex = 0.0
    xi: float = 0.0

    def __post_init__(self):
        self.y = np.atleast_1d(np.asarray(self.y))
        self.x = np.atleast_1d(np.asarray(self.x))

    def copy(self):
        return ExtendedPoint(self.y.copy(), self.x.copy(), self.eta, self.xi)


class StructureMatrix:
    """Block Poisson matrix [[0, B12], [-B12^T, B22]] with y-only entries.

    Also carries the frozen expansion data at the working origin:
    B0 = -B12^T(0)  (n x m) and B1[l, i, j] = -d/dy_j (B12^T)_{l i}(0).
    """

    def __init__(self, B12, B22, y_star=None):
        self.m = len(B12)
        self.n = len(B12[0]) if self.m else 0
        self.B12 = [list(row) for row in B12]
        self.B22 = [list(row) for row in B22]
        proto = self.B12[0][0]
        self.trunc = proto.trunc
        self.decay_rate = proto.decay_rate
        if len(self.B22) != self.n or any(len(r) != self.n for r in self.B22):
            raise StructureMismatchError("B22 must be n x n")
        for row in self.B12 + self.B22:
            for entry in row:
                if entry.n != self.n or entry.m != self.m:
                    raise StructureMismatchError("entry dims disagree")
                if not entry.is_action_only():
                    raise StructureMismatchError(
                        "structure matrix entries must depend on y only"
                    )
                if np.abs(entry.coeffs.imag).max(initial=0.0) != 0.0:
                    raise StructureMismatchError("structure matrix must be real")
        for l in range(self.n):
            for lp in range(self.n):
                s = self.B22[l][lp] + self.B22[lp][l]
                if not s.is_zero():
                    raise StructureMismatchError("B22 must be skew-symmetric")
        self.y_star = (
            np.zeros(self.m) if y_star is None else np.asarray(y_star, dtype=float)
        )
        zero_a = (0,) * self.m
        self.B0 = np.zeros((self.n, self.m))
        self.B1 = np.zeros((self.n, self.m, self.m))
        for i in range(self.m):
            for l in range(self.n):
                entry = self.B12[i][l]
                self.B0[l, i] = -entry.coefficient((0,) * self.n, zero_a, 0, 0).real
                for j in range(self.m):
                    alpha = tuple(1 if t == j else 0 for t in range(self.m))
                    self.B1[l, i, j] = -entry.coefficient(
                        (0,) * self.n, alpha, 0, 0
                    ).real

    # ---- constructors -----------------------------------------------------

    @classmethod
    def canonical(cls, dof, decay_rate, trunc):
        """Canonical bracket: B12 = -I (so xdot = +H_y, ydot = -H_x), B22 = 0."""
        zero = FourierTaylorSeries.zeros(dof, dof, decay_rate, trunc)
        minus_one = FourierTaylorSeries.constant(-1.0, zero)
        B12 = [
            [minus_one if i == l else zero for l in range(dof)] for i in range(dof)
        ]
        B22 = [[zero for _ in range(dof)] for _ in range(dof)]
        return cls(B12, B22)

    @classmethod
    def from_constant_blocks(cls, B12_vals, B22_vals, decay_rate, trunc):
        B12_vals = np.asarray(B12_vals, dtype=float)
        B22_vals = np.asarray(B22_vals, dtype=float)
        m, n = B12_vals.shape
        zero = FourierTaylorSeries.zeros(n, m, decay_rate, trunc)

        def const(v):
            return FourierTaylorSeries.constant(v, zero) if v else zero

        B12 = [[const(B12_vals[i, l]) for l in range(n)] for i in range(m)]
        B22 = [[const(B22_vals[l, lp]) for lp in range(n)] for l in range(n)]
        return cls(B12, B22)

    def shifted(self, y_star) -> "StructureMatrix":
        """Re-expand all entries around y*; records y* for provenance."""
        from .series import shift_action_expansion

        B12 = [
            [shift_action_expansion(e, y_star) for e in row] for row in self.B12
        ]
        B22 = [
            [shift_action_expansion(e, y_star) for e in row] for row in self.B22
        ]
        return StructureMatrix(B12, B22, y_star=y_star)

    # ---- norms --------------------------------------------------------------

    def block_norms(self, params: WeightedNormParams):
        """(G11, G12, G22): the block matrix norms nm * max sup|entry|.

        The upper-left block is structurally zero, so G11 = 0 always.
        """
        g12 = 0.0
        for row in self.B12:
            for entry in row:
                g12 = max(g12, weighted_norm(entry, params).K)
        g22 = 0.0
        for row in self.B22:
            for entry in row:
                g22 = max(g22, weighted_norm(entry, params).K)
        return 0.0, self.m * self.n * g12, self.n * self.n * g22

    def full_norm(self, params: WeightedNormParams) -> float:
        """Norm of the whole (m+n)^2 matrix: (m+n)^2 * max entry majorant."""
        top = 0.0
        for row in self.B12:
            for entry in row:
                top = max(top, weighted_norm(entry, params).K)
        for row in self.B22:
            for entry in row:
                top = max(top, weighted_norm(entry, params).K)
        return (self.m + self.n) ** 2 * top

    def eval_blocks(self, y):
        """Numeric B12(y), B22(y) at a point (used by the integrator)."""
        x0 = np.zeros(self.n)
        B12 = np.array(
            [[e.evaluate(y, x0) for e in row] for row in self.B12]
        )
        B22 = np.array(
            [[e.evaluate(y, x0) for e in row] for row in self.B22]
        )
        return B12, B22

    # ---- serialization --------------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "y_star": [float(v) for v in self.y_star],
            "B12": [[e.to_payload() for e in row] for row in self.B12],
            "B22": [[e.to_payload() for e in row] for row in self.B22],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "StructureMatrix":
        B12 = [
            [FourierTaylorSeries.from_payload(e) for e in row]
            for row in payload["B12"]
        ]
        B22 = [
            [FourierTaylorSeries.from_payload(e) for e in row]
            for row in payload["B22"]
        ]
        return cls(B12, B22, y_star=payload.get("y_star"))


# ---- the bracket ---------------------------------------------------------------


def poisson_bracket(
    F: FourierTaylorSeries, G: FourierTaylorSeries, S: StructureMatrix
) -> FourierTaylorSeries:
    """Extended bracket {F, G}; bilinear, antisymmetric, Leibniz."""
    F._check_compatible(G)
    n, m = S.n, S.m
    total = F._like(None, None)
    Fy = [F.partial_y(i) for i in range(m)]
    Gy = [G.partial_y(i) for i in range(m)]
    Fx = [F.partial_x(l) for l in range(n)]
    Gx = [G.partial_x(l) for l in range(n)]
    for i in range(m):
        for l in range(n):
            b = S.B12[i][l]
            if b.is_zero():
                continue
            if not (Fy[i].is_zero() or Gx[l].is_zero()):
                total = total + Fy[i] * b * Gx[l]
            if not (Fx[l].is_zero() or Gy[i].is_zero()):
                total = total - Fx[l] * b * Gy[i]
    for l in range(n):
        for lp in range(n):
            b = S.B22[l][lp]
            if b.is_zero() or Fx[l].is_zero() or Gx[lp].is_zero():
                continue
            total = total + Fx[l] * b * Gx[lp]
    Feta, Geta = F.partial_eta(), G.partial_eta()
    if not Geta.is_zero():
        total = total + F.partial_xi() * Geta
    if not Feta.is_zero():
        total = total - Feta * G.partial_xi()
    return total


def lie_derivative(chi, F, S):
    """L_chi F := {chi, F}."""
    return poisson_bracket(chi, F, S)


def bracket_with_coordinate(F: FourierTaylorSeries, coord, S: StructureMatrix):
    """{F, z_c} for a coordinate function z_c in {("y", i), ("x", l), "eta", "xi"}.

    Needed because the bare coordinates x_l and xi are not elements of the
    series ring; their derivatives are, so the bracket still is.
    """
    if coord == "eta":
        return F.partial_xi()
    if coord == "xi":
        return (-F.partial_eta())
    kind, idx = coord
    if kind == "y":
        total = F._like(None, None)
        for l in range(S.n):
            Fx = F.partial_x(l)
            if not Fx.is_zero():
                total = total - Fx * S.B12[idx][l]
        return total
    if kind == "x":
        total = F._like(None, None)
        for i in range(S.m):
            Fy = F.partial_y(i)
            if not Fy.is_zero():
                total = total + Fy * S.B12[i][idx]
        for l in range(S.n):
            Fx = F.partial_x(l)
            if not (Fx.is_zero() or S.B22[l][idx].is_zero()):
                total = total + Fx * S.B22[l][idx]
        return total
    raise ValueError("unknown coordinate %r" % (coord,))


# ---- convergence-controlled Lie transform ---------------------------------------


def gamma_from_block_norms(G11, G12, G22, rho, sigma) -> float:
    """Gamma_{rho,sigma} = [e^2 G11 sigma^2 + 2e G12 rho sigma + G22 rho^2] / (e rho sigma)^2."""
    return (
        E_SQ * G11 * sigma ** 2 + 2.0 * math.e * G12 * rho * sigma + G22 * rho ** 2
    ) / (math.e * rho * sigma) ** 2


def gamma_rho_sigma(S: StructureMatrix, params: WeightedNormParams) -> float:
    G11, G12, G22 = S.block_norms(params)
    return gamma_from_block_norms(G11, G12, G22, params.rho, params.sigma)


@dataclass
class LieDiagnostics:
    contraction: float
    s_stop: int
    tail_bound: float
    term_norms: List[float] = field(default_factory=list)
    discarded_mass: float = 0.0


def _lie_sum(chi, first_term, base, S, params, contraction, tol, cap):
    """Sum base + sum_{s>=1} L_chi^s(seed)/s! given the s=1 term."""
    before = discard_tracker.snapshot()
    total = base
    term = first_term
    norms = []
    s = 1
    while True:
        total = total + term
        tn = majorant_with_eta(term, params)
        norms.append(tn)
        running = majorant_with_eta(total, params)
        if term.is_zero() or tn <= tol * max(running, 1e-300) or s >= cap:
            break
        s += 1
        term = poisson_bracket(chi, term, S).scale(1.0 / s)
    tail = 0.0
    if norms and contraction < 1.0:
        tail = norms[-1] * contraction / (1.0 - contraction)
    diag = LieDiagnostics(
        contraction=contraction,
        s_stop=s if norms and norms[-1] > 0 else max(s - 1, 0),
        tail_bound=tail,
        term_norms=norms,
        discarded_mass=discard_tracker.snapshot() - before,
    )
    return total, diag


def lie_contraction(chi, S, params: WeightedNormParams, d_total: float) -> float:
    """Measured contraction factor (4 e^2 Gamma / d~^2) * ||chi||."""
    gamma = gamma_rho_sigma(S, params)
    return 4.0 * E_SQ * gamma * weighted_norm(chi, params).K / d_total ** 2


def lie_transform(
    chi: FourierTaylorSeries,
    F: FourierTaylorSeries,
    S: StructureMatrix,
    params: WeightedNormParams,
    d_total: float = 1.0,
    tol: float = LIE_REL_TOL,
    cap: int = LIE_MAX_TERMS,
):
    """exp(L_chi) F summed until terms drop below tol relative to the sum.

    Refuses (LieDivergenceError) when the measured contraction factor exceeds
    1/2; under that bound the terms decay at least geometrically and the
    returned diagnostics carry the geometric tail estimate.
    """
    if chi.is_zero():
        return F, LieDiagnostics(0.0, 0, 0.0, [], 0.0)
    L = lie_contraction(chi, S, params, d_total)
    if L > 0.5:
        raise LieDivergenceError(
            "Lie contraction %.3g > 1/2; shrink the perturbation first" % L
        )
    first = poisson_bracket(chi, F, S)
    return _lie_sum(chi, first, F, S, params, L, tol, cap)


def lie_coordinate_displacement(
    chi: FourierTaylorSeries,
    coord,
    S: StructureMatrix,
    params: WeightedNormParams,
    d_total: float = 1.0,
    tol: float = LIE_REL_TOL,
    cap: int = LIE_MAX_TERMS,
):
    """exp(L_chi) z_c - z_c as a series (zero series for coord = "xi")."""
    zero = chi._like(None, None)
    if chi.is_zero():
        return zero, LieDiagnostics(0.0, 0, 0.0, [], 0.0)
    L = lie_contraction(chi, S, params, d_total)
    if L > 0.5:
        raise LieDivergenceError(
            "Lie contraction %.3g > 1/2; shrink the perturbation first" % L
        )
    first = bracket_with_coordinate(chi, coord, S)
    return _lie_sum(chi, first, zero, S, params, L, tol, cap)
