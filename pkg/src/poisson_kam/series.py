"""Sparse truncated Fourier-Taylor series over the decaying-exponential time ring.

A series is a finite sum of terms

    c * exp(i k.x) * y^alpha * eta^e * exp(-p*a*xi)

with k an integer wavevector (|k|_1 <= K_max), alpha a Taylor multi-index in
the actions (|alpha|_1 <= L_max), e in {0, 1} the power of the auxiliary
variable conjugate to time, and p >= 0 an integer decay index (p <= P_max).
Time dependence is restricted to finite combinations of exp(-p*a*xi); this
ring is closed under multiplication, differentiation and the per-mode
homological solve, and matches the shape of every bound used downstream.

Terms are stored as a key matrix (rows = terms, columns = k_1..k_n,
alpha_1..alpha_m, e, p) plus a complex coefficient vector, kept in a canonical
sorted order with no exactly-zero coefficients.  All operations are pure; the
arrays are marked read-only, so series can be shared freely across threads.

Multiplication is vectorized: key rows are combined by outer addition, packed
into int64 words and merged with a sort/reduceat pass.  Mass discarded by the
hard truncation is accumulated on a module-level tracker so tests can demand
"no discard".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import (
    EtaDegreeError,
    NormDomainError,
    StructureMismatchError,
)
from .jsonio import fmt_float

# pairs per chunk in the outer-product multiply; keeps peak memory modest
_MUL_CHUNK_PAIRS = 2_000_000

# hygiene threshold used by canonical_pruned(); never applied inside add/mul
DEFAULT_PRUNE_REL = 1e-15


class Truncation(NamedTuple):
    K_max: int
    L_max: int
    P_max: int


@dataclass(frozen=True)
class WeightedNormParams:
    """Weights of the majorant norm: action radius rho, angle strip sigma."""

    rho: float
    sigma: float

    def __post_init__(self):
        if not (self.rho > 0 and self.sigma > 0):
            raise ValueError("rho and sigma must be positive")

    def shrink(self, d: float) -> "WeightedNormParams":
        return WeightedNormParams((1.0 - d) * self.rho, (1.0 - d) * self.sigma)


@dataclass(frozen=True)
class DecayBound:
    """The statement  norm <= K * exp(-p * a * xi)  on the real ray xi >= 0."""

    K: float
    p: int

    def value_at(self, xi: float, a: float) -> float:
        return self.K * math.exp(-self.p * a * xi)


class TruncationTracker:
    """Accumulates coefficient mass discarded by hard truncation."""

    def __init__(self):
        self.total_mass = 0.0
        self.events = 0

    def record(self, mass: float):
        if mass > 0.0:
            self.total_mass += mass
            self.events += 1

    def snapshot(self) -> float:
        return self.total_mass


discard_tracker = TruncationTracker()


def _pack_codec(n, m, trunc):
    """Column offsets/strides packing a (possibly product-summed) key row
    into one int64; None when 64 bits are not enough."""
    K, L, P = trunc
    lo = [-2 * K] * n + [0] * (m + 2)
    sizes = [4 * K + 1] * n + [2 * L + 1] * m + [3] + [2 * P + 1]
    bits = [max(1, int(math.ceil(math.log2(s + 1)))) for s in sizes]
    if sum(bits) > 62:
        return None
    strides = np.empty(n + m + 2, dtype=np.int64)
    shift = 0
    for i in range(n + m + 2 - 1, -1, -1):
        strides[i] = 1 << shift
        shift += bits[i]
    return np.asarray(lo, dtype=np.int64), strides


def _merge_rows(keys, coeffs, codec):
    """Sort rows canonically and sum coefficients of duplicate keys."""
    if len(coeffs) == 0:
        return keys, coeffs
    if codec is not None:
        lo, strides = codec
        packed = (keys.astype(np.int64) - lo) @ strides
        order = np.argsort(packed, kind="stable")
        packed = packed[order]
        keys = keys[order]
        coeffs = coeffs[order]
        boundary = np.empty(len(packed), dtype=bool)
        boundary[0] = True
        np.not_equal(packed[1:], packed[:-1], out=boundary[1:])
        starts = np.flatnonzero(boundary)
        summed = np.add.reduceat(coeffs.real, starts) + 1j * np.add.reduceat(
            coeffs.imag, starts
        )
        return keys[starts], summed
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    summed = np.bincount(inverse, weights=coeffs.real, minlength=len(uniq)) + (
        1j * np.bincount(inverse, weights=coeffs.imag, minlength=len(uniq))
    )
    return uniq, summed


class FourierTaylorSeries:
    """Immutable sparse series; see module docstring for the term model."""

    __slots__ = ("n", "m", "decay_rate", "trunc", "keys", "coeffs", "_codec")

    def __init__(self, n, m, decay_rate, trunc, keys=None, coeffs=None, _canonical=False):
        self.n = int(n)
        self.m = int(m)
        self.decay_rate = float(decay_rate)
        self.trunc = Truncation(*trunc)
        self._codec = _pack_codec(self.n, self.m, self.trunc)
        ncols = self.n + self.m + 2
        if keys is None:
            keys = np.zeros((0, ncols), dtype=np.int32)
            coeffs = np.zeros(0, dtype=np.complex128)
        keys = np.asarray(keys, dtype=np.int32).reshape(-1, ncols)
        coeffs = np.asarray(coeffs, dtype=np.complex128).reshape(-1)
        if keys.shape[0] != coeffs.shape[0]:
            raise StructureMismatchError("keys/coeffs length mismatch")
        if not _canonical:
            keys, coeffs = _merge_rows(keys, coeffs, self._codec)
        keep = coeffs != 0
        if not keep.all():
            keys, coeffs = keys[keep], coeffs[keep]
        keys.setflags(write=False)
        coeffs.setflags(write=False)
        self.keys = keys
        self.coeffs = coeffs

    # ---- construction ------------------------------------------------

    @classmethod
    def zeros(cls, n, m, decay_rate, trunc):
        return cls(n, m, decay_rate, trunc)

    @classmethod
    def from_terms(cls, n, m, decay_rate, trunc, terms: Iterable):
        """Build from an iterable of (k, alpha, e, p, coefficient)."""
        trunc = Truncation(*trunc)
        rows, cs = [], []
        for k, alpha, e, p, c in terms:
            k = tuple(int(v) for v in k)
            alpha = tuple(int(v) for v in alpha)
            e, p = int(e), int(p)
            if len(k) != n or len(alpha) != m:
                raise StructureMismatchError("key length does not match dims")
            if e not in (0, 1):
                raise EtaDegreeError("eta power must be 0 or 1")
            if min(alpha, default=0) < 0 or p < 0:
                raise StructureMismatchError("alpha and p must be non-negative")
            if (
                sum(abs(v) for v in k) > trunc.K_max
                or sum(alpha) > trunc.L_max
                or p > trunc.P_max
            ):
                raise StructureMismatchError("term outside the truncation orders")
            rows.append(k + alpha + (e, p))
            cs.append(complex(c))
        keys = np.asarray(rows, dtype=np.int32).reshape(-1, n + m + 2)
        return cls(n, m, decay_rate, trunc, keys, np.asarray(cs, dtype=np.complex128))

    @classmethod
    def constant(cls, value, like: "FourierTaylorSeries"):
        return cls.from_terms(
            like.n,
            like.m,
            like.decay_rate,
            like.trunc,
            [((0,) * like.n, (0,) * like.m, 0, 0, value)] if value != 0 else [],
        )

    def _like(self, keys, coeffs, canonical=False):
        return FourierTaylorSeries(
            self.n, self.m, self.decay_rate, self.trunc, keys, coeffs, _canonical=canonical
        )

    # ---- key column views ---------------------------------------------

    @property
    def kcols(self):
        return self.keys[:, : self.n]

    @property
    def acols(self):
        return self.keys[:, self.n : self.n + self.m]

    @property
    def ecol(self):
        return self.keys[:, self.n + self.m]

    @property
    def pcol(self):
        return self.keys[:, self.n + self.m + 1]

    # ---- basic queries -------------------------------------------------

    @property
    def num_terms(self) -> int:
        return len(self.coeffs)

    def is_zero(self) -> bool:
        return len(self.coeffs) == 0

    def is_action_only(self) -> bool:
        """True when every term has k = 0, e = 0, p = 0 (pure y dependence)."""
        if self.is_zero():
            return True
        return (
            not self.kcols.any()
            and not self.ecol.any()
            and not self.pcol.any()
        )

    def max_abs_coeff(self) -> float:
        return float(np.abs(self.coeffs).max()) if len(self.coeffs) else 0.0

    def min_decay_index(self):
        """Smallest p in the support, or None for the zero series."""
        return int(self.pcol.min()) if len(self.coeffs) else None

    def dominant_min_decay_index(self, rel: float = 1e-9):
        """Smallest p among terms of relative size >= rel.

        Exact cancellations leave rounding dust ~1e-16 of the cancelled
        magnitude at the old keys; the decay-order bookkeeping of the scheme
        concerns the dominant support, so dust is excluded here.
        """
        if self.is_zero():
            return None
        big = np.abs(self.coeffs) >= rel * self.max_abs_coeff()
        return int(self.pcol[big].min())

    def coefficient(self, k, alpha, e, p) -> complex:
        row = np.asarray(tuple(k) + tuple(alpha) + (e, p), dtype=np.int32)
        hits = np.flatnonzero((self.keys == row).all(axis=1))
        return complex(self.coeffs[hits[0]]) if len(hits) else 0j

    def terms(self):
        for row, c in zip(self.keys, self.coeffs):
            yield (
                tuple(int(v) for v in row[: self.n]),
                tuple(int(v) for v in row[self.n : self.n + self.m]),
                int(row[self.n + self.m]),
                int(row[self.n + self.m + 1]),
                complex(c),
            )

    def _check_compatible(self, other: "FourierTaylorSeries"):
        if (
            self.n != other.n
            or self.m != other.m
            or self.decay_rate != other.decay_rate
            or self.trunc != other.trunc
        ):
            raise StructureMismatchError(
                "series disagree on dims, decay rate or truncation"
            )

    def __eq__(self, other):
        if not isinstance(other, FourierTaylorSeries):
            return NotImplemented
        return (
            self.n == other.n
            and self.m == other.m
            and self.decay_rate == other.decay_rate
            and self.trunc == other.trunc
            and self.keys.shape == other.keys.shape
            and bool((self.keys == other.keys).all())
            and bool((self.coeffs == other.coeffs).all())
        )

    __hash__ = None

    def __repr__(self):
        return "FourierTaylorSeries(n=%d, m=%d, terms=%d)" % (
            self.n,
            self.m,
            self.num_terms,
        )

    # ---- ring operations -------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = FourierTaylorSeries.constant(other, self)
        self._check_compatible(other)
        return self._like(
            np.concatenate([self.keys, other.keys]),
            np.concatenate([self.coeffs, other.coeffs]),
        )

    __radd__ = __add__

    def __neg__(self):
        return self._like(self.keys, -self.coeffs, canonical=True)

    def __sub__(self, other):
        return self + (-other if isinstance(other, FourierTaylorSeries) else -complex(other))

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, factor) -> "FourierTaylorSeries":
        factor = complex(factor)
        if factor == 0:
            return self._like(None, None)
        return self._like(self.keys, self.coeffs * factor, canonical=True)

    def __mul__(self, other):
        if isinstance(other, (int, float, complex)):
            return self.scale(other)
        self._check_compatible(other)
        return _series_mul(self, other)

    def __rmul__(self, other):
        return self.scale(other)

    def __truediv__(self, other):
        return self.scale(1.0 / complex(other))

    # ---- derivatives ----------------------------------------------------

    def partial_x(self, l: int) -> "FourierTaylorSeries":
        """d/dx_l: multiply each term by i*k_l."""
        factor = 1j * self.keys[:, l].astype(np.float64)
        keep = factor != 0
        return self._like(self.keys[keep], self.coeffs[keep] * factor[keep], canonical=True)

    def partial_y(self, i: int) -> "FourierTaylorSeries":
        """d/dy_i: alpha_i -> alpha_i - 1 with factor alpha_i."""
        col = self.n + i
        keep = self.keys[:, col] > 0
        keys = self.keys[keep].copy()
        coeffs = self.coeffs[keep] * keys[:, col]
        keys[:, col] -= 1
        return self._like(keys, coeffs)

    def partial_eta(self) -> "FourierTaylorSeries":
        keep = self.ecol == 1
        keys = self.keys[keep].copy()
        keys[:, self.n + self.m] = 0
        return self._like(keys, self.coeffs[keep])

    def partial_xi(self) -> "FourierTaylorSeries":
        """d/dxi: each term carries exp(-p*a*xi), so factor is -p*a."""
        factor = -self.decay_rate * self.pcol.astype(np.float64)
        keep = factor != 0
        return self._like(self.keys[keep], self.coeffs[keep] * factor[keep], canonical=True)

    def directional_x(self, omega) -> "FourierTaylorSeries":
        """Angle derivative along omega: multiply each term by i*(k.omega)."""
        omega = np.asarray(omega, dtype=np.float64)
        factor = 1j * (self.kcols.astype(np.float64) @ omega)
        keep = factor != 0
        return self._like(self.keys[keep], self.coeffs[keep] * factor[keep], canonical=True)

    def mul_y(self, i: int) -> "FourierTaylorSeries":
        """Multiply by the monomial y_i (truncating |alpha| > L_max)."""
        keys = self.keys.copy()
        keys[:, self.n + i] += 1
        keep = keys[:, self.n : self.n + self.m].sum(axis=1) <= self.trunc.L_max
        discard_tracker.record(float(np.abs(self.coeffs[~keep]).sum()))
        return self._like(keys[keep], self.coeffs[keep])

    # ---- evaluation ------------------------------------------------------

    def evaluate(self, y, x, eta=0.0, xi=0.0) -> complex:
        """Pointwise value; the universal oracle for the algebra tests."""
        if self.is_zero():
            return 0j
        y = np.asarray(y, dtype=np.complex128).reshape(self.m)
        x = np.asarray(x, dtype=np.complex128).reshape(self.n)
        vals = self.coeffs * np.exp(1j * (self.kcols @ x))
        if self.m:
            vals = vals * np.prod(
                np.power(y[None, :], self.acols), axis=1
            )
        e = self.ecol
        if e.any():
            vals = vals * np.power(complex(eta), e)
        vals = vals * np.exp(-self.decay_rate * complex(xi) * self.pcol)
        return complex(vals.sum())

    # ---- structure edits --------------------------------------------------

    def select(self, mask) -> "FourierTaylorSeries":
        return self._like(self.keys[mask], self.coeffs[mask], canonical=True)

    def eta_part(self) -> "FourierTaylorSeries":
        return self.select(self.ecol == 1)

    def eta_free_part(self) -> "FourierTaylorSeries":
        return self.select(self.ecol == 0)

    def drop_pure_constant(self) -> "FourierTaylorSeries":
        """Remove the k=0, alpha=0, e=0, p=0 term (additive energy constant)."""
        mask = ~((self.keys == 0).all(axis=1))
        return self.select(mask)

    def canonical_pruned(self, rel_tol: float = DEFAULT_PRUNE_REL) -> "FourierTaylorSeries":
        """Drop coefficients below rel_tol times the largest magnitude."""
        if self.is_zero():
            return self
        cutoff = rel_tol * self.max_abs_coeff()
        return self.select(np.abs(self.coeffs) >= cutoff)

    def is_real_symmetric(self, tol: float = 0.0) -> bool:
        """c(k, .) == conj(c(-k, .)) for every stored term."""
        if self.is_zero():
            return True
        flipped = self.keys.copy()
        flipped[:, : self.n] *= -1
        table = {row.tobytes(): c for row, c in zip(self.keys, self.coeffs)}
        for row, c in zip(flipped, self.coeffs):
            mate = table.get(row.tobytes())
            if mate is None:
                return False
            if abs(mate - np.conj(c)) > tol * max(1.0, abs(c)):
                return False
        return True

    # ---- serialization ----------------------------------------------------

    def to_payload(self) -> dict:
        terms = []
        for k, alpha, e, p, c in self.terms():
            terms.append(
                {
                    "k": list(k),
                    "alpha": list(alpha),
                    "e": e,
                    "p": p,
                    "re": c.real,
                    "im": c.imag,
                }
            )
        return {
            "n": self.n,
            "m": self.m,
            "a": self.decay_rate,
            "K_max": self.trunc.K_max,
            "L_max": self.trunc.L_max,
            "P_max": self.trunc.P_max,
            "terms": terms,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "FourierTaylorSeries":
        trunc = (payload["K_max"], payload["L_max"], payload["P_max"])
        terms = [
            (t["k"], t["alpha"], t["e"], t["p"], complex(t["re"], t["im"]))
            for t in payload["terms"]
        ]
        return cls.from_terms(payload["n"], payload["m"], payload["a"], trunc, terms)


def _series_mul(f: FourierTaylorSeries, g: FourierTaylorSeries) -> FourierTaylorSeries:
    if f.is_zero() or g.is_zero():
        return f._like(None, None)
    n, m = f.n, f.m
    K, L, P = f.trunc
    ncols = n + m + 2
    out_keys, out_coeffs = [], []
    chunk = max(1, _MUL_CHUNK_PAIRS // max(1, g.num_terms))
    for start in range(0, f.num_terms, chunk):
        fk = f.keys[start : start + chunk]
        fc = f.coeffs[start : start + chunk]
        keys = (fk[:, None, :] + g.keys[None, :, :]).reshape(-1, ncols)
        coeffs = (fc[:, None] * g.coeffs[None, :]).reshape(-1)
        if (keys[:, n + m] > 1).any():
            raise EtaDegreeError("product would carry eta^2; misuse of the scheme")
        ok = (
            (np.abs(keys[:, :n]).sum(axis=1) <= K)
            & (keys[:, n : n + m].sum(axis=1) <= L)
            & (keys[:, n + m + 1] <= P)
        )
        if not ok.all():
            discard_tracker.record(float(np.abs(coeffs[~ok]).sum()))
            keys, coeffs = keys[ok], coeffs[ok]
        out_keys.append(keys)
        out_coeffs.append(coeffs)
    return f._like(np.concatenate(out_keys), np.concatenate(out_coeffs))


# ---- norms ------------------------------------------------------------------


def _majorant(f: FourierTaylorSeries, params: WeightedNormParams, include_eta: bool) -> float:
    if f.is_zero():
        return 0.0
    if not include_eta and f.ecol.any():
        raise NormDomainError("weighted norm is defined for eta-free series only")
    weights = np.abs(f.coeffs)
    weights = weights * np.power(params.rho, f.acols.sum(axis=1).astype(np.float64))
    weights = weights * np.exp(
        params.sigma * np.abs(f.kcols).sum(axis=1).astype(np.float64)
    )
    return float(weights.sum())


def weighted_norm(f: FourierTaylorSeries, params: WeightedNormParams) -> DecayBound:
    """Majorant of the weighted Fourier norm on the real time ray.

    Returns (K, p) with K = sum |c| rho^|alpha| exp(|k| sigma) and p the
    smallest decay index in the support, i.e. norm(f) <= K exp(-p*a*xi).
    Raises NormDomainError when the series carries eta (never normalized).
    """
    K = _majorant(f, params, include_eta=False)
    p = f.min_decay_index()
    return DecayBound(K, 0 if p is None else p)


def majorant_with_eta(f: FourierTaylorSeries, params: WeightedNormParams) -> float:
    """Internal stopping norm for Lie series: eta contributes weight 1."""
    return _majorant(f, params, include_eta=True)


def vector_norm(fs, params: WeightedNormParams) -> DecayBound:
    """Norm of a vector of series: sum of component majorants, min decay."""
    K = 0.0
    p = None
    for f in fs:
        b = weighted_norm(f, params)
        K += b.K
        if not f.is_zero():
            p = b.p if p is None else min(p, b.p)
    return DecayBound(K, 0 if p is None else p)


# ---- Taylor split / reassembly ----------------------------------------------


def taylor_split(f: FourierTaylorSeries):
    """Split f (eta-free) into (A, B, C, R) with f = A + B.y + (1/2) C y.y + R.

    A collects |alpha| = 0, B_i the coefficient series of y_i, C the symmetric
    matrix of the quadratic form (C_ii is twice the y_i^2 coefficient), and R
    every term with |alpha| >= 3.  Coefficient series are returned with alpha
    stripped to zero; reassembly is exact.
    """
    if f.ecol.any():
        raise NormDomainError("taylor_split expects an eta-free series")
    m = f.m
    tot = f.acols.sum(axis=1)
    A = f.select(tot == 0)
    B = []
    for i in range(m):
        mask = (tot == 1) & (f.acols[:, i] == 1)
        keys = f.keys[mask].copy()
        keys[:, f.n + i] = 0
        B.append(f._like(keys, f.coeffs[mask]))
    C = [[None] * m for _ in range(m)]
    for i in range(m):
        for l in range(i, m):
            if i == l:
                mask = (tot == 2) & (f.acols[:, i] == 2)
                factor = 2.0
            else:
                mask = (tot == 2) & (f.acols[:, i] == 1) & (f.acols[:, l] == 1)
                factor = 1.0
            keys = f.keys[mask].copy()
            keys[:, f.n + i] = 0
            keys[:, f.n + l] = 0
            entry = f._like(keys, f.coeffs[mask] * factor)
            C[i][l] = entry
            C[l][i] = entry
    R = f.select(tot >= 3)
    return A, B, C, R


def reassemble_taylor(A, B, C, R) -> FourierTaylorSeries:
    """Exact inverse of taylor_split: A + sum B_i y_i + 1/2 sum C_il y_i y_l + R."""
    total = A + R
    m = A.m
    for i in range(m):
        total = total + B[i].mul_y(i)
    for i in range(m):
        for l in range(m):
            total = total + C[i][l].mul_y(i).mul_y(l).scale(0.5)
    return total


def shift_action_expansion(f: FourierTaylorSeries, y_star) -> FourierTaylorSeries:
    """Re-expand around y*: substitute y -> y + y* (exact binomial expansion).

    Used once at initialization to move the expansion point to the origin.
    """
    y_star = np.asarray(y_star, dtype=np.float64).reshape(f.m)
    if not np.any(y_star) or f.is_zero():
        return f
    terms = []
    for k, alpha, e, p, c in f.terms():
        stack = [((), 1.0)]
        for i, ai in enumerate(alpha):
            new_stack = []
            for prefix, w in stack:
                for j in range(ai + 1):
                    new_stack.append(
                        (prefix + (j,), w * math.comb(ai, j) * y_star[i] ** (ai - j))
                    )
            stack = new_stack
        for new_alpha, w in stack:
            if w != 0.0:
                terms.append((k, new_alpha, e, p, c * w))
    return FourierTaylorSeries.from_terms(f.n, f.m, f.decay_rate, f.trunc, terms)


def format_term(k, alpha, e, p, c) -> str:
    return "(k=%s a=%s e=%d p=%d) %s%+sj" % (
        list(k),
        list(alpha),
        e,
        p,
        fmt_float(c.real),
        fmt_float(c.imag),
    )
