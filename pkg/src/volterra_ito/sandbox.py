"""Exact Gaussian Malliavin calculus on polynomials of n i.i.d. normals.

Polynomials in standard Gaussian coordinates form the chain-rule core on
which the derivation D (coordinatewise partial derivative), the divergence
delta (its adjoint) and the predictable projection Pi (coordinate i
conditions on coordinates < i) act in closed form. Expectations reduce to
Wick/Isserlis moments, so every operator identity can be checked to machine
precision with no simulation.

Monomials are stored sparsely: a term key is a sorted tuple of
(coordinate, power) pairs, so 256-coordinate functionals with few active
variables per monomial stay cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "GaussPoly",
    "PolyField",
    "wick_expectation",
    "derive",
    "diverge",
    "project_predictable",
    "field_inner",
    "check_adjointness",
    "check_product_rule",
    "check_ortho_identity",
    "check_isometry",
    "factorization_defect",
    "discretized_bm_square",
    "sandbox_suite",
]


def _moment(k: int) -> float:
    """E[xi^k] for xi ~ N(0,1): (k-1)!! for even k, 0 for odd."""
    if k % 2 == 1:
        return 0.0
    out = 1.0
    for j in range(k - 1, 0, -2):
        out *= j
    return out


def _merge_keys(key1, key2):
    exps = dict(key1)
    for (c, p) in key2:
        exps[c] = exps.get(c, 0) + p
    return tuple(sorted(exps.items()))


@dataclass(frozen=True)
class GaussPoly:
    """Sparse polynomial in n i.i.d. standard Gaussian coordinates."""

    n: int
    terms: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for key, coef in self.terms.items():
            if coef == 0.0:
                continue
            for (c, p) in key:
                if not 0 <= c < self.n or p < 1:
                    raise DomainError(f"bad exponent entry {key} for n={self.n}")
            clean[key] = float(coef)
        object.__setattr__(self, "terms", clean)

    # -- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, n: int, value: float) -> "GaussPoly":
        return cls(n, {(): float(value)} if value != 0.0 else {})

    @classmethod
    def coordinate(cls, n: int, i: int) -> "GaussPoly":
        return cls(n, {((i, 1),): 1.0})

    @classmethod
    def zero(cls, n: int) -> "GaussPoly":
        return cls(n, {})

    # -- algebra ------------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = GaussPoly.constant(self.n, other)
        out = dict(self.terms)
        for key, coef in other.terms.items():
            out[key] = out.get(key, 0.0) + coef
        return GaussPoly(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return GaussPoly(self.n, {k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = GaussPoly.constant(self.n, other)
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return GaussPoly(self.n, {k: c * other for k, c in self.terms.items()})
        out: dict = {}
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                key = _merge_keys(k1, k2)
                out[key] = out.get(key, 0.0) + c1 * c2
        return GaussPoly(self.n, out)

    __rmul__ = __mul__

    # -- calculus -----------------------------------------------------------

    def partial(self, i: int) -> "GaussPoly":
        """Formal partial derivative with respect to coordinate i."""
        out: dict = {}
        for key, coef in self.terms.items():
            exps = dict(key)
            p = exps.get(i)
            if not p:
                continue
            if p == 1:
                del exps[i]
            else:
                exps[i] = p - 1
            new = tuple(sorted(exps.items()))
            out[new] = out.get(new, 0.0) + coef * p
        return GaussPoly(self.n, out)

    # -- inspection ---------------------------------------------------------

    @property
    def max_abs_coef(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((sum(p for (_c, p) in k) for k in self.terms), default=0)


@dataclass(frozen=True)
class PolyField:
    """R^n-valued polynomial field: one GaussPoly per coordinate."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise DomainError("field needs at least one component")
        n = comps[0].n
        if any(c.n != n for c in comps) or len(comps) != n:
            raise DomainError("field must have exactly n components over n coordinates")
        object.__setattr__(self, "components", comps)

    @property
    def n(self) -> int:
        return self.components[0].n

    @classmethod
    def from_polys(cls, polys) -> "PolyField":
        return cls(tuple(polys))


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def wick_expectation(f: GaussPoly) -> float:
    """E[f(xi)] via Isserlis: per-monomial product of single-coordinate moments."""
    total = 0.0
    for key, coef in f.terms.items():
        m = coef
        for (_c, p) in key:
            m *= _moment(p)
            if m == 0.0:
                break
        total += m
    return total


def derive(f: GaussPoly) -> PolyField:
    """The derivation D: component i is the partial derivative in coordinate i."""
    # single pass over the terms: each monomial contributes to the partials
    # of exactly its active coordinates
    comps: list = [{} for _ in range(f.n)]
    for key, coef in f.terms.items():
        for pos, (c, p) in enumerate(key):
            if p == 1:
                new = key[:pos] + key[pos + 1:]
            else:
                new = key[:pos] + ((c, p - 1),) + key[pos + 1:]
            out = comps[c]
            out[new] = out.get(new, 0.0) + coef * p
    return PolyField(tuple(GaussPoly(f.n, d) for d in comps))


def diverge(u: PolyField) -> GaussPoly:
    """Gaussian divergence: delta(u) = sum_i xi_i u_i - sum_i du_i/dxi_i."""
    n = u.n
    acc: dict = {}
    for i, comp in enumerate(u.components):
        for key, coef in (GaussPoly.coordinate(n, i) * comp).terms.items():
            acc[key] = acc.get(key, 0.0) + coef
        for key, coef in comp.partial(i).terms.items():
            acc[key] = acc.get(key, 0.0) - coef
    return GaussPoly(n, acc)


def _condition_term(key, coef, i):
    """Condition one monomial on coordinates < i: later factors become moments."""
    kept = []
    for (c, p) in key:
        if c < i:
            kept.append((c, p))
        else:
            coef *= _moment(p)
            if coef == 0.0:
                return None, 0.0
    return tuple(kept), coef


def project_predictable(u: PolyField) -> PolyField:
    """Componentwise conditional expectation E[u_i | xi_0, ..., xi_{i-1}]."""
    comps = []
    for i, comp in enumerate(u.components):
        out: dict = {}
        for key, coef in comp.terms.items():
            new, c = _condition_term(key, coef, i)
            if c != 0.0:
                out[new] = out.get(new, 0.0) + c
        comps.append(GaussPoly(comp.n, out))
    return PolyField(tuple(comps))


def field_inner(u: PolyField, v: PolyField) -> GaussPoly:
    """Pointwise inner product sum_i u_i v_i as a polynomial."""
    acc: dict = {}
    for a, b in zip(u.components, v.components):
        for key, coef in (a * b).terms.items():
            acc[key] = acc.get(key, 0.0) + coef
    return GaussPoly(u.n, acc)


# ---------------------------------------------------------------------------
# Identity checks
# ---------------------------------------------------------------------------

def check_adjointness(f: GaussPoly, u: PolyField) -> float:
    """|E[f delta(u)] - E[<Df, u>]|; zero up to rounding by adjointness."""
    lhs = wick_expectation(f * diverge(u))
    rhs = wick_expectation(field_inner(derive(f), u))
    return abs(lhs - rhs)


def check_product_rule(f: GaussPoly, u: PolyField) -> float:
    """Max coefficient of delta(f u) - (f delta(u) - <Df, u>); identically zero."""
    fu = PolyField(tuple(f * c for c in u.components))
    residual = diverge(fu) - (f * diverge(u) - field_inner(derive(f), u))
    return residual.max_abs_coef


def check_ortho_identity(f: GaussPoly) -> float:
    """|E<Df, Pi Df> - E|Pi Df|^2|; zero since Pi is an orthogonal projection."""
    u = derive(f)
    p = project_predictable(u)
    lhs = wick_expectation(field_inner(u, p))
    rhs = wick_expectation(field_inner(p, p))
    return abs(lhs - rhs)


def check_isometry(u: PolyField) -> tuple:
    """Skorokhod isometry data: (lhs, rhs_hs, rhs_exact).

    lhs = E[delta(u)^2] always equals rhs_exact, which carries the
    non-symmetrized trace sum_{ij} E[d_i u_j d_j u_i]; rhs_hs carries the
    squared Hilbert-Schmidt norm sum_{ij} E[(d_i u_j)^2] and is reported for
    comparison only (the two readings differ off the exact identity).
    """
    d = diverge(u)
    lhs = wick_expectation(d * d)
    norm2 = wick_expectation(field_inner(u, u))
    trace_exact = 0.0
    trace_hs = 0.0
    partials = [[u.components[j].partial(i) for j in range(u.n)] for i in range(u.n)]
    for i in range(u.n):
        for j in range(u.n):
            trace_exact += wick_expectation(partials[i][j] * partials[j][i])
            trace_hs += wick_expectation(partials[i][j] * partials[i][j])
    return lhs, norm2 + trace_hs, norm2 + trace_exact


def factorization_defect(f: GaussPoly) -> GaussPoly:
    """delta(Pi D f) - (f - E[f]): the finite-dimensional factorization residue.

    Identically zero for multilinear f; for diagonal chaos it is the
    discrete-time residue that vanishes in the continuum limit.
    """
    co = diverge(project_predictable(derive(f)))
    return co - (f - wick_expectation(f))


def discretized_bm_square(n: int) -> GaussPoly:
    """(sum_i sqrt(1/n) xi_i)^2: the n-cell discretization of W_1^2."""
    if n < 1:
        raise DomainError("need n >= 1 cells")
    a = 1.0 / math.sqrt(n)
    s = GaussPoly(n, {((i, 1),): a for i in range(n)})
    return s * s


# ---------------------------------------------------------------------------
# Randomized suite
# ---------------------------------------------------------------------------

def _random_poly(rng, n, max_degree=8, max_terms=5, coef_lo=-3, coef_hi=3):
    terms: dict = {}
    for _ in range(rng.integers(1, max_terms + 1)):
        degree = int(rng.integers(0, max_degree + 1))
        exps: dict = {}
        for _ in range(degree):
            c = int(rng.integers(0, n))
            exps[c] = exps.get(c, 0) + 1
        key = tuple(sorted(exps.items()))
        coef = 0
        while coef == 0:
            coef = int(rng.integers(coef_lo, coef_hi + 1))
        terms[key] = terms.get(key, 0.0) + coef
    return GaussPoly(n, terms)


def _random_field(rng, n, **kw):
    comps = []
    for _ in range(n):
        if rng.random() < 0.25:
            comps.append(GaussPoly.zero(n))
        else:
            comps.append(_random_poly(rng, n, **kw))
    return PolyField(tuple(comps))


def sandbox_suite(cases: int = 200, seed: int = 20240801) -> dict:
    """Run the exact randomized suite; returns max residuals per identity.

    Covers adjointness, the product rule, the orthogonality identity,
    idempotence and self-adjointness of the projection, the exact isometry
    (with the Hilbert-Schmidt-vs-exact trace gap reported, not asserted),
    and the factorization-defect continuum family.
    """
    rng = np.random.default_rng(seed)
    res = {
        "cases": cases,
        "adjointness_max": 0.0,
        "product_rule_max": 0.0,
        "ortho_identity_max": 0.0,
        "projection_idempotence_max": 0.0,
        "projection_self_adjoint_max": 0.0,
        "isometry_exact_max": 0.0,
        "isometry_hs_gap_max": 0.0,
        "defect_multilinear_max": 0.0,
    }
    for _ in range(cases):
        n = int(rng.integers(2, 7))
        f = _random_poly(rng, n)
        u = _random_field(rng, n)
        v = _random_field(rng, n)

        lhs = wick_expectation(f * diverge(u))
        rhs = wick_expectation(field_inner(derive(f), u))
        scale = max(1.0, abs(lhs), abs(rhs))
        res["adjointness_max"] = max(res["adjointness_max"], abs(lhs - rhs) / scale)

        fu = PolyField(tuple(f * c for c in u.components))
        lhs_poly = diverge(fu)
        rhs_poly = f * diverge(u) - field_inner(derive(f), u)
        pscale = max(1.0, lhs_poly.max_abs_coef, rhs_poly.max_abs_coef)
        res["product_rule_max"] = max(
            res["product_rule_max"], (lhs_poly - rhs_poly).max_abs_coef / pscale
        )

        df = derive(f)
        p = project_predictable(df)
        o_lhs = wick_expectation(field_inner(df, p))
        o_rhs = wick_expectation(field_inner(p, p))
        oscale = max(1.0, abs(o_lhs), abs(o_rhs))
        res["ortho_identity_max"] = max(
            res["ortho_identity_max"], abs(o_lhs - o_rhs) / oscale
        )

        pu = project_predictable(u)
        ppu = project_predictable(pu)
        idem = max(
            (a - b).max_abs_coef
            for a, b in zip(pu.components, ppu.components)
        )
        res["projection_idempotence_max"] = max(
            res["projection_idempotence_max"],
            idem / max(1.0, max(c.max_abs_coef for c in pu.components)),
        )

        sa_lhs = wick_expectation(field_inner(pu, v))
        sa_rhs = wick_expectation(field_inner(u, project_predictable(v)))
        sscale = max(1.0, abs(sa_lhs), abs(sa_rhs))
        res["projection_self_adjoint_max"] = max(
            res["projection_self_adjoint_max"], abs(sa_lhs - sa_rhs) / sscale
        )

        iso_lhs, iso_hs, iso_exact = check_isometry(u)
        iscale = max(1.0, abs(iso_lhs), abs(iso_exact))
        res["isometry_exact_max"] = max(
            res["isometry_exact_max"], abs(iso_lhs - iso_exact) / iscale
        )
        res["isometry_hs_gap_max"] = max(
            res["isometry_hs_gap_max"], abs(iso_hs - iso_exact) / iscale
        )

        # multilinear polynomial: distinct coordinates per monomial
        terms = {}
        for _ in range(int(rng.integers(1, 5))):
            size = int(rng.integers(0, n + 1))
            coords = tuple(sorted(rng.choice(n, size=size, replace=False)))
            key = tuple((int(c), 1) for c in coords)
            terms[key] = terms.get(key, 0.0) + float(rng.integers(1, 4))
        ml = GaussPoly(n, terms)
        res["defect_multilinear_max"] = max(
            res["defect_multilinear_max"], factorization_defect(ml).max_abs_coef
        )

    defect = {}
    for n in (4, 16, 64, 256):
        d = factorization_defect(discretized_bm_square(n))
        l2 = math.sqrt(wick_expectation(d * d))
        expected = math.sqrt(2.0 / n)
        defect[str(n)] = {
            "l2_norm": l2,
            "expected": expected,
            "rel_error": abs(l2 - expected) / expected,
        }
    res["defect_bm_square"] = defect
    res["pass"] = bool(
        all(
            res[key] <= 1e-12
            for key in (
                "adjointness_max",
                "product_rule_max",
                "ortho_identity_max",
                "projection_idempotence_max",
                "projection_self_adjoint_max",
                "isometry_exact_max",
                "defect_multilinear_max",
            )
        )
        and all(v["rel_error"] <= 1e-12 for v in defect.values())
    )
    return res
