"""Volterra kernel families, exact cell integrals, covariances and L2 distances.

Kernels are immutable and all operations are pure. Evaluation near the
diagonal s -> t is the delicate part: the Riemann-Liouville family behaves
like (t-s)^(H-1/2) and is integrated either in closed form or with a graded
(power-substituted) Gauss-Legendre rule that resolves the algebraic endpoint
singularity to the requested tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError, NumericalError

__all__ = [
    "TimeGrid",
    "QuadSpec",
    "Kernel",
    "BrownianKernel",
    "RiemannLiouvilleKernel",
    "ExpSumKernel",
    "TableKernel",
    "kernel_from_spec",
    "kernel_from_json",
    "kernel_eval",
    "kernel_cell_l2",
    "covariance",
    "kernel_l2mu_distance",
    "equal_energy_grid",
]


# ---------------------------------------------------------------------------
# Time grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing partition 0 = t_0 < t_1 < ... < t_n = T."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise DomainError("grid needs at least two points")
        if times[0] != 0.0:
            raise DomainError("grid must start at exactly 0")
        if not np.all(np.diff(times) > 0):
            raise DomainError("grid times must be strictly increasing")
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, n_cells: int, horizon: float) -> "TimeGrid":
        if n_cells < 1:
            raise DomainError("need at least one cell")
        if horizon <= 0:
            raise DomainError("horizon must be positive")
        return cls(np.linspace(0.0, horizon, n_cells + 1))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_cells(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.times[:-1] + self.times[1:])

    @property
    def mesh(self) -> float:
        return float(np.max(self.dt))

    def index_of(self, t: float) -> int:
        """Index i with times[i] == t (to 1e-12 relative), else DomainError."""
        i = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[i], t, rel_tol=1e-12, abs_tol=1e-15):
            raise DomainError(f"t={t} is not a grid point")
        return i


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadSpec:
    """Budget and tolerances for the graded Gauss-Legendre engine."""

    rel_tol: float = 1e-9
    abs_tol: float = 1e-14
    gauss_order: int = 16
    initial_panels: int = 8
    max_panels: int = 4096


DEFAULT_QUAD = QuadSpec()

_LEGENDRE_CACHE: dict = {}


def _leggauss01(order):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    if order not in _LEGENDRE_CACHE:
        x, w = np.polynomial.legendre.leggauss(order)
        _LEGENDRE_CACHE[order] = (0.5 * (x + 1.0), 0.5 * w)
    return _LEGENDRE_CACHE[order]


def _refining_gauss01(h, quad: QuadSpec, what: str):
    """Integrate h over [0,1] with panel doubling until two passes agree.

    h must accept a vector of points and return integrand values. Returns
    (value, error_bound); raises NumericalError past the panel budget.
    """
    nodes, weights = _leggauss01(quad.gauss_order)
    n_panels = quad.initial_panels
    prev = None
    val = 0.0
    diff = math.inf
    while n_panels <= quad.max_panels:
        width = 1.0 / n_panels
        offsets = np.arange(n_panels) * width
        pts = (offsets[:, None] + width * nodes[None, :]).ravel()
        vals = h(pts).reshape(n_panels, -1)
        val = float(np.sum(vals @ weights) * width)
        if prev is not None:
            diff = abs(val - prev)
            if diff <= max(quad.rel_tol * abs(val), quad.abs_tol):
                return val, diff
        prev = val
        n_panels *= 2
    raise NumericalError(
        f"quadrature for {what} did not converge within {quad.max_panels} panels",
        estimate=val,
        bound=diff,
    )


def _grading_power(gamma_total, singular: bool) -> int:
    """Power p for the substitution s = m*(1 - v^p) resolving (m-s)^gamma."""
    if not singular:
        return 1
    return max(2, math.ceil(9.0 / (1.0 + gamma_total)))


# ---------------------------------------------------------------------------
# Kernel families
# ---------------------------------------------------------------------------

class Kernel:
    """Base class; subclasses are immutable parametric Volterra kernels."""

    kind = "abstract"
    horizon: float

    # -- evaluation ---------------------------------------------------------

    def lag_eval(self, t, lag, s):
        """K(t, s) from the stable lag t - s (arrays supported)."""
        raise NotImplementedError

    def cell_l2(self, t: float, a: float, b: float) -> float:
        """Integral of K(t, r)^2 over [a, b]."""
        raise NotImplementedError

    def cell_l2_rows(self, t, a, b):
        """Vectorized cell_l2 over arrays a < b for a fixed t."""
        raise NotImplementedError

    def total_l2(self, t: float) -> float:
        """Gamma(t) = integral of K(t, r)^2 over [0, t]."""
        if t == 0.0:
            return 0.0
        return self.cell_l2(t, 0.0, t)

    # -- structure queries --------------------------------------------------

    @property
    def diag_exponent(self):
        """Algebraic exponent of K(t,s) ~ (t-s)^gamma at the diagonal, or None."""
        return None

    @property
    def stationary(self) -> bool:
        """True when K(t, s) depends on t - s only."""
        return False

    @property
    def hurst_exponent(self) -> float:
        """Scaling exponent used for discretization-bias bounds."""
        return 0.5

    # -- serialization ------------------------------------------------------

    def spec_dict(self) -> dict:
        raise NotImplementedError

    @property
    def kernel_id(self) -> str:
        return json.dumps(self.spec_dict(), sort_keys=True, separators=(",", ":"))

    def __repr__(self):
        return f"{type(self).__name__}({self.kernel_id})"

    def __eq__(self, other):
        return isinstance(other, Kernel) and self.kernel_id == other.kernel_id

    def __hash__(self):
        return hash(self.kernel_id)


@dataclass(frozen=True, eq=False)
class BrownianKernel(Kernel):
    """K(t, s) = 1 on s < t: the driving Brownian motion itself."""

    horizon: float = 1.0
    kind = "brownian"

    def __post_init__(self):
        if self.horizon <= 0:
            raise DomainError("field 'T': horizon must be positive")

    def lag_eval(self, t, lag, s):
        return np.ones_like(np.asarray(lag, dtype=float))

    def cell_l2(self, t, a, b):
        return b - a

    def cell_l2_rows(self, t, a, b):
        return np.asarray(b, dtype=float) - np.asarray(a, dtype=float)

    @property
    def stationary(self):
        return True

    def spec_dict(self):
        return {"kind": "brownian", "T": self.horizon}


@dataclass(frozen=True, eq=False)
class RiemannLiouvilleKernel(Kernel):
    """K(t, s) = sqrt(2H) (t-s)^(H-1/2), normalized so Gamma(t) = t^(2H)."""

    hurst: float
    horizon: float = 1.0
    kind = "rl"

    def __post_init__(self):
        if not 0.0 < self.hurst < 1.0:
            raise DomainError("field 'hurst': must lie strictly inside (0, 1)")
        if self.horizon <= 0:
            raise DomainError("field 'T': horizon must be positive")

    def lag_eval(self, t, lag, s):
        h = self.hurst
        return math.sqrt(2.0 * h) * np.asarray(lag, dtype=float) ** (h - 0.5)

    def cell_l2(self, t, a, b):
        # K^2 = 2H (t-r)^(2H-1) integrates exactly to the power difference
        h2 = 2.0 * self.hurst
        return max(t - a, 0.0) ** h2 - max(t - b, 0.0) ** h2

    def cell_l2_rows(self, t, a, b):
        h2 = 2.0 * self.hurst
        ta = np.maximum(t - np.asarray(a, dtype=float), 0.0)
        tb = np.maximum(t - np.asarray(b, dtype=float), 0.0)
        return ta ** h2 - tb ** h2

    @property
    def diag_exponent(self):
        return self.hurst - 0.5

    @property
    def stationary(self):
        return True

    @property
    def hurst_exponent(self):
        return self.hurst

    def spec_dict(self):
        return {"kind": "rl", "hurst": self.hurst, "T": self.horizon}


@dataclass(frozen=True, eq=False)
class ExpSumKernel(Kernel):
    """K(t, s) = sum_j c_j exp(-lambda_j (t - s)): Markovian (OU-mixture) kernel."""

    weights: tuple
    rates: tuple
    horizon: float = 1.0
    kind = "expsum"

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        r = tuple(float(x) for x in self.rates)
        if len(w) == 0 or len(w) != len(r):
            raise DomainError("field 'weights'/'rates': equal nonzero lengths required")
        if any(not math.isfinite(x) for x in w):
            raise DomainError("field 'weights': must be finite")
        if any((not math.isfinite(x)) or x <= 0 for x in r):
            raise DomainError("field 'rates': must be finite and strictly positive")
        if self.horizon <= 0:
            raise DomainError("field 'T': horizon must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rates", r)

    def lag_eval(self, t, lag, s):
        lag = np.asarray(lag, dtype=float)
        c = np.asarray(self.weights)
        lam = np.asarray(self.rates)
        return np.exp(-np.multiply.outer(lag, lam)) @ c

    def cell_l2(self, t, a, b):
        return float(self.cell_l2_rows(t, np.asarray([a]), np.asarray([b]))[0])

    def cell_l2_rows(self, t, a, b):
        # K^2 expands into exponentials with summed rates, integrable exactly
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        c = np.asarray(self.weights)
        lam = np.asarray(self.rates)
        cc = np.multiply.outer(c, c).ravel()
        mu = np.add.outer(lam, lam).ravel()
        ea = np.exp(-np.multiply.outer(t - a, mu))
        eb = np.exp(-np.multiply.outer(t - b, mu))
        return (eb - ea) @ (cc / mu)

    @property
    def stationary(self):
        return True

    def spec_dict(self):
        return {
            "kind": "expsum",
            "weights": list(self.weights),
            "rates": list(self.rates),
            "T": self.horizon,
        }


@dataclass(frozen=True, eq=False)
class TableKernel(Kernel):
    """Kernel given by samples K(t_i, s_j) on a grid, bilinearly interpolated.

    Serves ingestion and regression tests only; queries outside the stored
    grid are domain errors.
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    kind = "table"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        n = self.grid.times.size
        if vals.shape != (n, n):
            raise DomainError("field 'values': must be square over the grid times")
        if not np.all(np.isfinite(vals)):
            raise DomainError("field 'values': must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def horizon(self):
        return self.grid.horizon

    def _check_range(self, t, s):
        times = self.grid.times
        if np.any(t < times[0]) or np.any(t > times[-1]) or np.any(
            np.asarray(s) < times[0]
        ) or np.any(np.asarray(s) > times[-1]):
            raise DomainError("table kernel query outside stored grid")

    def _interp_row(self, t, s):
        """Bilinear interpolation of the sample table at (t, s arrays)."""
        times = self.grid.times
        self._check_range(t, s)
        i = np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2)
        wt = (t - times[i]) / (times[i + 1] - times[i])
        row = (1.0 - wt) * self.values[i] + wt * self.values[i + 1]
        s = np.asarray(s, dtype=float)
        j = np.clip(np.searchsorted(times, s, side="right") - 1, 0, times.size - 2)
        ws = (s - times[j]) / (times[j + 1] - times[j])
        return (1.0 - ws) * row[j] + ws * row[j + 1]

    def lag_eval(self, t, lag, s):
        return self._interp_row(float(t), np.asarray(s, dtype=float))

    def cell_l2(self, t, a, b):
        # piecewise linear in s along fixed t, so K^2 is piecewise quadratic
        # and the closed form (Kl^2 + Kl*Kr + Kr^2)/3 per piece is exact
        times = self.grid.times
        self._check_range(t, (a, b))
        cuts = times[(times > a) & (times < b)]
        pts = np.concatenate(([a], cuts, [b]))
        k = self._interp_row(float(t), pts)
        kl, kr = k[:-1], k[1:]
        return float(np.sum((kl * kl + kl * kr + kr * kr) / 3.0 * np.diff(pts)))

    def cell_l2_rows(self, t, a, b):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return np.array([self.cell_l2(t, ai, bi) for ai, bi in zip(a, b)])

    def spec_dict(self):
        return {
            "kind": "table",
            "times": [float(x) for x in self.grid.times],
            "values": [[float(v) for v in row] for row in self.values],
        }


# ---------------------------------------------------------------------------
# Spec files
# ---------------------------------------------------------------------------

def kernel_from_spec(spec: dict) -> Kernel:
    """Build a kernel from its JSON-style spec dict."""
    if not isinstance(spec, dict):
        raise DomainError("kernel spec must be a JSON object")
    kind = spec.get("kind")
    try:
        if kind == "brownian":
            return BrownianKernel(horizon=float(spec["T"]))
        if kind == "rl":
            return RiemannLiouvilleKernel(
                hurst=float(spec["hurst"]), horizon=float(spec["T"])
            )
        if kind == "expsum":
            return ExpSumKernel(
                weights=tuple(spec["weights"]),
                rates=tuple(spec["rates"]),
                horizon=float(spec["T"]),
            )
        if kind == "table":
            return TableKernel(
                grid=TimeGrid(np.asarray(spec["times"], dtype=float)),
                values=np.asarray(spec["values"], dtype=float),
            )
    except KeyError as exc:
        raise DomainError(f"kernel spec missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise DomainError(f"malformed kernel spec: {exc}") from None
    raise DomainError(f"field 'kind': unknown kernel kind {kind!r}")


def kernel_from_json(text: str) -> Kernel:
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"malformed kernel spec JSON: {exc}") from None
    return kernel_from_spec(spec)


# ---------------------------------------------------------------------------
# Pointwise evaluation and cell integrals
# ---------------------------------------------------------------------------

def kernel_eval(k: Kernel, t: float, s: float) -> float:
    """K(t, s) for 0 <= s < t <= T (strict inequality: the RL diagonal is singular)."""
    if s >= t:
        raise DomainError(f"kernel_eval requires s < t, got s={s}, t={t}")
    if s < 0 or t > k.horizon * (1 + 1e-12):
        raise DomainError("kernel_eval outside [0, T]")
    return float(k.lag_eval(t, np.asarray(t - s), np.asarray(s)))


def kernel_cell_l2(k: Kernel, t: float, a: float, b: float) -> float:
    """Exact integral of K(t, r)^2 over a cell [a, b] with 0 <= a < b <= t."""
    if a >= b:
        raise DomainError(f"cell requires a < b, got a={a}, b={b}")
    if a < 0 or b > t * (1 + 1e-12):
        raise DomainError("cell must satisfy 0 <= a < b <= t")
    return float(k.cell_l2(t, a, min(b, t)))


# ---------------------------------------------------------------------------
# Covariance R(t, u) = int_0^(t^u) K1(t,s) K2(u,s) ds
# ---------------------------------------------------------------------------

def _covariance_quad(k1, k2, t, u, quad):
    """Graded-quadrature fallback for covariance integrals."""
    m = min(t, u)
    gamma = 0.0
    singular = False
    for k, tau in ((k1, t), (k2, u)):
        g = k.diag_exponent
        if g is not None and math.isclose(tau, m, rel_tol=1e-12):
            gamma += g
            singular = True
    p = _grading_power(gamma, singular)

    def h(v):
        w = m * v ** p
        jac = m * p * v ** (p - 1)
        s = np.maximum(m - w, 0.0)
        f1 = k1.lag_eval(t, (t - m) + w, s)
        f2 = k2.lag_eval(u, (u - m) + w, s)
        return f1 * f2 * jac

    val, _ = _refining_gauss01(h, quad, f"covariance({t},{u})")
    return val


def _cov_closed(k1, k2, t, u):
    """Closed-form covariance for the pairs that admit one, else None."""
    m = min(t, u)
    a, b = sorted(((k1, t), (k2, u)), key=lambda p: p[0].kind)
    (ka, ta), (kb, tb) = a, b
    kinds = (ka.kind, kb.kind)

    if kinds == ("brownian", "brownian"):
        return m
    if kinds == ("brownian", "rl"):
        h = kb.hurst
        return (
            math.sqrt(2.0 * h) / (h + 0.5)
            * (tb ** (h + 0.5) - (tb - m) ** (h + 0.5))
        )
    if kinds == ("brownian", "expsum"):
        lam = np.asarray(kb.rates)
        c = np.asarray(kb.weights)
        return float(np.sum(c / lam * (np.exp(-lam * (tb - m)) - np.exp(-lam * tb))))
    if kinds == ("expsum", "expsum"):
        lam = np.asarray(ka.rates)
        mu = np.asarray(kb.rates)
        cc = np.multiply.outer(np.asarray(ka.weights), np.asarray(kb.weights))
        ee = np.exp(
            -np.add.outer(lam * (ta - m), mu * (tb - m))
        ) - np.exp(-np.add.outer(lam * ta, mu * tb))
        return float(np.sum(cc * ee / np.add.outer(lam, mu)))
    if kinds == ("expsum", "rl"):
        # stable only when the exp-sum time does not trail the RL time
        h = kb.hurst
        if ta < tb - 1e-12 * max(ta, tb):
            return None
        aa = h + 0.5
        lam = np.asarray(ka.rates)
        c = np.asarray(ka.weights)
        ginc = special.gammainc(aa, lam * tb) - special.gammainc(aa, lam * (tb - m))
        terms = c * np.exp(-lam * (ta - tb)) * lam ** (-aa) * ginc
        return float(math.sqrt(2.0 * h) * special.gamma(aa) * np.sum(terms))
    if kinds == ("rl", "rl"):
        if ka.hurst != kb.hurst:
            return None
        h = ka.hurst
        if math.isclose(ta, tb, rel_tol=1e-14):
            return m ** (2.0 * h)
        lo, hi = min(ta, tb), max(ta, tb)
        hyp = special.hyp2f1(1.0, 0.5 - h, 1.5 + h, lo / hi)
        return 2.0 * h * lo ** (h + 0.5) * hi ** (h - 0.5) * hyp / (h + 0.5)
    return None


def covariance(k1: Kernel, k2: Kernel, t: float, u: float,
               quad: QuadSpec = DEFAULT_QUAD) -> float:
    """E[X1_t X2_u] = int_0^(t^u) K1(t,s) K2(u,s) ds.

    Uses exact closed forms where the pair admits one and a graded
    Gauss-Legendre rule otherwise.

    Parameters
    ----------
    k1, k2 : Kernel
    t, u : float
        Times in (0, T].
    quad : QuadSpec
        Tolerances and budget for the quadrature fallback.
    """
    for x in (t, u):
        if not 0.0 < x <= max(k1.horizon, k2.horizon) * (1 + 1e-12):
            raise DomainError(f"covariance time {x} outside (0, T]")
    closed = _cov_closed(k1, k2, t, u)
    if closed is not None:
        return float(closed)
    return _covariance_quad(k1, k2, t, u, quad)


# ---------------------------------------------------------------------------
# L2(mu) distance over the causal triangle
# ---------------------------------------------------------------------------

def kernel_l2mu_distance(k1: Kernel, k2: Kernel,
                         quad: QuadSpec = DEFAULT_QUAD) -> float:
    """sqrt( int_0^T int_0^t (K1 - K2)^2 ds dt ) for kernels sharing a horizon."""
    if not math.isclose(k1.horizon, k2.horizon, rel_tol=1e-12):
        raise DomainError("kernels must share the horizon T")
    T = k1.horizon

    if k1.stationary and k2.stationary:
        # lag w = t - s has triangle measure (T - w) dw
        gamma = 0.0
        singular = False
        for k in (k1, k2):
            g = k.diag_exponent
            if g is not None:
                gamma = min(gamma, 2.0 * g) if singular else 2.0 * g
                singular = True
        p = _grading_power(gamma, singular)

        def h(v):
            w = T * v ** p
            jac = T * p * v ** (p - 1)
            dk = k1.lag_eval(T, w, None) - k2.lag_eval(T, w, None)
            return dk * dk * (T - w) * jac

        sq, _ = _refining_gauss01(h, quad, "l2mu(lag)")
        return math.sqrt(max(sq, 0.0))

    # Non-stationary pair (tables): nested quadrature, inner graded in s,
    # outer in t. Bilinear tables put integrand kinks at every node, so the
    # tolerance is softened to 1e-6; table interpolation error dominates far
    # above that anyway.
    inner_quad = QuadSpec(
        rel_tol=max(quad.rel_tol, 1e-6),
        abs_tol=max(quad.abs_tol, 1e-10),
        gauss_order=quad.gauss_order,
        initial_panels=16,
        max_panels=quad.max_panels,
    )

    def inner(tv):
        gamma = 0.0
        singular = False
        for k in (k1, k2):
            g = k.diag_exponent
            if g is not None:
                gamma = min(gamma, 2.0 * g) if singular else 2.0 * g
                singular = True
        p = _grading_power(gamma, singular)

        def h(v):
            w = tv * v ** p
            jac = tv * p * v ** (p - 1)
            s = np.maximum(tv - w, 0.0)
            dk = k1.lag_eval(tv, w, s) - k2.lag_eval(tv, w, s)
            return dk * dk * jac

        val, _ = _refining_gauss01(h, inner_quad, f"l2mu inner({tv})")
        return val

    # the outer tolerance must sit above the inner integrals' noise floor
    outer = QuadSpec(
        rel_tol=max(quad.rel_tol, 3e-5),
        abs_tol=max(quad.abs_tol, 1e-9),
        gauss_order=quad.gauss_order,
        initial_panels=8,
        max_panels=128,
    )

    def houter(pts):
        return np.array([inner(T * v) * T for v in pts])

    sq, _ = _refining_gauss01(houter, outer, "l2mu(outer)")
    return math.sqrt(max(sq, 0.0))


# ---------------------------------------------------------------------------
# Energy-adapted grids
# ---------------------------------------------------------------------------

def equal_energy_grid(k: Kernel, n_cells: int) -> TimeGrid:
    """Grid whose cells carry equal increments of Gamma(t) = int_0^t K(t,r)^2 dr.

    For singular integrators (rough kernels) this is the graded mesh that
    keeps midpoint Stieltjes sums accurate; for the Brownian kernel it is the
    uniform grid.
    """
    if n_cells < 1:
        raise DomainError("need at least one cell")
    T = k.horizon
    if isinstance(k, BrownianKernel):
        return TimeGrid.uniform(n_cells, T)
    if isinstance(k, RiemannLiouvilleKernel):
        frac = np.arange(n_cells + 1) / n_cells
        return TimeGrid(T * frac ** (1.0 / (2.0 * k.hurst)))
    total = k.total_l2(T)
    times = [0.0]
    for i in range(1, n_cells):
        target = total * i / n_cells
        lo, hi = times[-1], T
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if k.total_l2(mid) < target:
                lo = mid
            else:
                hi = mid
        times.append(0.5 * (lo + hi))
    times.append(T)
    return TimeGrid(np.asarray(times))
