"""Adaptive quadrature and local-integrability decisions.

Two jobs: accurate definite integrals (15-point Gauss-Kronrod panels,
globally adaptive, infinite endpoints through the x = tan(u) substitution),
and a decision procedure for whether a nonnegative function is integrable
next to a point or at an infinite endpoint.  The decision procedure prefers
an exact structural exponent when the caller has one; otherwise it measures
the decay of integrals over dyadic shells closing in on the point and
classifies the implied local power, with an inconclusive band around the
harmonic boundary.
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_left, insort
from dataclasses import dataclass, field

import numpy as np

from .expr import DomainFault

__all__ = [
    "QuadResult", "IntegrabilityVerdict", "QuadratureBudgetError",
    "INTEGRABLE", "DIVERGENT", "INCONCLUSIVE",
    "integrate", "local_integrability", "integrability_at_infinity",
    "CumulativeIntegral", "TailIntegral", "vectorize_scalar",
    "EPS_CLS_DEFAULT",
]

INTEGRABLE = "integrable"
DIVERGENT = "divergent"
INCONCLUSIVE = "inconclusive"

EPS_CLS_DEFAULT = 0.05
# comparison slack so exponents landing exactly on the band edge (within
# quadrature accuracy) classify deterministically
_EDGE_SLACK = 1e-6

PANEL_BUDGET = 2 ** 20


class QuadratureBudgetError(Exception):
    pass


class QuadratureOverflowError(QuadratureBudgetError):
    """A panel evaluated to a non-finite value: the integral overflows."""


@dataclass
class QuadResult:
    value: float
    abs_error_estimate: float
    subdivisions: int


@dataclass
class IntegrabilityVerdict:
    status: str
    estimated_exponent: float | None
    dyadic_sums: list = field(default_factory=list)
    method: str = "numeric"
    note: str = ""

    @property
    def integrable(self) -> bool:
        return self.status == INTEGRABLE

    @property
    def divergent(self) -> bool:
        return self.status == DIVERGENT

    @property
    def decided(self) -> bool:
        return self.status != INCONCLUSIVE


# 15-point Kronrod extension of 7-point Gauss (positive half; standard table)
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], [0.0], _XGK[:-1][::-1]])
_WK_FULL = np.concatenate([_WGK[:-1], [_WGK[-1]], _WGK[:-1][::-1]])
_WG_FULL = np.zeros(15)
_WG_FULL[1:14:2] = np.concatenate([_WG[:-1], [_WG[-1]], _WG[:-1][::-1]])


def _gk15(f, a: float, b: float):
    """One Gauss-Kronrod panel: (kronrod value, error estimate)."""
    h = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    xs = mid + h * _NODES
    with np.errstate(all="ignore"):
        ys = np.asarray(f(xs), dtype=float)
        resk = h * float(_WK_FULL @ ys)
        resg = h * float(_WG_FULL @ ys)
        if not (math.isfinite(resk) and math.isfinite(resg)):
            raise QuadratureOverflowError(
                f"non-finite panel value on [{a!r}, {b!r}]")
        # quadpack-style scaled error estimate
        resasc = abs(h) * float(_WK_FULL @ np.abs(ys - resk / (b - a)))
        err = abs(resk - resg)
        if math.isfinite(resasc) and resasc != 0.0 and err != 0.0:
            err = resasc * min(1.0, (200.0 * err / resasc) ** 1.5)
    return resk, err


def integrate(f, a: float, b: float, tol: float = 1e-10,
              rel_tol: float = 1e-10, budget: int = PANEL_BUDGET,
              roundoff_ok: float = 0.0) -> QuadResult:
    """Globally adaptive integral of f over (a, b).

    f must accept a numpy array of interior points.  Infinite endpoints are
    folded through x = tan(u).  Stops when the total error estimate is at
    most max(tol, rel_tol*|value|); exceeding the panel budget (or panels
    shrinking to roundoff with the target unmet) raises
    QuadratureBudgetError.  roundoff_ok > 0 accepts a roundoff-limited
    result whose residual error is within that fraction of the value
    (double precision cannot do better near endpoint singularities).
    Domain faults from f propagate.
    """
    a, b = float(a), float(b)
    if not a < b:
        if a == b:
            return QuadResult(0.0, 0.0, 0)
        raise ValueError("integrate requires a < b")

    if math.isinf(a) or math.isinf(b):
        ua = math.atan(a) if math.isfinite(a) else (-0.5 * math.pi if a < 0 else 0.5 * math.pi)
        ub = math.atan(b) if math.isfinite(b) else (0.5 * math.pi if b > 0 else -0.5 * math.pi)

        def g(us):
            xs = np.tan(us)
            c = np.cos(us)
            return np.asarray(f(xs), dtype=float) / (c * c)

        return _adaptive(g, ua, ub, tol, rel_tol, budget, roundoff_ok)
    return _adaptive(f, a, b, tol, rel_tol, budget, roundoff_ok)


def _adaptive(f, a: float, b: float, tol: float, rel_tol: float,
              budget: int, roundoff_ok: float = 0.0) -> QuadResult:
    val, err = _gk15(f, a, b)
    heap = [(-err, a, b, val, err)]
    total_val, total_err = val, err
    panels = 1
    counter = 0
    while total_err > max(tol, rel_tol * abs(total_val)):
        if panels >= budget:
            raise QuadratureBudgetError(
                f"panel budget exhausted (error {total_err:.3e} over target)")
        neg_err, pa, pb, pval, perr = heapq.heappop(heap)
        mid = 0.5 * (pa + pb)
        if mid <= pa or mid >= pb:
            # cannot refine further in double precision
            heapq.heappush(heap, (neg_err, pa, pb, pval, perr))
            if total_err <= roundoff_ok * abs(total_val):
                return QuadResult(total_val, total_err, panels)
            raise QuadratureBudgetError(
                f"panel shrunk to roundoff with error {total_err:.3e} over target")
        try:
            v1, e1 = _gk15(f, pa, mid)
            v2, e2 = _gk15(f, mid, pb)
        except QuadratureOverflowError:
            # a node rounded onto a singular endpoint: refinement floor
            heapq.heappush(heap, (neg_err, pa, pb, pval, perr))
            if total_err <= roundoff_ok * abs(total_val):
                return QuadResult(total_val, total_err, panels)
            raise
        total_val += v1 + v2 - pval
        total_err += e1 + e2 - perr
        counter += 1
        heapq.heappush(heap, (-e1, pa, mid, v1, e1))
        heapq.heappush(heap, (-e2, mid, pb, v2, e2))
        panels += 1
        if counter % 64 == 0:
            # refresh running sums to control floating-point drift
            total_val = sum(h[3] for h in heap)
            total_err = sum(h[4] for h in heap)
    return QuadResult(total_val, total_err, panels)


def vectorize_scalar(f):
    """Wrap a scalar-only callable for use as an integrate() integrand."""

    def g(xs):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        return np.array([f(float(x)) for x in xs])

    return g


# ---------------------------------------------------------------------------
# dyadic-shell integrability classifier

_N_SHELLS = 49
_TAIL_RATIOS = 8
_TAIL_MONOTONE = 5


def _shell_series(shell_bounds, f, scale_hint: float, rel_tol: float = 1e-9):
    """Integrate f over successive shells; returns (sums, note).

    Stops early on overflow (recorded; the caller classifies as divergent)
    or once the shells underflow to numerical zero.
    """
    sums = []
    note = ""
    peak = 0.0
    for k, (lo, hi) in enumerate(shell_bounds):
        if not lo < hi:
            break
        try:
            r = integrate(f, lo, hi, tol=1e-300, rel_tol=rel_tol, budget=4096)
        except DomainFault as exc:
            if "non-finite" in exc.reason:
                note = "overflow"
                sums.append((k, math.inf))
                break
            raise
        except (OverflowError, QuadratureOverflowError):
            note = "overflow"
            sums.append((k, math.inf))
            break
        except QuadratureBudgetError:
            # roundoff floor: when the shell midpoints can no longer be
            # distinguished from the singular point the series simply ends
            note = "resolution exhausted"
            break
        v = r.value
        if math.isinf(v):
            note = "overflow"
            sums.append((k, math.inf))
            break
        sums.append((k, v))
        peak = max(peak, abs(v))
        if abs(v) <= 1e-280 * max(peak, scale_hint):
            note = "underflow"
            break
    return sums, note


def _classify_shells(sums: list, note: str, eps_cls: float,
                     exponent_from_ratio, method_note: str = "") -> IntegrabilityVerdict:
    """Shared shell-sum classification for finite points and infinity.

    exponent_from_ratio maps the median shell ratio to the local exponent
    estimate; classification happens in 'q-space' where the integrability
    boundary sits at ratio 1.
    """
    if note == "overflow":
        return IntegrabilityVerdict(DIVERGENT, None, sums, "numeric",
                                    "shell integral overflow")
    if note == "resolution exhausted" and len(sums) < 10:
        return IntegrabilityVerdict(INCONCLUSIVE, None, sums, "numeric",
                                    "shells unresolvable at this point")
    finite_sums = [(k, v) for k, v in sums if math.isfinite(v)]
    if not finite_sums:
        return IntegrabilityVerdict(INCONCLUSIVE, None, sums, "numeric",
                                    "no resolvable shells")
    if all(v == 0.0 for _, v in finite_sums):
        return IntegrabilityVerdict(INTEGRABLE, None, sums, "numeric",
                                    "identically zero near the point")
    positive = [(k, v) for k, v in finite_sums if v > 0.0]
    ratios = []
    for (k0, v0), (k1, v1) in zip(positive, positive[1:]):
        if k1 == k0 + 1:
            ratios.append(v1 / v0)
    if note == "underflow" and len(ratios) >= 2:
        med = float(np.median(ratios[-_TAIL_RATIOS:]))
        if med < 1.0:
            return IntegrabilityVerdict(
                INTEGRABLE, exponent_from_ratio(med), sums, "numeric",
                "tail underflow" + method_note)
    if len(ratios) < 3:
        return IntegrabilityVerdict(INCONCLUSIVE, None, sums, "numeric",
                                    "too few resolvable shells")
    med = float(np.median(ratios[-_TAIL_RATIOS:]))
    q_hat = 1.0 + math.log2(med)  # local behavior ~ |t|^(-q_hat)
    est = exponent_from_ratio(med)
    if q_hat <= 1.0 - eps_cls + _EDGE_SLACK:
        return IntegrabilityVerdict(INTEGRABLE, est, sums, "numeric", method_note)
    if q_hat >= 1.0 + eps_cls - _EDGE_SLACK:
        return IntegrabilityVerdict(DIVERGENT, est, sums, "numeric", method_note)
    tail = [v for _, v in positive[-_TAIL_MONOTONE:]]
    nondecreasing = all(b >= a * (1.0 - 1e-6) for a, b in zip(tail, tail[1:]))
    if nondecreasing and len(tail) >= 2:
        return IntegrabilityVerdict(
            DIVERGENT, est, sums, "numeric",
            "boundary exponent with non-decaying shells" + method_note)
    return IntegrabilityVerdict(
        INCONCLUSIVE, est, sums, "numeric",
        "exponent within the classification margin" + method_note)


def local_integrability(f, p: float, side: str, hint: float | None = None,
                        delta: float = 1.0,
                        eps_cls: float = EPS_CLS_DEFAULT,
                        n_shells: int = _N_SHELLS,
                        shell_rel_tol: float = 1e-9) -> IntegrabilityVerdict:
    """Is the nonnegative f integrable next to finite p on the given side?

    hint, when provided, is a trusted local exponent (f ~ C|x-p|^hint) and
    decides immediately.  delta is the width of the outermost shell; keep
    it inside the region where f is defined and free of other singular
    points.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if not math.isfinite(p):
        raise ValueError("p must be finite; use integrability_at_infinity")
    if hint is not None:
        status = INTEGRABLE if hint > -1.0 else DIVERGENT
        return IntegrabilityVerdict(status, float(hint), [], "symbolic")

    sgn = 1.0 if side == "right" else -1.0
    scale = max(1.0, abs(p))

    def bounds():
        for k in range(n_shells):
            r_out = delta * 2.0 ** (-k)
            r_in = delta * 2.0 ** (-(k + 1))
            if r_out <= scale * 4e-16:
                return
            lo, hi = sorted((p + sgn * r_in, p + sgn * r_out))
            yield lo, hi

    sums, note = _shell_series(bounds(), f, 0.0, rel_tol=shell_rel_tol)
    # local ratio 2^(q-1) for f ~ |t|^(-q): exponent estimate is -q_hat
    return _classify_shells(sums, note, eps_cls,
                            lambda med: -(1.0 + math.log2(med)))


def integrability_at_infinity(f, side: str, x_start: float = 1.0,
                              eps_cls: float = EPS_CLS_DEFAULT,
                              hint: float | None = None,
                              n_shells: int = _N_SHELLS,
                              shell_rel_tol: float = 1e-9) -> IntegrabilityVerdict:
    """Is the nonnegative f integrable out to +inf or -inf?

    side is '+inf' or '-inf'; shells are [S*2^k, S*2^(k+1)] going outward
    from S = x_start.  hint, when provided, is the trusted power of |x| as
    x tends to the chosen infinity.
    """
    if side not in ("+inf", "-inf"):
        raise ValueError("side must be '+inf' or '-inf'")
    if hint is not None:
        status = INTEGRABLE if hint < -1.0 else DIVERGENT
        return IntegrabilityVerdict(status, float(hint), [], "symbolic")
    S = max(abs(x_start), 1e-8)
    sgn = 1.0 if side == "+inf" else -1.0

    def bounds():
        for k in range(n_shells):
            lo, hi = sorted((sgn * S * 2.0 ** k, sgn * S * 2.0 ** (k + 1)))
            yield lo, hi

    sums, note = _shell_series(bounds(), f, 0.0, rel_tol=shell_rel_tol)
    # ratio 2^(a+1) for f ~ |x|^a: the integrability boundary is ratio 1
    # exactly as in the finite-point case, only the exponent readout shifts
    return _classify_shells(sums, note, eps_cls,
                            lambda med: math.log2(med) - 1.0)


# ---------------------------------------------------------------------------
# chained antiderivatives


class CumulativeIntegral:
    """F(x) = integral of f from a fixed finite anchor to x.

    Every query inserts a knot; increments are integrated from the nearest
    existing knot, so repeated queries marching toward a singular endpoint
    stay cheap and consistent.
    """

    def __init__(self, f, anchor: float, rel_tol: float = 1e-12,
                 max_knots: int = 200_000):
        self._f = f
        self._rel_tol = rel_tol
        self._max_knots = max_knots
        self.anchor = float(anchor)
        self._xs = [self.anchor]
        self._vals = {self.anchor: 0.0}

    def __call__(self, x: float) -> float:
        x = float(x)
        if x in self._vals:
            return self._vals[x]
        i = bisect_left(self._xs, x)
        cands = []
        if i > 0:
            cands.append(self._xs[i - 1])
        if i < len(self._xs):
            cands.append(self._xs[i])
        knot = min(cands, key=lambda k: abs(k - x))
        base = self._vals[knot]
        lo, hi = (knot, x) if knot < x else (x, knot)
        inc, err = _gk15(self._f, lo, hi)
        if err > self._rel_tol * (abs(inc) + 1e-3 * abs(base)) + 1e-300:
            inc = integrate(self._f, lo, hi, tol=1e-300,
                            rel_tol=self._rel_tol, roundoff_ok=1e-6).value
        val = base + inc if knot < x else base - inc
        if len(self._xs) < self._max_knots:
            insort(self._xs, x)
            self._vals[x] = val
        return val


class TailIntegral:
    """T(x) = unsigned integral of f between x and an improper endpoint.

    end may be finite (with f possibly singular there, but integrable) or
    +-inf.  Queries with no knot between them and the endpoint pay for a
    fresh improper integral; all other queries chain positive increments
    through the nearest endpoint-side knot, so no accuracy is lost to
    cancellation no matter how close to the endpoint they sit.
    """

    def __init__(self, f, end: float, rel_tol: float = 1e-8,
                 max_knots: int = 200_000):
        self._f = f
        self._end = float(end)
        self._rel_tol = rel_tol
        self._max_knots = max_knots
        self._xs: list = []
        self._vals: dict = {}

    def _direct(self, x: float) -> float:
        lo, hi = (x, self._end) if x < self._end else (self._end, x)
        return integrate(self._f, lo, hi, tol=1e-300, rel_tol=self._rel_tol,
                         roundoff_ok=0.25).value

    def _endside_knot(self, x: float):
        """Nearest knot strictly between x and the endpoint, if any."""
        if self._end > x:
            i = bisect_left(self._xs, x)
            return self._xs[i] if i < len(self._xs) else None
        i = bisect_left(self._xs, x)
        return self._xs[i - 1] if i > 0 else None

    def __call__(self, x: float) -> float:
        x = float(x)
        if x in self._vals:
            return self._vals[x]
        knot = self._endside_knot(x) if self._xs else None
        if knot is None:
            # chaining from a knot on the far side would subtract nearly
            # equal numbers; pay for a fresh improper integral instead
            val = self._direct(x)
        else:
            lo, hi = (x, knot) if x < knot else (knot, x)
            inc = integrate(self._f, lo, hi, tol=1e-300,
                            rel_tol=self._rel_tol, roundoff_ok=0.25).value
            val = self._vals[knot] + inc
        if len(self._xs) < self._max_knots:
            insort(self._xs, x)
            self._vals[x] = val
        return val

    def seed(self, points) -> None:
        """Precompute values endpoint-inward so later queries chain through
        positive increments only (one improper integral total)."""
        if math.isinf(self._end):
            pts = sorted(points, reverse=self._end > 0)
        else:
            pts = sorted(points, key=lambda v: abs(v - self._end))
        for x in pts:
            self(x)
