"""Deterministic martingale classification of generalized exponentials.

Given a one-dimensional diffusion dY = mu(Y)dt + sigma(Y)dW on an interval
and an exponent coefficient b, the generalized exponential of the integral
of b(Y) against W is a nonnegative supermartingale.  This module decides,
from the coefficients alone, which of four levels it occupies:

    not_local_martingale < strict_local_martingale < martingale
        < uniformly_integrable_martingale

The pipeline: locate the interior points where b^2/sigma^2 is not locally
integrable (the singular set; the exponential dies there), restrict to the
component of the complement containing the start point, test whether the
accumulated b^2 integral is a.s. infinite on first hitting of each singular
effective endpoint (the local-martingale gate), then analyse scale
functions of the original and the drift-adjusted auxiliary diffusion to
settle the martingale and uniform-integrability levels.  Every decision is
recorded in an auditable certificate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from . import quad
from .expr import DomainFault, Expr

__all__ = [
    "ProblemSpec", "SingularSet", "EffectiveEndpoint", "EndpointAnalysis",
    "ScaleObjects", "Condition", "Verdict",
    "ValidationError", "EngelbertSchmidtError", "UndecidableError",
    "ConsistencyError", "SingularStartError",
    "build_problem", "singular_set", "effective_interval",
    "hit_integral_divergent", "scale_objects", "endpoint_good",
    "feller_exits", "classify", "classify_no_singularities",
    "reflect_problem", "certificate_json",
    "LEVEL_NOT_LOCAL", "LEVEL_STRICT_LOCAL", "LEVEL_MARTINGALE", "LEVEL_UI",
]

LEVEL_NOT_LOCAL = "not_local_martingale"
LEVEL_STRICT_LOCAL = "strict_local_martingale"
LEVEL_MARTINGALE = "martingale"
LEVEL_UI = "uniformly_integrable_martingale"

_LEVEL_ORDER = {LEVEL_NOT_LOCAL: 0, LEVEL_STRICT_LOCAL: 1,
                LEVEL_MARTINGALE: 2, LEVEL_UI: 3}

# minimum spacing between singular points; closer candidates are rejected
# as out of scope (the decision procedure needs isolated points)
MIN_SINGULAR_SPACING = 1e-9

# shell depth for integrands built from numerically computed scale
# functions, whose accuracy floor is above the expression-level one
_COMPOSITE_SHELLS = 40


class ValidationError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid problem: " + "; ".join(self.problems))


class EngelbertSchmidtError(ValueError):
    def __init__(self, point: float, condition: str):
        self.point = point
        self.condition = condition
        super().__init__(
            f"coefficient admissibility fails at x={point!r}: {condition}")


class UndecidableError(Exception):
    """A required integrability decision came out inconclusive."""

    def __init__(self, condition: str, verdict=None):
        self.condition = condition
        self.verdict = verdict
        super().__init__(f"undecidable: {condition}")


class ConsistencyError(Exception):
    """Two provably equivalent formulations disagreed numerically."""


class SingularStartError(Exception):
    """The start point itself is singular; the exponential is identically
    zero, which is trivially a martingale."""

    def __init__(self, point: float, verdict: "Verdict"):
        self.point = point
        self.verdict = verdict
        super().__init__(
            f"start point {point!r} lies in the singular set; Z == 0")


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class ProblemSpec:
    left: float
    right: float
    x0: float
    mu: Expr
    sigma: Expr
    b: Expr
    singularity_hints: tuple = ()
    base_point: float | None = None

    @property
    def c(self) -> float:
        return self.x0 if self.base_point is None else self.base_point


@dataclass
class SingularSet:
    points: list
    evidence: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)


@dataclass
class EndpointAnalysis:
    s_finite: bool | None = None
    s_tilde_finite: bool | None = None
    good: bool | None = None
    feller_exits: bool | None = None
    continuous_absorption: bool | None = None  # only for singular points
    evidence: list = field(default_factory=list)


@dataclass
class EffectiveEndpoint:
    location: float
    kind: str  # 'natural_boundary' | 'singular_point'
    side: str  # 'lower' | 'upper'
    analysis: EndpointAnalysis = field(default_factory=EndpointAnalysis)

    @property
    def is_boundary(self) -> bool:
        return self.kind == "natural_boundary"


@dataclass
class Condition:
    id: str
    statement: str
    holds: bool
    evidence: dict = field(default_factory=dict)


@dataclass
class Verdict:
    level: str
    conditions: list = field(default_factory=list)

    def condition(self, cid: str) -> Condition:
        for c in self.conditions:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def holds(self, cid: str) -> bool:
        return self.condition(cid).holds


class ScaleObjects:
    """Scale densities and scale functions of the diffusion and its
    drift-adjusted auxiliary companion, on an interval (lower, upper).

    rho = exp(-int_c 2 mu/sigma^2); the auxiliary density additionally
    carries exp(-int_c 2 b/sigma).  Built on demand over cached refinement
    chains; endpoint limits are classified by shell integrability and the
    finite tails are available as accurate functions of position.
    """

    def __init__(self, spec: ProblemSpec, lower: float, upper: float,
                 eps_cls: float = quad.EPS_CLS_DEFAULT):
        if not (lower < spec.c < upper):
            raise ValidationError(
                [f"base point {spec.c!r} outside the effective interval "
                 f"({lower!r}, {upper!r})"])
        self.spec = spec
        self.lower = lower
        self.upper = upper
        self.eps_cls = eps_cls
        c = spec.c
        two = ex.lit(2.0)
        sig2 = ex.pow_(spec.sigma, ex.lit(2.0))
        self._drift_integrand = ex.div(ex.mul(two, spec.mu), sig2)
        self._b_integrand = ex.div(ex.mul(two, spec.b), spec.sigma)
        self._mu_zero = ex.is_zero_expr(spec.mu)
        self._b_zero = ex.is_zero_expr(spec.b)
        self._I_mu = None if self._mu_zero else quad.CumulativeIntegral(
            self._drift_integrand, c)
        self._I_b = None if self._b_zero else quad.CumulativeIntegral(
            self._b_integrand, c)
        self._sigma2 = sig2
        self._b2 = ex.pow_(spec.b, ex.lit(2.0))
        self._limits: dict = {}
        self._tails: dict = {}

    # densities ---------------------------------------------------------
    def rho(self, x: float) -> float:
        if self._mu_zero:
            return 1.0
        v = -self._I_mu(x)
        if v > 709.0:
            raise DomainFault("non-finite result", self._drift_integrand, x)
        return math.exp(v)

    def rho_tilde(self, x: float) -> float:
        if self._b_zero:
            return self.rho(x)
        v = -self._I_b(x) - (0.0 if self._mu_zero else self._I_mu(x))
        if v > 709.0:
            raise DomainFault("non-finite result", self._b_integrand, x)
        return math.exp(v)

    def _density(self, tilde: bool):
        return self.rho_tilde if tilde else self.rho

    # scale functions (anchored at c) ------------------------------------
    def s(self, x: float) -> float:
        return self._scale_value(x, tilde=False)

    def s_tilde(self, x: float) -> float:
        return self._scale_value(x, tilde=True)

    def _scale_value(self, x: float, tilde: bool) -> float:
        key = ("s", tilde)
        if key not in self._tails:
            self._tails[key] = quad.CumulativeIntegral(
                quad.vectorize_scalar(self._density(tilde)), self.spec.c,
                rel_tol=1e-9)
        return self._tails[key](x)

    # endpoint machinery --------------------------------------------------
    def _endpoint(self, side: str) -> float:
        return self.lower if side == "lower" else self.upper

    def _shell_kw(self, side: str):
        e = self._endpoint(side)
        if math.isinf(e):
            return {"at_infinity": True,
                    "side": "+inf" if e > 0 else "-inf",
                    "x_start": 2.0 * (abs(self.spec.c) + 1.0)}
        width = abs(e - self.spec.c)
        return {"at_infinity": False,
                "side": "right" if side == "lower" else "left",
                "delta": min(1.0, width / 2.0)}

    def _classify_endpoint_integrability(self, f, side: str,
                                         n_shells: int = _COMPOSITE_SHELLS):
        kw = self._shell_kw(side)
        if kw["at_infinity"]:
            return quad.integrability_at_infinity(
                f, kw["side"], x_start=kw["x_start"], eps_cls=self.eps_cls,
                n_shells=n_shells, shell_rel_tol=3e-7)
        return quad.local_integrability(
            f, self._endpoint(side), kw["side"], delta=kw["delta"],
            eps_cls=self.eps_cls, n_shells=n_shells, shell_rel_tol=3e-7)

    def scale_limit(self, side: str, tilde: bool):
        """(finite: bool | None, verdict) for the scale function limit."""
        key = ("limit", side, tilde)
        if key not in self._limits:
            f = quad.vectorize_scalar(self._density(tilde))
            v = self._classify_endpoint_integrability(f, side)
            self._limits[key] = v
        v = self._limits[key]
        finite = True if v.integrable else (False if v.divergent else None)
        return finite, v

    def scale_tail(self, side: str, tilde: bool) -> quad.TailIntegral:
        """|s(endpoint) - s(x)| as a function of x, for a finite limit."""
        key = ("tail", side, tilde)
        if key not in self._tails:
            t = quad.TailIntegral(
                quad.vectorize_scalar(self._density(tilde)),
                self._endpoint(side))
            kw = self._shell_kw(side)
            e = self._endpoint(side)
            if kw["at_infinity"]:
                S = kw["x_start"]
                sgn = 1.0 if e > 0 else -1.0
                t.seed([sgn * S * 2.0 ** k for k in range(_COMPOSITE_SHELLS, -1, -8)])
            else:
                d = kw["delta"]
                sgn = 1.0 if side == "lower" else -1.0
                t.seed([e + sgn * d * 2.0 ** (-k)
                        for k in range(_COMPOSITE_SHELLS, -1, -8)])
            self._tails[key] = t
        return self._tails[key]

    def scale_limit_value(self, side: str, tilde: bool) -> float:
        """Signed value of the scale limit (+-inf when divergent)."""
        finite, _ = self.scale_limit(side, tilde)
        sign = -1.0 if side == "lower" else 1.0
        if finite is False:
            return sign * math.inf
        if finite is None:
            return math.nan
        tail = self.scale_tail(side, tilde)
        return self._scale_value(self.spec.c, tilde) + sign * tail(self.spec.c)

    def weighted_good_integrand(self, side: str, tilde: bool):
        """|s(end) - s(x)| * b^2 / (density * sigma^2), scalar callable."""
        tail = self.scale_tail(side, tilde)
        dens = self._density(tilde)
        b2 = self._b2
        sig2 = self._sigma2

        def g(x: float) -> float:
            return tail(x) * ex.evaluate(b2, x) / (dens(x) * ex.evaluate(sig2, x))

        return quad.vectorize_scalar(g)

    def weighted_exit_integrand(self, side: str):
        """|s~(end) - s~(x)| / (rho~ * sigma^2), scalar callable."""
        tail = self.scale_tail(side, tilde=True)
        dens = self.rho_tilde
        sig2 = self._sigma2

        def g(x: float) -> float:
            return tail(x) / (dens(x) * ex.evaluate(sig2, x))

        return quad.vectorize_scalar(g)

    def nested_exit_value(self, side: str) -> float:
        """Direct nested quadrature of the explosion-test functional at a
        finite-valued endpoint (cross-check evidence only)."""
        tail = self.scale_tail(side, tilde=True)
        dens = self.rho_tilde
        sig2 = self._sigma2

        def g(x: float) -> float:
            return tail(x) / (dens(x) * ex.evaluate(sig2, x))

        e = self._endpoint(side)
        lo, hi = (e, self.spec.c) if side == "lower" else (self.spec.c, e)
        r = quad.integrate(quad.vectorize_scalar(g), lo, hi,
                           tol=1e-8, rel_tol=1e-6, roundoff_ok=1e-2)
        return r.value


# ---------------------------------------------------------------------------
# coefficient composition helpers


def b2_over_sigma2(spec: ProblemSpec) -> Expr:
    return ex.div(ex.pow_(spec.b, ex.lit(2.0)),
                  ex.pow_(spec.sigma, ex.lit(2.0)))


def _hit_weight(spec: ProblemSpec, p: float, side: str) -> Expr:
    # |x - p| * b^2/sigma^2, oriented so the weight is positive on `side`
    x_minus_p = ex.sub(ex.X, ex.lit(p)) if side == "right" else ex.sub(ex.lit(p), ex.X)
    return ex.mul(x_minus_p, b2_over_sigma2(spec))


def _verdict_evidence(v: quad.IntegrabilityVerdict) -> dict:
    return {
        "status": v.status,
        "estimated_exponent": v.estimated_exponent,
        "method": v.method,
        "note": v.note,
    }


# ---------------------------------------------------------------------------
# operations


def build_problem(raw: dict) -> ProblemSpec:
    """Validate a raw problem mapping into a ProblemSpec.

    Collects every field problem into a single ValidationError; coefficient
    admissibility (nonvanishing sigma, locally integrable 1/sigma^2 and
    mu/sigma^2) is then probed at the candidate trouble spots.
    """
    problems = []

    def fnum(v, name, allow_inf=None):
        if isinstance(v, str):
            if allow_inf and v in ("-inf", "+inf", "inf"):
                return -math.inf if v == "-inf" else math.inf
            problems.append(f"{name}: expected a number, got {v!r}")
            return None
        if not isinstance(v, (int, float)):
            problems.append(f"{name}: expected a number, got {type(v).__name__}")
            return None
        return float(v)

    interval = raw.get("interval")
    left = right = None
    if not isinstance(interval, dict):
        problems.append("interval: missing or not an object")
    else:
        left = fnum(interval.get("left"), "interval.left", allow_inf=True)
        right = fnum(interval.get("right"), "interval.right", allow_inf=True)
    x0 = fnum(raw.get("x0"), "x0")

    exprs = {}
    for name in ("mu", "sigma", "b"):
        text = raw.get(name)
        if not isinstance(text, str):
            problems.append(f"{name}: missing or not a string")
            continue
        try:
            exprs[name] = ex.parse(text)
        except ex.ParseError as exc:
            problems.append(f"{name}: {exc}")

    hints: tuple = ()
    if "hints" in raw and raw["hints"] is not None:
        h = raw["hints"]
        pts = h.get("singular_points") if isinstance(h, dict) else None
        if not isinstance(pts, list) or not all(
                isinstance(p, (int, float)) for p in pts):
            problems.append("hints.singular_points: expected a list of numbers")
        else:
            hints = tuple(float(p) for p in pts)

    base_point = None
    if raw.get("base_point") is not None:
        base_point = fnum(raw.get("base_point"), "base_point")

    unknown = set(raw) - {"interval", "x0", "mu", "sigma", "b", "hints",
                          "base_point"}
    for k in sorted(unknown):
        problems.append(f"unknown field {k!r}")

    if left is not None and right is not None and not left < right:
        problems.append("interval: left must be < right")
    if (left is not None and right is not None and x0 is not None
            and not (left < x0 < right)):
        problems.append("x0: must lie strictly inside the interval")
    if (base_point is not None and left is not None and right is not None
            and not (left < base_point < right)):
        problems.append("base_point: must lie strictly inside the interval")
    for p in hints:
        if left is not None and right is not None and not (left < p < right):
            problems.append(f"hints.singular_points: {p!r} outside the interval")

    if problems:
        raise ValidationError(problems)

    spec = ProblemSpec(left, right, x0, exprs["mu"], exprs["sigma"],
                       exprs["b"], hints, base_point)
    _check_coefficient_admissibility(spec)
    return spec


def _check_coefficient_admissibility(spec: ProblemSpec) -> None:
    try:
        sig_x0 = ex.evaluate(spec.sigma, spec.x0)
    except DomainFault as exc:
        raise EngelbertSchmidtError(spec.x0, f"sigma undefined at x0 ({exc})")
    if sig_x0 == 0.0:
        raise EngelbertSchmidtError(spec.x0, "sigma vanishes at x0")

    J = (spec.left, spec.right)
    inv_sig2 = ex.div(ex.lit(1.0), ex.pow_(spec.sigma, ex.lit(2.0)))
    mu_over = ex.div(ex.Call("abs", (spec.mu,)),
                     ex.pow_(spec.sigma, ex.lit(2.0)))
    candidates = set(ex.candidate_singularities(inv_sig2, J))
    candidates |= set(ex.candidate_singularities(mu_over, J))
    for p in sorted(candidates):
        delta = _probe_delta(spec, p, [])
        for name, tree in (("1/sigma^2", inv_sig2), ("|mu|/sigma^2", mu_over)):
            for side in ("left", "right"):
                hint = ex.leading_exponent(tree, p, side)
                v = quad.local_integrability(tree, p, side, hint=hint,
                                             delta=delta[side])
                if v.divergent:
                    raise EngelbertSchmidtError(
                        p, f"{name} not locally integrable ({side} side)")
                if not v.decided:
                    raise UndecidableError(
                        f"local integrability of {name} at {p!r} ({side})", v)
        try:
            if ex.evaluate(spec.sigma, p) == 0.0:
                raise EngelbertSchmidtError(p, "sigma vanishes")
        except DomainFault:
            pass  # undefined at an isolated point with integrable 1/sigma^2


def _probe_delta(spec: ProblemSpec, p: float, others) -> dict:
    """Shell widths keeping probes inside the state space and clear of
    neighbouring candidate points."""
    left_gap = p - spec.left if math.isfinite(spec.left) else math.inf
    right_gap = spec.right - p if math.isfinite(spec.right) else math.inf
    for q in others:
        if q < p:
            left_gap = min(left_gap, p - q)
        elif q > p:
            right_gap = min(right_gap, q - p)
    return {"left": min(1.0, left_gap / 2.0) if left_gap > 0 else 1e-12,
            "right": min(1.0, right_gap / 2.0) if right_gap > 0 else 1e-12}


def singular_set(spec: ProblemSpec,
                 eps_cls: float = quad.EPS_CLS_DEFAULT) -> SingularSet:
    """Interior points where b^2/sigma^2 fails to be locally integrable.

    Candidates (structural zeros, numeric scan hits, user hints) are kept
    only when at least one side is divergent; a candidate that cannot be
    decided raises.  Candidates closer together than the isolation spacing
    are rejected as out of scope.
    """
    f = b2_over_sigma2(spec)
    J = (spec.left, spec.right)
    candidates = sorted(set(ex.candidate_singularities(f, J))
                        | {p for p in spec.singularity_hints})
    for a, b in zip(candidates, candidates[1:]):
        if b - a < MIN_SINGULAR_SPACING:
            raise ValidationError(
                [f"singular candidates {a!r} and {b!r} are closer than "
                 f"{MIN_SINGULAR_SPACING}; accumulating singularities are "
                 "out of scope"])
    points = []
    evidence = {}
    for p in candidates:
        if not (spec.left < p < spec.right):
            continue
        delta = _probe_delta(spec, p, [q for q in candidates if q != p])
        sides = {}
        for side in ("left", "right"):
            hint = ex.leading_exponent(f, p, side)
            sides[side] = quad.local_integrability(
                f, p, side, hint=hint, delta=delta[side], eps_cls=eps_cls)
        if any(v.divergent for v in sides.values()):
            points.append(p)
            evidence[p] = sides
            continue
        if any(not v.decided for v in sides.values()):
            bad = [s for s, v in sides.items() if not v.decided][0]
            raise UndecidableError(
                f"membership of {p!r} in the singular set ({bad} side)",
                sides[bad])
        # both sides integrable: candidate was benign
    A = SingularSet(points, evidence)
    for a in points:
        if abs(a - spec.x0) < MIN_SINGULAR_SPACING:
            v = Verdict(LEVEL_MARTINGALE, [Condition(
                "start_point_singular",
                "the start point lies in the singular set, so the "
                "exponential is identically zero and trivially a martingale",
                True, {"point": a})])
            raise SingularStartError(a, v)
    return A


def effective_interval(spec: ProblemSpec, A: SingularSet):
    """The component of the state space minus the singular set containing
    the start point, as a pair of effective endpoints."""
    lower_pts = [a for a in A if a < spec.x0]
    upper_pts = [a for a in A if a > spec.x0]
    if lower_pts:
        lo = EffectiveEndpoint(max(lower_pts), "singular_point", "lower")
    else:
        lo = EffectiveEndpoint(spec.left, "natural_boundary", "lower")
    if upper_pts:
        hi = EffectiveEndpoint(min(upper_pts), "singular_point", "upper")
    else:
        hi = EffectiveEndpoint(spec.right, "natural_boundary", "upper")
    return lo, hi


def hit_integral_divergent(spec: ProblemSpec, p: float, side: str,
                           other_bound: float,
                           eps_cls: float = quad.EPS_CLS_DEFAULT):
    """Does the time integral of b^2 along the diffusion accumulate to
    infinity almost surely on first hitting p?

    Decided by local integrability of |x - p| * b^2/sigma^2 next to p on
    the approach side: divergent weight means the integral is a.s.
    infinite (the exponential decays to zero continuously), integrable
    weight means it is a.s. finite (the exponential jumps to zero).
    """
    w = _hit_weight(spec, p, side)
    hint = ex.leading_exponent(w, p, side)
    gap = abs(other_bound - p)
    v = quad.local_integrability(w, p, side, hint=hint,
                                 delta=min(1.0, gap / 2.0), eps_cls=eps_cls)
    if not v.decided:
        raise UndecidableError(
            f"divergence of the hit-time integral at {p!r} ({side} side)", v)
    return v.divergent, v


def scale_objects(spec: ProblemSpec, lower: float, upper: float,
                  eps_cls: float = quad.EPS_CLS_DEFAULT) -> ScaleObjects:
    return ScaleObjects(spec, lower, upper, eps_cls)


def _form_result(scale: ScaleObjects, side: str, tilde: bool,
                 weighted_factory) -> tuple:
    """(holds: bool | None, evidence) for one form of an endpoint test:
    scale limit finite AND a weighted integrand locally integrable."""
    finite, vlim = scale.scale_limit(side, tilde)
    ev = {"scale_limit": _verdict_evidence(vlim)}
    if finite is False:
        return False, ev
    if finite is None:
        return None, ev
    g = weighted_factory(side, tilde)
    vw = scale._classify_endpoint_integrability(g, side)
    ev["weighted_integrand"] = _verdict_evidence(vw)
    if vw.integrable:
        return True, ev
    if vw.divergent:
        return False, ev
    return None, ev


def endpoint_good(spec: ProblemSpec, scale: ScaleObjects,
                  endpoint: EffectiveEndpoint):
    """Good-endpoint test: the scale function has a finite limit there and
    the scale-weighted b^2 integrand is locally integrable.

    Evaluates both the plain and the auxiliary-scale formulation (they are
    provably equivalent); a decided disagreement is an internal fault, and
    either one may settle the answer when the other is inconclusive.
    """
    side = endpoint.side
    primary, ev1 = _form_result(scale, side, False, scale.weighted_good_integrand)
    dual, ev2 = _form_result(scale, side, True, scale.weighted_good_integrand)
    evidence = {"plain_form": ev1, "aux_form": ev2}
    if primary is not None and dual is not None and primary != dual:
        raise ConsistencyError(
            f"good-endpoint forms disagree at the {side} endpoint: "
            f"plain={primary} aux={dual} ({evidence})")
    result = primary if primary is not None else dual
    if result is None:
        raise UndecidableError(f"good-endpoint test at the {side} endpoint")
    return result, evidence


def feller_exits(spec: ProblemSpec, scale: ScaleObjects,
                 endpoint: EffectiveEndpoint):
    """Explosion test for the auxiliary diffusion at an endpoint: it exits
    there iff the auxiliary scale limit is finite and the scale-weighted
    reciprocal-density integrand is locally integrable."""
    side = endpoint.side
    holds, ev = _form_result(scale, side, True,
                             lambda s, _t: scale.weighted_exit_integrand(s))
    if holds is None:
        raise UndecidableError(f"exit test at the {side} endpoint")
    if holds:
        # nested-quadrature cross-check of the explosion functional
        try:
            val = scale.nested_exit_value(side)
            ev["nested_value"] = val
            if not math.isfinite(val):
                raise ConsistencyError(
                    f"nested explosion functional non-finite at {side} "
                    "endpoint despite integrable split form")
        except (quad.QuadratureBudgetError, DomainFault) as exc:
            ev["nested_value_note"] = f"cross-check not computable: {exc}"
    return holds, ev


def _b_zero_ae(spec: ProblemSpec, lower: float, upper: float) -> tuple:
    if ex.is_zero_expr(spec.b):
        return True, {"structural": True}
    try:
        r = quad.integrate(lambda xs: np.abs(spec.b(xs)), lower, upper,
                           tol=1e-13, rel_tol=1e-9, budget=20000,
                           roundoff_ok=1e-3)
        small = abs(r.value) < 1e-12
        return small, {"structural": False, "abs_integral": r.value}
    except (quad.QuadratureBudgetError, DomainFault) as exc:
        return False, {"structural": False, "note": str(exc)}


def classify(spec: ProblemSpec,
             eps_cls: float = quad.EPS_CLS_DEFAULT) -> Verdict:
    """Full four-level classification with an auditable certificate."""
    conditions: list = []
    A = singular_set(spec, eps_cls)
    lo, hi = effective_interval(spec, A)
    conditions.append(Condition(
        "singular_set",
        "interior points where b^2/sigma^2 is not locally integrable; the "
        "exponential is zero after the diffusion reaches one",
        True,
        {"points": list(A.points),
         "sides": {repr(p): {s: _verdict_evidence(v)
                             for s, v in A.evidence[p].items()}
                   for p in A.points}}))
    conditions.append(Condition(
        "effective_interval",
        "component of the state space minus the singular set containing "
        "the start point; only its endpoints matter for the verdict",
        True,
        {"lower": lo.location, "upper": hi.location,
         "lower_kind": lo.kind, "upper_kind": hi.kind}))

    gate = True
    for endp in (lo, hi):
        if endp.is_boundary:
            continue
        approach = "right" if endp.side == "lower" else "left"
        other = hi.location if endp.side == "lower" else lo.location
        divergent, v = hit_integral_divergent(spec, endp.location, approach,
                                              other, eps_cls)
        endp.analysis.continuous_absorption = divergent
        conditions.append(Condition(
            f"gate.{endp.side}_continuous_absorption",
            "|x - a| * b^2/sigma^2 diverges on the approach side, so the "
            "accumulated b^2 integral is a.s. infinite on first hitting "
            "and the exponential vanishes continuously (no jump)",
            divergent,
            {"point": endp.location, "verdict": _verdict_evidence(v)}))
        gate = gate and divergent
    conditions.append(Condition(
        "local_martingale",
        "each effective endpoint is either a state-space boundary or a "
        "singular point with continuous absorption",
        gate, {}))
    if not gate:
        return Verdict(LEVEL_NOT_LOCAL, conditions)

    scale = scale_objects(spec, lo.location, hi.location, eps_cls)
    mart = True
    for endp in (lo, hi):
        good, gev = endpoint_good(spec, scale, endp)
        exits, xev = feller_exits(spec, scale, endp)
        endp.analysis.good = good
        endp.analysis.feller_exits = exits
        endp.analysis.s_finite = scale.scale_limit(endp.side, False)[0]
        endp.analysis.s_tilde_finite = scale.scale_limit(endp.side, True)[0]
        if endp.analysis.continuous_absorption and good:
            raise ConsistencyError(
                f"{endp.side} endpoint is in the continuous-absorption set "
                "but tested good; these are provably incompatible")
        conditions.append(Condition(
            f"{endp.side}.good",
            "scale limit finite and scale-weighted b^2/(density*sigma^2) "
            "locally integrable at the endpoint",
            good, gev))
        conditions.append(Condition(
            f"{endp.side}.aux_exits",
            "the auxiliary diffusion (drift mu + b*sigma) reaches this "
            "endpoint in finite time with positive probability",
            exits, xev))
        ok = (not exits) or good
        conditions.append(Condition(
            f"martingale.{endp.side}_exit_controlled",
            "the auxiliary diffusion does not exit here, or the endpoint "
            "is good",
            ok, {}))
        mart = mart and ok
    conditions.append(Condition(
        "martingale",
        "the auxiliary diffusion can exit only at good endpoints",
        mart, {}))
    if not mart:
        return Verdict(LEVEL_STRICT_LOCAL, conditions)

    zero, zev = _b_zero_ae(spec, lo.location, hi.location)
    st_lower = scale.scale_limit("lower", True)
    st_upper = scale.scale_limit("upper", True)
    ui_b = bool(lo.analysis.good) and st_upper[0] is False
    ui_c = bool(hi.analysis.good) and st_lower[0] is False
    ui_d = bool(lo.analysis.good) and bool(hi.analysis.good)
    conditions.append(Condition(
        "ui.b_zero_ae", "b vanishes a.e. on the effective interval",
        zero, zev))
    conditions.append(Condition(
        "ui.lower_good_aux_upper_infinite",
        "lower endpoint good and the auxiliary scale limit at the upper "
        "endpoint is +infinity",
        ui_b, {"aux_upper_scale_limit": _verdict_evidence(st_upper[1])}))
    conditions.append(Condition(
        "ui.upper_good_aux_lower_infinite",
        "upper endpoint good and the auxiliary scale limit at the lower "
        "endpoint is -infinity",
        ui_c, {"aux_lower_scale_limit": _verdict_evidence(st_lower[1])}))
    conditions.append(Condition(
        "ui.both_good", "both effective endpoints are good", ui_d, {}))
    ui = zero or ui_b or ui_c or ui_d
    conditions.append(Condition(
        "uniformly_integrable",
        "one of the four closure conditions holds",
        ui, {}))
    return Verdict(LEVEL_UI if ui else LEVEL_MARTINGALE, conditions)


def classify_no_singularities(spec: ProblemSpec,
                              eps_cls: float = quad.EPS_CLS_DEFAULT) -> Verdict:
    """Direct classification for coefficients with an empty singular set,
    working on the full state space.  Kept as an independent route so the
    general pipeline can be cross-checked against it when they must agree.
    """
    lo = EffectiveEndpoint(spec.left, "natural_boundary", "lower")
    hi = EffectiveEndpoint(spec.right, "natural_boundary", "upper")
    scale = scale_objects(spec, spec.left, spec.right, eps_cls)
    conditions: list = []
    mart = True
    for endp in (lo, hi):
        good, gev = endpoint_good(spec, scale, endp)
        exits, xev = feller_exits(spec, scale, endp)
        endp.analysis.good = good
        endp.analysis.feller_exits = exits
        conditions.append(Condition(f"{endp.side}.good", "", good, gev))
        conditions.append(Condition(f"{endp.side}.aux_exits", "", exits, xev))
        mart = mart and ((not exits) or good)
    conditions.append(Condition("martingale", "", mart, {}))
    if not mart:
        return Verdict(LEVEL_STRICT_LOCAL, conditions)
    zero, _zev = _b_zero_ae(spec, spec.left, spec.right)
    st_lower = scale.scale_limit("lower", True)
    st_upper = scale.scale_limit("upper", True)
    ui = (zero
          or (bool(lo.analysis.good) and st_upper[0] is False)
          or (bool(hi.analysis.good) and st_lower[0] is False)
          or (bool(lo.analysis.good) and bool(hi.analysis.good)))
    conditions.append(Condition("uniformly_integrable", "", ui, {}))
    return Verdict(LEVEL_UI if ui else LEVEL_MARTINGALE, conditions)


# ---------------------------------------------------------------------------
# reflection (x -> -x) for symmetry testing


def _substitute_neg_x(e: Expr) -> Expr:
    if isinstance(e, ex.Lit):
        return e
    if isinstance(e, ex.Var):
        return ex.Neg(ex.Var())
    if isinstance(e, ex.Neg):
        return ex.Neg(_substitute_neg_x(e.arg))
    if isinstance(e, ex.Bin):
        return ex.Bin(e.op, _substitute_neg_x(e.left), _substitute_neg_x(e.right))
    if isinstance(e, ex.Call):
        return ex.Call(e.func, tuple(_substitute_neg_x(a) for a in e.args))
    raise TypeError(f"not an Expr: {e!r}")


def reflect_problem(spec: ProblemSpec) -> ProblemSpec:
    """The mirror diffusion under x -> -x (drift and exponent flip sign)."""
    return ProblemSpec(
        left=-spec.right,
        right=-spec.left,
        x0=-spec.x0,
        mu=ex.Neg(_substitute_neg_x(spec.mu)),
        sigma=_substitute_neg_x(spec.sigma),
        b=ex.Neg(_substitute_neg_x(spec.b)),
        singularity_hints=tuple(sorted(-p for p in spec.singularity_hints)),
        base_point=None if spec.base_point is None else -spec.base_point,
    )


# ---------------------------------------------------------------------------
# serialization


def _json_safe(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return v
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return _json_safe(float(v))
    return v


def certificate_dict(verdict: Verdict) -> dict:
    return {
        "level": verdict.level,
        "conditions": [
            {"id": c.id, "paper_ref": c.statement, "holds": bool(c.holds),
             "evidence": _json_safe(c.evidence)}
            for c in verdict.conditions
        ],
    }


def certificate_json(verdict: Verdict) -> str:
    """Canonical JSON: sorted keys, stable float formatting."""
    return json.dumps(certificate_dict(verdict), sort_keys=True,
                      separators=(",", ": "), indent=1)


def level_at_least(level: str, other: str) -> bool:
    return _LEVEL_ORDER[level] >= _LEVEL_ORDER[other]
