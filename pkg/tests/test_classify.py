import json
import math

import pytest

from diffmart import classify as cls
from diffmart import quad
from diffmart.expr import evaluate, parse


def mk(mu="0", sigma="1", b="0", left="-inf", right="+inf", x0=1.0, **kw):
    raw = {"interval": {"left": left, "right": right}, "x0": x0,
           "mu": mu, "sigma": sigma, "b": b}
    raw.update(kw)
    return cls.build_problem(raw)


EXAMPLE_I = dict(mu="0", sigma="1", b="1/x", x0=1.0)
EXAMPLE_II = dict(mu="0", sigma="1", b="1/x", x0=1.0, right=2.0)
BESSEL3 = dict(mu="1/x", sigma="1", b="-1/x", left=0.0, x0=1.0)
JUMP = dict(mu="0", sigma="1", b="abs(x)^(-3/4)", x0=1.0)


# --- build_problem ----------------------------------------------------------

def test_build_problem_example_i_valid():
    spec = mk(**EXAMPLE_I)
    assert spec.left == -math.inf and spec.right == math.inf
    assert spec.c == 1.0


def test_build_problem_sigma_vanishing_is_rejected():
    with pytest.raises(cls.EngelbertSchmidtError) as exc:
        mk(sigma="x", left=-1.0, right=1.0, x0=0.5)
    assert exc.value.point == 0.0
    assert "sigma" in exc.value.condition


def test_build_problem_x0_outside_interval():
    with pytest.raises(cls.ValidationError) as exc:
        mk(left=0.0, right=1.0, x0=2.0)
    assert any("x0" in p for p in exc.value.problems)


def test_build_problem_aggregates_all_errors():
    with pytest.raises(cls.ValidationError) as exc:
        cls.build_problem({"interval": {"left": 1.0, "right": 0.0},
                           "x0": "nope", "mu": "1/", "sigma": "1"})
    text = " ; ".join(exc.value.problems)
    assert "x0" in text and "mu" in text and "b" in text and "interval" in text


def test_build_problem_mu_singularity_interior_rejected():
    # mu/sigma^2 must be locally integrable at interior points
    with pytest.raises(cls.EngelbertSchmidtError):
        mk(mu="1/x", left=-1.0, right=1.0, x0=0.5)


def test_build_problem_mu_singularity_at_boundary_ok():
    spec = mk(mu="1/x", left=0.0, x0=1.0)
    assert spec.x0 == 1.0


# --- singular_set ------------------------------------------------------------

def test_singular_set_reciprocal():
    A = cls.singular_set(mk(**EXAMPLE_I))
    assert A.points == [0.0]


def test_singular_set_empty_for_constant_b():
    assert cls.singular_set(mk(b="1")).points == []


def test_singular_set_bessel_boundary_pole_excluded():
    # the pole of b sits at the state-space boundary, not inside
    assert cls.singular_set(mk(**BESSEL3)).points == []


def test_singular_set_from_hint_and_exponent_arithmetic():
    spec = mk(b="abs(x)^(-3/4)", hints={"singular_points": [0.0]})
    A = cls.singular_set(spec)
    assert A.points == [0.0]
    v = A.evidence[0.0]["right"]
    assert v.method == "symbolic" and v.estimated_exponent == -1.5


def test_singular_set_integrable_candidate_excluded():
    # candidate pole of b where b^2/sigma^2 is still locally integrable
    A = cls.singular_set(mk(b="abs(x)^(-1/4)"))
    assert A.points == []


def test_singular_start_is_trivial_martingale():
    with pytest.raises(cls.SingularStartError) as exc:
        cls.singular_set(mk(b="1/x", x0=0.0))
    assert exc.value.verdict.level == cls.LEVEL_MARTINGALE


# --- effective_interval ------------------------------------------------------

def test_effective_interval_examples():
    spec = mk(**EXAMPLE_I)
    lo, hi = cls.effective_interval(spec, cls.SingularSet([0.0]))
    assert (lo.location, lo.kind) == (0.0, "singular_point")
    assert (hi.location, hi.kind) == (math.inf, "natural_boundary")

    spec = mk(b="1", left=0.0, right=1.0, x0=0.3)
    lo, hi = cls.effective_interval(spec, cls.SingularSet([]))
    assert (lo.location, hi.location) == (0.0, 1.0)
    assert lo.kind == hi.kind == "natural_boundary"

    spec = mk(b="1", left=-3.0, right=3.0, x0=0.0)
    lo, hi = cls.effective_interval(spec, cls.SingularSet([-2.0, 1.0]))
    assert (lo.location, hi.location) == (-2.0, 1.0)


# --- hit-time integral dichotomy --------------------------------------------

def test_hit_integral_divergent_for_reciprocal():
    spec = mk(**EXAMPLE_I)
    divergent, v = cls.hit_integral_divergent(spec, 0.0, "right", math.inf)
    assert divergent  # harmonic weight: the exponential dies continuously
    assert v.method == "symbolic"


def test_hit_integral_finite_for_weaker_pole():
    spec = mk(**JUMP)
    divergent, _ = cls.hit_integral_divergent(spec, 0.0, "right", math.inf)
    assert not divergent  # weight |x|^(-1/2): jump-to-zero morphology


def test_hit_integral_requires_singular_point():
    spec = mk(b="1")
    with pytest.raises(ValueError):
        cls.hit_integral_divergent(spec, 0.5, "right", math.inf)


# --- scale objects -----------------------------------------------------------

def test_scale_objects_zero_drift():
    spec = mk(b="1", x0=0.5)
    sc = cls.scale_objects(spec, -math.inf, math.inf)
    for x in (-2.0, 0.1, 3.0):
        assert sc.rho(x) == 1.0
        assert sc.s(x) == pytest.approx(x - 0.5, rel=1e-10, abs=1e-12)


def test_scale_objects_bessel_cancellation():
    # 2mu/sigma^2 = 2/x integrates to 2 log x; the exponent coefficient
    # -1/x cancels it exactly in the auxiliary density
    spec = mk(**BESSEL3)
    sc = cls.scale_objects(spec, 0.0, math.inf)
    for x in (0.25, 0.5, 2.0, 7.0):
        assert sc.rho(x) == pytest.approx(x ** -2.0, rel=1e-9)
        assert sc.rho_tilde(x) == pytest.approx(1.0, rel=1e-9)
        assert sc.s_tilde(x) == pytest.approx(x - 1.0, rel=1e-8, abs=1e-10)


def test_scale_objects_zero_b_collapses_to_plain():
    spec = mk(mu="-x", b="0")
    sc = cls.scale_objects(spec, -math.inf, math.inf)
    for x in (-1.0, 0.3, 2.0):
        assert sc.rho_tilde(x) == sc.rho(x)


def test_scale_limit_values():
    spec = mk(**BESSEL3)
    sc = cls.scale_objects(spec, 0.0, math.inf)
    # s(x) = 1 - 1/x: limit -inf at 0, 1 at infinity
    assert sc.scale_limit_value("lower", tilde=False) == -math.inf
    assert sc.scale_limit_value("upper", tilde=False) == pytest.approx(1.0, rel=1e-7)
    # s~(x) = x - 1: limit -1 at 0, +inf at infinity
    assert sc.scale_limit_value("lower", tilde=True) == pytest.approx(-1.0, rel=1e-7)
    assert sc.scale_limit_value("upper", tilde=True) == math.inf


# --- endpoint tests ----------------------------------------------------------

def _endpoint(spec, lower, upper, side):
    loc = lower if side == "lower" else upper
    return cls.EffectiveEndpoint(loc, "natural_boundary", side)


def test_good_with_zero_b_reduces_to_scale_finiteness():
    # b = 0: the weighted condition is trivial, good iff the scale limit
    # is finite
    spec = mk(mu="x", b="0")  # rho = exp(-x^2 + c): both limits finite
    sc = cls.scale_objects(spec, -math.inf, math.inf)
    for side in ("lower", "upper"):
        good, _ = cls.endpoint_good(spec, sc, _endpoint(spec, -math.inf, math.inf, side))
        assert good
    spec2 = mk(mu="0", b="0")  # rho = 1: both limits infinite
    sc2 = cls.scale_objects(spec2, -math.inf, math.inf)
    for side in ("lower", "upper"):
        good, _ = cls.endpoint_good(spec2, sc2, _endpoint(spec2, -math.inf, math.inf, side))
        assert not good


def test_good_right_endpoint_of_capped_example():
    spec = mk(**EXAMPLE_II)
    sc = cls.scale_objects(spec, 0.0, 2.0)
    good, ev = cls.endpoint_good(
        spec, sc, cls.EffectiveEndpoint(2.0, "natural_boundary", "upper"))
    assert good
    assert ev["plain_form"]["weighted_integrand"]["status"] == "integrable"


def test_bad_lower_endpoint_of_bessel():
    spec = mk(**BESSEL3)
    sc = cls.scale_objects(spec, 0.0, math.inf)
    good, ev = cls.endpoint_good(
        spec, sc, cls.EffectiveEndpoint(0.0, "natural_boundary", "lower"))
    assert not good
    # the auxiliary form sees the finite scale limit but a harmonic
    # weighted integrand
    assert ev["aux_form"]["weighted_integrand"]["status"] == "divergent"


def test_feller_brownian_motion_exits_at_finite_point_not_infinity():
    spec = mk(mu="0", sigma="1", b="0", left=0.0, x0=1.0)
    sc = cls.scale_objects(spec, 0.0, math.inf)
    exits0, _ = cls.feller_exits(
        spec, sc, cls.EffectiveEndpoint(0.0, "natural_boundary", "lower"))
    exits_inf, _ = cls.feller_exits(
        spec, sc, cls.EffectiveEndpoint(math.inf, "natural_boundary", "upper"))
    assert exits0 and not exits_inf


def test_feller_drifting_bm_exits_nowhere():
    # auxiliary drift c > 0 on the whole line: scale limit at -inf kills
    # the left exit, constant weighted integrand kills the right one
    spec = mk(mu="0.8", sigma="1", b="0", x0=0.0)
    sc = cls.scale_objects(spec, -math.inf, math.inf)
    for side in ("lower", "upper"):
        exits, _ = cls.feller_exits(
            spec, sc, _endpoint(spec, -math.inf, math.inf, side))
        assert not exits


def test_feller_nested_crosscheck_recorded():
    spec = mk(mu="0", sigma="1", b="0", left=0.0, x0=1.0)
    sc = cls.scale_objects(spec, 0.0, math.inf)
    exits, ev = cls.feller_exits(
        spec, sc, cls.EffectiveEndpoint(0.0, "natural_boundary", "lower"))
    assert exits
    assert "nested_value" in ev or "nested_value_note" in ev
    if "nested_value" in ev:
        # explosion functional of BM toward a point at distance 1: finite
        assert 0.0 < ev["nested_value"] < 10.0


# --- the full pipeline -------------------------------------------------------

@pytest.mark.parametrize("raw,expected", [
    (EXAMPLE_I, cls.LEVEL_MARTINGALE),
    (EXAMPLE_II, cls.LEVEL_UI),
    (BESSEL3, cls.LEVEL_STRICT_LOCAL),
    (JUMP, cls.LEVEL_NOT_LOCAL),
    (dict(b="0", x0=0.0), cls.LEVEL_UI),
])
def test_classify_corpus(raw, expected):
    assert cls.classify(mk(**raw)).level == expected


def test_classify_example_i_certificate_details():
    v = cls.classify(mk(**EXAMPLE_I))
    assert v.level == cls.LEVEL_MARTINGALE
    assert v.condition("singular_set").evidence["points"] == [0.0]
    assert v.holds("gate.lower_continuous_absorption")
    assert v.holds("local_martingale")
    assert v.holds("martingale")
    for cid in ("ui.b_zero_ae", "ui.lower_good_aux_upper_infinite",
                "ui.upper_good_aux_lower_infinite", "ui.both_good"):
        assert not v.holds(cid)
    assert not v.holds("uniformly_integrable")


def test_classify_example_ii_ui_via_upper_good_lower_infinite():
    v = cls.classify(mk(**EXAMPLE_II))
    assert v.level == cls.LEVEL_UI
    assert v.holds("upper.good")
    assert v.holds("ui.upper_good_aux_lower_infinite")


def test_classify_jump_case_stops_at_gate():
    v = cls.classify(mk(**JUMP))
    assert v.level == cls.LEVEL_NOT_LOCAL
    assert not v.holds("gate.lower_continuous_absorption")
    assert not v.holds("local_martingale")
    assert len(v.conditions) >= 3


def test_classify_b_zero_is_ui_via_condition_a():
    v = cls.classify(mk(b="0", x0=0.0))
    assert v.level == cls.LEVEL_UI
    assert v.holds("ui.b_zero_ae")
    assert v.condition("ui.b_zero_ae").evidence.get("structural") is True


def test_certificate_json_is_canonical_and_pinned():
    v = cls.classify(mk(**EXAMPLE_I))
    text = cls.certificate_json(v)
    doc = json.loads(text)
    assert set(doc) == {"level", "conditions"}
    assert doc["level"] in ("not_local_martingale", "strict_local_martingale",
                            "martingale", "uniformly_integrable_martingale")
    for c in doc["conditions"]:
        assert set(c) == {"id", "paper_ref", "holds", "evidence"}
    # canonical: round-trip is byte-identical
    again = json.dumps(doc, sort_keys=True, separators=(",", ": "), indent=1)
    assert again == text


def test_classify_base_point_override():
    v = cls.classify(mk(**EXAMPLE_I, base_point=0.5))
    assert v.level == cls.LEVEL_MARTINGALE


def test_classify_undecidable_names_the_condition():
    raw = dict(mu="0", sigma="1", b="1/(x*sqrt(log(1/abs(x))))",
               left=-0.5, right=0.5, x0=0.25)
    with pytest.raises(cls.UndecidableError) as exc:
        cls.classify(mk(**raw))
    assert "hit-time integral" in str(exc.value)


def test_reflection_symmetry_on_named_cases():
    for raw, expected in [
        (EXAMPLE_I, cls.LEVEL_MARTINGALE),
        (BESSEL3, cls.LEVEL_STRICT_LOCAL),
        (JUMP, cls.LEVEL_NOT_LOCAL),
    ]:
        spec = mk(**raw)
        mirrored = cls.reflect_problem(spec)
        assert cls.classify(mirrored).level == expected


def test_reduction_matches_direct_route_on_empty_singular_set():
    for raw in (BESSEL3, dict(mu="0.8", b="0", x0=0.0),
                dict(mu="x", b="exp(-x^2)", x0=0.0)):
        spec = mk(**raw)
        assert cls.singular_set(spec).points == []
        general = cls.classify(spec).level
        direct = cls.classify_no_singularities(spec).level
        assert general == direct


def test_classify_respects_eps_cls_margin():
    # exponent -0.9 with a structurally underivable log factor: decidable
    # at the default margin, inside the band (hence undecidable) at 0.2
    spec = mk(b="abs(x)^(-0.45) * sqrt(1 + log(1 + x^2))")
    with pytest.raises(cls.UndecidableError):
        cls.classify(spec, eps_cls=0.2)
    assert cls.singular_set(spec, eps_cls=0.05).points == []
