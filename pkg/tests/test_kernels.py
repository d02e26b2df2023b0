import math

import numpy as np
import pytest
from scipy.special import ndtri

from diffmart import kernels, pykernels
from diffmart.expr import evaluate, parse

HAVE_COMPILED = kernels.BACKEND == "compiled"
needs_compiled = pytest.mark.skipif(not HAVE_COMPILED,
                                    reason="compiled kernels not built")


@needs_compiled
def test_philox_words_bitwise_identical_across_lanes():
    from diffmart import _kernels
    cases = [(0, 0, 0), (42, 1, 2), (2 ** 63 + 5, 2 ** 40 + 3, 2 ** 35 + 7),
             (12345, 99, 10 ** 6), (2 ** 64 - 1, 2 ** 64 - 1, 2 ** 64 - 1)]
    for seed, path, block in cases:
        a = _kernels.philox_words(seed, path, block)
        b = tuple(int(w) for w in pykernels.philox_words(
            seed, np.uint64(path), np.uint64(block)))
        assert a == b


def test_philox_distinct_streams():
    z0a, _ = pykernels.normal_pairs(1, np.uint64(0), np.arange(64, dtype=np.uint64))
    z0b, _ = pykernels.normal_pairs(1, np.uint64(1), np.arange(64, dtype=np.uint64))
    z0c, _ = pykernels.normal_pairs(2, np.uint64(0), np.arange(64, dtype=np.uint64))
    assert not np.array_equal(z0a, z0b)
    assert not np.array_equal(z0a, z0c)


def test_inverse_normal_matches_scipy():
    u = np.concatenate([np.linspace(1e-12, 1 - 1e-12, 100001),
                        [1e-15, 1 - 1e-15, 0.5, 0.925, 0.075]])
    z = pykernels.ppnd16(u)
    ref = ndtri(u)
    assert np.max(np.abs(z - ref) / np.maximum(1e-3, np.abs(ref))) < 5e-15


def test_normal_moments():
    n = 2_000_000
    z0, z1 = pykernels.normal_pairs(11, np.arange(n // 2, dtype=np.uint64),
                                    np.uint64(0))
    z = np.concatenate([z0, z1])
    assert abs(z.mean()) < 4.0 / math.sqrt(n)
    assert abs(z.var() - 1.0) < 0.005
    assert abs((z ** 4).mean() - 3.0) < 0.03


@needs_compiled
def test_normals_agree_across_lanes():
    zc = kernels.normal_pairs(7, 3, 4096)
    zp = kernels.normal_pairs(7, 3, 4096, force_python=True)
    np.testing.assert_allclose(zc, zp, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("text", [
    "0", "1", "x", "1/x", "-1/x", "x^(-3/2)", "abs(x)^(-3/4)",
    "exp(-x)*x^2 + 1", "sign(x)*sqrt(abs(x))", "2*x/(1 + x^2)",
    "pow(x, 3) - log(x)", "x^(-1/2)",
])
def test_vm_matches_tree_evaluation(text):
    e = parse(text)
    code, consts = kernels.compile_program(e)
    for x in (0.3, 1.0, 2.7, 9.5):
        want = evaluate(e, x)
        got_py = float(pykernels.vm_eval(code, consts, np.array([x]))[0])
        assert got_py == pytest.approx(want, rel=1e-13)
        if HAVE_COMPILED:
            from diffmart import _kernels
            got_c = _kernels.vm_eval(code, consts, x)
            assert got_c == pytest.approx(want, rel=1e-13)


def _progs(mu, sigma, b):
    return {"mu": kernels.compile_program(parse(mu)),
            "sigma": kernels.compile_program(parse(sigma)),
            "b": kernels.compile_program(parse(b))}


_BASE = dict(x0=1.0, dt=1e-3, n_steps=1500, seed=42, n_paths=400,
             sing=[0.0], left=None, right=None, trunc=50.0,
             eval_steps=[0, 750, 1500], track_b2=True)


@needs_compiled
def test_run_paths_lane_parity():
    progs = _progs("0", "1", "1/x")
    a = kernels.run_paths(progs, **_BASE)
    b = kernels.run_paths(progs, **_BASE, force_python=True)
    assert np.array_equal(a["status"], b["status"])
    assert np.array_equal(a["stop_step"], b["stop_step"])
    for key in ("z", "y", "b2", "z_prehit", "y_final"):
        np.testing.assert_allclose(np.nan_to_num(a[key]),
                                   np.nan_to_num(b[key]),
                                   rtol=1e-9, atol=1e-12)


@needs_compiled
def test_run_paths_bitwise_deterministic_across_threads():
    progs = _progs("1/x", "1", "-1/x")
    kw = dict(_BASE, sing=[], left=0.0, x0=1.0)
    outs = [kernels.run_paths(progs, **kw, n_threads=k) for k in (1, 2, 4)]
    for other in outs[1:]:
        for key in outs[0]:
            if outs[0][key] is None:
                assert other[key] is None
                continue
            assert np.array_equal(np.nan_to_num(outs[0][key]),
                                  np.nan_to_num(other[key])), key


def test_run_paths_seed_sensitivity():
    progs = _progs("0", "1", "0")
    a = kernels.run_paths(progs, **dict(_BASE, seed=1))
    b = kernels.run_paths(progs, **dict(_BASE, seed=2))
    assert not np.array_equal(a["y"], b["y"])


def test_singular_absorption_zeroes_z():
    # paths crossing the singular point must carry Z = 0 afterwards and a
    # recorded positive pre-hit value
    progs = _progs("0", "1", "abs(x)^(-3/4)")
    out = kernels.run_paths(progs, **_BASE)
    hit = out["status"] == kernels.ST_SINGULAR
    assert hit.any()
    last = out["z"][:, -1]
    assert np.all(last[hit] == 0.0)
    assert np.all(out["z_prehit"][hit] > 0.0)
    assert np.all(np.isnan(out["z_prehit"][~hit]))
    # y freezes at the singular point
    assert np.all(out["y_final"][hit] == 0.0)


def test_boundary_exit_freeze_vs_zero():
    progs = _progs("0", "1", "1")
    kw = dict(_BASE, sing=[], left=0.5, right=2.0, n_steps=4000)
    frozen = kernels.run_paths(progs, **kw)
    zeroed = kernels.run_paths(progs, **kw, left_exit_zero=True,
                               right_exit_zero=True)
    ex = np.isin(frozen["status"], (kernels.ST_EXIT_LEFT, kernels.ST_EXIT_RIGHT))
    assert ex.any()
    assert np.all(frozen["z"][ex, -1] > 0.0)
    assert np.all(zeroed["z"][ex, -1] == 0.0)
    # boundary value is frozen into y
    lefts = frozen["status"] == kernels.ST_EXIT_LEFT
    assert np.all(frozen["y_final"][lefts] == 0.5)


def test_truncation_freezes():
    progs = _progs("0", "1", "0")
    kw = dict(_BASE, sing=[], trunc=1.2, n_steps=3000)
    out = kernels.run_paths(progs, **kw)
    tr = out["status"] == kernels.ST_TRUNCATED
    assert tr.any()
    assert np.all(np.abs(out["y_final"][tr]) > 1.2)
    assert np.all(out["z"][tr, -1] == 1.0)  # b = 0 keeps Z at 1


def test_domain_fault_status():
    # starting on the pole faults immediately in both lanes
    progs = _progs("0", "1", "1/x")
    kw = dict(_BASE, x0=0.0, sing=[], n_steps=10)
    for force in (False, True):
        out = kernels.run_paths(progs, **kw, force_python=force)
        assert np.all(out["status"] == kernels.ST_FAULT)
        assert np.all(np.isnan(out["z"][:, -1]))


def test_compile_program_rejects_deep_stacks():
    kernels.compile_program(parse("x + x + x"))  # shallow: fine
    deep = parse("x + (" * 70 + "x" + ")" * 70)  # right-nested: depth 71
    with pytest.raises(ValueError):
        kernels.compile_program(deep)
