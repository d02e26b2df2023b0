"""Kernel backend selection and coefficient-program compilation.

The Euler path loop exists twice: a Cython extension (diffmart._kernels,
OpenMP-parallel over paths) and a pure-numpy fallback (diffmart.pykernels).
The extension is used when importable; set DIFFMART_PURE_PYTHON=1 to force
the fallback.  Both lanes consume the same compiled coefficient programs
and the same counter-based random stream, so results are reproducible and
independent of scheduling; see benchmarks/bench_kernels.py for a speed
comparison.
"""

from __future__ import annotations

import math
import os

import numpy as np

from . import pykernels
from .expr import Bin, Call, Expr, Lit, Neg, Var, constant_fold

if os.environ.get("DIFFMART_PURE_PYTHON", "") not in ("", "0"):
    _impl = pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on build environment
        _impl = pykernels
        BACKEND = "python"

OP_CONST, OP_X, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG = 0, 1, 2, 3, 4, 5, 6
OP_EXP, OP_LOG, OP_SQRT, OP_ABS, OP_SIGN, OP_POW, OP_POWC = 7, 8, 9, 10, 11, 12, 13

_CALL_OPS = {"exp": OP_EXP, "log": OP_LOG, "sqrt": OP_SQRT,
             "abs": OP_ABS, "sign": OP_SIGN}
_BIN_OPS = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}

MAX_STACK = 64

# path status codes
ST_HORIZON, ST_SINGULAR, ST_EXIT_LEFT, ST_EXIT_RIGHT, ST_TRUNCATED, ST_FAULT = range(6)


def compile_program(e: Expr) -> tuple[np.ndarray, np.ndarray]:
    """Flatten an expression into (codes, consts) for the stack VM.

    codes is int32 of shape (2*n_ops,): [op, arg, op, arg, ...].
    Constant subtrees are folded first so e.g. x^(-3/2) compiles to a
    single constant-exponent power op.
    """
    e = constant_fold(e)
    codes: list[int] = []
    consts: list[float] = []

    def cidx(v: float) -> int:
        for i, c in enumerate(consts):
            if c == v or (math.isnan(c) and math.isnan(v)):
                return i
        consts.append(float(v))
        return len(consts) - 1

    depth = 0
    max_depth = 0

    def emit(op: int, arg: int = 0, pushes: int = 0):
        nonlocal depth, max_depth
        codes.extend((op, arg))
        depth += pushes
        max_depth = max(max_depth, depth)

    def walk(n: Expr):
        if isinstance(n, Lit):
            emit(OP_CONST, cidx(n.value), pushes=1)
        elif isinstance(n, Var):
            emit(OP_X, 0, pushes=1)
        elif isinstance(n, Neg):
            walk(n.arg)
            emit(OP_NEG)
        elif isinstance(n, Bin):
            if n.op == "^":
                k = constant_fold(n.right)
                if isinstance(k, Lit):
                    walk(n.left)
                    emit(OP_POWC, cidx(k.value))
                    return
                walk(n.left)
                walk(n.right)
                emit(OP_POW, 0, pushes=-1)
            else:
                walk(n.left)
                walk(n.right)
                emit(_BIN_OPS[n.op], 0, pushes=-1)
        elif isinstance(n, Call):
            walk(n.args[0])
            emit(_CALL_OPS[n.func])
        else:
            raise TypeError(f"not an Expr: {n!r}")

    walk(e)
    if max_depth > MAX_STACK:
        raise ValueError("expression too deep for the kernel VM")
    return (np.asarray(codes, dtype=np.int32),
            np.asarray(consts if consts else [0.0], dtype=np.float64))


def backend_name() -> str:
    return BACKEND


def default_threads() -> int:
    env = os.environ.get("DIFFMART_THREADS", "")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def run_paths(progs: dict, x0: float, dt: float, n_steps: int, seed: int,
              n_paths: int, sing, left, right, trunc: float,
              eval_steps, track_b2: bool = False,
              n_threads: int | None = None, force_python: bool = False,
              left_exit_zero: bool = False, right_exit_zero: bool = False) -> dict:
    """Dispatch the Euler loop to the selected backend.

    progs: mapping of 'mu'/'sigma'/'b' (optionally 'b2') to compiled programs.
    left/right: finite absorbing endpoint values or None for an infinite side
    (where `trunc` applies).  eval_steps: sorted step indices in [0, n_steps]
    at which path state is recorded.  left/right_exit_zero select the
    vanishing (rather than frozen) exponential value on boundary exit, for
    endpoints where the squared-coefficient time integral diverges.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    sing = np.ascontiguousarray(np.sort(np.asarray(sing, dtype=np.float64)))
    eval_steps = np.ascontiguousarray(np.asarray(eval_steps, dtype=np.int64))
    if eval_steps.size == 0:
        raise ValueError("at least one evaluation step is required")
    if np.any(np.diff(eval_steps) < 0):
        raise ValueError("eval_steps must be sorted")
    if eval_steps[0] < 0 or eval_steps[-1] > n_steps:
        raise ValueError("eval_steps out of range")
    impl = pykernels if force_python else _impl
    if n_threads is None:
        n_threads = default_threads()
    return impl.run_paths(progs, float(x0), float(dt), int(n_steps),
                          int(seed) & 0xFFFFFFFFFFFFFFFF, int(n_paths),
                          sing, left, right, float(trunc),
                          eval_steps, bool(track_b2), int(n_threads),
                          bool(left_exit_zero), bool(right_exit_zero))


def normal_pairs(seed: int, path: int, n_blocks: int, force_python: bool = False):
    """First n_blocks normal pairs of one path's stream (test/benchmark aid)."""
    impl = pykernels if force_python else _impl
    if impl is pykernels:
        z0, z1 = pykernels.normal_pairs(seed, np.uint64(path),
                                        np.arange(n_blocks, dtype=np.uint64))
        return np.column_stack([z0, z1])
    return _impl.normal_pairs(seed, path, n_blocks)
