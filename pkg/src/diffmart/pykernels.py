"""Pure-numpy fallback for the compiled path kernels.

Used when the _kernels extension is not built.  Implements the same
counter-based Philox4x32-10 stream (bit-identical uniforms) and the same
step rules and stopping logic as the compiled lane; trajectories can differ
from it in the last ulp wherever numpy's SIMD transcendentals and libm
disagree.  Vectorized across paths; much slower than the extension for
long horizons.
"""

from __future__ import annotations

import math

import numpy as np

INV_2_53 = 1.1102230246251565e-16

OP_CONST, OP_X, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG = 0, 1, 2, 3, 4, 5, 6
OP_EXP, OP_LOG, OP_SQRT, OP_ABS, OP_SIGN, OP_POW, OP_POWC = 7, 8, 9, 10, 11, 12, 13

ST_HORIZON, ST_SINGULAR, ST_EXIT_LEFT, ST_EXIT_RIGHT, ST_TRUNCATED, ST_FAULT = range(6)

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_MASK32 = np.uint64(0xFFFFFFFF)


def _round_keys(seed: int):
    k0 = seed & 0xFFFFFFFF
    k1 = (seed >> 32) & 0xFFFFFFFF
    keys = []
    for _ in range(10):
        keys.append((np.uint64(k0), np.uint64(k1)))
        k0 = (k0 + 0x9E3779B9) & 0xFFFFFFFF
        k1 = (k1 + 0xBB67AE85) & 0xFFFFFFFF
    return keys


def philox_words(seed: int, paths, blocks):
    """Vectorized Philox4x32-10; inputs broadcast, outputs 4 uint64 arrays
    holding uint32 words (kept wide to avoid repeated casts)."""
    paths = np.asarray(paths, dtype=np.uint64)
    blocks = np.asarray(blocks, dtype=np.uint64)
    c0 = blocks & _MASK32
    c1 = blocks >> np.uint64(32)
    c2 = paths & _MASK32
    c3 = paths >> np.uint64(32)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    c0, c1, c2, c3 = (np.array(a, dtype=np.uint64) for a in (c0, c1, c2, c3))
    for k0, k1 in _round_keys(seed):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> np.uint64(32)
        lo0 = p0 & _MASK32
        hi1 = p1 >> np.uint64(32)
        lo1 = p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def ppnd16(u):
    """Inverse standard normal CDF; term-for-term mirror of the C lane."""
    u = np.asarray(u, dtype=np.float64)
    q = u - 0.5
    z = np.empty(u.shape)
    central = np.abs(q) <= 0.425
    qc = q[central]
    r = 0.180625 - qc * qc
    num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
          + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
          + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
          + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
    den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
          + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
          + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
          + 4.2313330701600911252e1) * r + 1.0)
    z[central] = qc * num / den
    tail = ~central
    if tail.any():
        qt = q[tail]
        r = np.where(qt < 0.0, u[tail], 1.0 - u[tail])
        r = np.sqrt(-np.log(r))
        zt = np.empty(r.shape)
        near = r <= 5.0
        rn = r[near] - 1.6
        num = (((((((7.74545014278341407640e-4 * rn + 2.27238449892691845833e-2) * rn
              + 2.41780725177450611770e-1) * rn + 1.27045825245236838258e0) * rn
              + 3.64784832476320460504e0) * rn + 5.76949722146069140550e0) * rn
              + 4.63033784615654529590e0) * rn + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * rn + 5.47593808499534494600e-4) * rn
              + 1.51986665636164571966e-2) * rn + 1.48103976427480074590e-1) * rn
              + 6.89767334985100004550e-1) * rn + 1.67638483018380384940e0) * rn
              + 2.05319162663775882187e0) * rn + 1.0)
        zt[near] = num / den
        far = ~near
        if far.any():
            rf = r[far] - 5.0
            num = (((((((2.01033439929228813265e-7 * rf + 2.71155556874348757815e-5) * rf
                  + 1.24266094738807843860e-3) * rf + 2.65321895265761230930e-2) * rf
                  + 2.96560571828504891230e-1) * rf + 1.78482653991729133580e0) * rf
                  + 5.46378491116411436990e0) * rf + 6.65790464350110377720e0)
            den = (((((((2.04426310338993978564e-15 * rf + 1.42151175831644588870e-7) * rf
                  + 1.84631831751005468180e-5) * rf + 7.86869131145613259100e-4) * rf
                  + 1.48753612908506148525e-2) * rf + 1.36929880922735805310e-1) * rf
                  + 5.99832206555887937690e-1) * rf + 1.0)
            zt[far] = num / den
        z[tail] = np.where(qt < 0.0, -zt, zt)
    return z


def normal_pairs(seed: int, paths, blocks):
    """Normal pairs (z0, z1) from one Philox block per (path, block)."""
    c0, c1, c2, c3 = philox_words(seed, paths, blocks)
    ua = (c0 << np.uint64(32)) | c1
    ub = (c2 << np.uint64(32)) | c3
    u1 = ((ua >> np.uint64(11)).astype(np.float64) + 0.5) * INV_2_53
    u2 = ((ub >> np.uint64(11)).astype(np.float64) + 0.5) * INV_2_53
    return ppnd16(u1), ppnd16(u2)


def vm_eval(code, consts, x):
    """Vectorized program evaluation; same opcode fast paths as the C lane."""
    code = np.asarray(code, dtype=np.int32).reshape(-1, 2)
    x = np.asarray(x, dtype=np.float64)
    stack = []
    with np.errstate(all="ignore"):
        for op, arg in code:
            if op == OP_CONST:
                stack.append(np.full(x.shape, consts[arg]))
            elif op == OP_X:
                stack.append(x.astype(np.float64, copy=True))
            elif op == OP_ADD:
                b = stack.pop()
                stack[-1] = stack[-1] + b
            elif op == OP_SUB:
                b = stack.pop()
                stack[-1] = stack[-1] - b
            elif op == OP_MUL:
                b = stack.pop()
                stack[-1] = stack[-1] * b
            elif op == OP_DIV:
                b = stack.pop()
                stack[-1] = stack[-1] / b
            elif op == OP_NEG:
                stack[-1] = -stack[-1]
            elif op == OP_EXP:
                stack[-1] = np.exp(stack[-1])
            elif op == OP_LOG:
                stack[-1] = np.log(stack[-1])
            elif op == OP_SQRT:
                stack[-1] = np.sqrt(stack[-1])
            elif op == OP_ABS:
                stack[-1] = np.abs(stack[-1])
            elif op == OP_SIGN:
                stack[-1] = np.sign(stack[-1])
            elif op == OP_POW:
                b = stack.pop()
                stack[-1] = np.power(stack[-1], b)
            else:  # OP_POWC
                c = consts[arg]
                a = stack[-1]
                if c == 2.0:
                    stack[-1] = a * a
                elif c == 0.5:
                    stack[-1] = np.sqrt(a)
                elif c == -0.5:
                    stack[-1] = 1.0 / np.sqrt(a)
                elif c == -1.0:
                    stack[-1] = 1.0 / a
                elif c == -2.0:
                    stack[-1] = 1.0 / (a * a)
                elif c == 3.0:
                    stack[-1] = (a * a) * a
                elif c == 1.0:
                    pass
                else:
                    stack[-1] = np.power(a, c)
    return stack[0]


def _coeff(prog, y):
    code, consts = prog
    code = np.asarray(code, dtype=np.int32)
    if code.shape[0] == 2 and code[0] == OP_CONST:
        return np.full(y.shape, consts[code[1]])
    return vm_eval(code, consts, y)


def run_paths(progs, x0, dt, n_steps, seed, n_paths, sing, left, right,
              trunc, eval_steps, track_b2, n_threads,
              left_exit_zero=False, right_exit_zero=False):
    """Same contract as _kernels.run_paths (n_threads is accepted and
    ignored: this lane is single-threaded and scheduling-free)."""
    del n_threads
    sqrt_dt = math.sqrt(dt)
    sing = np.asarray(sing, dtype=np.float64)
    eval_steps = np.asarray(eval_steps, dtype=np.int64)
    n_ev = eval_steps.shape[0]
    has_b2 = "b2" in progs

    y = np.full(n_paths, float(x0))
    log_z = np.zeros(n_paths)
    b2acc = np.zeros(n_paths)
    status = np.full(n_paths, ST_HORIZON, dtype=np.int8)
    stop_step = np.full(n_paths, n_steps, dtype=np.int64)
    z_prehit = np.full(n_paths, np.nan)
    frozen_z = np.full(n_paths, np.nan)
    frozen_y = np.full(n_paths, np.nan)
    active = np.ones(n_paths, dtype=bool)

    z = np.empty((n_paths, n_ev))
    ys = np.empty((n_paths, n_ev))
    b2 = np.empty((n_paths, n_ev)) if track_b2 else None

    path_idx = np.arange(n_paths, dtype=np.uint64)
    cached = np.empty(n_paths)

    ev_ptr = 0
    while ev_ptr < n_ev and eval_steps[ev_ptr] == 0:
        z[:, ev_ptr] = 1.0
        ys[:, ev_ptr] = y
        if track_b2:
            b2[:, ev_ptr] = 0.0
        ev_ptr += 1

    with np.errstate(all="ignore"):
        for k in range(n_steps):
            idx = np.nonzero(active)[0]
            if idx.size == 0 and ev_ptr >= n_ev:
                break
            if idx.size:
                yk = y[idx]
                if (k & 1) == 0:
                    z0, z1 = normal_pairs(seed, path_idx[idx], np.uint64(k >> 1))
                    xi = z0
                    cached[idx] = z1
                else:
                    # regenerate the pair for paths still active in the odd
                    # lane; identical to the cached value by construction
                    xi = cached[idx]

                mu_v = _coeff(progs["mu"], yk)
                sig_v = _coeff(progs["sigma"], yk)
                b_v = _coeff(progs["b"], yk)
                b2_v = _coeff(progs["b2"], yk) if has_b2 else b_v * b_v

                fault = ~(np.isfinite(mu_v) & np.isfinite(sig_v)
                          & np.isfinite(b_v) & np.isfinite(b2_v))

                y_new = yk + mu_v * dt + (sig_v * sqrt_dt) * xi
                inc = (b_v * sqrt_dt) * xi - ((0.5 * b_v) * b_v) * dt
                fault |= ~np.isfinite(y_new) | np.isnan(inc) | (inc > 1.7e308)

                b2acc_new = b2acc[idx] + np.where(fault, 0.0, b2_v * dt)

                guard = np.abs(sig_v) * sqrt_dt
                hit = np.zeros(idx.shape, dtype=bool)
                hit_at = np.empty(idx.shape)
                for a in sing:
                    h = (((yk - a) * (y_new - a) <= 0.0)
                         | (np.abs(y_new - a) < guard)) & ~hit
                    hit_at[h] = a
                    hit |= h
                hit &= ~fault

                exit_l = np.zeros(idx.shape, dtype=bool)
                exit_r = np.zeros(idx.shape, dtype=bool)
                truncd = np.zeros(idx.shape, dtype=bool)
                live = ~fault & ~hit
                if left is not None:
                    exit_l = live & (y_new <= left)
                else:
                    truncd = live & (y_new < -trunc)
                if right is not None:
                    exit_r = live & ~exit_l & (y_new >= right)
                else:
                    truncd = (truncd | (live & ~exit_l & (y_new > trunc)))
                truncd &= ~exit_l & ~exit_r

                stopped = fault | hit | exit_l | exit_r | truncd
                run = ~stopped

                gi = idx[run]
                y[gi] = y_new[run]
                log_z[gi] += inc[run]
                b2acc[idx] = b2acc_new

                if stopped.any():
                    si = idx[stopped]
                    stop_step[si] = k + 1
                    active[si] = False
                    fz = frozen_z[idx]
                    fy = frozen_y[idx]
                    st = status[idx]
                    st[fault] = ST_FAULT
                    fz[fault] = np.nan
                    fy[fault] = yk[fault]
                    st[hit] = ST_SINGULAR
                    fz[hit] = 0.0
                    fy[hit] = hit_at[hit]
                    z_prehit[idx[hit]] = np.exp(log_z[idx[hit]])
                    st[exit_l] = ST_EXIT_LEFT
                    fz[exit_l] = 0.0 if left_exit_zero else np.exp(log_z[idx[exit_l]])
                    fy[exit_l] = left if left is not None else np.nan
                    st[exit_r] = ST_EXIT_RIGHT
                    fz[exit_r] = 0.0 if right_exit_zero else np.exp(log_z[idx[exit_r]])
                    fy[exit_r] = right if right is not None else np.nan
                    st[truncd] = ST_TRUNCATED
                    fz[truncd] = np.exp(log_z[idx[truncd]])
                    fy[truncd] = y_new[truncd]
                    status[idx] = st
                    frozen_z[idx] = fz
                    frozen_y[idx] = fy

            while ev_ptr < n_ev and eval_steps[ev_ptr] == k + 1:
                run_mask = active
                z[:, ev_ptr] = np.where(run_mask, np.exp(log_z), frozen_z)
                ys[:, ev_ptr] = np.where(run_mask, y, frozen_y)
                if track_b2:
                    b2[:, ev_ptr] = b2acc
                ev_ptr += 1

    y_final = np.where(active, y, frozen_y)
    return {
        "z": z, "y": ys, "b2": b2,
        "status": status, "stop_step": stop_step,
        "z_prehit": z_prehit, "y_final": y_final,
    }
