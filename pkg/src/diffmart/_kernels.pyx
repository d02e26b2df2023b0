# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled hot kernels: counter-based normals and the Euler path loop.

Semantics are kept in lockstep with pykernels.py (the pure-numpy fallback
selected at import when this extension is unavailable).  The Philox uniform
stream is bit-identical between the two; transcendental steps (Box-Muller
log/cos/sin, exp/log/pow opcodes) may differ in the last ulp because numpy
routes some array transcendentals through its own SIMD loops.
"""

from libc.math cimport sqrt, log, exp, fabs, pow, isfinite, isnan, NAN
from libc.stdint cimport uint32_t, uint64_t, int32_t, int64_t, int8_t
from cython.parallel cimport prange

import numpy as np

DEF INV_2_53 = 1.1102230246251565e-16   # 2^-53 exactly

# opcodes shared with the python lane (see kernels.py)
DEF OP_CONST = 0
DEF OP_X = 1
DEF OP_ADD = 2
DEF OP_SUB = 3
DEF OP_MUL = 4
DEF OP_DIV = 5
DEF OP_NEG = 6
DEF OP_EXP = 7
DEF OP_LOG = 8
DEF OP_SQRT = 9
DEF OP_ABS = 10
DEF OP_SIGN = 11
DEF OP_POW = 12
DEF OP_POWC = 13


cdef inline double _ppnd16(double u) noexcept nogil:
    """Inverse standard normal CDF (Wichura's double-precision rational
    approximation); pure Horner arithmetic except sqrt(-log(.)) in the
    tails, mirrored term-for-term in the python lane."""
    cdef double q = u - 0.5
    cdef double r, num, den
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
              + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
              + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
              + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
              + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
              + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
              + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    r = u if q < 0.0 else 1.0 - u
    r = sqrt(-log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
              + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
              + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
              + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
              + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
              + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
              + 2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
              + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
              + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
              + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
              + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
              + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
              + 5.99832206555887937690e-1) * r + 1.0)
    if q < 0.0:
        return -(num / den)
    return num / den


cdef struct Pair:
    double z0
    double z1


cdef inline Pair _normal_pair(uint64_t seed, uint64_t path, uint64_t block) noexcept nogil:
    """Two standard normals for (path, step-pair): Philox4x32-10 counter
    block -> two uniforms -> inverse normal CDF."""
    cdef uint32_t c0 = <uint32_t>(block & 0xFFFFFFFFu)
    cdef uint32_t c1 = <uint32_t>(block >> 32)
    cdef uint32_t c2 = <uint32_t>(path & 0xFFFFFFFFu)
    cdef uint32_t c3 = <uint32_t>(path >> 32)
    cdef uint32_t k0 = <uint32_t>(seed & 0xFFFFFFFFu)
    cdef uint32_t k1 = <uint32_t>(seed >> 32)
    cdef uint32_t hi0, lo0, hi1, lo1, t0, t2
    cdef uint64_t p0, p1, ua, ub
    cdef double u1, u2
    cdef int rnd
    cdef Pair out
    for rnd in range(10):
        p0 = (<uint64_t>0xD2511F53u) * c0
        p1 = (<uint64_t>0xCD9E8D57u) * c2
        hi0 = <uint32_t>(p0 >> 32)
        lo0 = <uint32_t>(p0 & 0xFFFFFFFFu)
        hi1 = <uint32_t>(p1 >> 32)
        lo1 = <uint32_t>(p1 & 0xFFFFFFFFu)
        t0 = hi1 ^ c1 ^ k0
        t2 = hi0 ^ c3 ^ k1
        c0 = t0
        c1 = lo1
        c2 = t2
        c3 = lo0
        k0 = k0 + 0x9E3779B9u
        k1 = k1 + 0xBB67AE85u
    ua = ((<uint64_t>c0) << 32) | c1
    ub = ((<uint64_t>c2) << 32) | c3
    u1 = (<double>(ua >> 11) + 0.5) * INV_2_53
    u2 = (<double>(ub >> 11) + 0.5) * INV_2_53
    out.z0 = _ppnd16(u1)
    out.z1 = _ppnd16(u2)
    return out


cdef inline double _vm(const int32_t* code, Py_ssize_t n_ops, const double* consts,
                       double x, double* stack) noexcept nogil:
    """Stack evaluation of a compiled coefficient program.

    IEEE semantics throughout; the caller treats a non-finite result as a
    domain fault.  Fast paths for common constant exponents are mirrored
    exactly in the python lane.
    """
    cdef Py_ssize_t i, sp = 0
    cdef int32_t op
    cdef double a, c
    for i in range(n_ops):
        op = code[2 * i]
        if op == OP_CONST:
            stack[sp] = consts[code[2 * i + 1]]
            sp += 1
        elif op == OP_X:
            stack[sp] = x
            sp += 1
        elif op == OP_ADD:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] + stack[sp]
        elif op == OP_SUB:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] - stack[sp]
        elif op == OP_MUL:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] * stack[sp]
        elif op == OP_DIV:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] / stack[sp]
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == OP_EXP:
            stack[sp - 1] = exp(stack[sp - 1])
        elif op == OP_LOG:
            stack[sp - 1] = log(stack[sp - 1])
        elif op == OP_SQRT:
            stack[sp - 1] = sqrt(stack[sp - 1])
        elif op == OP_ABS:
            stack[sp - 1] = fabs(stack[sp - 1])
        elif op == OP_SIGN:
            a = stack[sp - 1]
            if not isnan(a):
                stack[sp - 1] = <double>((a > 0.0) - (a < 0.0))
        elif op == OP_POW:
            sp -= 1
            stack[sp - 1] = pow(stack[sp - 1], stack[sp])
        else:  # OP_POWC
            stack[sp - 1] = _powc(stack[sp - 1], consts[code[2 * i + 1]])
    return stack[0]


# program fast-path modes
DEF PM_VM = 0
DEF PM_CONST = 1
DEF PM_POWX = 2      # x ^ c
DEF PM_ABS_POWX = 3  # abs(x) ^ c


cdef struct Prog:
    const int32_t* code
    Py_ssize_t n_ops
    const double* consts
    int mode
    double value  # the constant (PM_CONST) or the exponent (PM_*POWX)


cdef inline double _powc(double a, double c) noexcept nogil:
    if c == 2.0:
        return a * a
    elif c == 0.5:
        return sqrt(a)
    elif c == -0.5:
        return 1.0 / sqrt(a)
    elif c == -1.0:
        return 1.0 / a
    elif c == -2.0:
        return 1.0 / (a * a)
    elif c == 3.0:
        return (a * a) * a
    elif c == 1.0:
        return a
    return pow(a, c)


cdef inline double _prog_eval(const Prog* G, double x, double* stack) noexcept nogil:
    if G.mode == PM_CONST:
        return G.value
    elif G.mode == PM_POWX:
        return _powc(x, G.value)
    elif G.mode == PM_ABS_POWX:
        return _powc(fabs(x), G.value)
    return _vm(G.code, G.n_ops, G.consts, x, stack)


cdef struct Params:
    double x0, dt, sqrt_dt, trunc, left, right
    uint64_t seed
    int64_t n_steps
    int left_finite, right_finite, track_b2, has_b2
    int left_exit_zero, right_exit_zero  # Z -> 0 at exit (divergent b2 accumulation)
    const double* sing
    Py_ssize_t n_sing
    const int64_t* evs
    Py_ssize_t n_ev
    Prog mu, sig, b, b2


# path status codes (shared with pykernels)
DEF ST_HORIZON = 0
DEF ST_SINGULAR = 1
DEF ST_EXIT_LEFT = 2
DEF ST_EXIT_RIGHT = 3
DEF ST_TRUNCATED = 4
DEF ST_FAULT = 5


cdef void _one_path(const Params* P, Py_ssize_t path,
                    double* z_row, double* y_row, double* b2_row,
                    int8_t* status, int64_t* stop_step,
                    double* z_prehit, double* y_final) noexcept nogil:
    cdef double stack[64]
    cdef double y = P.x0
    cdef double log_z = 0.0
    cdef double b2acc = 0.0
    cdef double cached = 0.0
    cdef double mu_v, sig_v, b_v, b2_v, xi, y_new, inc, guard
    cdef double frozen_z = NAN, frozen_y = NAN
    cdef Pair pair
    cdef Py_ssize_t j = 0, m
    cdef int64_t k, next_ev
    cdef int st = -1
    cdef int ok
    # hoisted loop constants
    cdef double dt = P.dt
    cdef double sqrt_dt = P.sqrt_dt
    cdef double trunc = P.trunc
    cdef double left = P.left
    cdef double right = P.right
    cdef uint64_t seed = P.seed
    cdef int64_t n_steps = P.n_steps
    cdef int left_finite = P.left_finite
    cdef int right_finite = P.right_finite
    cdef int track_b2 = P.track_b2
    cdef int has_b2 = P.has_b2
    cdef Py_ssize_t n_sing = P.n_sing
    cdef Py_ssize_t n_ev = P.n_ev
    cdef int b_zero = P.b.mode == PM_CONST and P.b.value == 0.0

    while j < n_ev and P.evs[j] == 0:
        z_row[j] = 1.0
        y_row[j] = y
        if track_b2:
            b2_row[j] = 0.0
        j += 1
    next_ev = P.evs[j] if j < n_ev else -1

    for k in range(n_steps):
        if (k & 1) == 0:
            pair = _normal_pair(seed, <uint64_t>path, <uint64_t>(k >> 1))
            xi = pair.z0
            cached = pair.z1
        else:
            xi = cached

        mu_v = _prog_eval(&P.mu, y, stack)
        sig_v = _prog_eval(&P.sig, y, stack)
        if b_zero:
            b_v = 0.0
            b2_v = _prog_eval(&P.b2, y, stack) if has_b2 else 0.0
            if not (isfinite(mu_v) and isfinite(sig_v) and isfinite(b2_v)):
                st = ST_FAULT
                frozen_z = NAN
                frozen_y = y
                break
            y_new = y + mu_v * dt + (sig_v * sqrt_dt) * xi
            inc = 0.0
            if not isfinite(y_new):
                st = ST_FAULT
                frozen_z = NAN
                frozen_y = y
                break
        else:
            b_v = _prog_eval(&P.b, y, stack)
            b2_v = _prog_eval(&P.b2, y, stack) if has_b2 else b_v * b_v
            if not (isfinite(mu_v) and isfinite(sig_v) and isfinite(b_v) and isfinite(b2_v)):
                st = ST_FAULT
                frozen_z = NAN
                frozen_y = y
                break
            y_new = y + mu_v * dt + (sig_v * sqrt_dt) * xi
            inc = (b_v * sqrt_dt) * xi - ((0.5 * b_v) * b_v) * dt
            if not isfinite(y_new) or isnan(inc) or inc > 1.7e308:
                st = ST_FAULT
                frozen_z = NAN
                frozen_y = y
                break

        b2acc = b2acc + b2_v * dt

        # crossing (or one-sigma proximity) of a singular interior point
        if n_sing > 0:
            guard = fabs(sig_v) * sqrt_dt
            ok = 1
            for m in range(n_sing):
                if (y - P.sing[m]) * (y_new - P.sing[m]) <= 0.0 or fabs(y_new - P.sing[m]) < guard:
                    st = ST_SINGULAR
                    frozen_z = 0.0
                    frozen_y = P.sing[m]
                    z_prehit[0] = exp(log_z)
                    ok = 0
                    break
            if not ok:
                break

        # absorbing natural boundaries / truncation of infinite sides; the
        # exponential freezes at its last in-domain grid value unless the
        # squared-coefficient accumulation provably diverges at that
        # endpoint, in which case it vanishes there
        if left_finite and y_new <= left:
            st = ST_EXIT_LEFT
            frozen_z = 0.0 if P.left_exit_zero else exp(log_z)
            frozen_y = left
            break
        if right_finite and y_new >= right:
            st = ST_EXIT_RIGHT
            frozen_z = 0.0 if P.right_exit_zero else exp(log_z)
            frozen_y = right
            break
        if (not left_finite and y_new < -trunc) or (not right_finite and y_new > trunc):
            st = ST_TRUNCATED
            frozen_z = exp(log_z)
            frozen_y = y_new
            break

        y = y_new
        log_z = log_z + inc
        if k + 1 == next_ev:
            while j < n_ev and P.evs[j] == k + 1:
                z_row[j] = exp(log_z)
                y_row[j] = y
                if track_b2:
                    b2_row[j] = b2acc
                j += 1
            next_ev = P.evs[j] if j < n_ev else -1

    if st < 0:
        status[0] = ST_HORIZON
        stop_step[0] = n_steps
        y_final[0] = y
    else:
        status[0] = <int8_t>st
        stop_step[0] = k + 1
        y_final[0] = frozen_y
        while j < n_ev:
            z_row[j] = frozen_z
            y_row[j] = frozen_y
            if track_b2:
                b2_row[j] = b2acc
            j += 1


def run_paths(dict progs, double x0, double dt, long n_steps,
              unsigned long long seed, long n_paths,
              double[::1] sing, left, right, double trunc,
              long[::1] eval_steps, bint track_b2, int n_threads,
              bint left_exit_zero=False, bint right_exit_zero=False):
    """Simulate n_paths Euler paths; returns dict of numpy outputs.

    progs maps 'mu'/'sigma'/'b' (and optionally 'b2') to compiled
    (code:int32[2n], consts:float64[m]) pairs produced by kernels.compile_program.
    """
    cdef Params P
    P.x0 = x0
    P.dt = dt
    P.sqrt_dt = sqrt(dt)
    P.trunc = trunc
    P.seed = seed
    P.n_steps = n_steps
    P.left_finite = 0 if left is None else 1
    P.left = 0.0 if left is None else float(left)
    P.right_finite = 0 if right is None else 1
    P.right = 0.0 if right is None else float(right)
    P.track_b2 = 1 if track_b2 else 0
    P.left_exit_zero = 1 if left_exit_zero else 0
    P.right_exit_zero = 1 if right_exit_zero else 0

    P.n_sing = sing.shape[0]
    P.sing = &sing[0] if P.n_sing > 0 else NULL
    cdef int64_t[::1] evs64 = np.ascontiguousarray(eval_steps, dtype=np.int64)
    P.n_ev = evs64.shape[0]
    P.evs = &evs64[0] if P.n_ev > 0 else NULL

    # keep buffer references alive for the duration of the call
    keep = []

    cdef Prog* slots[4]
    slots[0] = &P.mu
    slots[1] = &P.sig
    slots[2] = &P.b
    slots[3] = &P.b2
    names = ["mu", "sigma", "b", "b2"]
    P.has_b2 = 1 if "b2" in progs else 0
    cdef Py_ssize_t idx
    cdef int32_t[::1] code_mv
    cdef double[::1] consts_mv
    for idx in range(4):
        name = names[idx]
        if name == "b2" and not P.has_b2:
            slots[idx].code = NULL
            slots[idx].n_ops = 0
            slots[idx].consts = NULL
            slots[idx].mode = PM_CONST
            slots[idx].value = 0.0
            continue
        code_arr = np.ascontiguousarray(progs[name][0], dtype=np.int32)
        consts_arr = np.ascontiguousarray(progs[name][1], dtype=np.float64)
        keep.append(code_arr)
        keep.append(consts_arr)
        code_mv = code_arr
        consts_mv = consts_arr
        slots[idx].n_ops = code_arr.shape[0] // 2
        slots[idx].code = &code_mv[0]
        slots[idx].consts = &consts_mv[0] if consts_arr.shape[0] > 0 else NULL
        slots[idx].mode = PM_VM
        slots[idx].value = 0.0
        if slots[idx].n_ops == 1 and code_arr[0] == OP_CONST:
            slots[idx].mode = PM_CONST
            slots[idx].value = consts_arr[code_arr[1]]
        elif (slots[idx].n_ops == 2 and code_arr[0] == OP_X
              and code_arr[2] == OP_POWC):
            slots[idx].mode = PM_POWX
            slots[idx].value = consts_arr[code_arr[3]]
        elif (slots[idx].n_ops == 3 and code_arr[0] == OP_X
              and code_arr[2] == OP_ABS and code_arr[4] == OP_POWC):
            slots[idx].mode = PM_ABS_POWX
            slots[idx].value = consts_arr[code_arr[5]]

    n_ev = int(P.n_ev)
    z = np.empty((n_paths, n_ev))
    ys = np.empty((n_paths, n_ev))
    b2 = np.empty((n_paths, n_ev)) if track_b2 else np.empty((0, 0))
    status = np.empty(n_paths, dtype=np.int8)
    stop_step = np.empty(n_paths, dtype=np.int64)
    z_prehit = np.full(n_paths, np.nan)
    y_final = np.empty(n_paths)

    cdef double[:, ::1] z_mv = z
    cdef double[:, ::1] y_mv = ys
    cdef double[:, ::1] b2_mv = b2
    cdef int8_t[::1] st_mv = status
    cdef int64_t[::1] ss_mv = stop_step
    cdef double[::1] ph_mv = z_prehit
    cdef double[::1] yf_mv = y_final

    cdef Py_ssize_t i
    cdef Py_ssize_t n = n_paths
    cdef double* b2_base = &b2_mv[0, 0] if track_b2 and n_ev > 0 and n > 0 else NULL
    cdef double* z_base = &z_mv[0, 0] if n_ev > 0 and n > 0 else NULL
    cdef double* y_base = &y_mv[0, 0] if n_ev > 0 and n > 0 else NULL

    with nogil:
        for i in prange(n, num_threads=n_threads, schedule='static'):
            _one_path(&P, i,
                      z_base + i * P.n_ev if z_base != NULL else NULL,
                      y_base + i * P.n_ev if y_base != NULL else NULL,
                      b2_base + i * P.n_ev if b2_base != NULL else NULL,
                      &st_mv[i], &ss_mv[i], &ph_mv[i], &yf_mv[i])

    return {
        "z": z, "y": ys, "b2": (b2 if track_b2 else None),
        "status": status, "stop_step": stop_step,
        "z_prehit": z_prehit, "y_final": y_final,
    }


def normal_pairs(unsigned long long seed, unsigned long long path, long n_blocks):
    """Test helper: the first n_blocks Box-Muller pairs of a path's stream."""
    out = np.empty((n_blocks, 2))
    cdef double[:, ::1] mv = out
    cdef Py_ssize_t k
    cdef Pair p
    for k in range(n_blocks):
        p = _normal_pair(seed, path, <uint64_t>k)
        mv[k, 0] = p.z0
        mv[k, 1] = p.z1
    return out


def philox_words(unsigned long long seed, unsigned long long path, unsigned long long block):
    """Test helper: raw 4x32 Philox output words for one counter block."""
    cdef uint32_t c0 = <uint32_t>(block & 0xFFFFFFFFu)
    cdef uint32_t c1 = <uint32_t>(block >> 32)
    cdef uint32_t c2 = <uint32_t>(path & 0xFFFFFFFFu)
    cdef uint32_t c3 = <uint32_t>(path >> 32)
    cdef uint32_t k0 = <uint32_t>(seed & 0xFFFFFFFFu)
    cdef uint32_t k1 = <uint32_t>(seed >> 32)
    cdef uint32_t hi0, lo0, hi1, lo1, t0, t2
    cdef uint64_t p0, p1
    cdef int rnd
    for rnd in range(10):
        p0 = (<uint64_t>0xD2511F53u) * c0
        p1 = (<uint64_t>0xCD9E8D57u) * c2
        hi0 = <uint32_t>(p0 >> 32)
        lo0 = <uint32_t>(p0 & 0xFFFFFFFFu)
        hi1 = <uint32_t>(p1 >> 32)
        lo1 = <uint32_t>(p1 & 0xFFFFFFFFu)
        t0 = hi1 ^ c1 ^ k0
        t2 = hi0 ^ c3 ^ k1
        c0 = t0
        c1 = lo1
        c2 = t2
        c3 = lo0
        k0 = k0 + 0x9E3779B9u
        k1 = k1 + 0xBB67AE85u
    return (int(c0), int(c1), int(c2), int(c3))


def vm_eval(code, consts, double x):
    """Test helper: evaluate one compiled program at a scalar."""
    cdef double stack[64]
    code_arr = np.ascontiguousarray(code, dtype=np.int32)
    consts_arr = np.ascontiguousarray(consts, dtype=np.float64)
    cdef int32_t[::1] cmv = code_arr
    cdef double[::1] kmv = consts_arr
    cdef const double* kp = &kmv[0] if consts_arr.shape[0] > 0 else NULL
    return _vm(&cmv[0], code_arr.shape[0] // 2, kp, x, stack)
