# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels (Cython backend).

Mirror of asiplab._kernels_py, draw-for-draw: randomness comes from the same
numpy BitGenerator consumed one variate at a time, and arithmetic follows the
same order, so outputs are bit-identical to the pure backend for a given
seed. Keep the two modules in sync.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport cos, exp, fabs, floor, log, pow, sin, sqrt
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (random_standard_normal,
                                           random_standard_uniform)

cnp.import_array()

IS_COMPILED = True

DEF MASK64 = 0xFFFFFFFFFFFFFFFF

cdef double TWO_NEG64 = 2.0 ** -64
cdef double PI = 3.141592653589793
cdef double TWO_PI = 2.0 * PI


cdef inline bitgen_t* _bg(object rng):
    capsule = rng.bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline long _next_symbol(double[:, ::1] cum, long s, double u, long A):
    cdef long a = 0
    while a < A - 1 and not (u < cum[s, a]):
        a += 1
    return a


# ---------------------------------------------------------------------------
# Markov shift trajectories


def markov_symbols(cum_rows, long n, long state0, rng):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cum_arr = np.ascontiguousarray(
        cum_rows, dtype=np.float64)
    cdef double[:, ::1] cum = cum_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef long[::1] ov = out
    cdef bitgen_t* bg = _bg(rng)
    cdef long A = cum.shape[0]
    cdef long s = state0
    cdef long i
    for i in range(n):
        s = _next_symbol(cum, s, random_standard_uniform(bg), A)
        ov[i] = s
    return out


def markov_advance(cum_rows, long n, long state0, rng):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cum_arr = np.ascontiguousarray(
        cum_rows, dtype=np.float64)
    cdef double[:, ::1] cum = cum_arr
    cdef bitgen_t* bg = _bg(rng)
    cdef long A = cum.shape[0]
    cdef long s = state0
    cdef long i
    for i in range(n):
        s = _next_symbol(cum, s, random_standard_uniform(bg), A)
    return s


def markov_eta(cum_rows, table, long depth, long n, long state0, rng):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cum_arr = np.ascontiguousarray(
        cum_rows, dtype=np.float64)
    cdef double[:, ::1] cum = cum_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tab_arr = np.ascontiguousarray(
        table, dtype=np.float64).reshape(-1)
    cdef double[::1] tab = tab_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef bitgen_t* bg = _bg(rng)
    cdef long A = cum.shape[0]
    cdef long s = state0
    cdef long i, code = 0
    cdef long mod = A ** (depth - 1)
    for i in range(depth - 1):
        s = _next_symbol(cum, s, random_standard_uniform(bg), A)
        code = code * A + s
    for i in range(n):
        s = _next_symbol(cum, s, random_standard_uniform(bg), A)
        code = (code % mod) * A + s
        ov[i] = tab[code]
    return out


def markov_birkhoff(cum_rows, table, long depth, long n, checkpoints,
                    long state0, long burn, rng):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cum_arr = np.ascontiguousarray(
        cum_rows, dtype=np.float64)
    cdef double[:, ::1] cum = cum_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=2] tab_arr = np.ascontiguousarray(
        table, dtype=np.float64)
    cdef double[:, ::1] tab = tab_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cks_arr = np.ascontiguousarray(
        checkpoints, dtype=np.int64)
    cdef long[::1] cks = cks_arr
    cdef long A = cum.shape[0]
    cdef long d = tab.shape[1]
    cdef long C = cks.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] sums = np.zeros((C, d),
                                                            dtype=np.float64)
    cdef double[:, ::1] sv = sums
    cdef cnp.ndarray[cnp.float64_t, ndim=1] acc = np.zeros(d, dtype=np.float64)
    cdef double[::1] av = acc
    cdef bitgen_t* bg = _bg(rng)
    cdef long s = state0
    cdef long i, j, code = 0, ci = 0
    cdef long mod = A ** (depth - 1)
    for i in range(burn):
        s = _next_symbol(cum, s, random_standard_uniform(bg), A)
    for i in range(depth - 1):
        s = _next_symbol(cum, s, random_standard_uniform(bg), A)
        code = code * A + s
    for i in range(n):
        s = _next_symbol(cum, s, random_standard_uniform(bg), A)
        code = (code % mod) * A + s
        for j in range(d):
            av[j] += tab[code, j]
        while ci < C and cks[ci] == i + 1:
            for j in range(d):
                sv[ci, j] = av[j]
            ci += 1
    return sums, s


# ---------------------------------------------------------------------------
# Doubling map


cdef unsigned long long _doubling_fill(bitgen_t* bg):
    cdef unsigned long long w = 0
    cdef int i
    for i in range(64):
        w = ((w << 1) | (1 if random_standard_uniform(bg) < 0.5 else 0)) & MASK64
    return w


def doubling_cos_birkhoff(long n, checkpoints, long burn, rng):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cks_arr = np.ascontiguousarray(
        checkpoints, dtype=np.int64)
    cdef long[::1] cks = cks_arr
    cdef long C = cks.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sums = np.zeros(C, dtype=np.float64)
    cdef double[::1] sv = sums
    cdef bitgen_t* bg = _bg(rng)
    cdef unsigned long long w = _doubling_fill(bg)
    cdef long i, ci = 0
    cdef double acc = 0.0, x
    for i in range(burn):
        w = ((w << 1) | (1 if random_standard_uniform(bg) < 0.5 else 0)) & MASK64
    for i in range(n):
        x = (<double> w) * TWO_NEG64
        acc += cos(TWO_PI * x)
        while ci < C and cks[ci] == i + 1:
            sv[ci] = acc
            ci += 1
        if i + 1 < n:
            w = ((w << 1) | (1 if random_standard_uniform(bg) < 0.5 else 0)) & MASK64
    return sums, w


def doubling_cos_eta(long n, long ell, rng):
    if not 0 <= ell <= 62:
        raise ValueError("ell must be in [0, 62]")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] eta = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] etac = np.empty(n, dtype=np.float64)
    cdef double[::1] ev = eta
    cdef double[::1] cv = etac
    cdef bitgen_t* bg = _bg(rng)
    cdef unsigned long long w = _doubling_fill(bg)
    cdef long i
    cdef double x, alpha
    cdef double h = 2.0 ** (-(ell + 1))
    for i in range(n):
        x = (<double> w) * TWO_NEG64
        ev[i] = cos(TWO_PI * x)
        alpha = (<double> (w >> (64 - (ell + 1)))) * h
        cv[i] = (sin(TWO_PI * (alpha + h)) - sin(TWO_PI * alpha)) / (TWO_PI * h)
        if i + 1 < n:
            w = ((w << 1) | (1 if random_standard_uniform(bg) < 0.5 else 0)) & MASK64
    return eta, etac


# ---------------------------------------------------------------------------
# LSV intermittent map


def lsv_step_scalar(double gamma, double x):
    if x < 0.5:
        return x * (1.0 + pow(2.0, gamma) * pow(x, gamma))
    return 2.0 * x - 1.0


def lsv_returns(double gamma, long count, long cap, rng):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(count, dtype=np.int64)
    cdef long[::1] ov = out
    cdef bitgen_t* bg = _bg(rng)
    cdef double c2g = pow(2.0, gamma)
    cdef long i, r
    cdef double y, x
    for i in range(count):
        y = 0.5 + 0.5 * random_standard_uniform(bg)
        x = 2.0 * y - 1.0
        r = 1
        while x < 0.5:
            x = x * (1.0 + c2g * pow(x, gamma))
            r += 1
            if r > cap:
                return out, i
        ov[i] = r
    return out, -1


def lsv_orbit(double gamma, double x0, long n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double x = x0
    cdef double c2g = pow(2.0, gamma)
    cdef long i
    for i in range(n):
        if x < 0.5:
            x = x * (1.0 + c2g * pow(x, gamma))
        else:
            x = 2.0 * x - 1.0
        ov[i] = x
    return out


# ---------------------------------------------------------------------------
# Lorentz gas


cdef void _flight(double b00, double b01, double b10, double b11,
                  double i00, double i01, double i10, double i11,
                  double[::1] cx, double[::1] cy, double[::1] rad,
                  double qx, double qy, double vx, double vy,
                  double cutoff, double graze,
                  double* out_t, long* out_s, double* out_k1, double* out_k2):
    cdef long nS = rad.shape[0]
    cdef long s, m, smax
    cdef int d1, d2
    cdef double l1, l2, step, best_t, sm, px, py, dx, dy, lam1, lam2
    cdef double k1c, k2c, k1, k2, ccx, ccy, ex, ey, b, c0, disc, t
    cdef long best_s = -1
    cdef double best_k1 = 0.0, best_k2 = 0.0
    l1 = sqrt(b00 * b00 + b10 * b10)
    l2 = sqrt(b01 * b01 + b11 * b11)
    step = 0.45 * (l1 if l1 < l2 else l2)
    best_t = cutoff + 1.0
    m = 0
    smax = <long> (cutoff / step) + 2
    while m <= smax:
        sm = m * step
        if sm > cutoff + step:
            break
        px = qx + sm * vx
        py = qy + sm * vy
        for s in range(nS):
            dx = px - cx[s]
            dy = py - cy[s]
            lam1 = i00 * dx + i01 * dy
            lam2 = i10 * dx + i11 * dy
            k1c = floor(lam1 + 0.5)
            k2c = floor(lam2 + 0.5)
            for d1 in range(-2, 3):
                k1 = k1c + d1
                for d2 in range(-2, 3):
                    k2 = k2c + d2
                    ccx = cx[s] + k1 * b00 + k2 * b01
                    ccy = cy[s] + k1 * b10 + k2 * b11
                    ex = ccx - qx
                    ey = ccy - qy
                    b = vx * ex + vy * ey
                    if b <= 0.0:
                        continue
                    c0 = ex * ex + ey * ey - rad[s] * rad[s]
                    disc = b * b - c0
                    if disc <= 2.0 * rad[s] * graze:
                        continue
                    t = b - sqrt(disc)
                    if t > 1e-9 and t < best_t:
                        best_t = t
                        best_s = s
                        best_k1 = k1
                        best_k2 = k2
        if best_s >= 0 and best_t < sm:
            break
        m += 1
    out_t[0] = best_t
    out_s[0] = best_s
    out_k1[0] = best_k1
    out_k2[0] = best_k2


def lorentz_run(basis, inv_basis, centers, radii, q0, v0, double t_max,
                t_checkpoints, double cutoff, double graze=1e-12):
    cdef double b00 = basis[0][0], b01 = basis[0][1]
    cdef double b10 = basis[1][0], b11 = basis[1][1]
    cdef double i00 = inv_basis[0][0], i01 = inv_basis[0][1]
    cdef double i10 = inv_basis[1][0], i11 = inv_basis[1][1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cen = np.ascontiguousarray(
        centers, dtype=np.float64).reshape(-1, 2)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cx_a = np.ascontiguousarray(cen[:, 0])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cy_a = np.ascontiguousarray(cen[:, 1])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rad_a = np.ascontiguousarray(
        radii, dtype=np.float64)
    cdef double[::1] cx = cx_a
    cdef double[::1] cy = cy_a
    cdef double[::1] rad = rad_a
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cks_arr = np.ascontiguousarray(
        t_checkpoints, dtype=np.float64)
    cdef double[::1] cks = cks_arr
    cdef long C = cks.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pos = np.zeros((C, 2),
                                                           dtype=np.float64)
    cdef double[:, ::1] pv = pos
    cdef double qx = q0[0], qy = q0[1], vx = v0[0], vy = v0[1]
    cdef double t = 0.0, max_flight = 0.0, max_verr = 0.0
    cdef long ncol = 0, ci = 0, s
    cdef double ft, t_hit, dt, k1, k2, nx, ny, nn, dot, verr
    while ci < C and cks[ci] <= t:
        pv[ci, 0] = qx
        pv[ci, 1] = qy
        ci += 1
    while t < t_max:
        _flight(b00, b01, b10, b11, i00, i01, i10, i11, cx, cy, rad,
                qx, qy, vx, vy, cutoff, graze, &ft, &s, &k1, &k2)
        if s < 0:
            return pos[:ci], ncol, cutoff + 1.0, max_verr
        if ft > max_flight:
            max_flight = ft
        t_hit = t + ft
        while ci < C and cks[ci] <= t_hit and cks[ci] <= t_max:
            dt = cks[ci] - t
            pv[ci, 0] = qx + dt * vx
            pv[ci, 1] = qy + dt * vy
            ci += 1
        if t_hit >= t_max:
            return pos, ncol, max_flight, max_verr
        qx += ft * vx
        qy += ft * vy
        nx = qx - (cx[s] + k1 * b00 + k2 * b01)
        ny = qy - (cy[s] + k1 * b10 + k2 * b11)
        nn = sqrt(nx * nx + ny * ny)
        nx /= nn
        ny /= nn
        dot = vx * nx + vy * ny
        vx -= 2.0 * dot * nx
        vy -= 2.0 * dot * ny
        verr = fabs(sqrt(vx * vx + vy * vy) - 1.0)
        if verr > max_verr:
            max_verr = verr
        t = t_hit
        ncol += 1
    return pos, ncol, max_flight, max_verr


def lorentz_collisions(basis, inv_basis, centers, radii, q0, v0, long n_col,
                       double cutoff, double graze=1e-12):
    cdef double b00 = basis[0][0], b01 = basis[0][1]
    cdef double b10 = basis[1][0], b11 = basis[1][1]
    cdef double i00 = inv_basis[0][0], i01 = inv_basis[0][1]
    cdef double i10 = inv_basis[1][0], i11 = inv_basis[1][1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cen = np.ascontiguousarray(
        centers, dtype=np.float64).reshape(-1, 2)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cx_a = np.ascontiguousarray(cen[:, 0])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cy_a = np.ascontiguousarray(cen[:, 1])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rad_a = np.ascontiguousarray(
        radii, dtype=np.float64)
    cdef double[::1] cx = cx_a
    cdef double[::1] cy = cy_a
    cdef double[::1] rad = rad_a
    cdef cnp.ndarray[cnp.float64_t, ndim=2] qs = np.zeros((n_col, 2))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] vs = np.zeros((n_col, 2))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ts = np.zeros(n_col)
    cdef double[:, ::1] qv = qs
    cdef double[:, ::1] vv = vs
    cdef double[::1] tv = ts
    cdef double qx = q0[0], qy = q0[1], vx = v0[0], vy = v0[1]
    cdef double t = 0.0, max_verr = 0.0
    cdef long i, s
    cdef double ft, k1, k2, nx, ny, nn, dot, verr
    for i in range(n_col):
        _flight(b00, b01, b10, b11, i00, i01, i10, i11, cx, cy, rad,
                qx, qy, vx, vy, cutoff, graze, &ft, &s, &k1, &k2)
        if s < 0:
            return qs[:i], vs[:i], ts[:i], max_verr
        t += ft
        qx += ft * vx
        qy += ft * vy
        nx = qx - (cx[s] + k1 * b00 + k2 * b01)
        ny = qy - (cy[s] + k1 * b10 + k2 * b11)
        nn = sqrt(nx * nx + ny * ny)
        nx /= nn
        ny /= nn
        dot = vx * nx + vy * ny
        vx -= 2.0 * dot * nx
        vy -= 2.0 * dot * ny
        verr = fabs(sqrt(vx * vx + vy * vy) - 1.0)
        if verr > max_verr:
            max_verr = verr
        qv[i, 0] = qx
        qv[i, 1] = qy
        vv[i, 0] = vx
        vv[i, 1] = vy
        tv[i] = t
    return qs, vs, ts, max_verr


def lorentz_free_flight(basis, inv_basis, centers, radii, q, v, double cutoff,
                        double graze=1e-12):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cen = np.ascontiguousarray(
        centers, dtype=np.float64).reshape(-1, 2)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cx_a = np.ascontiguousarray(cen[:, 0])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cy_a = np.ascontiguousarray(cen[:, 1])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rad_a = np.ascontiguousarray(
        radii, dtype=np.float64)
    cdef double[::1] cx = cx_a
    cdef double[::1] cy = cy_a
    cdef double[::1] rad = rad_a
    cdef double t, k1, k2
    cdef long s
    _flight(basis[0][0], basis[0][1], basis[1][0], basis[1][1],
            inv_basis[0][0], inv_basis[0][1], inv_basis[1][0], inv_basis[1][1],
            cx, cy, rad, q[0], q[1], v[0], v[1], cutoff, graze, &t, &s,
            &k1, &k2)
    return t, s, k1, k2


def lorentz_horizon_scan(basis, inv_basis, centers, radii, long n_boundary,
                         long n_dirs, double cutoff, extra_dirs,
                         double graze=1e-12):
    cdef double b00 = basis[0][0], b01 = basis[0][1]
    cdef double b10 = basis[1][0], b11 = basis[1][1]
    cdef double i00 = inv_basis[0][0], i01 = inv_basis[0][1]
    cdef double i10 = inv_basis[1][0], i11 = inv_basis[1][1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cen = np.ascontiguousarray(
        centers, dtype=np.float64).reshape(-1, 2)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cx_a = np.ascontiguousarray(cen[:, 0])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cy_a = np.ascontiguousarray(cen[:, 1])
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rad_a = np.ascontiguousarray(
        radii, dtype=np.float64)
    cdef double[::1] cx = cx_a
    cdef double[::1] cy = cy_a
    cdef double[::1] rad = rad_a
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ed = np.ascontiguousarray(
        extra_dirs, dtype=np.float64).reshape(-1, 2)
    cdef double[:, ::1] edv = ed
    cdef long nE = edv.shape[0]
    cdef double max_flight = 0.0
    cdef long s, ib, idir, hit
    cdef double th, nx, ny, qx, qy, ph, vx, vy, t, _k1, _k2
    for s in range(rad.shape[0]):
        for ib in range(n_boundary):
            th = 2.0 * PI * ib / n_boundary
            nx = cos(th)
            ny = sin(th)
            qx = cx[s] + rad[s] * nx
            qy = cy[s] + rad[s] * ny
            for idir in range(n_dirs + nE):
                if idir < n_dirs:
                    ph = 2.0 * PI * idir / n_dirs
                    vx = cos(ph)
                    vy = sin(ph)
                else:
                    vx = edv[idir - n_dirs, 0]
                    vy = edv[idir - n_dirs, 1]
                if vx * nx + vy * ny < -1e-12:
                    continue
                _flight(b00, b01, b10, b11, i00, i01, i10, i11, cx, cy, rad,
                        qx, qy, vx, vy, cutoff, graze, &t, &hit, &_k1, &_k2)
                if hit < 0:
                    return cutoff + 1.0, True
                if t > max_flight:
                    max_flight = t
    return max_flight, False


# ---------------------------------------------------------------------------
# IID-normal walk for iterated-logarithm scans


def normal_lil_scan(long n, long n0, long d, checkpoints, rng):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cks_arr = np.ascontiguousarray(
        checkpoints, dtype=np.int64)
    cdef long[::1] cks = cks_arr
    cdef long C = cks.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sups = np.zeros(C)
    cdef double[::1] supv = sups
    cdef cnp.ndarray[cnp.float64_t, ndim=1] S = np.zeros(d)
    cdef double[::1] Sv = S
    cdef bitgen_t* bg = _bg(rng)
    cdef double sup = 0.0, r, a
    cdef long ci = 0, i, k, step
    for i in range(n):
        for k in range(d):
            Sv[k] += random_standard_normal(bg)
        step = i + 1
        if step >= n0:
            r = 0.0
            for k in range(d):
                r += Sv[k] * Sv[k]
            a = sqrt(r) / sqrt(2.0 * step * log(log(step)))
            if a > sup:
                sup = a
        while ci < C and cks[ci] == step:
            supv[ci] = sup
            ci += 1
    return sups, S


# ---------------------------------------------------------------------------
# Brownian embedding core


cdef inline double _bridge_cross_prob(double g0, double g1, double dt):
    cdef double e = -2.0 * g0 * g1 / dt
    return exp(e) if e > -700.0 else 0.0


cdef double _refine_crossing(bitgen_t* bg, bint upper, double bnd,
                             double t0, double w0, double t1, double w1,
                             double time_tol):
    cdef double tm, var, wm, gL0, gLm, pL, pR, denom, u, g1_
    cdef bint out_m, out_1
    while t1 - t0 > time_tol:
        tm = 0.5 * (t0 + t1)
        var = 0.25 * (t1 - t0)
        wm = 0.5 * (w0 + w1) + sqrt(var) * random_standard_normal(bg)
        out_m = (wm >= bnd) if upper else (wm <= bnd)
        if out_m:
            t1 = tm
            w1 = wm
            continue
        gL0 = (bnd - w0) if upper else (w0 - bnd)
        gLm = (bnd - wm) if upper else (wm - bnd)
        pL = _bridge_cross_prob(gL0, gLm, tm - t0)
        out_1 = (w1 >= bnd) if upper else (w1 <= bnd)
        if out_1:
            pR = 1.0
        else:
            g1_ = (bnd - w1) if upper else (w1 - bnd)
            pR = _bridge_cross_prob(gLm, g1_, t1 - tm)
        denom = pL + (1.0 - pL) * pR
        u = random_standard_uniform(bg)
        if denom <= 0.0 or u * denom >= pL:
            t0 = tm
            w0 = wm
        else:
            t1 = tm
            w1 = wm
    return 0.5 * (t0 + t1)


cdef void _exit_interval(bitgen_t* bg, double a, double b, double dt_factor,
                         double time_tol, double* out_T, double* out_hit):
    cdef double span = b - a
    cdef double dt_cap = dt_factor * span * span
    cdef double t = 0.0, w = 0.0
    cdef double dt, z, w1, pu, pd, u
    if dt_cap < time_tol:
        dt_cap = time_tol
    while True:
        dt = dt_cap
        z = random_standard_normal(bg)
        w1 = w + sqrt(dt) * z
        if w1 >= b:
            out_T[0] = _refine_crossing(bg, True, b, t, w, t + dt, w1, time_tol)
            out_hit[0] = b
            return
        if w1 <= a:
            out_T[0] = _refine_crossing(bg, False, a, t, w, t + dt, w1, time_tol)
            out_hit[0] = a
            return
        pu = _bridge_cross_prob(b - w, b - w1, dt)
        pd = _bridge_cross_prob(w - a, w1 - a, dt)
        u = random_standard_uniform(bg)
        if u < pu + pd:
            if u < pu:
                out_T[0] = _refine_crossing(bg, True, b, t, w, t + dt, w1,
                                            time_tol)
                out_hit[0] = b
                return
            out_T[0] = _refine_crossing(bg, False, a, t, w, t + dt, w1,
                                        time_tol)
            out_hit[0] = a
            return
        t += dt
        w = w1


cdef void _split_pair(double[::1] values, double[::1] probs, bitgen_t* bg,
                      double* out_a, double* out_b):
    cdef long n = values.shape[0]
    cdef double p0 = 0.0, pminus = 0.0, pplus = 0.0, m = 0.0
    cdef double v, u1, u2, u3, u4, acc, x, a, b
    cdef long i
    for i in range(n):
        v = values[i]
        if v == 0.0:
            p0 += probs[i]
        elif v < 0.0:
            pminus += probs[i]
        else:
            pplus += probs[i]
            m += v * probs[i]
    u1 = random_standard_uniform(bg)
    if u1 < p0:
        out_a[0] = 0.0
        out_b[0] = 0.0
        return
    u2 = random_standard_uniform(bg)
    u3 = random_standard_uniform(bg)
    u4 = random_standard_uniform(bg)
    if u2 * (pminus + pplus) < pminus:
        acc = 0.0
        x = u3 * pminus
        a = 0.0
        for i in range(n):
            if values[i] < 0.0:
                acc += probs[i]
                if x < acc:
                    a = values[i]
                    break
        acc = 0.0
        x = u4 * m
        b = 0.0
        for i in range(n):
            if values[i] > 0.0:
                acc += values[i] * probs[i]
                if x < acc:
                    b = values[i]
                    break
        out_a[0] = a
        out_b[0] = b
        return
    acc = 0.0
    x = u3 * m
    a = 0.0
    for i in range(n):
        if values[i] < 0.0:
            acc += (-values[i]) * probs[i]
            if x < acc:
                a = values[i]
                break
    acc = 0.0
    x = u4 * pplus
    b = 0.0
    for i in range(n):
        if values[i] > 0.0:
            acc += probs[i]
            if x < acc:
                b = values[i]
                break
    out_a[0] = a
    out_b[0] = b


def skorokhod_embed_batch(values, probs, long count, double dt_factor,
                          double time_tol, rng):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vals_arr = np.ascontiguousarray(
        values, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ps_arr = np.ascontiguousarray(
        probs, dtype=np.float64)
    cdef double[::1] vals = vals_arr
    cdef double[::1] ps = ps_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_v = np.empty(count)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_t = np.empty(count)
    cdef double[::1] ov = out_v
    cdef double[::1] ot = out_t
    cdef bitgen_t* bg = _bg(rng)
    cdef long i
    cdef double a, b, T, hit
    for i in range(count):
        _split_pair(vals, ps, bg, &a, &b)
        if a == 0.0 and b == 0.0:
            ov[i] = 0.0
            ot[i] = 0.0
            continue
        _exit_interval(bg, a, b, dt_factor, time_tol, &T, &hit)
        ov[i] = hit
        ot[i] = T
    return out_v, out_t


# ---------------------------------------------------------------------------
# Coupled run


cdef long _exit_clipped(bitgen_t* bg, double A, double B, double w_start,
                        double t_start, double dt_factor, double time_tol,
                        double[::1] W_int, long n_max, double* out_T):
    """Returns side (+1 upper / -1 lower); fills W at integer times crossed."""
    cdef double span = B - A
    cdef double dt_cap = dt_factor * span * span
    cdef double t = t_start, w = w_start
    cdef double nxt, dt, z, w1, pu, pd, u
    cdef bint at_int
    cdef long ni
    if dt_cap < time_tol:
        dt_cap = time_tol
    while True:
        nxt = floor(t) + 1.0
        dt = dt_cap
        at_int = False
        if t + dt >= nxt:
            dt = nxt - t
            at_int = True
        z = random_standard_normal(bg)
        w1 = w + sqrt(dt) * z
        if w1 >= B:
            out_T[0] = _refine_crossing(bg, True, B, t, w, t + dt, w1, time_tol)
            return 1
        if w1 <= A:
            out_T[0] = _refine_crossing(bg, False, A, t, w, t + dt, w1, time_tol)
            return -1
        pu = _bridge_cross_prob(B - w, B - w1, dt)
        pd = _bridge_cross_prob(w - A, w1 - A, dt)
        u = random_standard_uniform(bg)
        if u < pu + pd:
            if u < pu:
                out_T[0] = _refine_crossing(bg, True, B, t, w, t + dt, w1,
                                            time_tol)
                return 1
            out_T[0] = _refine_crossing(bg, False, A, t, w, t + dt, w1,
                                        time_tol)
            return -1
        t += dt
        w = w1
        if at_int:
            ni = <long> nxt
            if ni <= n_max:
                W_int[ni] = w


def coupled_run_kernel(cum_rows, trans, phi_codes, double lat_base,
                       double lat_delta, seg_len, seg_gap, seg_block, useg,
                       p_pows, long n_max, long state0, checkpoints,
                       double dt_factor, double time_tol, rng):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cum_arr = np.ascontiguousarray(
        cum_rows, dtype=np.float64)
    cdef double[:, ::1] cum = cum_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=2] tr_arr = np.ascontiguousarray(
        trans, dtype=np.float64)
    cdef double[:, ::1] tv = tr_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] codes_arr = np.ascontiguousarray(
        phi_codes, dtype=np.int64)
    cdef long[::1] codes = codes_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sl_arr = np.ascontiguousarray(
        seg_len, dtype=np.int64)
    cdef long[::1] slv = sl_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sg_arr = np.ascontiguousarray(
        seg_gap, dtype=np.int64)
    cdef long[::1] sgv = sg_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sb_arr = np.ascontiguousarray(
        seg_block, dtype=np.int64)
    cdef long[::1] sbv = sb_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=2] useg_arr = np.ascontiguousarray(
        useg, dtype=np.float64)
    cdef double[:, ::1] uv = useg_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=3] pp_arr = np.ascontiguousarray(
        p_pows, dtype=np.float64)
    cdef double[:, :, ::1] ppv = pp_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cks_arr = np.ascontiguousarray(
        checkpoints, dtype=np.int64)
    cdef long[::1] cks = cks_arr

    cdef long A = cum.shape[0]
    cdef long S = slv.shape[0]
    cdef long M = sbv[S - 1] if S > 0 else 0
    cdef long C = cks.shape[0]
    cdef long kmax = 0
    cdef long i, t, x, xp, k, e, mm, q, nk, L, G, j
    for i in range(A):
        if codes[i] > kmax:
            kmax = codes[i]

    cdef long Lmax = 0
    for i in range(S):
        if slv[i] > Lmax:
            Lmax = slv[i]
    cdef long nkmax = Lmax * kmax + 1

    cdef cnp.ndarray[cnp.float64_t, ndim=1] W_int_a = np.full(n_max + 1, np.nan)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] S_int_a = np.zeros(n_max + 1)
    cdef double[::1] W_int = W_int_a
    cdef double[::1] S_int = S_int_a
    W_int[0] = 0.0

    cdef cnp.ndarray[cnp.float64_t, ndim=1] y_blocks = np.zeros(M)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] z_blocks = np.zeros(M)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] Y_blocks = np.zeros(M)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] T_blocks = np.zeros(M)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] W_stop = np.zeros(M)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] clock_blocks = np.zeros(M)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] S_blocks = np.zeros(M)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] end_blocks = np.zeros(M, dtype=np.int64)
    cdef double[::1] ybv = y_blocks
    cdef double[::1] zbv = z_blocks
    cdef double[::1] Ybv = Y_blocks
    cdef double[::1] Tbv = T_blocks
    cdef double[::1] Wsv = W_stop
    cdef double[::1] cbv = clock_blocks
    cdef double[::1] Sbv = S_blocks
    cdef long[::1] ebv = end_blocks

    # scratch
    cdef cnp.ndarray[cnp.float64_t, ndim=3] F_a = np.zeros(
        (Lmax + 1, nkmax, A))
    cdef double[:, :, ::1] F = F_a
    cdef cnp.ndarray[cnp.float64_t, ndim=2] J_a = np.zeros((nkmax, A))
    cdef double[:, ::1] J = J_a
    cdef cnp.ndarray[cnp.float64_t, ndim=1] av_a = np.zeros(nkmax * A)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ap_a = np.zeros(nkmax * A)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ak_a = np.zeros(nkmax * A,
                                                          dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ae_a = np.zeros(nkmax * A,
                                                          dtype=np.int64)
    cdef double[::1] av = av_a
    cdef double[::1] ap = ap_a
    cdef long[::1] ak = ak_a
    cdef long[::1] ae = ae_a
    cdef cnp.ndarray[cnp.int64_t, ndim=1] syms_a = np.zeros(
        Lmax if Lmax > 0 else 1, dtype=np.int64)
    cdef long[::1] syms = syms_a

    cdef bitgen_t* bg = _bg(rng)
    cdef long s_cur = state0
    cdef long pos = 0, n_embed = 0
    cdef double S_run = 0.0, t_clock = 0.0, w_cur = 0.0
    cdef double acc, base, mean, a, b, hit_v, T_abs, tot, xdraw, val, dtp, z
    cdef long na, cx_, side, g0, g1, sel, K_sel, e_sel, m_sel, k_t, xt1, pick
    cdef long r, curg, nn_, ci
    cdef double nxt

    for i in range(S):
        L = slv[i]
        G = sgv[i]
        j = sbv[i]
        nk = L * kmax + 1
        # forward DP over the long part
        for t in range(L + 1):
            for k in range(nk):
                for x in range(A):
                    F[t, k, x] = 0.0
        F[0, 0, s_cur] = 1.0
        for t in range(1, L + 1):
            for x in range(A):
                cx_ = codes[x]
                for k in range(cx_, (t - 1) * kmax + cx_ + 1):
                    acc = 0.0
                    for xp in range(A):
                        acc += F[t - 1, k - cx_, xp] * tv[xp, x]
                    if acc != 0.0:
                        F[t, k, x] += acc
        # trailing-gap composition
        for k in range(nk):
            for e in range(A):
                acc = 0.0
                for mm in range(A):
                    acc += F[L, k, mm] * ppv[G, mm, e]
                J[k, e] = acc
        base = L * lat_base - uv[i, s_cur]
        na = 0
        for k in range(nk):
            for e in range(A):
                if J[k, e] > 0.0:
                    av[na] = base + k * lat_delta + uv[i + 1, e]
                    ap[na] = J[k, e]
                    ak[na] = k
                    ae[na] = e
                    na += 1
        # stable insertion sort ascending by value
        _insertion_sort(av, ap, ak, ae, na)
        mean = 0.0
        for q in range(na):
            mean += ap[q] * av[q]
        for q in range(na):
            av[q] -= mean
        _split_pair(av[:na], ap[:na], bg, &a, &b)
        if a == 0.0 and b == 0.0:
            T_abs = t_clock
            hit_v = 0.0
        else:
            side = _exit_clipped(bg, w_cur + a, w_cur + b, w_cur, t_clock,
                                 dt_factor, time_tol, W_int, n_max, &T_abs)
            hit_v = b if side > 0 else a
        n_embed += 1
        Ybv[j - 1] += hit_v
        Tbv[j - 1] += T_abs - t_clock
        t_clock = T_abs
        w_cur = w_cur + hit_v
        g0 = 0
        while g0 < na - 1 and av[g0] != hit_v:
            g0 += 1
        g1 = g0
        tot = 0.0
        while g1 < na and av[g1] == hit_v:
            tot += ap[g1]
            g1 += 1
        if g1 == g0:
            g1 = g0 + 1
            tot = ap[g0]
        xdraw = random_standard_uniform(bg) * tot
        acc = 0.0
        sel = g1 - 1
        for q in range(g0, g1):
            acc += ap[q]
            if xdraw < acc:
                sel = q
                break
        K_sel = ak[sel]
        e_sel = ae[sel]
        tot = 0.0
        for mm in range(A):
            tot += F[L, K_sel, mm] * ppv[G, mm, e_sel]
        xdraw = random_standard_uniform(bg) * tot
        acc = 0.0
        m_sel = A - 1
        for mm in range(A):
            acc += F[L, K_sel, mm] * ppv[G, mm, e_sel]
            if xdraw < acc:
                m_sel = mm
                break
        syms[L - 1] = m_sel
        k_t = K_sel
        for t in range(L - 1, 0, -1):
            xt1 = syms[t]
            k_t = k_t - codes[xt1]
            tot = 0.0
            for xp in range(A):
                tot += F[t, k_t, xp] * tv[xp, xt1]
            xdraw = random_standard_uniform(bg) * tot
            acc = 0.0
            pick = A - 1
            for xp in range(A):
                acc += F[t, k_t, xp] * tv[xp, xt1]
                if xdraw < acc:
                    pick = xp
                    break
            syms[t - 1] = pick
        ybv[j - 1] += L * lat_base + K_sel * lat_delta
        for t in range(L):
            pos += 1
            S_run += lat_base + codes[syms[t]] * lat_delta
            if pos <= n_max:
                S_int[pos] = S_run
        s_cur = syms[L - 1]
        curg = s_cur
        for r in range(G, 0, -1):
            tot = 0.0
            for x in range(A):
                tot += tv[curg, x] * ppv[r - 1, x, e_sel]
            xdraw = random_standard_uniform(bg) * tot
            acc = 0.0
            pick = e_sel
            for x in range(A):
                acc += tv[curg, x] * ppv[r - 1, x, e_sel]
                if xdraw < acc:
                    pick = x
                    break
            curg = pick
            pos += 1
            val = lat_base + codes[curg] * lat_delta
            zbv[j - 1] += val
            S_run += val
            if pos <= n_max:
                S_int[pos] = S_run
        s_cur = curg
        if i + 1 == S or sbv[i + 1] != j:
            Wsv[j - 1] = w_cur
            cbv[j - 1] = t_clock
            Sbv[j - 1] = S_run
            ebv[j - 1] = pos
    while floor(t_clock) + 1.0 <= n_max:
        nxt = floor(t_clock) + 1.0
        dtp = nxt - t_clock
        z = random_standard_normal(bg)
        w_cur += sqrt(dtp) * z
        t_clock = nxt
        W_int[<long> nxt] = w_cur
    cdef double last = 0.0
    for nn_ in range(n_max + 1):
        if W_int[nn_] != W_int[nn_]:
            W_int[nn_] = last
        else:
            last = W_int[nn_]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] S_ck = np.zeros(C)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] W_ck = np.zeros(C)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] E_ck = np.zeros(C)
    cdef double[::1] Sckv = S_ck
    cdef double[::1] Wckv = W_ck
    cdef double[::1] Eckv = E_ck
    cdef double emax = 0.0, ee
    ci = 0
    for nn_ in range(1, n_max + 1):
        ee = fabs(S_int[nn_] - W_int[nn_])
        if ee > emax:
            emax = ee
        while ci < C and cks[ci] == nn_:
            Sckv[ci] = S_int[nn_]
            Wckv[ci] = W_int[nn_]
            Eckv[ci] = emax
            ci += 1
    return dict(
        S_checkpoints=S_ck, W_checkpoints=W_ck, Emax_checkpoints=E_ck,
        y_blocks=y_blocks, z_blocks=z_blocks, Y_blocks=Y_blocks,
        T_blocks=T_blocks, W_stop_blocks=W_stop, clock_blocks=clock_blocks,
        S_blocks=S_blocks, end_blocks=end_blocks, n_embed=n_embed,
        final_state=s_cur, clock=t_clock, W_final=w_cur,
    )


cdef void _insertion_sort(double[::1] av, double[::1] ap, long[::1] ak,
                          long[::1] ae, long n):
    cdef long i, jj
    cdef double v, p
    cdef long k, e
    for i in range(1, n):
        v = av[i]
        p = ap[i]
        k = ak[i]
        e = ae[i]
        jj = i - 1
        while jj >= 0 and av[jj] > v:
            av[jj + 1] = av[jj]
            ap[jj + 1] = ap[jj]
            ak[jj + 1] = ak[jj]
            ae[jj + 1] = ae[jj]
            jj -= 1
        av[jj + 1] = v
        ap[jj + 1] = p
        ak[jj + 1] = k
        ae[jj + 1] = e
