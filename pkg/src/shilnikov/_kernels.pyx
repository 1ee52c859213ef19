# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Dormand-Prince 5(4) kernels for the model field.

The field is ``A x + c x3^2 chi(|x|) (-x2, x1, 0)`` with a C1 cubic cutoff
``chi``.  With ``var=True`` the 3x3 variational matrix is integrated
alongside the state (row-major in slots 3..11).

Error control is relative per block: the stable pair (x1, x2), the
unstable coordinate x3 and, for the variational part, the two stable rows
and the unstable row of the Jacobian.  This keeps tiny unstable
components (x3 ~ 1e-15 near the stable plane) accurate to full relative
precision, which the travel time depends on through log(1/x3).

Status codes shared with the pure-Python backend:
0 ok, 1 step budget exhausted, 2 time budget exhausted, 3 unstable
coordinate lost its sign.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow, floor, isfinite

cnp.import_array()

cdef struct Field:
    double sigma
    double mu
    double u
    double cq
    double radius

# Dormand-Prince tableau
cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0, A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0, A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0, B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0, E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0

cdef double HMAX = 0.25
cdef double H0 = 0.01


cdef inline double cutoff(double r, double R, double* dchi) nogil:
    cdef double s
    if r <= R:
        dchi[0] = 0.0
        return 1.0
    if r >= 2.0 * R:
        dchi[0] = 0.0
        return 0.0
    s = (r - R) / R
    dchi[0] = (-6.0 * s + 6.0 * s * s) / R
    return 1.0 - 3.0 * s * s + 2.0 * s * s * s


cdef void rhs(Field* F, int nd, double* y, double* f) noexcept nogil:
    cdef double x1 = y[0], x2 = y[1], x3 = y[2]
    cdef double r = sqrt(x1 * x1 + x2 * x2 + x3 * x3)
    cdef double dchi = 0.0
    cdef double chi = cutoff(r, F.radius, &dchi)
    cdef double g = F.cq * x3 * x3 * chi
    cdef double D[3][3]
    cdef double dg[3]
    cdef int i, j, k
    cdef double acc
    f[0] = F.sigma * x1 + F.mu * x2 - g * x2
    f[1] = -F.mu * x1 + F.sigma * x2 + g * x1
    f[2] = F.u * x3
    if nd == 3:
        return
    if r > 0.0:
        for i in range(3):
            dg[i] = F.cq * x3 * x3 * dchi * y[i] / r
    else:
        dg[0] = 0.0
        dg[1] = 0.0
        dg[2] = 0.0
    dg[2] += 2.0 * F.cq * x3 * chi
    for i in range(3):
        D[0][i] = -x2 * dg[i]
        D[1][i] = x1 * dg[i]
        D[2][i] = 0.0
    D[0][0] += F.sigma
    D[0][1] += F.mu - g
    D[1][0] += -F.mu + g
    D[1][1] += F.sigma
    D[2][2] += F.u
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += D[i][k] * y[3 + 3 * k + j]
            f[3 + 3 * i + j] = acc


cdef double block_norm(int nd, double* y0, double* y1, double* e, double rtol, double atol) noexcept nogil:
    cdef double sc, val, m0, m1
    cdef double out
    cdef int i
    sc = rtol * fmax2(sqrt(y0[0] * y0[0] + y0[1] * y0[1]), sqrt(y1[0] * y1[0] + y1[1] * y1[1])) + atol
    out = sqrt(e[0] * e[0] + e[1] * e[1]) / sc
    sc = rtol * fmax2(fabs(y0[2]), fabs(y1[2])) + atol
    val = fabs(e[2]) / sc
    if val > out:
        out = val
    if nd == 12:
        m0 = 0.0
        m1 = 0.0
        for i in range(3, 9):
            m0 = fmax2(m0, fmax2(fabs(y0[i]), fabs(y1[i])))
            m1 = fmax2(m1, fabs(e[i]))
        val = m1 / (rtol * m0 + atol)
        if val > out:
            out = val
        m0 = 0.0
        m1 = 0.0
        for i in range(9, 12):
            m0 = fmax2(m0, fmax2(fabs(y0[i]), fabs(y1[i])))
            m1 = fmax2(m1, fabs(e[i]))
        val = m1 / (rtol * m0 + atol)
        if val > out:
            out = val
    return out


cdef inline double fmax2(double a, double b) noexcept nogil:
    return a if a > b else b


cdef double dp_step(Field* F, int nd, double* y, double* k1, double h, double* yn, double* k7,
                    double rtol, double atol) noexcept nogil:
    """One Dormand-Prince step; fills yn and k7 = f(yn); returns the scaled error."""
    cdef double k2[12], k3[12], k4[12], k5[12], k6[12], tmp[12], err[12]
    cdef int i
    for i in range(nd):
        tmp[i] = y[i] + h * A21 * k1[i]
    rhs(F, nd, tmp, k2)
    for i in range(nd):
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
    rhs(F, nd, tmp, k3)
    for i in range(nd):
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    rhs(F, nd, tmp, k4)
    for i in range(nd):
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    rhs(F, nd, tmp, k5)
    for i in range(nd):
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    rhs(F, nd, tmp, k6)
    for i in range(nd):
        yn[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
    rhs(F, nd, yn, k7)
    for i in range(nd):
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
    return block_norm(nd, y, yn, err, rtol, atol)


cdef inline double step_factor(double err) noexcept nogil:
    cdef double fac
    if err == 0.0:
        return 5.0
    fac = 0.9 * pow(err, -0.2)
    if fac < 0.2:
        fac = 0.2
    if fac > 5.0:
        fac = 5.0
    return fac


cdef Field make_field(tuple p):
    cdef Field F
    F.sigma = p[0]
    F.mu = p[1]
    F.u = p[2]
    F.cq = p[3]
    F.radius = p[4]
    return F


def flow(tuple p, x0, times, double rtol, double atol, long max_steps, bint var=False):
    """Integrate from t=0 through the monotone sequence ``times``.

    Returns ``(status, states, nsteps)`` with ``states`` of shape
    ``(len(times), 12 if var else 3)``.
    """
    cdef Field F = make_field(p)
    cdef int nd = 12 if var else 3
    cdef double y[12]
    cdef double yn[12]
    cdef double k1[12]
    cdef double k7[12]
    cdef double t = 0.0, T, hh, h, err, fac, direction, hprev
    cdef long steps = 0
    cdef int i, m, idx
    cdef bint clipped
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tt = np.ascontiguousarray(times, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xx = np.ascontiguousarray(x0, dtype=np.float64).reshape(-1)
    m = tt.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((m, nd), dtype=np.float64)
    for i in range(12):
        y[i] = 0.0
    for i in range(3):
        y[i] = xx[i]
    if var:
        y[3] = 1.0
        y[7] = 1.0
        y[11] = 1.0
    direction = 1.0
    if m > 0 and tt[m - 1] < 0.0:
        direction = -1.0
    rhs(&F, nd, y, k1)
    h = direction * H0
    for idx in range(m):
        T = tt[idx]
        while (T - t) * direction > 0.0:
            hh = h
            clipped = False
            if (t + hh - T) * direction >= 0.0:
                hh = T - t
                clipped = True
            err = dp_step(&F, nd, y, k1, hh, yn, k7, rtol, atol)
            steps += 1
            if steps > max_steps:
                return 1, out, steps
            if not isfinite(err):
                err = 1e10
            if err <= 1.0:
                t = T if clipped else t + hh
                for i in range(nd):
                    y[i] = yn[i]
                    k1[i] = k7[i]
                fac = step_factor(err)
                hprev = h
                h = hh * fac
                if clipped and fabs(hprev) > fabs(h):
                    h = hprev
                if fabs(h) > HMAX:
                    h = direction * HMAX
            else:
                fac = step_factor(err)
                if fac > 1.0:
                    fac = 1.0
                h = hh * fac
        for i in range(nd):
            out[idx, i] = y[i]
    return 0, out, steps


cdef double hermite_x3(double a0, double d0, double a1, double d1, double h, double th) noexcept nogil:
    cdef double h00 = 2 * th * th * th - 3 * th * th + 1
    cdef double h10 = th * th * th - 2 * th * th + th
    cdef double h01 = -2 * th * th * th + 3 * th * th
    cdef double h11 = th * th * th - th * th
    return h00 * a0 + h10 * h * d0 + h01 * a1 + h11 * h * d1


def level_hit(tuple p, x0, double level, double t_max, double rtol, double atol, long max_steps):
    """Integrate forward until x3 first reaches ``level``.

    Returns ``(status, tau, y_tau, integer_states, nsteps)`` where
    ``integer_states`` holds the state at t = 0, 1, ..., n with n the
    largest integer below tau.
    """
    cdef Field F = make_field(p)
    cdef int nd = 3
    cdef double y[12]
    cdef double yn[12]
    cdef double ys[12]
    cdef double k1[12]
    cdef double k7[12]
    cdef double ks[12]
    cdef double t = 0.0, hh, h, err, fac, hprev, next_int, lo, hi, mid, hs, g, dh
    cdef long steps = 0
    cdef int i, it
    cdef bint clipped
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xx = np.ascontiguousarray(x0, dtype=np.float64).reshape(-1)
    ints = [np.array([xx[0], xx[1], xx[2]])]
    for i in range(3):
        y[i] = xx[i]
    rhs(&F, nd, y, k1)
    h = H0
    while True:
        next_int = floor(t) + 1.0
        hh = h
        clipped = False
        if t + hh >= next_int:
            hh = next_int - t
            clipped = True
        err = dp_step(&F, nd, y, k1, hh, yn, k7, rtol, atol)
        steps += 1
        if steps > max_steps:
            return 1, t, np.array([y[0], y[1], y[2]]), np.array(ints), steps
        if not isfinite(err):
            err = 1e10
        if err > 1.0:
            fac = step_factor(err)
            if fac > 1.0:
                fac = 1.0
            h = hh * fac
            continue
        if yn[2] >= level:
            # bracket the crossing on the cubic Hermite interpolant, then polish
            lo = 0.0
            hi = 1.0
            for it in range(60):
                mid = 0.5 * (lo + hi)
                if hermite_x3(y[2], k1[2], yn[2], k7[2], hh, mid) < level:
                    lo = mid
                else:
                    hi = mid
            hs = hi * hh
            for it in range(12):
                dp_step(&F, nd, y, k1, hs, ys, ks, rtol, atol)
                g = ys[2] - level
                if fabs(g) <= 4e-16 * level:
                    break
                dh = -g / ks[2]
                hs += dh
                if fabs(dh) <= 1e-16 * (1.0 + t):
                    dp_step(&F, nd, y, k1, hs, ys, ks, rtol, atol)
                    break
            return 0, t + hs, np.array([ys[0], ys[1], ys[2]]), np.array(ints), steps
        t = next_int if clipped else t + hh
        for i in range(nd):
            y[i] = yn[i]
            k1[i] = k7[i]
        if clipped:
            ints.append(np.array([y[0], y[1], y[2]]))
        fac = step_factor(err)
        hprev = h
        h = hh * fac
        if clipped and hprev > h:
            h = hprev
        if h > HMAX:
            h = HMAX
        if y[2] <= 0.0:
            return 3, t, np.array([y[0], y[1], y[2]]), np.array(ints), steps
        if t >= t_max:
            return 2, t, np.array([y[0], y[1], y[2]]), np.array(ints), steps
