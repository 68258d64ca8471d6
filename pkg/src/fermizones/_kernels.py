"""Compiled inner loops.

Everything here works on a trigonometric series restricted to a 2-plane,

    f(x, y) = sum_i a_i cos(w_i . (x, y) + t_i),

which covers both Fermi-surface sections (R^3, plane orthogonal to B) and
the 4-periodic problem (R^4, arbitrary 2-plane).  The Python wrappers build
``w`` and ``t`` from the full-dimensional series and the plane embedding.
"""

import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi

STATUS_BUDGET = 0
STATUS_CLOSED = 1
STATUS_STALLED = 2
STATUS_LOST = 3


@njit(cache=True)
def series_value_grad(x, y, w, t, a):
    val = 0.0
    gx = 0.0
    gy = 0.0
    for i in range(a.shape[0]):
        arg = w[i, 0] * x + w[i, 1] * y + t[i]
        c = np.cos(arg)
        s = np.sin(arg)
        val += a[i] * c
        gx -= a[i] * s * w[i, 0]
        gy -= a[i] * s * w[i, 1]
    return val, gx, gy


@njit(cache=True)
def eval_series_nd(points, k, a, phi):
    """Value and gradient of sum a cos(2 pi k.p + phi) at many points."""
    n = points.shape[0]
    dim = points.shape[1]
    val = np.zeros(n)
    grad = np.zeros((n, dim))
    for j in range(n):
        for i in range(a.shape[0]):
            arg = phi[i]
            for d in range(dim):
                arg += TWO_PI * k[i, d] * points[j, d]
            c = np.cos(arg)
            s = np.sin(arg)
            val[j] += a[i] * c
            for d in range(dim):
                grad[j, d] -= TWO_PI * a[i] * s * k[i, d]
    return val, grad


@njit(cache=True)
def _unit_tangent(x, y, w, t, a, rx, ry):
    """Unit tangent of the level curve, oriented along the heading (rx, ry).

    The rotated gradient (gy, -gx) equals grad eps x B in plane coordinates.
    Orienting by the heading instead of by the sign of the field lets a curve
    run straight through a crossing of a singular level.
    """
    _, gx, gy = series_value_grad(x, y, w, t, a)
    nrm = np.sqrt(gx * gx + gy * gy)
    if nrm == 0.0:
        return rx, ry, 0.0
    vx = gy / nrm
    vy = -gx / nrm
    if vx * rx + vy * ry < 0.0:
        vx = -vx
        vy = -vy
    return vx, vy, nrm


@njit(cache=True)
def project_to_level(x, y, w, t, a, level, tol, max_iter):
    """Newton iterations along the in-plane gradient; returns (x, y, residual)."""
    r = 0.0
    for it in range(max_iter):
        val, gx, gy = series_value_grad(x, y, w, t, a)
        r = val - level
        g2 = gx * gx + gy * gy
        if g2 == 0.0:
            return x, y, abs(r)
        x -= r * gx / g2
        y -= r * gy / g2
        if it >= 1 and abs(r) < tol:
            break
    val, gx, gy = series_value_grad(x, y, w, t, a)
    return x, y, abs(val - level)


@njit(cache=True)
def _rk4(x, y, h, w, t, a, rx, ry):
    k1x, k1y, n1 = _unit_tangent(x, y, w, t, a, rx, ry)
    k2x, k2y, _ = _unit_tangent(x + 0.5 * h * k1x, y + 0.5 * h * k1y, w, t, a, k1x, k1y)
    k3x, k3y, _ = _unit_tangent(x + 0.5 * h * k2x, y + 0.5 * h * k2y, w, t, a, k1x, k1y)
    k4x, k4y, _ = _unit_tangent(x + h * k3x, y + h * k3y, w, t, a, k1x, k1y)
    nx = x + h * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
    ny = y + h * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
    cosang = k1x * k4x + k1y * k4y
    # heading-oriented tangents hide a jump to the neighbouring branch near a
    # saddle; the unoriented field reverses there, so compare it too
    _, gx0, gy0 = series_value_grad(x, y, w, t, a)
    _, gx1, gy1 = series_value_grad(nx, ny, w, t, a)
    n0 = np.sqrt(gx0 * gx0 + gy0 * gy0) * np.sqrt(gx1 * gx1 + gy1 * gy1)
    if n0 > 0.0:
        cosang = min(cosang, (gx0 * gx1 + gy0 * gy1) / n0)
    return nx, ny, cosang, n1, k1x, k1y


@njit(cache=True)
def _initial_heading(x, y, w, t, a, sign):
    _, gx, gy = series_value_grad(x, y, w, t, a)
    nrm = np.sqrt(gx * gx + gy * gy)
    if nrm == 0.0:
        return sign, 0.0
    return sign * gy / nrm, -sign * gx / nrm


@njit(cache=True, nogil=True)
def trace_plane(x0, y0, w, t, a, level, sign, budget, h_max, h_min, angle_tol,
                stall_speed, stall_patience, lattice_map, lattice_base,
                lift_cart, plane_basis, closure_tol, align_tol, check_closure,
                return_radius, max_returns):
    """Follow the level curve f = level through (x0, y0) by arc length.

    ``sign`` = +1 follows grad f rotated clockwise (grad eps x B), -1 the reverse.

    Besides exact closure, near returns are logged: whenever a step's chord
    passes within ``return_radius`` (Cartesian) of a lattice translate
    start + u, u != 0, heading roughly as at the start, u is recorded once per
    visit together with the closest distance seen during the visit.

    Parameters
    ----------
    lattice_map, lattice_base
        Lattice coordinates of a plane point are ``lattice_base + lattice_map @ (x, y)``.
    lift_cart, plane_basis
        ``lift_cart @ u`` is the Cartesian translation of an integer period u;
        ``plane_basis`` (dim x 2) has orthonormal columns spanning the plane.
        A period u is admissible only when its translation lies in the plane.

    Returns
    -------
    pts : (m, 2) plane coordinates, s : (m,) arc length, status, period (dim,) int64,
    max_residual : largest |f - level| over accepted points,
    returns : (r, dim) int64 near-return translations, return_arc : (r,) arc lengths,
    return_dist : (r,) Cartesian distance to start + u when the return was logged.
    """
    dim = lattice_map.shape[0]
    rets = np.zeros((max_returns, dim), dtype=np.int64)
    ret_arc = np.zeros(max_returns)
    ret_dist = np.zeros(max_returns)
    nret = 0
    last_ret = np.zeros(dim, dtype=np.int64)
    rr2 = return_radius * return_radius
    cap = 4096
    pts = np.empty((cap, 2))
    arc = np.empty(cap)
    period = np.zeros(dim, dtype=np.int64)

    x, y, res = project_to_level(x0, y0, w, t, a, level, 1e-13, 12)
    pts[0, 0] = x
    pts[0, 1] = y
    arc[0] = 0.0
    n = 1
    max_res = res

    hx, hy = _initial_heading(x, y, w, t, a, sign)
    tx0 = hx
    ty0 = hy
    p0 = np.empty(dim)
    for d in range(dim):
        p0[d] = lattice_base[d] + lattice_map[d, 0] * x + lattice_map[d, 1] * y
    xs = x
    ys = y

    s = 0.0
    h = h_max
    slow_len = 0.0
    min_steps = 0
    departed = False
    status = STATUS_BUDGET
    cos_tol = np.cos(angle_tol)
    cos_grow = np.cos(angle_tol / 3.0)
    pm = np.empty(dim)
    u = np.zeros(dim, dtype=np.int64)
    trans = np.empty(dim)

    while s < budget:
        hs = min(h, budget - s)
        if hs <= 0.0:
            break
        nx, ny, cosang, speed, k1x, k1y = _rk4(x, y, hs, w, t, a, hx, hy)
        if cosang < cos_tol and hs > h_min:
            h = max(0.5 * hs, h_min)
            continue
        if speed < stall_speed:
            slow_len += hs
        else:
            slow_len = 0.0
        if hs <= h_min * 1.0000001 and cosang < cos_tol:
            min_steps += 1
        else:
            min_steps = 0
        if slow_len > stall_patience or min_steps > 1000:
            status = STATUS_STALLED
            break
        px, py, res = project_to_level(nx, ny, w, t, a, level, 1e-13, 2)
        if res > 1e-10:
            px, py, res = project_to_level(nx, ny, w, t, a, level, 1e-13, 8)
        # a large projection means the step outran the curve (e.g. a loop
        # smaller than the step): retry shorter
        corr = np.sqrt((px - nx) ** 2 + (py - ny) ** 2)
        if (corr > 0.1 * hs or res > 1e-9) and hs > h_min:
            h = max(0.5 * hs, h_min)
            continue
        if res > 1e-9:
            status = STATUS_LOST
            break
        nx = px
        ny = py
        if res > max_res:
            max_res = res

        dx = nx - x
        dy = ny - y
        chord = np.sqrt(dx * dx + dy * dy)

        if return_radius > 0.0 and nret < max_returns and k1x * tx0 + k1y * ty0 > 0.9:
            anyu = False
            for d in range(dim):
                pm[d] = lattice_base[d] + lattice_map[d, 0] * nx + lattice_map[d, 1] * ny
                u[d] = np.int64(np.round(pm[d] - p0[d]))
                if u[d] != 0:
                    anyu = True
            if anyu:
                ux = 0.0
                uy = 0.0
                tt = 0.0
                for d in range(dim):
                    acc = 0.0
                    for e in range(dim):
                        acc += lift_cart[d, e] * u[e]
                    tt += acc * acc
                    ux += plane_basis[d, 0] * acc
                    uy += plane_basis[d, 1] * acc
                off2 = max(tt - ux * ux - uy * uy, 0.0)
                if off2 < rr2:
                    # closest approach of this step's chord to start + u
                    txg = xs + ux
                    tyg = ys + uy
                    cl = 0.0
                    if chord > 0.0:
                        cl = ((txg - x) * dx + (tyg - y) * dy) / (chord * chord)
                        cl = min(max(cl, 0.0), 1.0)
                    cx = x + cl * dx - txg
                    cy = y + cl * dy - tyg
                    dist2 = off2 + cx * cx + cy * cy
                    if dist2 < rr2:
                        same = nret > 0
                        for d in range(dim):
                            if u[d] != last_ret[d]:
                                same = False
                        if same:
                            ret_dist[nret - 1] = min(ret_dist[nret - 1], np.sqrt(dist2))
                        else:
                            for d in range(dim):
                                rets[nret, d] = u[d]
                                last_ret[d] = u[d]
                            ret_arc[nret] = s + cl * hs
                            ret_dist[nret] = np.sqrt(dist2)
                            nret += 1

        closed = False
        if check_closure:
            if not departed:
                ddx = nx - xs
                ddy = ny - ys
                if ddx * ddx + ddy * ddy > 4.0 * hs * hs:
                    departed = True
            # candidate period from the chord midpoint
            mx = 0.5 * (x + nx)
            my = 0.5 * (y + ny)
            nonzero = False
            for d in range(dim):
                pm[d] = lattice_base[d] + lattice_map[d, 0] * mx + lattice_map[d, 1] * my
                u[d] = np.int64(np.round(pm[d] - p0[d]))
                if u[d] != 0:
                    nonzero = True
            if departed or nonzero:
                for d in range(dim):
                    acc = 0.0
                    for e in range(dim):
                        acc += lift_cart[d, e] * u[e]
                    trans[d] = acc
                ux = 0.0
                uy = 0.0
                for d in range(dim):
                    ux += plane_basis[d, 0] * trans[d]
                    uy += plane_basis[d, 1] * trans[d]
                off2 = 0.0
                for d in range(dim):
                    r = trans[d] - plane_basis[d, 0] * ux - plane_basis[d, 1] * uy
                    off2 += r * r
                # only translations lying in the plane can close the curve
                if off2 < 1e-18:
                    txg = xs + ux
                    tyg = ys + uy
                    cl = 0.0
                    if chord > 0.0:
                        cl = ((txg - x) * dx + (tyg - y) * dy) / (chord * chord)
                        cl = min(max(cl, 0.0), 1.0)
                    cx = x + cl * dx - txg
                    cy = y + cl * dy - tyg
                    dist = np.sqrt(cx * cx + cy * cy)
                    aligned = False
                    if dist < max(0.25 * chord, 10.0 * closure_tol):
                        # heading where the chord passes the target
                        vx, vy, _ = _unit_tangent(x + cl * dx, y + cl * dy, w, t, a, k1x, k1y)
                        aligned = vx * tx0 + vy * ty0 > align_tol
                    if aligned:
                        # land on the translated start point
                        lx = x
                        ly = y
                        ls = s
                        lhx = k1x
                        lhy = k1y
                        for it in range(8):
                            vx, vy, _ = _unit_tangent(lx, ly, w, t, a, lhx, lhy)
                            sig = (txg - lx) * vx + (tyg - ly) * vy
                            lx, ly, _, _, lhx, lhy = _rk4(lx, ly, sig, w, t, a, vx, vy)
                            lx, ly, _ = project_to_level(lx, ly, w, t, a, level, 1e-13, 3)
                            ls += sig
                            ex = lx - txg
                            ey = ly - tyg
                            if np.sqrt(ex * ex + ey * ey) < closure_tol:
                                closed = True
                                break
                        if closed:
                            nx = lx
                            ny = ly
                            s = ls
                            for d in range(dim):
                                period[d] = u[d]
        if not closed:
            s += hs

        if n >= cap:
            cap *= 2
            npts = np.empty((cap, 2))
            narc = np.empty(cap)
            npts[:n] = pts[:n]
            narc[:n] = arc[:n]
            pts = npts
            arc = narc
        pts[n, 0] = nx
        pts[n, 1] = ny
        arc[n] = s
        n += 1
        x = nx
        y = ny
        hx = k1x
        hy = k1y
        if closed:
            status = STATUS_CLOSED
            break
        if cosang > cos_grow:
            h = min(1.5 * hs, h_max)

    return (pts[:n].copy(), arc[:n].copy(), status, period, max_res,
            rets[:nret].copy(), ret_arc[:nret].copy(), ret_dist[:nret].copy())


@njit(cache=True)
def relaxation_sums(T, dur, J, gamma, periodic, Tp):
    """One-sided relaxation correlation of segment increments.

    T : (n,) segment mid-times, increasing.  dur : (n,) segment durations.
    J : (n, 2) segment integrals of the transverse velocity.  Returns (M, mass) with

        M = sum_k J_k H_k^T,   H_k = sum_l J_l K(T_k - T_l)

    where K is the one-sided kernel exp(-dt/gamma) on dt >= 0 (open window)
    or its periodic sum over period Tp; the self term carries K(0)/2 so the
    symmetric part of M is a Gram form with a positive definite kernel.
    ``mass`` is the same double sum with J replaced by the segment durations
    (needed for window normalization).
    """
    n = T.shape[0]
    M = np.zeros((2, 2))
    if n == 0:
        return M, 0.0
    q = np.exp(-Tp / gamma) if periodic else 0.0
    scale = 1.0 / (1.0 - q)
    self_k = 0.5 * (1.0 + q) * scale
    F = np.zeros(3)  # forward sums of (J_x, J_y, dur)
    H = np.zeros((n, 3))
    for k in range(n):
        if k > 0:
            e = np.exp(-(T[k] - T[k - 1]) / gamma)
            F[0] = e * (F[0] + J[k - 1, 0])
            F[1] = e * (F[1] + J[k - 1, 1])
            F[2] = e * (F[2] + dur[k - 1])
        H[k, 0] = scale * F[0] + self_k * J[k, 0]
        H[k, 1] = scale * F[1] + self_k * J[k, 1]
        H[k, 2] = scale * F[2] + self_k * dur[k]
    if periodic:
        # wrap-around: l > k contributes exp(-(Tp - (T_l - T_k)) / gamma)
        # = exp(-(Tp - R + T_k)/gamma) * sum_{l>k} J_l exp(-(R - T_l)/gamma), R = T[n-1];
        # both exponents are non-positive
        R = T[n - 1]
        S = np.zeros(3)
        for k in range(n - 2, -1, -1):
            e = np.exp(-(R - T[k + 1]) / gamma)
            S[0] += J[k + 1, 0] * e
            S[1] += J[k + 1, 1] * e
            S[2] += dur[k + 1] * e
            w = scale * np.exp(-(Tp - R + T[k]) / gamma)
            H[k, 0] += w * S[0]
            H[k, 1] += w * S[1]
            H[k, 2] += w * S[2]
    mass = 0.0
    for k in range(n):
        for i in range(2):
            for j in range(2):
                M[i, j] += J[k, i] * H[k, j]
        mass += dur[k] * H[k, 2]
    return M, mass
