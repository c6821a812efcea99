"""Compiled inner loops for the ROF-A2TV solvers.

All kernels use the forward-difference gradient and its negative-adjoint
divergence from :mod:`anisoflow.grid`, written out per pixel. Dual fields
are updated in place.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def div_a_into(a11, a12, a22, px, py, out):
    """out = div(A p)."""
    H, W = out.shape
    for r in range(H):
        for c in range(W):
            v = 0.0
            if c < W - 1:
                v += a11[r, c] * px[r, c] + a12[r, c] * py[r, c]
            if c > 0:
                v -= a11[r, c - 1] * px[r, c - 1] + a12[r, c - 1] * py[r, c - 1]
            if r < H - 1:
                v += a12[r, c] * px[r, c] + a22[r, c] * py[r, c]
            if r > 0:
                v -= a12[r - 1, c] * px[r - 1, c] + a22[r - 1, c] * py[r - 1, c]
            out[r, c] = v


@njit(cache=True)
def a2tv_of(u, a11, a12, a22):
    H, W = u.shape
    s = 0.0
    for r in range(H):
        for c in range(W):
            gx = u[r, c + 1] - u[r, c] if c < W - 1 else 0.0
            gy = u[r + 1, c] - u[r, c] if r < H - 1 else 0.0
            hx = a11[r, c] * gx + a12[r, c] * gy
            hy = a12[r, c] * gx + a22[r, c] * gy
            s += np.sqrt(hx * hx + hy * hy)
    return s


@njit(cache=True)
def chambolle_loop(f, a11, a12, a22, theta, px, py, tau, iters, tol, literal, energy, resid):
    """Projection iteration ``p <- (p + tau h) / (1 + tau |h|)``, ``h = A grad(div_A p - f/theta)``.

    With ``literal`` the plain gradient is used for ``h``. ``energy[n]`` is the
    primal energy of ``u = f - theta div_A p`` before update ``n``; ``resid[n]``
    the relative change of ``p`` in update ``n``. Returns the number of updates.
    """
    H, W = f.shape
    d = np.empty((H, W))
    for n in range(iters):
        div_a_into(a11, a12, a22, px, py, d)
        fid = 0.0
        for r in range(H):
            for c in range(W):
                fid += d[r, c] * d[r, c]
                d[r, c] -= f[r, c] / theta
        # u = -theta d, so J(u) = theta * sum |A grad d| and |u - f|^2 = theta^2 |div_A p|^2
        jsum = 0.0
        num = 0.0
        den = 0.0
        for r in range(H):
            for c in range(W):
                gx = d[r, c + 1] - d[r, c] if c < W - 1 else 0.0
                gy = d[r + 1, c] - d[r, c] if r < H - 1 else 0.0
                hx = a11[r, c] * gx + a12[r, c] * gy
                hy = a12[r, c] * gx + a22[r, c] * gy
                jsum += np.sqrt(hx * hx + hy * hy)
                if literal:
                    hx = gx
                    hy = gy
                s = 1.0 + tau * np.sqrt(hx * hx + hy * hy)
                nx = (px[r, c] + tau * hx) / s
                ny = (py[r, c] + tau * hy) / s
                num += (nx - px[r, c]) ** 2 + (ny - py[r, c]) ** 2
                den += nx * nx + ny * ny
                px[r, c] = nx
                py[r, c] = ny
        energy[n] = theta * jsum + 0.5 * theta * fid
        rel = np.sqrt(num / den) if den > 0 else 0.0
        resid[n] = rel
        if rel < tol:
            return n + 1
    return iters


@njit(cache=True)
def chambolle_pock_loop(f, a11, a12, a22, theta, px, py, tau0, iters, tol, energy, resid):
    """Accelerated primal-dual iteration for ``min J_A(u) + |u - f|^2 / (2 theta)``.

    ``(px, py)`` holds ``y`` with ``u = f + theta div_A y`` at optimality, so the
    caller negates it to obtain the projection-convention dual. Stops when the
    relative change of ``u`` falls below ``tol`` (after 10 warm-up updates).
    Returns ``(u, n_updates)``.
    """
    H, W = f.shape
    gam = 1.0 / theta
    tau = tau0
    sig = 1.0 / (8.0 * tau)
    d = np.empty((H, W))
    u = np.empty((H, W))
    ub = np.empty((H, W))
    un = np.empty((H, W))
    div_a_into(a11, a12, a22, px, py, d)
    for r in range(H):
        for c in range(W):
            u[r, c] = f[r, c] + theta * d[r, c]
            ub[r, c] = u[r, c]
    for n in range(iters):
        for r in range(H):
            for c in range(W):
                gx = ub[r, c + 1] - ub[r, c] if c < W - 1 else 0.0
                gy = ub[r + 1, c] - ub[r, c] if r < H - 1 else 0.0
                hx = a11[r, c] * gx + a12[r, c] * gy
                hy = a12[r, c] * gx + a22[r, c] * gy
                nx = px[r, c] + sig * hx
                ny = py[r, c] + sig * hy
                m = np.sqrt(nx * nx + ny * ny)
                if m > 1.0:
                    nx /= m
                    ny /= m
                px[r, c] = nx
                py[r, c] = ny
        div_a_into(a11, a12, a22, px, py, d)
        for r in range(H):
            for c in range(W):
                un[r, c] = (u[r, c] + tau * d[r, c] + tau * gam * f[r, c]) / (1.0 + tau * gam)
        th = 1.0 / np.sqrt(1.0 + 2.0 * gam * tau)
        tau *= th
        sig /= th
        num = 0.0
        den = 0.0
        fid = 0.0
        for r in range(H):
            for c in range(W):
                dd = un[r, c] - u[r, c]
                num += dd * dd
                den += un[r, c] * un[r, c]
                e = un[r, c] - f[r, c]
                fid += e * e
                ub[r, c] = un[r, c] + th * dd
                u[r, c] = un[r, c]
        energy[n] = a2tv_of(u, a11, a12, a22) + 0.5 * gam * fid
        rel = np.sqrt(num / den) if den > 0 else 0.0
        resid[n] = rel
        if n >= 10 and rel < tol:
            return u, n + 1
    return u, iters
