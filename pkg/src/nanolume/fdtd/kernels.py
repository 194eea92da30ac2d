"""Numba kernels for the Yee update with convolutional PML.

Array layout (cells nx, ny, nz; node (i, j, k) sits at (i, j, k) * dx):
    Ex (nx, ny+1, nz+1) at (i+1/2, j, k)      Hx (nx+1, ny, nz) at (i, j+1/2, k+1/2)
    Ey (nx+1, ny, nz+1) at (i, j+1/2, k)      Hy (nx, ny+1, nz) at (i+1/2, j, k+1/2)
    Ez (nx+1, ny+1, nz) at (i, j, k+1/2)      Hz (nx, ny, nz+1) at (i+1/2, j+1/2, k)
Tangential E on the outer faces is never updated (PEC walls behind the PML).

PML auxiliary fields are stored only inside the absorbing slabs; ``p*``
maps a grid index along the derivative axis to its slab index or -1.
Every loop writes disjoint cells, so results do not depend on the number
of worker threads.
"""

import numba as nb
import numpy as np

_OPTS = dict(cache=True, parallel=True, nogil=True, fastmath=False)


@nb.njit(**_OPTS)
def update_ex(ex, hy, hz, ca, inv_dx, ky, kz, by, cy, bz, cz, py, pz, psi_y, psi_z):
    nx, nyp, nzp = ex.shape
    for i in nb.prange(nx):
        for j in range(1, nyp - 1):
            sy = py[j]
            for k in range(1, nzp - 1):
                dy = (hz[i, j, k] - hz[i, j - 1, k]) * inv_dx
                dz = (hy[i, j, k] - hy[i, j, k - 1]) * inv_dx
                ty = dy / ky[j]
                tz = dz / kz[k]
                if sy >= 0:
                    v = by[j] * psi_y[i, sy, k] + cy[j] * dy
                    psi_y[i, sy, k] = v
                    ty += v
                sz = pz[k]
                if sz >= 0:
                    v = bz[k] * psi_z[i, j, sz] + cz[k] * dz
                    psi_z[i, j, sz] = v
                    tz += v
                ex[i, j, k] += ca[i, j, k] * (ty - tz)


@nb.njit(**_OPTS)
def update_ey(ey, hx, hz, ca, inv_dx, kz, kx, bz, cz, bx, cx, pz, px, psi_z, psi_x):
    nxp, ny, nzp = ey.shape
    for i in nb.prange(1, nxp - 1):
        sx = px[i]
        for j in range(ny):
            for k in range(1, nzp - 1):
                dz = (hx[i, j, k] - hx[i, j, k - 1]) * inv_dx
                dx = (hz[i, j, k] - hz[i - 1, j, k]) * inv_dx
                tz = dz / kz[k]
                tx = dx / kx[i]
                sz = pz[k]
                if sz >= 0:
                    v = bz[k] * psi_z[i, j, sz] + cz[k] * dz
                    psi_z[i, j, sz] = v
                    tz += v
                if sx >= 0:
                    v = bx[i] * psi_x[sx, j, k] + cx[i] * dx
                    psi_x[sx, j, k] = v
                    tx += v
                ey[i, j, k] += ca[i, j, k] * (tz - tx)


@nb.njit(**_OPTS)
def update_ez(ez, hx, hy, ca, inv_dx, kx, ky, bx, cx, by, cy, px, py, psi_x, psi_y):
    nxp, nyp, nz = ez.shape
    for i in nb.prange(1, nxp - 1):
        sx = px[i]
        for j in range(1, nyp - 1):
            sy = py[j]
            for k in range(nz):
                dx = (hy[i, j, k] - hy[i - 1, j, k]) * inv_dx
                dy = (hx[i, j, k] - hx[i, j - 1, k]) * inv_dx
                tx = dx / kx[i]
                ty = dy / ky[j]
                if sx >= 0:
                    v = bx[i] * psi_x[sx, j, k] + cx[i] * dx
                    psi_x[sx, j, k] = v
                    tx += v
                if sy >= 0:
                    v = by[j] * psi_y[i, sy, k] + cy[j] * dy
                    psi_y[i, sy, k] = v
                    ty += v
                ez[i, j, k] += ca[i, j, k] * (tx - ty)


@nb.njit(**_OPTS)
def update_hx(hx, ey, ez, dt_dx, ky, kz, by, cy, bz, cz, py, pz, psi_y, psi_z):
    nxp, ny, nz = hx.shape
    for i in nb.prange(nxp):
        for j in range(ny):
            sy = py[j]
            for k in range(nz):
                dy = ez[i, j + 1, k] - ez[i, j, k]
                dz = ey[i, j, k + 1] - ey[i, j, k]
                ty = dy / ky[j]
                tz = dz / kz[k]
                if sy >= 0:
                    v = by[j] * psi_y[i, sy, k] + cy[j] * dy
                    psi_y[i, sy, k] = v
                    ty += v
                sz = pz[k]
                if sz >= 0:
                    v = bz[k] * psi_z[i, j, sz] + cz[k] * dz
                    psi_z[i, j, sz] = v
                    tz += v
                hx[i, j, k] -= dt_dx * (ty - tz)


@nb.njit(**_OPTS)
def update_hy(hy, ex, ez, dt_dx, kz, kx, bz, cz, bx, cx, pz, px, psi_z, psi_x):
    nx, nyp, nz = hy.shape
    for i in nb.prange(nx):
        sx = px[i]
        for j in range(nyp):
            for k in range(nz):
                dz = ex[i, j, k + 1] - ex[i, j, k]
                dx = ez[i + 1, j, k] - ez[i, j, k]
                tz = dz / kz[k]
                tx = dx / kx[i]
                sz = pz[k]
                if sz >= 0:
                    v = bz[k] * psi_z[i, j, sz] + cz[k] * dz
                    psi_z[i, j, sz] = v
                    tz += v
                if sx >= 0:
                    v = bx[i] * psi_x[sx, j, k] + cx[i] * dx
                    psi_x[sx, j, k] = v
                    tx += v
                hy[i, j, k] -= dt_dx * (tz - tx)


@nb.njit(**_OPTS)
def update_hz(hz, ex, ey, dt_dx, kx, ky, bx, cx, by, cy, px, py, psi_x, psi_y):
    nx, ny, nzp = hz.shape
    for i in nb.prange(nx):
        sx = px[i]
        for j in range(ny):
            sy = py[j]
            for k in range(nzp):
                dx = ey[i + 1, j, k] - ey[i, j, k]
                dy = ex[i, j + 1, k] - ex[i, j, k]
                tx = dx / kx[i]
                ty = dy / ky[j]
                if sx >= 0:
                    v = bx[i] * psi_x[sx, j, k] + cx[i] * dx
                    psi_x[sx, j, k] = v
                    tx += v
                if sy >= 0:
                    v = by[j] * psi_y[i, sy, k] + cy[j] * dy
                    psi_y[i, sy, k] = v
                    ty += v
                hz[i, j, k] -= dt_dx * (tx - ty)


@nb.njit(cache=True, parallel=True, nogil=True)
def dft_accumulate(acc_re, acc_im, f1, f2, w, cr, ci):
    """acc[a, b, l] += w * (f1 + f2)[a, b] * (cr + i ci)[l]."""
    na, nb_ = f1.shape
    nl = cr.shape[0]
    for a in nb.prange(na):
        for b in range(nb_):
            v = w * (f1[a, b] + f2[a, b])
            for l in range(nl):
                acc_re[a, b, l] += v * cr[l]
                acc_im[a, b, l] += v * ci[l]


@nb.njit(cache=True, nogil=True)
def sum_squares(a):
    """Serial sum of squares; fixed order keeps it thread-count independent."""
    s = 0.0
    flat = a.ravel()
    for i in range(flat.shape[0]):
        s += flat[i] * flat[i]
    return s


@nb.njit(cache=True, nogil=True)
def weighted_sum_squares(a, w):
    s = 0.0
    fa = a.ravel()
    fw = w.ravel()
    for i in range(fa.shape[0]):
        s += fw[i] * fa[i] * fa[i]
    return s


def pml_profiles(n, npml, dx, dt, sigma_max, kappa_max, alpha_max, order, half):
    """(kappa, b, c, slab_index) along one axis.

    ``half`` selects the H positions (q + 1/2, q = 0..n-1) instead of the
    E positions (q, q = 0..n).
    """
    q = np.arange(n, dtype=float) + 0.5 if half else np.arange(n + 1, dtype=float)
    L = npml * dx
    x = q * dx
    depth = np.zeros_like(x)
    if npml > 0:
        lo = x < L
        hi = x > (n - npml) * dx
        depth[lo] = (L - x[lo]) / L
        depth[hi] = (x[hi] - (n - npml) * dx) / L
    depth = np.clip(depth, 0.0, 1.0)
    sigma = sigma_max * depth**order
    kappa = 1.0 + (kappa_max - 1.0) * depth**order
    alpha = alpha_max * (1.0 - depth)
    alpha[depth == 0] = 0.0
    b = np.exp(-(sigma / kappa + alpha) * dt)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(sigma > 0, sigma / (sigma * kappa + kappa * kappa * alpha) * (b - 1.0), 0.0)
    inside = depth > 0
    slab = np.full(q.size, -1, dtype=np.int64)
    slab[inside] = np.arange(int(inside.sum()))
    return kappa, b, c, slab
