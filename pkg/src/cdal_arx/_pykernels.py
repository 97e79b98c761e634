"""Pure-Python kernels. Reference behaviour for the compiled ``_ckernels``.

Both modules expose the same two functions and operate in place on
C-contiguous float64 arrays:

``residuals_into(A, B, ext_y, ext_u, dU, res_arx, res_du)``
    Fill the ARX and increment residuals (see ``problem.residuals``).

``coupled_sweeps(A, B, wy, wdu, refs, y_lo, y_hi, u_lo, u_hi, du_lo, du_hi,
inv_dy, inv_du, inv_ddu, Y, U, dU, lam, gam, max_passes, eps) -> (passes, sigma)``
    Run full coordinate passes that keep ``lam``/``gam`` equal to the
    accelerated duals plus the current residuals. Stops after the first
    pass whose squared movement ``sigma`` is ``<= eps``.

``wy`` and ``wdu`` are the diagonal weights already divided by rho.
"""

import numpy as np


def residuals_into(A, B, ext_y, ext_u, dU, res_arx, res_du):
    n_a, n_b, T = A.shape[0], B.shape[0], dU.shape[0]
    res_arx[:] = -ext_y[n_a:]
    for i in range(1, n_a + 1):
        res_arx += ext_y[n_a - i : n_a - i + T] @ A[i - 1].T
    for i in range(1, n_b + 1):
        res_arx += ext_u[n_b - i + 1 : n_b - i + 1 + T] @ B[i - 1].T
    res_du[:] = ext_u[n_b - 1 : n_b - 1 + T] + dU - ext_u[n_b:]


def _clamp(x, lo, hi):
    return lo if x < lo else (hi if x > hi else x)


def coupled_sweeps(A, B, wy, wdu, refs, y_lo, y_hi, u_lo, u_hi, du_lo, du_hi,
                   inv_dy, inv_du, inv_ddu, Y, U, dU, lam, gam, max_passes, eps):
    n_a, n_y = A.shape[0], A.shape[1]
    n_b, n_u = B.shape[0], B.shape[2]
    T = Y.shape[0]
    # column i of every lag matrix as a contiguous row
    AT = np.ascontiguousarray(A.transpose(0, 2, 1))
    BT = np.ascontiguousarray(B.transpose(0, 2, 1))
    passes = 0
    sigma = 0.0
    while passes < max_passes:
        sigma = 0.0
        for k in range(T):
            ja = min(n_a, T - 1 - k)
            for i in range(n_y):
                s = -lam[k, i]
                for n in range(1, ja + 1):
                    s += float(AT[n - 1, i] @ lam[k + n])
                y = Y[k, i]
                th = _clamp(y - (wy[i] * (y - refs[k, i]) + s) * inv_dy[k, i], y_lo[i], y_hi[i])
                d = th - y
                if d != 0.0:
                    sigma += d * d
                    Y[k, i] = th
                    lam[k, i] -= d
                    for n in range(1, ja + 1):
                        lam[k + n] += d * AT[n - 1, i]
            jb = min(n_b, T - k)
            for i in range(n_u):
                s = -gam[k, i]
                if k + 1 < T:
                    s += gam[k + 1, i]
                for n in range(1, jb + 1):
                    s += float(BT[n - 1, i] @ lam[k + n - 1])
                u = U[k, i]
                th = _clamp(u - s * inv_du[k, i], u_lo[i], u_hi[i])
                d = th - u
                if d != 0.0:
                    sigma += d * d
                    U[k, i] = th
                    gam[k, i] -= d
                    if k + 1 < T:
                        gam[k + 1, i] += d
                    for n in range(1, jb + 1):
                        lam[k + n - 1] += d * BT[n - 1, i]
            for i in range(n_u):
                v = dU[k, i]
                th = _clamp(v - (wdu[i] * v + gam[k, i]) * inv_ddu[i], du_lo[i], du_hi[i])
                d = th - v
                if d != 0.0:
                    sigma += d * d
                    dU[k, i] = th
                    gam[k, i] += d
        passes += 1
        if sigma <= eps:
            break
    return passes, sigma
