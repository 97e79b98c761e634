# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same contract as ``_pykernels``."""


cdef inline double _clamp(double x, double lo, double hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def residuals_into(const double[:, :, ::1] A, const double[:, :, ::1] B,
                   const double[:, ::1] ext_y, const double[:, ::1] ext_u,
                   const double[:, ::1] dU, double[:, ::1] res_arx, double[:, ::1] res_du):
    cdef Py_ssize_t n_a = A.shape[0], n_y = A.shape[1]
    cdef Py_ssize_t n_b = B.shape[0], n_u = B.shape[2]
    cdef Py_ssize_t T = dU.shape[0]
    cdef Py_ssize_t k, i, r, c
    cdef double acc
    with nogil:
        for k in range(T):
            # t = k + 1; y_{t-i} at ext_y[n_a - 1 + t - i], u_{t-i} at ext_u[n_b + t - i]
            for r in range(n_y):
                acc = -ext_y[n_a + k, r]
                for i in range(1, n_a + 1):
                    for c in range(n_y):
                        acc = acc + A[i - 1, r, c] * ext_y[n_a + k - i, c]
                for i in range(1, n_b + 1):
                    for c in range(n_u):
                        acc = acc + B[i - 1, r, c] * ext_u[n_b + k + 1 - i, c]
                res_arx[k, r] = acc
            for c in range(n_u):
                res_du[k, c] = ext_u[n_b - 1 + k, c] + dU[k, c] - ext_u[n_b + k, c]


def coupled_sweeps(const double[:, :, ::1] A, const double[:, :, ::1] B,
                   const double[::1] wy, const double[::1] wdu, const double[:, ::1] refs,
                   const double[::1] y_lo, const double[::1] y_hi,
                   const double[::1] u_lo, const double[::1] u_hi,
                   const double[::1] du_lo, const double[::1] du_hi,
                   const double[:, ::1] inv_dy, const double[:, ::1] inv_du,
                   const double[::1] inv_ddu,
                   double[:, ::1] Y, double[:, ::1] U, double[:, ::1] dU,
                   double[:, ::1] lam, double[:, ::1] gam,
                   long max_passes, double eps):
    cdef Py_ssize_t n_a = A.shape[0], n_y = A.shape[1]
    cdef Py_ssize_t n_b = B.shape[0], n_u = B.shape[2]
    cdef Py_ssize_t T = Y.shape[0]
    cdef Py_ssize_t k, i, n, r, ja, jb
    cdef long passes = 0
    cdef double sigma = 0.0
    cdef double s, x, th, d
    with nogil:
        while passes < max_passes:
            sigma = 0.0
            for k in range(T):
                ja = n_a if n_a < T - 1 - k else T - 1 - k
                for i in range(n_y):
                    s = -lam[k, i]
                    for n in range(1, ja + 1):
                        for r in range(n_y):
                            s = s + A[n - 1, r, i] * lam[k + n, r]
                    x = Y[k, i]
                    th = _clamp(x - (wy[i] * (x - refs[k, i]) + s) * inv_dy[k, i], y_lo[i], y_hi[i])
                    d = th - x
                    if d != 0.0:
                        sigma = sigma + d * d
                        Y[k, i] = th
                        lam[k, i] = lam[k, i] - d
                        for n in range(1, ja + 1):
                            for r in range(n_y):
                                lam[k + n, r] = lam[k + n, r] + d * A[n - 1, r, i]
                jb = n_b if n_b < T - k else T - k
                for i in range(n_u):
                    s = -gam[k, i]
                    if k + 1 < T:
                        s = s + gam[k + 1, i]
                    for n in range(1, jb + 1):
                        for r in range(n_y):
                            s = s + B[n - 1, r, i] * lam[k + n - 1, r]
                    x = U[k, i]
                    th = _clamp(x - s * inv_du[k, i], u_lo[i], u_hi[i])
                    d = th - x
                    if d != 0.0:
                        sigma = sigma + d * d
                        U[k, i] = th
                        gam[k, i] = gam[k, i] - d
                        if k + 1 < T:
                            gam[k + 1, i] = gam[k + 1, i] + d
                        for n in range(1, jb + 1):
                            for r in range(n_y):
                                lam[k + n - 1, r] = lam[k + n - 1, r] + d * B[n - 1, r, i]
                for i in range(n_u):
                    x = dU[k, i]
                    th = _clamp(x - (wdu[i] * x + gam[k, i]) * inv_ddu[i], du_lo[i], du_hi[i])
                    d = th - x
                    if d != 0.0:
                        sigma = sigma + d * d
                        dU[k, i] = th
                        gam[k, i] = gam[k, i] + d
            passes += 1
            if sigma <= eps:
                break
    return passes, sigma
