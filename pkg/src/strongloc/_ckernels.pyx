# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels mirroring ``_kernels_py``; one fused pass per point."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs
from libc.stdlib cimport free, malloc

cnp.import_array()

BACKEND = "cython"


cdef inline double _sig(double t) nogil:
    cdef double e
    if t >= 0:
        return 1.0 / (1.0 + exp(-t))
    e = exp(t)
    return e / (1.0 + e)


def mlp_elastic(theta, widths, X, w, double lam, double mu):
    """Plane-strain elastic energy of the perceptron field and its gradient."""
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.intp_t[::1] wd = np.ascontiguousarray(widths, dtype=np.intp)
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] wq = np.ascontiguousarray(w, dtype=np.float64)
    grad_arr = np.zeros(th.shape[0])
    cdef double[::1] g = grad_arr
    cdef Py_ssize_t nl = wd.shape[0] - 1
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t maxw = 0, l, i, k, d, o, p
    for l in range(nl + 1):
        if wd[l] > maxw:
            maxw = wd[l]
    if wd[0] != 2 or wd[nl] != 2:
        raise ValueError("perceptron must map R^2 to R^2")

    # offsets of W_l and b_l inside theta
    cdef Py_ssize_t *woff = <Py_ssize_t *> malloc(nl * sizeof(Py_ssize_t))
    cdef Py_ssize_t *boff = <Py_ssize_t *> malloc(nl * sizeof(Py_ssize_t))
    # per-layer tangent inputs T_l[d][k] and masks
    cdef double *T = <double *> malloc((nl + 1) * 2 * maxw * sizeof(double))
    cdef double *A = <double *> malloc(2 * maxw * sizeof(double))
    cdef char *M = <char *> malloc(nl * maxw * sizeof(char))
    cdef double *Gb = <double *> malloc(2 * maxw * sizeof(double))
    cdef double *Gn = <double *> malloc(2 * maxw * sizeof(double))
    cdef double energy = 0.0
    cdef double z, acc, acc0, acc1, e11, e22, e12, tr, ww
    cdef double *a_in
    cdef double *a_out
    cdef double *tmp
    cdef Py_ssize_t fin, fout, off
    if not (woff and boff and T and A and M and Gb and Gn):
        free(woff); free(boff); free(T); free(A); free(M); free(Gb); free(Gn)
        raise MemoryError()
    off = 0
    for l in range(nl):
        woff[l] = off
        off += wd[l + 1] * wd[l]
        boff[l] = off
        off += wd[l + 1]
    if off != th.shape[0]:
        free(woff); free(boff); free(T); free(A); free(M); free(Gb); free(Gn)
        raise ValueError("theta length does not match widths")

    cdef double *tp = &th[0]
    cdef double *gp = &g[0]
    try:
        with nogil:
            for p in range(n):
                # forward: values in A[0:maxw] / A[maxw:2maxw], tangents in T
                a_in = A
                a_out = A + maxw
                a_in[0] = x[p, 0]
                a_in[1] = x[p, 1]
                T[0] = 1.0
                T[1] = 0.0
                T[maxw] = 0.0
                T[maxw + 1] = 1.0
                for l in range(nl - 1):
                    fin = wd[l]
                    fout = wd[l + 1]
                    for i in range(fout):
                        z = tp[boff[l] + i]
                        acc0 = 0.0
                        acc1 = 0.0
                        for k in range(fin):
                            z += tp[woff[l] + i * fin + k] * a_in[k]
                            acc0 += tp[woff[l] + i * fin + k] * T[(l * 2) * maxw + k]
                            acc1 += tp[woff[l] + i * fin + k] * T[(l * 2 + 1) * maxw + k]
                        if z > 0.0:
                            M[l * maxw + i] = 1
                            a_out[i] = z
                            T[((l + 1) * 2) * maxw + i] = acc0
                            T[((l + 1) * 2 + 1) * maxw + i] = acc1
                        else:
                            M[l * maxw + i] = 0
                            a_out[i] = 0.0
                            T[((l + 1) * 2) * maxw + i] = 0.0
                            T[((l + 1) * 2 + 1) * maxw + i] = 0.0
                    tmp = a_in
                    a_in = a_out
                    a_out = tmp
                # output Jacobian J[d][o]
                l = nl - 1
                fin = wd[l]
                for d in range(2):
                    for o in range(2):
                        acc = 0.0
                        for k in range(fin):
                            acc += tp[woff[l] + o * fin + k] * T[(l * 2 + d) * maxw + k]
                        Gn[d * 2 + o] = acc
                e11 = Gn[0]
                e22 = Gn[3]
                e12 = 0.5 * (Gn[2] + Gn[1])
                tr = e11 + e22
                ww = wq[p]
                energy += ww * (0.5 * lam * tr * tr + mu * (e11 * e11 + e22 * e22 + 2.0 * e12 * e12))
                Gb[0] = ww * (lam * tr + 2.0 * mu * e11)
                Gb[3] = ww * (lam * tr + 2.0 * mu * e22)
                Gb[1] = ww * 2.0 * mu * e12
                Gb[2] = Gb[1]
                # output layer weights and tangent adjoints
                for o in range(2):
                    for k in range(fin):
                        gp[woff[l] + o * fin + k] += Gb[o] * T[(l * 2) * maxw + k] + Gb[2 + o] * T[(l * 2 + 1) * maxw + k]
                for d in range(2):
                    for k in range(fin):
                        Gn[d * maxw + k] = tp[woff[l] + k] * Gb[d * 2] + tp[woff[l] + fin + k] * Gb[d * 2 + 1]
                # hidden layers, last to first
                for l in range(nl - 2, -1, -1):
                    fin = wd[l]
                    fout = wd[l + 1]
                    for i in range(fout):
                        if not M[l * maxw + i]:
                            Gn[i] = 0.0
                            Gn[maxw + i] = 0.0
                    for i in range(fout):
                        acc0 = Gn[i]
                        acc1 = Gn[maxw + i]
                        if acc0 == 0.0 and acc1 == 0.0:
                            continue
                        for k in range(fin):
                            gp[woff[l] + i * fin + k] += acc0 * T[(l * 2) * maxw + k] + acc1 * T[(l * 2 + 1) * maxw + k]
                    if l > 0:
                        for d in range(2):
                            for k in range(fin):
                                acc = 0.0
                                for i in range(fout):
                                    acc += tp[woff[l] + i * fin + k] * Gn[d * maxw + i]
                                Gb[d * maxw + k] = acc
                        tmp = Gb
                        Gb = Gn
                        Gn = tmp
    finally:
        free(woff); free(boff); free(T); free(A); free(M); free(Gb); free(Gn)
    return energy, grad_arr


def band_dissipation(X, w, sigma_p, normal, tangent, double y_p, double c, double beta,
                     double gamma, double H, double p_scale):
    """Band dissipation and its gradients; see the numpy twin for the contract."""
    cdef double[:, ::1] x = np.ascontiguousarray(np.asarray(X, dtype=np.float64).reshape(len(X), -1))
    cdef double[::1] wq = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] sp = np.ascontiguousarray(sigma_p, dtype=np.float64)
    cdef double[::1] nv = np.ascontiguousarray(normal, dtype=np.float64)
    cdef double[::1] tv = np.ascontiguousarray(tangent, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1], p, d
    cdef double quad = 0.0, lin = 0.0, s_yp = 0.0, s_al = 0.0, s_ga = 0.0
    cdef double y, xt, z, s1, s2, dphi, d2phi, pp, dedp, dz
    cdef double gabs = p_scale * fabs(gamma) / c
    cdef double sgn = 1.0 if gamma > 0 else (-1.0 if gamma < 0 else 0.0)
    with nogil:
        for p in range(n):
            y = 0.0
            xt = 0.0
            for d in range(dim):
                y += x[p, d] * nv[d]
                if dim > 1:
                    xt += x[p, d] * tv[d]
            z = (y - y_p) / c
            s1 = _sig(beta * (z + 0.5))
            s2 = _sig(beta * (z - 0.5))
            dphi = s1 - s2
            d2phi = beta * (s1 * (1.0 - s1) - s2 * (1.0 - s2))
            pp = gabs * dphi
            quad += wq[p] * 0.5 * H * pp * pp
            lin += wq[p] * sp[p] * pp
            dedp = wq[p] * (H * pp + sp[p])
            dz = dedp * gabs * d2phi
            s_yp += dz
            s_al += dz * xt
            s_ga += dedp * dphi
    return quad, lin, -s_yp / c, (s_al / c if dim > 1 else 0.0), s_ga * p_scale * sgn / c
