# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled slot loop; mirrors ``_kernels_py.run_block`` operation for operation."""
from libc.stdint cimport int64_t, int32_t

DEF PROPOSED = 0
DEF CSIO = 1
DEF CSIO_LF = 2
DEF PFS = 3
DEF MWQ = 4


cdef inline double _u(int64_t[::1] prefix, double[::1] eta, double V,
                      int64_t L, Py_ssize_t s) noexcept nogil:
    return <double>prefix[s - 1] / <double>L * eta[s] - V * <double>s


cdef Py_ssize_t _ffca(int64_t[::1] q, double[::1] eta, double V, int64_t L,
                      Py_ssize_t[::1] order, int64_t[::1] prefix) noexcept nogil:
    cdef Py_ssize_t K = q.shape[0]
    cdef Py_ssize_t a, b, cur, s, s_min, s_max
    # stable insertion sort, longest queue first
    for a in range(K):
        cur = a
        b = a
        while b > 0 and q[order[b - 1]] < q[cur]:
            order[b] = order[b - 1]
            b -= 1
        order[b] = cur
    cdef int64_t acc = 0
    for a in range(K):
        acc += q[order[a]]
        prefix[a] = acc
    if K == 1:
        return 1
    s_min = 1
    s_max = K
    s = K // 2
    while s_max - s_min > 1:
        if s <= 1 or _u(prefix, eta, V, L, s) > _u(prefix, eta, V, L, s - 1):
            s_min = s
        else:
            s_max = s
        s = (s_min + s_max) // 2
    if _u(prefix, eta, V, L, s_max) > _u(prefix, eta, V, L, s_min):
        return s_max
    return s_min


def run_block(int kind, double[:, :, ::1] lr, int64_t[:, :, ::1] bits,
              int64_t[:, ::1] arr_bits, double[:, ::1] unif, int64_t[::1] q,
              double[::1] p, double[::1] pfs_avg, double[::1] eta, double V,
              int64_t L, int64_t T, int64_t slot0, double tw_inv, double eps_r,
              int64_t[::1] out_qmax, int32_t[::1] out_argmax, int32_t[::1] out_nfb,
              double[::1] out_fbcost, int32_t[::1] out_sstar,
              int64_t[:, ::1] out_served, int64_t[:, ::1] out_q):
    cdef Py_ssize_t n = lr.shape[0]
    cdef Py_ssize_t K = lr.shape[1]
    cdef Py_ssize_t M = lr.shape[2]
    cdef Py_ssize_t j, k, i, best, m
    cdef int64_t g, srv, qm
    cdef double w, bw, psum
    cdef int nfb, any_pos
    cdef Py_ssize_t s_star = 0

    import numpy as np
    order_arr = np.empty(K, dtype=np.intp)
    prefix_arr = np.empty(K, dtype=np.int64)
    fb_arr = np.empty(K, dtype=np.int8)
    D_arr = np.empty(K, dtype=np.int64)
    cdef Py_ssize_t[::1] order = order_arr
    cdef int64_t[::1] prefix = prefix_arr
    cdef signed char[::1] fb = fb_arr
    cdef int64_t[::1] D = D_arr

    if kind == PROPOSED:
        psum = 0.0
        for k in range(K):
            psum += p[k]
        s_star = <Py_ssize_t>(psum + 0.5)

    with nogil:
        for j in range(n):
            g = slot0 + j
            if kind == PROPOSED:
                if g % T == 0:
                    s_star = _ffca(q, eta, V, L, order, prefix)
                    for k in range(K):
                        p[k] = 0.0
                    for k in range(s_star):
                        p[order[k]] = 1.0
                psum = 0.0
                for k in range(K):
                    fb[k] = unif[j, k] < p[k]
                    psum += p[k]
                out_fbcost[j] = psum
            else:
                for k in range(K):
                    any_pos = 0
                    for i in range(M):
                        if lr[j, k, i] > 0.0:
                            any_pos = 1
                    fb[k] = any_pos
            nfb = 0
            for k in range(K):
                nfb += fb[k]
                D[k] = 0
            if kind != PROPOSED:
                out_fbcost[j] = nfb
            for i in range(M):
                best = -1
                bw = 0.0
                for k in range(K):
                    if not fb[k] or not (lr[j, k, i] > 0.0):
                        continue
                    if kind == PROPOSED or kind == MWQ:
                        w = <double>q[k] * lr[j, k, i]
                    elif kind == PFS:
                        w = <double>bits[j, k, i] / pfs_avg[k]
                    else:
                        w = lr[j, k, i]
                    if w > bw:
                        bw = w
                        best = k
                if best >= 0:
                    D[best] += bits[j, best, i]
            for k in range(K):
                srv = D[k] if D[k] < q[k] else q[k]
                q[k] = q[k] - srv + arr_bits[j, k]
                out_served[j, k] = srv
                out_q[j, k] = q[k]
            if kind == PFS:
                for k in range(K):
                    w = (1.0 - tw_inv) * pfs_avg[k] + tw_inv * <double>D[k]
                    pfs_avg[k] = w if w > eps_r else eps_r
            m = 0
            qm = q[0]
            for k in range(1, K):
                if q[k] > qm:
                    qm = q[k]
                    m = k
            out_qmax[j] = qm
            out_argmax[j] = <int32_t>m
            out_nfb[j] = nfb
            out_sstar[j] = <int32_t>s_star
    return s_star
