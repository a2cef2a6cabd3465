"""Pure-Python slot loop. Reference for the compiled kernel in ``_kernels.pyx``.

Both implementations take the same arrays and must produce bit-identical
outputs: every floating-point expression below is mirrored operation for
operation in the Cython source.
"""
import numpy as np

PROPOSED, CSIO, CSIO_LF, PFS, MWQ = range(5)


def ffca_bits(q, eta, V, L):
    """Optimal feedback amount for backlogs ``q`` given in bits."""
    K = q.shape[0]
    order = np.argsort(-q, kind="stable")
    prefix = np.cumsum(q[order])

    def U(s):
        return float(prefix[s - 1]) / L * eta[s] - V * s

    if K == 1:
        return 1, order
    s_min, s_max = 1, K
    s = K // 2
    while s_max - s_min > 1:
        if s <= 1 or U(s) > U(s - 1):
            s_min = s
        else:
            s_max = s
        s = (s_min + s_max) // 2
    s_star = s_max if U(s_max) > U(s_min) else s_min
    return s_star, order


def run_block(kind, lr, bits, arr_bits, unif, q, p, pfs_avg, eta, V, L, T,
              slot0, tw_inv, eps_r, out_qmax, out_argmax, out_nfb, out_fbcost,
              out_sstar, out_served, out_q):
    """Advance the queues through one block of slots.

    ``lr`` and ``bits`` are ``(n, K, M)`` scheduling weights ``ln(1+gamma)``
    and deliverable bits per beam; ``arr_bits`` and ``unif`` are ``(n, K)``
    arrivals in bits and uniforms for the feedback coin flips. ``q``, ``p``
    and ``pfs_avg`` carry state across blocks and are updated in place.
    Returns the last feedback amount chosen by Stage I (0 if none).
    """
    n, K, M = lr.shape
    s_star = int(round(p.sum())) if kind == PROPOSED else 0
    beams = np.arange(M)
    for j in range(n):
        g = slot0 + j
        lr_j = lr[j]
        if kind == PROPOSED:
            if g % T == 0:
                s_star, order = ffca_bits(q, eta, V, L)
                p[:] = 0.0
                p[order[:s_star]] = 1.0
            fb = unif[j] < p
            out_fbcost[j] = p.sum()
        else:
            fb = (lr_j > 0.0).any(axis=1)
        nfb = int(fb.sum())
        if kind != PROPOSED:
            out_fbcost[j] = nfb
        cand = fb[:, None] & (lr_j > 0.0)
        if kind == PROPOSED or kind == MWQ:
            w = np.where(cand, q.astype(np.float64)[:, None] * lr_j, 0.0)
        elif kind == PFS:
            w = np.where(cand, bits[j].astype(np.float64) / pfs_avg[:, None], 0.0)
        else:
            w = np.where(cand, lr_j, 0.0)
        win = np.argmax(w, axis=0)
        ok = w[win, beams] > 0.0
        D = np.zeros(K, dtype=np.int64)
        for i in range(M):
            if ok[i]:
                D[win[i]] += bits[j, win[i], i]
        served = np.minimum(D, q)
        q -= served
        q += arr_bits[j]
        if kind == PFS:
            pfs_avg[:] = np.maximum((1.0 - tw_inv) * pfs_avg
                                    + tw_inv * D.astype(np.float64), eps_r)
        m = int(np.argmax(q))
        out_qmax[j] = q[m]
        out_argmax[j] = m
        out_nfb[j] = nfb
        out_sstar[j] = s_star
        out_served[j] = served
        out_q[j] = q
    return s_star
