# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled "same"-padded, stride-1 2-D cross-correlation kernels.

Every routine accumulates in a fixed loop order (input channel, then
kernel row, then kernel column), so results are bitwise reproducible for
a given build. 3x3 kernels take an unrolled path that produces four
output channels per sweep over the padded input.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef extern from *:
    ctypedef double* rptr "double * __restrict__"
    ctypedef const double* crptr "const double * __restrict__"


cdef void _corr_generic(const double* xp, Py_ssize_t C, Py_ssize_t Hp, Py_ssize_t Wp,
                        const double* w, Py_ssize_t o, Py_ssize_t K,
                        double* out, Py_ssize_t H, Py_ssize_t W) noexcept nogil:
    # out[y, x] = sum_{c,u,v} w[o, c, u, v] * xp[c, y + u, x + v]
    cdef Py_ssize_t c, u, v, yy, xx
    cdef double wv
    cdef const double* irow
    cdef double* orow
    for c in range(C):
        for u in range(K):
            for v in range(K):
                wv = w[((o * C + c) * K + u) * K + v]
                for yy in range(H):
                    orow = out + yy * W
                    irow = xp + (c * Hp + yy + u) * Wp + v
                    for xx in range(W):
                        orow[xx] += wv * irow[xx]


cdef void _corr3_block4(const double* xp, Py_ssize_t C, Py_ssize_t Hp, Py_ssize_t Wp,
                        const double* w, Py_ssize_t o,
                        double* out, Py_ssize_t H, Py_ssize_t W) noexcept nogil:
    # four consecutive output channels o..o+3, 3x3 kernel; weights are held
    # in locals so the compiler need not reload them after each store
    cdef Py_ssize_t c, yy, q, plane = H * W
    cdef const double* r0
    cdef const double* r1
    cdef const double* r2
    cdef double* o0
    cdef double* o1
    cdef double* o2
    cdef double* o3
    cdef double k[36]
    for c in range(C):
        for q in range(9):
            k[q] = w[(o * C + c) * 9 + q]
            k[9 + q] = w[((o + 1) * C + c) * 9 + q]
            k[18 + q] = w[((o + 2) * C + c) * 9 + q]
            k[27 + q] = w[((o + 3) * C + c) * 9 + q]
        for yy in range(H):
            r0 = xp + (c * Hp + yy) * Wp
            r1 = r0 + Wp
            r2 = r1 + Wp
            o0 = out + yy * W
            o1 = o0 + plane
            o2 = o1 + plane
            o3 = o2 + plane
            _row3x4(r0, r1, r2, k, o0, o1, o2, o3, W)


cdef inline void _row3x4(crptr r0, crptr r1, crptr r2, const double* kk,
                         rptr o0, rptr o1, rptr o2, rptr o3, Py_ssize_t W) noexcept nogil:
    cdef Py_ssize_t xx
    cdef double a, b, d, e, f, g, h, i, j
    cdef double p0 = kk[0], p1 = kk[1], p2 = kk[2], p3 = kk[3], p4 = kk[4], p5 = kk[5], p6 = kk[6], p7 = kk[7], p8 = kk[8]
    cdef double q0 = kk[9], q1 = kk[10], q2 = kk[11], q3 = kk[12], q4 = kk[13], q5 = kk[14], q6 = kk[15], q7 = kk[16], q8 = kk[17]
    cdef double s0 = kk[18], s1 = kk[19], s2 = kk[20], s3 = kk[21], s4 = kk[22], s5 = kk[23], s6 = kk[24], s7 = kk[25], s8 = kk[26]
    cdef double t0 = kk[27], t1 = kk[28], t2 = kk[29], t3 = kk[30], t4 = kk[31], t5 = kk[32], t6 = kk[33], t7 = kk[34], t8 = kk[35]
    for xx in range(W):
        a = r0[xx]
        b = r0[xx + 1]
        d = r0[xx + 2]
        e = r1[xx]
        f = r1[xx + 1]
        g = r1[xx + 2]
        h = r2[xx]
        i = r2[xx + 1]
        j = r2[xx + 2]
        o0[xx] += (p0 * a + p1 * b + p2 * d) + (p3 * e + p4 * f + p5 * g) + (p6 * h + p7 * i + p8 * j)
        o1[xx] += (q0 * a + q1 * b + q2 * d) + (q3 * e + q4 * f + q5 * g) + (q6 * h + q7 * i + q8 * j)
        o2[xx] += (s0 * a + s1 * b + s2 * d) + (s3 * e + s4 * f + s5 * g) + (s6 * h + s7 * i + s8 * j)
        o3[xx] += (t0 * a + t1 * b + t2 * d) + (t3 * e + t4 * f + t5 * g) + (t6 * h + t7 * i + t8 * j)


cdef void _corr3_single(const double* xp, Py_ssize_t C, Py_ssize_t Hp, Py_ssize_t Wp,
                        const double* w, Py_ssize_t o,
                        double* out, Py_ssize_t H, Py_ssize_t W) noexcept nogil:
    cdef Py_ssize_t c, yy, xx
    cdef const double* r0
    cdef const double* r1
    cdef const double* r2
    cdef const double* k0
    cdef double* o0
    cdef double p0, p1, p2, p3, p4, p5, p6, p7, p8
    for c in range(C):
        k0 = w + (o * C + c) * 9
        p0, p1, p2, p3, p4, p5, p6, p7, p8 = k0[0], k0[1], k0[2], k0[3], k0[4], k0[5], k0[6], k0[7], k0[8]
        for yy in range(H):
            r0 = xp + (c * Hp + yy) * Wp
            r1 = r0 + Wp
            r2 = r1 + Wp
            o0 = out + yy * W
            for xx in range(W):
                o0[xx] += (p0 * r0[xx] + p1 * r0[xx + 1] + p2 * r0[xx + 2]) + (p3 * r1[xx] + p4 * r1[xx + 1] + p5 * r1[xx + 2]) + (p6 * r2[xx] + p7 * r2[xx + 1] + p8 * r2[xx + 2])


cdef _correlate(cnp.ndarray xp_arr, cnp.ndarray w_arr, Py_ssize_t H, Py_ssize_t W):
    # xp: padded [N, C, H+2p, W+2p]; w: [O, C, K, K]
    cdef Py_ssize_t N = xp_arr.shape[0], C = xp_arr.shape[1]
    cdef Py_ssize_t Hp = xp_arr.shape[2], Wp = xp_arr.shape[3]
    cdef Py_ssize_t O = w_arr.shape[0], K = w_arr.shape[2]
    cdef Py_ssize_t n, o
    out_arr = np.zeros((N, O, H, W), dtype=np.float64)
    cdef double* xp = <double*> cnp.PyArray_DATA(xp_arr)
    cdef double* w = <double*> cnp.PyArray_DATA(w_arr)
    cdef double* out = <double*> cnp.PyArray_DATA(out_arr)
    with nogil:
        for n in range(N):
            o = 0
            if K == 3:
                while o + 4 <= O:
                    _corr3_block4(xp + n * C * Hp * Wp, C, Hp, Wp, w, o,
                                  out + (n * O + o) * H * W, H, W)
                    o += 4
                while o < O:
                    _corr3_single(xp + n * C * Hp * Wp, C, Hp, Wp, w, o,
                                  out + (n * O + o) * H * W, H, W)
                    o += 1
            else:
                while o < O:
                    _corr_generic(xp + n * C * Hp * Wp, C, Hp, Wp, w, o, K,
                                  out + (n * O + o) * H * W, H, W)
                    o += 1
    return out_arr


cdef inline void _mul_acc(rptr acc, crptr a, crptr b, Py_ssize_t W) noexcept nogil:
    cdef Py_ssize_t xx
    for xx in range(W):
        acc[xx] += a[xx] * b[xx]


cdef inline void _mul_acc3(double* acc, crptr a, crptr x, Py_ssize_t Wp, Py_ssize_t W) noexcept nogil:
    # acc rows t = 3u + v (each W long) += a * x[u, v:v+W], all nine taps in one sweep
    _mul_acc9(acc, acc + W, acc + 2 * W, acc + 3 * W, acc + 4 * W, acc + 5 * W,
              acc + 6 * W, acc + 7 * W, acc + 8 * W, a, x, x + Wp, x + 2 * Wp, W)


cdef inline void _mul_acc9(rptr c0, rptr c1, rptr c2, rptr c3, rptr c4, rptr c5, rptr c6, rptr c7, rptr c8,
                           crptr a, crptr r0, crptr r1, crptr r2, Py_ssize_t W) noexcept nogil:
    cdef Py_ssize_t xx
    cdef double av
    for xx in range(W):
        av = a[xx]
        c0[xx] += av * r0[xx]
        c1[xx] += av * r0[xx + 1]
        c2[xx] += av * r0[xx + 2]
        c3[xx] += av * r1[xx]
        c4[xx] += av * r1[xx + 1]
        c5[xx] += av * r1[xx + 2]
        c6[xx] += av * r2[xx]
        c7[xx] += av * r2[xx + 1]
        c8[xx] += av * r2[xx + 2]


def _pad(x, p):
    return np.ascontiguousarray(np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))))


def conv2d_forward(x, w):
    """out[n,o,y,x] = sum_{c,u,v} w[o,c,u,v] * x[n,c,y+u-p,x+v-p]"""
    p = w.shape[2] // 2
    return _correlate(_pad(x, p), np.ascontiguousarray(w), x.shape[2], x.shape[3])


def conv2d_grad_input(g, w):
    """Adjoint of conv2d_forward with respect to its input."""
    p = w.shape[2] // 2
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return _correlate(_pad(g, p), wt, g.shape[2], g.shape[3])


def conv2d_grad_weight(x, g, Py_ssize_t K):
    """Gradient of conv2d_forward with respect to the kernel [O, C, K, K]."""
    cdef Py_ssize_t p = K // 2
    xp_arr = _pad(x, p)
    g_arr = np.ascontiguousarray(g)
    cdef Py_ssize_t N = xp_arr.shape[0], C = xp_arr.shape[1]
    cdef Py_ssize_t Hp = xp_arr.shape[2], Wp = xp_arr.shape[3]
    cdef Py_ssize_t O = g_arr.shape[1], H = g_arr.shape[2], W = g_arr.shape[3]
    cdef Py_ssize_t n, o, c, u, v, yy, xx, t
    out_arr = np.zeros((O, C, K, K), dtype=np.float64)
    # per-(u, v) accumulators vectorised along the row, reduced once at the end
    acc_arr = np.zeros((K * K, W), dtype=np.float64)
    cdef double[:, :, :, ::1] xp = xp_arr
    cdef double[:, :, :, ::1] g_ = g_arr
    cdef double[:, :, :, ::1] gw = out_arr
    cdef double[:, ::1] acc = acc_arr
    cdef double* grow
    cdef double s
    with nogil:
        for o in range(O):
            for c in range(C):
                acc[:, :] = 0.0
                for n in range(N):
                    for yy in range(H):
                        grow = &g_[n, o, yy, 0]
                        if K == 3:
                            _mul_acc3(&acc[0, 0], grow, &xp[n, c, yy, 0], Wp, W)
                            continue
                        for u in range(K):
                            for v in range(K):
                                _mul_acc(&acc[u * K + v, 0], grow, &xp[n, c, yy + u, v], W)
                for t in range(K * K):
                    s = 0.0
                    for xx in range(W):
                        s += acc[t, xx]
                    gw[o, c, t // K, t % K] = s
    return out_arr
