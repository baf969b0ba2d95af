# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: KD-tree queries and per-sample KCN forward/backward.

Mirrors ``_pykernels``; see ``nn_core`` for the reference maths.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, log1p, lgamma, pow, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

NAME = "cython"

ctypedef cnp.int64_t i64

cdef double SAGE_NORM_EPS = 1e-12


# ---------------------------------------------------------------- KD-tree

cdef inline void _insert(double* bd, i64* bi, int* count, int k, double d2, i64 idx) noexcept nogil:
    cdef int j
    if count[0] < k:
        j = count[0]
        count[0] += 1
    elif d2 < bd[k - 1] or (d2 == bd[k - 1] and idx < bi[k - 1]):
        j = k - 1
    else:
        return
    while j > 0 and (d2 < bd[j - 1] or (d2 == bd[j - 1] and idx < bi[j - 1])):
        bd[j] = bd[j - 1]
        bi[j] = bi[j - 1]
        j -= 1
    bd[j] = d2
    bi[j] = idx


cdef void _knn(const double[:, ::1] pts, const i64[::1] perm, const i64[::1] dim,
               const double[::1] split, const i64[::1] left, const i64[::1] right,
               const i64[::1] start, const i64[::1] end, double qx, double qy, int k,
               i64 exclude, double* bd, i64* bi, i64* stack_node, double* stack_bound) noexcept nogil:
    cdef int count = 0
    cdef int top = 0
    cdef i64 node, near, far, j, p
    cdef double bound, diff, dx, dy, q
    stack_node[0] = 0
    stack_bound[0] = 0.0
    top = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        bound = stack_bound[top]
        if count == k and bound > bd[k - 1]:
            continue
        if dim[node] < 0:
            for j in range(start[node], end[node]):
                p = perm[j]
                if p == exclude:
                    continue
                dx = qx - pts[p, 0]
                dy = qy - pts[p, 1]
                _insert(bd, bi, &count, k, dx * dx + dy * dy, p)
            continue
        q = qx if dim[node] == 0 else qy
        diff = q - split[node]
        if diff < 0.0:
            near = left[node]
            far = right[node]
        else:
            near = right[node]
            far = left[node]
        stack_node[top] = far
        stack_bound[top] = diff * diff
        stack_node[top + 1] = near
        stack_bound[top + 1] = bound
        top += 2


def knn_query(const double[:, ::1] points, const i64[::1] perm, const i64[::1] dim,
              const double[::1] split, const i64[::1] left, const i64[::1] right,
              const i64[::1] start, const i64[::1] end, double qx, double qy, int k, i64 exclude):
    idx = np.empty(k, dtype=np.int64)
    d2 = np.empty(k, dtype=np.float64)
    cdef i64[::1] iv = idx
    cdef double[::1] dv = d2
    cdef Py_ssize_t cap = dim.shape[0] + 2
    cdef i64* sn = <i64*> malloc(cap * sizeof(i64))
    cdef double* sb = <double*> malloc(cap * sizeof(double))
    if sn == NULL or sb == NULL:
        free(sn)
        free(sb)
        raise MemoryError()
    with nogil:
        _knn(points, perm, dim, split, left, right, start, end, qx, qy, k, exclude,
             &dv[0], &iv[0], sn, sb)
    free(sn)
    free(sb)
    return idx, d2


def knn_query_many(const double[:, ::1] points, const i64[::1] perm, const i64[::1] dim,
                   const double[::1] split, const i64[::1] left, const i64[::1] right,
                   const i64[::1] start, const i64[::1] end, const double[:, ::1] queries,
                   int k, const i64[::1] excludes):
    cdef Py_ssize_t m = queries.shape[0], i
    idx = np.empty((m, k), dtype=np.int64)
    d2 = np.empty((m, k), dtype=np.float64)
    cdef i64[:, ::1] iv = idx
    cdef double[:, ::1] dv = d2
    cdef Py_ssize_t cap = dim.shape[0] + 2
    cdef i64* sn = <i64*> malloc(cap * sizeof(i64))
    cdef double* sb = <double*> malloc(cap * sizeof(double))
    if sn == NULL or sb == NULL:
        free(sn)
        free(sb)
        raise MemoryError()
    with nogil:
        for i in range(m):
            _knn(points, perm, dim, split, left, right, start, end, queries[i, 0], queries[i, 1],
                 k, excludes[i], &dv[i, 0], &iv[i, 0], sn, sb)
    free(sn)
    free(sb)
    return idx, d2


# ---------------------------------------------------------------- dense helpers (row-major)

cdef inline void mm(const double* A, const double* B, double* C, int m, int k, int n, bint acc) noexcept nogil:
    """C (+)= A(m x k) @ B(k x n)."""
    cdef int i, l, j
    cdef double a
    if not acc:
        for i in range(m * n):
            C[i] = 0.0
    for i in range(m):
        for l in range(k):
            a = A[i * k + l]
            for j in range(n):
                C[i * n + j] += a * B[l * n + j]


cdef inline void mm_tn(const double* A, const double* B, double* C, int k, int m, int n, bint acc) noexcept nogil:
    """C (+)= A^T @ B with A (k x m), B (k x n)."""
    cdef int i, l, j
    cdef double a
    if not acc:
        for i in range(m * n):
            C[i] = 0.0
    for l in range(k):
        for i in range(m):
            a = A[l * m + i]
            for j in range(n):
                C[i * n + j] += a * B[l * n + j]


cdef inline void mm_nt(const double* A, const double* B, double* C, int m, int k, int n, bint acc) noexcept nogil:
    """C (+)= A(m x k) @ B(n x k)^T."""
    cdef int i, l, j
    cdef double s
    for i in range(m):
        for j in range(n):
            s = 0.0
            for l in range(k):
                s += A[i * k + l] * B[j * k + l]
            if acc:
                C[i * n + j] += s
            else:
                C[i * n + j] = s


cdef inline double softplus(double x) noexcept nogil:
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double expit(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double logaddexp(double a, double b) noexcept nogil:
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


# workspace fields, one block each per layer
cdef enum:
    F_HIN = 0
    F_AH = 1
    F_Z = 2
    F_HOUT = 3
    F_P = 4
    F_S = 5
    F_M = 6
    F_R = 7
    F_AATT = 8
    F_U = 9
    F_QPRE = 10
    F_Q = 11
    F_G = 12
    F_NORM = 13
    F_DH = 14
    F_DZ = 15
    F_DAH = 16
    F_DHIN = 17
    F_DA = 18
    F_DM = 19
    F_DP = 20
    F_DG = 21
    F_DQ = 22
    NFIELDS = 23

cdef enum:
    B_GCN = 0
    B_ATT = 1
    B_SAGE = 2


cdef class NetKernel:
    """Per-sample forward/backward of a KCN network over a flat ``theta``."""

    cdef public object layout
    cdef public str backbone
    cdef public str loss
    cdef int bb
    cdef int is_zip
    cdef int L
    cdef int out_dim
    cdef int n
    cdef Py_ssize_t stride
    cdef int* dims
    cdef i64* offs
    cdef i64 dense_off
    cdef double* ws
    cdef i64* argbuf
    cdef double[4] head

    def __cinit__(self):
        self.dims = NULL
        self.offs = NULL
        self.ws = NULL
        self.argbuf = NULL
        self.n = 0

    def __init__(self, backbone, dims, out_dim, loss):
        from ._layout import Layout, BACKBONES
        self.layout = Layout(backbone, dims, out_dim)
        self.backbone = backbone
        self.loss = loss
        self.bb = BACKBONES[backbone]
        self.is_zip = 1 if loss == "zip" else 0
        self.L = self.layout.n_layers
        self.out_dim = int(out_dim)
        if self.out_dim > 4:
            raise ValueError("head width above 4 is not supported")
        self.dims = <int*> malloc((self.L + 1) * sizeof(int))
        self.offs = <i64*> malloc(self.L * 4 * sizeof(i64))
        if self.dims == NULL or self.offs == NULL:
            raise MemoryError()
        cdef int i, j
        for i in range(self.L + 1):
            self.dims[i] = self.layout.dims[i]
        for i in range(self.L):
            for j in range(4):
                self.offs[i * 4 + j] = self.layout.offsets[i, j]
        self.dense_off = self.layout.dense_offset

    def __dealloc__(self):
        free(self.dims)
        free(self.offs)
        free(self.ws)
        free(self.argbuf)

    def __reduce__(self):
        return (NetKernel, (self.backbone, self.layout.dims, self.out_dim, self.loss))

    cdef int _ensure(self, int n) except -1:
        cdef int i, dmax = 1
        if n == self.n:
            return 0
        if self.bb == B_SAGE and n < 2:
            raise ValueError("sage backbone needs at least two nodes")
        for i in range(self.L + 1):
            if self.dims[i] > dmax:
                dmax = self.dims[i]
        free(self.ws)
        free(self.argbuf)
        self.ws = NULL
        self.argbuf = NULL
        self.stride = n * (dmax if dmax > n else n)
        self.ws = <double*> malloc(self.L * NFIELDS * self.stride * sizeof(double))
        self.argbuf = <i64*> malloc(self.L * n * dmax * sizeof(i64))
        if self.ws == NULL or self.argbuf == NULL:
            self.n = 0
            raise MemoryError()
        self.n = n
        return 0

    cdef inline double* f(self, int layer, int field) noexcept nogil:
        return self.ws + (layer * NFIELDS + field) * self.stride

    cdef void _forward(self, const double* theta, const double* A, const double* H0,
                       const double* mask) noexcept nogil:
        cdef int n = self.n
        cdef int layer, i, j, c, a, b
        cdef const double* hprev = H0
        cdef double *hin
        cdef double *ah
        cdef double *z
        cdef double *hout
        cdef double *p
        cdef double *s
        cdef double *m
        cdef double *r
        cdef double *aatt
        cdef double *u
        cdef double *qpre
        cdef double *q
        cdef double *g
        cdef double *nrm
        cdef const double* W
        cdef const double* aeff
        cdef i64* arg
        cdef const double* mk = mask
        cdef double v, best, second, safe
        cdef int i1, i2
        for layer in range(self.L):
            a = self.dims[layer]
            b = self.dims[layer + 1]
            hin = self.f(layer, F_HIN)
            if mk != NULL:
                for i in range(n * a):
                    hin[i] = hprev[i] * mk[i]
                mk += n * a
            else:
                for i in range(n * a):
                    hin[i] = hprev[i]
            z = self.f(layer, F_Z)
            hout = self.f(layer, F_HOUT)
            if self.bb == B_GCN or self.bb == B_ATT:
                aeff = A
                if self.bb == B_ATT:
                    p = self.f(layer, F_P)
                    s = self.f(layer, F_S)
                    m = self.f(layer, F_M)
                    r = self.f(layer, F_R)
                    u = self.f(layer, F_U)
                    aatt = self.f(layer, F_AATT)
                    mm(hin, theta + self.offs[layer * 4 + 1], p, n, a, b, 0)
                    mm_nt(p, p, s, n, b, n, 0)
                    for i in range(n * n):
                        m[i] = softplus(s[i])
                    for i in range(n):
                        r[i] = 1.0 / sqrt(m[i * n + i])
                    for i in range(n):
                        for j in range(n):
                            if i == j:
                                u[i * n + j] = 1.0
                            else:
                                u[i * n + j] = m[i * n + j] * r[i] * r[j]
                            aatt[i * n + j] = A[i * n + j] * u[i * n + j]
                    aeff = aatt
                ah = self.f(layer, F_AH)
                W = theta + self.offs[layer * 4]
                mm(aeff, hin, ah, n, n, a, 0)
                mm(ah, W, z, n, a, b, 0)
                for i in range(n * b):
                    hout[i] = z[i] if z[i] > 0.0 else 0.0
            else:
                qpre = self.f(layer, F_QPRE)
                q = self.f(layer, F_Q)
                g = self.f(layer, F_G)
                nrm = self.f(layer, F_NORM)
                arg = self.argbuf + layer * n * self.dims_max()
                mm(hin, theta + self.offs[layer * 4 + 2], qpre, n, a, a, 0)
                for i in range(n):
                    for c in range(a):
                        qpre[i * a + c] += theta[self.offs[layer * 4 + 3] + c]
                for i in range(n * a):
                    q[i] = qpre[i] if qpre[i] > 0.0 else 0.0
                for c in range(a):
                    i1 = 0
                    best = q[c]
                    for i in range(1, n):
                        if q[i * a + c] > best:
                            best = q[i * a + c]
                            i1 = i
                    i2 = -1
                    for i in range(n):
                        if i == i1:
                            continue
                        if i2 < 0 or q[i * a + c] > second:
                            second = q[i * a + c]
                            i2 = i
                    for j in range(n):
                        if j == i1:
                            arg[j * a + c] = i2
                        else:
                            arg[j * a + c] = i1
                        g[j * a + c] = q[arg[j * a + c] * a + c]
                mm(hin, theta + self.offs[layer * 4], z, n, a, b, 0)
                mm(g, theta + self.offs[layer * 4 + 1], z, n, a, b, 1)
                for i in range(n):
                    v = 0.0
                    for c in range(b):
                        if z[i * b + c] > 0.0:
                            v += z[i * b + c] * z[i * b + c]
                    v = sqrt(v)
                    nrm[i] = v
                    safe = v if v > SAGE_NORM_EPS else SAGE_NORM_EPS
                    for c in range(b):
                        hout[i * b + c] = (z[i * b + c] if z[i * b + c] > 0.0 else 0.0) / safe
            hprev = hout
        # dense head on row 0
        b = self.dims[self.L]
        W = theta + self.dense_off
        for j in range(self.out_dim):
            v = 0.0
            for c in range(b):
                v += hprev[c] * W[c * self.out_dim + j]
            self.head[j] = v

    cdef inline int dims_max(self) noexcept nogil:
        cdef int i, d = 1
        for i in range(self.L + 1):
            if self.dims[i] > d:
                d = self.dims[i]
        return d

    cdef double _loss(self, double target, double* dout) noexcept nogil:
        cdef double diff, u, lr, log_pi, log_1mpi, rate, pi, e, p0, nll
        if not self.is_zip:
            diff = self.head[0] - target
            dout[0] = 2.0 * diff
            return diff * diff
        u = self.head[0]
        lr = self.head[1]
        log_pi = -softplus(-u)
        log_1mpi = -softplus(u)
        rate = exp(lr)
        pi = expit(u)
        if target == 0.0:
            nll = -logaddexp(log_1mpi, log_pi - rate)
            e = exp(-rate)
            p0 = (1.0 - pi) + pi * e
            dout[0] = -pi * (1.0 - pi) * (e - 1.0) / p0
            dout[1] = pi * rate * e / p0
        else:
            nll = -(log_pi + target * lr - rate - lgamma(target + 1.0))
            dout[0] = pi - 1.0
            dout[1] = rate - target
        return nll

    cdef void _backward(self, const double* theta, double* grad, const double* A,
                        const double* H0, const double* mask, const double* dout) noexcept nogil:
        cdef int n = self.n
        cdef int layer, i, j, c, a, b, o
        cdef int dmx = self.dims_max()
        cdef double *dh
        cdef double *dz
        cdef double *dah
        cdef double *dhin
        cdef double *da
        cdef double *dm
        cdef double *dp
        cdef double *dg
        cdef double *dq
        cdef double *hin
        cdef double *z
        cdef double *hout
        cdef double *p
        cdef double *s
        cdef double *m
        cdef double *r
        cdef double *u
        cdef double *g
        cdef double *nrm
        cdef double *qpre
        cdef const double* aeff
        cdef const double* W
        cdef i64* arg
        cdef double v, proj, safe, t
        cdef const double* mk
        # dense head
        b = self.dims[self.L]
        hout = self.f(self.L - 1, F_HOUT)
        dh = self.f(self.L - 1, F_DH)
        W = theta + self.dense_off
        for i in range(n * b):
            dh[i] = 0.0
        for c in range(b):
            v = 0.0
            for o in range(self.out_dim):
                grad[self.dense_off + c * self.out_dim + o] += hout[c] * dout[o]
                v += W[c * self.out_dim + o] * dout[o]
            dh[c] = v
        for layer in range(self.L - 1, -1, -1):
            a = self.dims[layer]
            b = self.dims[layer + 1]
            hin = self.f(layer, F_HIN)
            z = self.f(layer, F_Z)
            hout = self.f(layer, F_HOUT)
            dh = self.f(layer, F_DH)
            dz = self.f(layer, F_DZ)
            dhin = self.f(layer, F_DHIN)
            if self.bb == B_GCN or self.bb == B_ATT:
                W = theta + self.offs[layer * 4]
                dah = self.f(layer, F_DAH)
                for i in range(n * b):
                    dz[i] = dh[i] if z[i] > 0.0 else 0.0
                mm_tn(self.f(layer, F_AH), dz, grad + self.offs[layer * 4], n, a, b, 1)
                if layer == 0 and self.bb == B_GCN:
                    continue
                mm_nt(dz, W, dah, n, b, a, 0)
                aeff = A if self.bb == B_GCN else self.f(layer, F_AATT)
                mm_tn(aeff, dah, dhin, n, n, a, 0)
                if self.bb == B_ATT:
                    p = self.f(layer, F_P)
                    s = self.f(layer, F_S)
                    m = self.f(layer, F_M)
                    r = self.f(layer, F_R)
                    u = self.f(layer, F_U)
                    da = self.f(layer, F_DA)
                    dm = self.f(layer, F_DM)
                    dp = self.f(layer, F_DP)
                    # da <- d(A_att) = dah @ hin^T, then du = da * A
                    mm_nt(dah, hin, da, n, a, n, 0)
                    for i in range(n * n):
                        da[i] = da[i] * A[i]
                    # dm = du * r_i r_j ; dr via du * m
                    for i in range(n):
                        v = 0.0
                        for j in range(n):
                            dm[i * n + j] = da[i * n + j] * r[i] * r[j]
                            v += da[i * n + j] * m[i * n + j] * r[j] + da[j * n + i] * m[j * n + i] * r[j]
                        dz[i] = v          # reuse dz as dr storage (dz no longer needed)
                    for i in range(n):
                        dm[i * n + i] += dz[i] * (-0.5) * r[i] * r[i] * r[i]
                    for i in range(n * n):
                        dm[i] = dm[i] * expit(s[i])
                    # ds + ds^T, stored into da
                    for i in range(n):
                        for j in range(n):
                            da[i * n + j] = dm[i * n + j] + dm[j * n + i]
                    mm(da, p, dp, n, n, b, 0)
                    mm_tn(hin, dp, grad + self.offs[layer * 4 + 1], n, a, b, 1)
                    if layer > 0:
                        mm_nt(dp, theta + self.offs[layer * 4 + 1], dhin, n, b, a, 1)
            else:
                g = self.f(layer, F_G)
                nrm = self.f(layer, F_NORM)
                qpre = self.f(layer, F_QPRE)
                dg = self.f(layer, F_DG)
                dq = self.f(layer, F_DQ)
                arg = self.argbuf + layer * n * dmx
                for i in range(n):
                    safe = nrm[i] if nrm[i] > SAGE_NORM_EPS else SAGE_NORM_EPS
                    if nrm[i] > SAGE_NORM_EPS:
                        proj = 0.0
                        for c in range(b):
                            proj += hout[i * b + c] * dh[i * b + c]
                        for c in range(b):
                            t = (dh[i * b + c] - hout[i * b + c] * proj) / safe
                            dz[i * b + c] = t if z[i * b + c] > 0.0 else 0.0
                    else:
                        for c in range(b):
                            t = dh[i * b + c] / safe
                            dz[i * b + c] = t if z[i * b + c] > 0.0 else 0.0
                mm_tn(hin, dz, grad + self.offs[layer * 4], n, a, b, 1)
                mm_tn(g, dz, grad + self.offs[layer * 4 + 1], n, a, b, 1)
                mm_nt(dz, theta + self.offs[layer * 4 + 1], dg, n, b, a, 0)
                for i in range(n * a):
                    dq[i] = 0.0
                for j in range(n):
                    for c in range(a):
                        dq[arg[j * a + c] * a + c] += dg[j * a + c]
                for i in range(n * a):
                    if not qpre[i] > 0.0:
                        dq[i] = 0.0
                mm_tn(hin, dq, grad + self.offs[layer * 4 + 2], n, a, a, 1)
                for i in range(n):
                    for c in range(a):
                        grad[self.offs[layer * 4 + 3] + c] += dq[i * a + c]
                if layer > 0:
                    mm_nt(dz, theta + self.offs[layer * 4], dhin, n, b, a, 0)
                    mm_nt(dq, theta + self.offs[layer * 4 + 2], dhin, n, a, a, 1)
            if layer > 0:
                dh = self.f(layer - 1, F_DH)
                if mask != NULL:
                    mk = mask
                    for i in range(layer):
                        mk += n * self.dims[i]
                    for i in range(n * a):
                        dh[i] = dhin[i] * mk[i]
                else:
                    for i in range(n * a):
                        dh[i] = dhin[i]

    cdef double _sample(self, const double* theta, double* grad, const double* A,
                        const double* H0, double target, const double* mask) noexcept nogil:
        cdef double dout[4]
        cdef double loss
        cdef Py_ssize_t i
        self._forward(theta, A, H0, mask)
        loss = self._loss(target, dout)
        self._backward(theta, grad, A, H0, mask, dout)
        return loss

    def _check(self, theta, A, H0):
        if theta.shape[0] != self.layout.size:
            raise ValueError("theta has the wrong length")
        if A.shape[0] != A.shape[1] or H0.shape[0] != A.shape[0] or H0.shape[1] != self.dims[0]:
            raise ValueError("graph shapes do not match the network")

    def forward(self, double[::1] theta, double[:, ::1] A, double[:, ::1] H0):
        self._check(theta, A, H0)
        self._ensure(A.shape[0])
        self._forward(&theta[0], &A[0, 0], &H0[0, 0], NULL)
        out = np.empty(self.out_dim)
        cdef int j
        for j in range(self.out_dim):
            out[j] = self.head[j]
        if not np.all(np.isfinite(out)):
            from .errors import NumericalError
            raise NumericalError("non-finite network output")
        return out

    def loss_grad(self, double[::1] theta, double[::1] grad, double[:, ::1] A,
                  double[:, ::1] H0, double target, mask=None):
        self._check(theta, A, H0)
        self._ensure(A.shape[0])
        cdef double[::1] mv
        cdef const double* mp = NULL
        if mask is not None:
            mv = np.ascontiguousarray(mask, dtype=np.float64)
            mp = &mv[0]
        cdef Py_ssize_t i
        for i in range(grad.shape[0]):
            grad[i] = 0.0
        return self._sample(&theta[0], &grad[0], &A[0, 0], &H0[0, 0], target, mp)

    def train_epoch(self, double[::1] theta, double[::1] m, double[::1] v, long step,
                    double lr, double beta1, double beta2, double eps,
                    double[:, :, ::1] A_all, double[:, :, ::1] H0_all, double[::1] y_all,
                    const i64[::1] order, masks=None):
        cdef Py_ssize_t P = theta.shape[0], e, i, j, sample
        cdef Py_ssize_t E = order.shape[0]
        cdef double[:, ::1] mv
        cdef const double* mp = NULL
        cdef bint with_mask = masks is not None
        if with_mask:
            mv = masks
        self._check(theta, A_all[0], H0_all[0])
        self._ensure(A_all.shape[1])
        grad = np.zeros(P)
        cdef double[::1] gv = grad
        cdef double total = 0.0, c1, c2, gi
        with nogil:
            for e in range(E):
                sample = order[e]
                for j in range(P):
                    gv[j] = 0.0
                if with_mask:
                    mp = &mv[sample, 0]
                total += self._sample(&theta[0], &gv[0], &A_all[sample, 0, 0],
                                      &H0_all[sample, 0, 0], y_all[sample], mp)
                step += 1
                c1 = 1.0 - pow(beta1, <double> step)
                c2 = 1.0 - pow(beta2, <double> step)
                for j in range(P):
                    gi = gv[j]
                    m[j] = m[j] * beta1 + (1.0 - beta1) * gi
                    v[j] = v[j] * beta2 + (1.0 - beta2) * (gi * gi)
                    theta[j] -= lr * (m[j] / c1) / (sqrt(v[j] / c2) + eps)
        return total, step

    def predict_many(self, double[::1] theta, double[:, :, ::1] A_all, double[:, :, ::1] H0_all):
        cdef Py_ssize_t M = A_all.shape[0], i
        cdef int j
        out = np.empty((M, self.out_dim))
        cdef double[:, ::1] ov = out
        if M == 0:
            return out
        self._check(theta, A_all[0], H0_all[0])
        self._ensure(A_all.shape[1])
        with nogil:
            for i in range(M):
                self._forward(&theta[0], &A_all[i, 0, 0], &H0_all[i, 0, 0], NULL)
                for j in range(self.out_dim):
                    ov[i, j] = self.head[j]
        return out
