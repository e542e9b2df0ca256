# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics mirror s4rec._pykernels exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

ctypedef fused real_t:
    float
    double


def rank_rows(real_t[:, ::1] logits, const long long[::1] targets,
              const unsigned char[:, ::1] excluded):
    cdef Py_ssize_t b = logits.shape[0], n = logits.shape[1]
    cdef Py_ssize_t i, j, t
    cdef real_t tv, x
    cdef long long r
    out = np.empty(b, dtype=np.int64)
    cdef long long[::1] ranks = out
    with nogil:
        for i in range(b):
            t = targets[i]
            tv = logits[i, t]
            r = 1
            for j in range(n):
                if excluded[i, j]:
                    continue
                x = logits[i, j]
                if x > tv or (x == tv and j < t):
                    r += 1
            ranks[i] = r
    return out


def sinkhorn(const double[:, ::1] scores, double eps, int iters):
    cdef Py_ssize_t B = scores.shape[0], K = scores.shape[1]
    cdef Py_ssize_t i, k
    cdef int it
    cdef double mx = scores[0, 0], total = 0.0, s
    q_arr = np.empty((B, K), dtype=np.float64)
    cdef double[:, ::1] q = q_arr
    col_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] col = col_arr
    with nogil:
        for i in range(B):
            for k in range(K):
                if scores[i, k] > mx:
                    mx = scores[i, k]
        for i in range(B):
            for k in range(K):
                s = exp((scores[i, k] - mx) / eps)
                q[i, k] = s
                total += s
        for i in range(B):
            for k in range(K):
                q[i, k] /= total
        for it in range(iters):
            for k in range(K):
                col[k] = 0.0
            for i in range(B):
                for k in range(K):
                    col[k] += q[i, k]
            for i in range(B):
                for k in range(K):
                    q[i, k] /= col[k] * K
            for i in range(B):
                s = 0.0
                for k in range(K):
                    s += q[i, k]
                for k in range(K):
                    q[i, k] /= s * B
        for i in range(B):
            for k in range(K):
                q[i, k] *= B
    return q_arr
