# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-pixel angular scan.

For every road pixel the scan walks r steps out along each probe angle in
both directions, counts in-mask samples (out-of-bounds counts 0), takes the
argmax over angles (first maximum wins) and maps the winning angle index to
its direction class.  Semantics must stay identical to the pure-Python
fallback in `_dirscan_py`.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def scan(cnp.uint8_t[:, :] mask, cnp.int32_t[:, :, :] offsets,
         cnp.int32_t[:] angle_class):
    """Label every pixel of a {0,1} mask with a direction class (4 = non-road).

    offsets: (n_angles, radius, 2) array of (dy, dx) probe steps for +rho;
    the -rho probe is the negation.  angle_class: per-angle quantized class.
    """
    cdef Py_ssize_t h = mask.shape[0]
    cdef Py_ssize_t w = mask.shape[1]
    cdef Py_ssize_t n_angles = offsets.shape[0]
    cdef Py_ssize_t radius = offsets.shape[1]
    cdef Py_ssize_t i, j, k, p
    cdef int dy, dx, y, x
    cdef int score, best_score
    cdef Py_ssize_t best_k

    out_arr = np.full((h, w), 4, dtype=np.uint8)
    cdef cnp.uint8_t[:, :] out = out_arr

    for i in range(h):
        for j in range(w):
            if mask[i, j] == 0:
                continue
            best_score = -1
            best_k = 0
            for k in range(n_angles):
                score = 0
                for p in range(radius):
                    dy = offsets[k, p, 0]
                    dx = offsets[k, p, 1]
                    y = <int> i + dy
                    x = <int> j + dx
                    if 0 <= y < h and 0 <= x < w:
                        score += mask[y, x]
                    y = <int> i - dy
                    x = <int> j - dx
                    if 0 <= y < h and 0 <= x < w:
                        score += mask[y, x]
                if score > best_score:
                    best_score = score
                    best_k = k
            out[i, j] = <cnp.uint8_t> angle_class[best_k]
    return out_arr
