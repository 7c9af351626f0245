"""Pure-Python fallback for the angular direction scan.

Mirrors `_dirscan.scan` exactly; used when the compiled extension is not
available.  Orders of magnitude slower, so keep inputs small or build the
extension.
"""

import numpy as np


def scan(mask, offsets, angle_class):
    """See `_dirscan.scan`: same arguments, same output, plain Python loops."""
    h, w = mask.shape
    n_angles, radius = offsets.shape[0], offsets.shape[1]
    cells = mask.tolist()
    offs = offsets.tolist()
    classes = angle_class.tolist()
    out = np.full((h, w), 4, dtype=np.uint8)

    for i in range(h):
        row = cells[i]
        for j in range(w):
            if row[j] == 0:
                continue
            best_score = -1
            best_k = 0
            for k in range(n_angles):
                score = 0
                for dy, dx in offs[k]:
                    y, x = i + dy, j + dx
                    if 0 <= y < h and 0 <= x < w:
                        score += cells[y][x]
                    y, x = i - dy, j - dx
                    if 0 <= y < h and 0 <= x < w:
                        score += cells[y][x]
                if score > best_score:
                    best_score = score
                    best_k = k
            out[i, j] = classes[best_k]
    return out
