"""Bit-packed linear algebra over GF(2).

Rows are packed into ``uint64`` words so that a row operation is a single
vectorized XOR over ``ceil(ncols / 64)`` words.
"""

import numpy as np

_WORD = 64


def pack_rows(mat):
    """Pack a 0/1 matrix into an array of shape (rows, words) of uint64.

    Column ``c`` lands in word ``c // 64`` at bit ``c % 64``.
    """
    mat = np.asarray(mat, dtype=np.uint8) & 1
    rows, cols = mat.shape
    words = max(1, -(-cols // _WORD))
    padded = np.zeros((rows, words * _WORD), dtype=np.uint64)
    padded[:, :cols] = mat
    weights = np.left_shift(np.uint64(1), np.arange(_WORD, dtype=np.uint64))
    return (padded.reshape(rows, words, _WORD) * weights).sum(axis=2, dtype=np.uint64)


def unpack_rows(packed, ncols):
    packed = np.asarray(packed, dtype=np.uint64)
    shifts = np.arange(_WORD, dtype=np.uint64)
    bits = (packed[:, :, None] >> shifts) & np.uint64(1)
    return bits.reshape(packed.shape[0], -1)[:, :ncols].astype(np.uint8)


def _col_bit(col):
    return col // _WORD, np.uint64(1) << np.uint64(col % _WORD)


def row_echelon(mat):
    """Reduced row echelon form over GF(2).

    Returns ``(packed_rref, pivot_columns)``; the packed matrix keeps the
    original number of rows with the pivot rows first.
    """
    a = pack_rows(mat)
    rows = a.shape[0]
    ncols = np.asarray(mat).shape[1]
    pivots = []
    r = 0
    for c in range(ncols):
        if r == rows:
            break
        w, bit = _col_bit(c)
        hits = np.nonzero(a[r:, w] & bit)[0]
        if hits.size == 0:
            continue
        p = r + hits[0]
        if p != r:
            a[[r, p]] = a[[p, r]]
        mask = (a[:, w] & bit) != 0
        mask[r] = False
        a[mask] ^= a[r]
        pivots.append(c)
        r += 1
    return a, pivots


def rank(mat):
    mat = np.asarray(mat)
    if mat.size == 0:
        return 0
    return len(row_echelon(mat)[1])


def inverse(mat):
    """Inverse of a square GF(2) matrix; raises ``np.linalg.LinAlgError`` if singular."""
    mat = np.asarray(mat, dtype=np.uint8) & 1
    n, m = mat.shape
    if n != m:
        raise ValueError("matrix must be square")
    aug = np.concatenate([mat, np.eye(n, dtype=np.uint8)], axis=1)
    packed, pivots = row_echelon(aug)
    if pivots[:n] != list(range(n)) or len(pivots) < n:
        raise np.linalg.LinAlgError("matrix is singular over GF(2)")
    return unpack_rows(packed, 2 * n)[:, n:]


def solve(mat, rhs):
    """One solution x of mat @ x = rhs over GF(2); raises if inconsistent."""
    mat = np.asarray(mat, dtype=np.uint8) & 1
    rhs = np.asarray(rhs, dtype=np.uint8).reshape(-1, 1) & 1
    ncols = mat.shape[1]
    packed, pivots = row_echelon(np.concatenate([mat, rhs], axis=1))
    if ncols in pivots:
        raise np.linalg.LinAlgError("inconsistent system over GF(2)")
    full = unpack_rows(packed, ncols + 1)
    x = np.zeros(ncols, dtype=np.uint8)
    for row, c in enumerate(pivots):
        x[c] = full[row, ncols]
    return x
