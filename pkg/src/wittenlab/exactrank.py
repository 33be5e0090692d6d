"""Exact rank of sparse integer matrices by fraction-free elimination.

The rank over Q of an integer matrix is what homology rank computations
need; floating-point rank is not acceptable as ground truth.  This module
does sparse Gaussian elimination over the integers: rows are only ever
combined with integer coefficients (cross-multiplication when the pivot
does not divide), and rows are reduced by their gcd to keep entries small.
Boundary matrices of cell complexes are extremely sparse with +-1 entries,
so unit pivots dominate and fill-in stays manageable.
"""

from __future__ import annotations

from math import gcd

import numpy as np
import scipy.sparse as sp


def _to_triplets(mat):
    if sp.issparse(mat):
        coo = mat.tocoo()
        return coo.row.tolist(), coo.col.tolist(), coo.data.tolist(), mat.shape
    arr = np.asarray(mat)
    rows, cols = np.nonzero(arr)
    return rows.tolist(), cols.tolist(), arr[rows, cols].tolist(), arr.shape


def integer_rank(mat) -> int:
    """Rank over Q of an integer matrix, computed exactly.

    Accepts a scipy sparse matrix or a dense array-like with integer
    entries.  Entries are handled as Python ints, so there is no overflow.
    """
    rows_idx, cols_idx, vals, shape = _to_triplets(mat)
    n_rows, n_cols = shape
    if not vals:
        return 0

    # row id -> {col: int value}; col -> set of row ids with a nonzero there
    rows: dict[int, dict[int, int]] = {}
    col_rows: dict[int, set[int]] = {}
    for r, c, v in zip(rows_idx, cols_idx, vals):
        v = int(v)
        if v == 0:
            continue
        row = rows.setdefault(r, {})
        row[c] = row.get(c, 0) + v
        if row[c] == 0:
            del row[c]
        else:
            col_rows.setdefault(c, set()).add(r)
    for c in [c for c, s in col_rows.items() if not s]:
        del col_rows[c]

    rank = 0
    while col_rows:
        # Markowitz-style pivot: cheapest column first, then prefer unit
        # entries and short rows inside it.
        pivot_col = min(col_rows, key=lambda c: (len(col_rows[c]), c))
        candidates = col_rows[pivot_col]
        pivot_row = min(
            candidates,
            key=lambda r: (abs(rows[r][pivot_col]) != 1, len(rows[r]), r),
        )
        prow = rows.pop(pivot_row)
        pval = prow[pivot_col]
        for c in prow:
            s = col_rows.get(c)
            if s is not None:
                s.discard(pivot_row)
                if not s:
                    del col_rows[c]

        touched = list(col_rows.get(pivot_col, ()))
        for r in touched:
            row = rows[r]
            v = row[pivot_col]
            if v % pval == 0:
                q = v // pval
                for c, pv in prow.items():
                    nv = row.get(c, 0) - q * pv
                    if nv == 0:
                        if c in row:
                            del row[c]
                            s = col_rows.get(c)
                            if s is not None:
                                s.discard(r)
                                if not s:
                                    del col_rows[c]
                    else:
                        if c not in row:
                            col_rows.setdefault(c, set()).add(r)
                        row[c] = nv
            else:
                # Fraction-free update: row <- pval*row - v*pivot_row.
                for c in row:
                    row[c] *= pval
                for c, pv in prow.items():
                    nv = row.get(c, 0) - v * pv
                    if nv == 0:
                        if c in row:
                            del row[c]
                            s = col_rows.get(c)
                            if s is not None:
                                s.discard(r)
                                if not s:
                                    del col_rows[c]
                    else:
                        if c not in row:
                            col_rows.setdefault(c, set()).add(r)
                        row[c] = nv
                g = 0
                for nv in row.values():
                    g = gcd(g, nv)
                    if g == 1:
                        break
                if g > 1:
                    for c in row:
                        row[c] //= g
            if not row:
                del rows[r]
        rank += 1
    return rank
