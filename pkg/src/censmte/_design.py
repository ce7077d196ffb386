import numpy as np


def independent_columns(M: np.ndarray, tol: float = 1e-9, order=None) -> np.ndarray:
    """Indices (ascending) of a maximal linearly independent subset of columns.

    Columns are visited in ``order`` (default: left to right) and kept when
    their component orthogonal to the columns already kept exceeds ``tol``
    relative to their own norm. A column that is a combination of earlier
    ones, such as a constant next to the intercept, is therefore the one
    dropped, and the decision does not depend on units.
    """
    M = np.asarray(M, dtype=float)
    order = range(M.shape[1]) if order is None else order
    basis: list[np.ndarray] = []
    kept: list[int] = []
    for j in order:
        col = M[:, j]
        norm = np.linalg.norm(col)
        if norm == 0:
            continue
        r = col / norm
        for _ in range(2):  # second pass restores orthogonality lost to rounding
            for q in basis:
                r = r - (q @ r) * q
        rn = np.linalg.norm(r)
        if rn > tol:
            basis.append(r / rn)
            kept.append(j)
    return np.array(sorted(kept), dtype=int)
