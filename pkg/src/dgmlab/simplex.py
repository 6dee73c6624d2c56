"""Dense tableau simplex used as an independent LP oracle in tests.

Deliberately naive: full tableau, Bland's anti-cycling rule, float64.
Only meant for small problems (a few hundred rows).  The tableau is rebuilt
from the original data every few pivots and again for the final basis, so
accumulated round-off neither steers pivoting nor leaks into the optimum.
"""

import numpy as np


class SimplexError(RuntimeError):
    pass


def _tableau(A_full, b, c_full, basis):
    m = A_full.shape[0]
    B = A_full[:, basis]
    try:
        body = np.linalg.solve(B, np.column_stack([A_full, b]))
    except np.linalg.LinAlgError as exc:
        raise SimplexError("basis became singular; the problem is too degenerate for this solver") from exc
    T = np.zeros((m + 1, A_full.shape[1] + 1))
    T[:m] = body
    y = c_full[basis]
    T[m, :-1] = y @ body[:, :-1] - c_full
    T[m, -1] = y @ body[:, -1]
    return T


def _pivot(T, basis, tol, pivot_tol, count):
    """Up to ``count`` Bland pivots in place; True once the tableau is optimal."""
    m = T.shape[0] - 1
    for _ in range(count):
        entering = np.flatnonzero(T[m, :-1] < -tol)
        if entering.size == 0:
            return True
        j = entering[0]
        col = T[:m, j]
        rows = np.flatnonzero(col > pivot_tol)
        if rows.size == 0:
            raise SimplexError("LP is unbounded")
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, abs(best))]
        i = ties[np.argmin(basis[ties])]

        T[i] /= T[i, j]
        others = np.flatnonzero(T[:, j])
        others = others[others != i]
        T[others] -= np.outer(T[others, j], T[i])
        basis[i] = j
    return not np.any(T[m, :-1] < -tol)


def simplex_max(c, A, b, tol=1e-11, pivot_tol=1e-7, max_pivots=100_000, refactor_every=32):
    """Maximize ``c @ z`` subject to ``A @ z <= b`` and ``z >= 0``.

    Requires ``b >= 0`` so the slack basis is a feasible start (no phase one).
    Returns ``(value, z)``.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if np.any(b < 0):
        raise SimplexError("right-hand side must be nonnegative")

    A_full = np.hstack([A, np.eye(m)])
    c_full = np.concatenate([c, np.zeros(m)])
    basis = np.arange(n, n + m)
    T = _tableau(A_full, b, c_full, basis)
    pivots = 0
    while True:
        done = _pivot(T, basis, tol, pivot_tol, refactor_every)
        T = _tableau(A_full, b, c_full, basis)
        if done and not np.any(T[m, :-1] < -tol):
            break
        pivots += refactor_every
        if pivots > max_pivots:
            raise SimplexError(f"no convergence after {max_pivots} pivots")

    z = np.zeros(n + m)
    z[basis] = T[:m, -1]
    return float(c_full @ z), z[:n]
