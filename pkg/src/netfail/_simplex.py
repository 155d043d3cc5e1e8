"""Numba kernels for the dense revised simplex on the shed-cost dual LP.

The dual feasible region ``{y : M y <= ub, y >= 0}`` is fixed per instance
while the objective vector changes with every demand draw, so the kernel is
written for repeated solves with warm-started bases.  State (basis, inverse,
workspace) is owned by the Python-side solver object and passed in; the
kernel mutates it in place.

Variables are indexed 0..d-1 for the structural variables ``y`` and
d..2d-1 for the slacks ``w`` of ``M y + w = ub``.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

STATUS_OPTIMAL = 0
STATUS_UNBOUNDED = 1
STATUS_NUMFAIL = 2

_REFRESH_EVERY = 64


@njit(cache=True, nogil=True)
def _rebuild_inverse(M, basis, Binv):
    d = M.shape[0]
    B = np.empty((d, d))
    for col in range(d):
        j = basis[col]
        if j < d:
            for i in range(d):
                B[i, col] = M[i, j]
        else:
            for i in range(d):
                B[i, col] = 1.0 if i == j - d else 0.0
    Binv[:, :] = np.linalg.inv(B)


@njit(cache=True, nogil=True)
def dual_simplex(
    M, ub, r, basis, in_basis, Binv, xB, pi, pivot_count,
    pivot_tol, feas_tol, degen_tol, bland_after, max_iter,
):
    """Maximize ``r @ y`` over ``M y + w = ub, y >= 0, w >= 0``.

    basis/in_basis/Binv/xB carry warm-start state and are updated in place;
    ``pi`` receives the simplex multipliers at optimality (these are the
    optimal ``x+`` of the shed-demand primal when ``ub`` is all ones).
    ``pivot_count`` persists across calls and schedules inverse rebuilds so
    product-form update error cannot accumulate over warm-started solves.
    Dantzig pricing with smallest-index tie-breaks; switches to Bland's rule
    permanently after ``bland_after`` degenerate pivots so cycling cannot
    occur.  Returns (status, objective, iterations).
    """
    d = M.shape[0]
    n = 2 * d

    if pivot_count[0] >= _REFRESH_EVERY:
        _rebuild_inverse(M, basis, Binv)
        pivot_count[0] = 0
    ok = True
    for i in range(d):
        v = 0.0
        for j in range(d):
            v += Binv[i, j] * ub[j]
        if v < -feas_tol:
            ok = False
        xB[i] = v if v > 0.0 else 0.0
    if not ok:
        # stale basis (should not happen; the slack basis is always feasible)
        for j in range(n):
            in_basis[j] = False
        for i in range(d):
            basis[i] = d + i
            in_basis[d + i] = True
            xB[i] = ub[i]
            for j in range(d):
                Binv[i, j] = 1.0 if i == j else 0.0
        pivot_count[0] = 0

    degen = 0
    bland = False
    u = np.empty(d)
    it = 0
    while it < max_iter:
        it += 1
        # multipliers pi = c_B' Binv
        for j in range(d):
            acc = 0.0
            for ib in range(d):
                bj = basis[ib]
                if bj < d and r[bj] != 0.0:
                    acc += r[bj] * Binv[ib, j]
            pi[j] = acc
        # price nonbasic columns
        enter = -1
        best = pivot_tol
        for j in range(n):
            if in_basis[j]:
                continue
            if j < d:
                rc = r[j]
                for i in range(d):
                    rc -= pi[i] * M[i, j]
            else:
                rc = -pi[j - d]
            if bland:
                if rc > pivot_tol:
                    enter = j
                    break
            elif rc > best:
                best = rc
                enter = j
        if enter < 0:
            obj = 0.0
            for ib in range(d):
                bj = basis[ib]
                if bj < d:
                    obj += r[bj] * xB[ib]
            return STATUS_OPTIMAL, obj, it

        # direction u = Binv @ column(enter)
        if enter < d:
            for i in range(d):
                acc = 0.0
                for jj in range(d):
                    acc += Binv[i, jj] * M[jj, enter]
                u[i] = acc
        else:
            for i in range(d):
                u[i] = Binv[i, enter - d]

        # ratio test; ties broken toward the smallest basic variable index
        leave = -1
        theta = 0.0
        for i in range(d):
            if u[i] > pivot_tol:
                ratio = xB[i] / u[i]
                if ratio < 0.0:
                    ratio = 0.0
                if (
                    leave < 0
                    or ratio < theta - 1e-12
                    or (abs(ratio - theta) <= 1e-12 and basis[i] < basis[leave])
                ):
                    leave = i
                    theta = ratio
        if leave < 0:
            return STATUS_UNBOUNDED, np.inf, it

        if theta < degen_tol:
            degen += 1
            if degen >= bland_after:
                bland = True

        piv = u[leave]
        inv_piv = 1.0 / piv
        for j in range(d):
            Binv[leave, j] *= inv_piv
        xB[leave] *= inv_piv
        for i in range(d):
            if i != leave:
                f = u[i]
                if f != 0.0:
                    for j in range(d):
                        Binv[i, j] -= f * Binv[leave, j]
                    xB[i] -= f * xB[leave]
                    if xB[i] < 0.0 and xB[i] > -feas_tol:
                        xB[i] = 0.0
        in_basis[basis[leave]] = False
        in_basis[enter] = True
        basis[leave] = enter
        pivot_count[0] += 1

        if pivot_count[0] >= _REFRESH_EVERY:
            _rebuild_inverse(M, basis, Binv)
            pivot_count[0] = 0
            for i in range(d):
                v = 0.0
                for j in range(d):
                    v += Binv[i, j] * ub[j]
                xB[i] = v if v > 0.0 else 0.0

    return STATUS_NUMFAIL, np.nan, it


@njit(cache=True, nogil=True)
def reset_to_slack_basis(basis, in_basis):
    d = basis.shape[0]
    for j in range(2 * d):
        in_basis[j] = False
    for i in range(d):
        basis[i] = d + i
        in_basis[d + i] = True


@njit(cache=True, nogil=True)
def extract_y(basis, xB, y):
    d = basis.shape[0]
    for j in range(d):
        y[j] = 0.0
    for ib in range(d):
        bj = basis[ib]
        if bj < d:
            v = xB[ib]
            y[bj] = v if v > 0.0 else 0.0
