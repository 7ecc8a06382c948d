"""Dense linear algebra that works at any :class:`PrecisionLevel`.

Native levels delegate to numpy; decimal levels run partial-pivoting
elimination on object arrays of MPFR scalars.
"""
from __future__ import annotations

import numpy as np

from .precision import PrecisionLevel


class SingularMatrixError(ArithmeticError):
    pass


def lu_factor(A, level: PrecisionLevel):
    """Row-pivoted LU of a square matrix. Returns (LU, perm)."""
    with level.context():
        n = A.shape[0]
        LU = level.convert(A).copy() if not level.is_native else np.array(A, dtype=float)
        perm = list(range(n))
        for k in range(n):
            p = max(range(k, n), key=lambda i: abs(LU[i, k]))
            if LU[p, k] == 0:
                raise SingularMatrixError(f"zero pivot in column {k}")
            if p != k:
                LU[[k, p]] = LU[[p, k]]
                perm[k], perm[p] = perm[p], perm[k]
            piv = LU[k, k]
            for i in range(k + 1, n):
                f = LU[i, k] / piv
                LU[i, k] = f
                if f != 0:
                    LU[i, k + 1:] = LU[i, k + 1:] - f * LU[k, k + 1:]
        return LU, perm


def lu_solve(factor, B, level: PrecisionLevel):
    LU, perm = factor
    with level.context():
        B = np.asarray(B)
        vec = B.ndim == 1
        X = (B[perm] if vec else B[perm, :]).copy()
        if vec:
            X = X.reshape(-1, 1)
        X = X.astype(level.dtype) if level.is_native else X.astype(object)
        n = LU.shape[0]
        for i in range(n):
            for k in range(i):
                if LU[i, k] != 0:
                    X[i] = X[i] - LU[i, k] * X[k]
        for i in range(n - 1, -1, -1):
            for k in range(i + 1, n):
                if LU[i, k] != 0:
                    X[i] = X[i] - LU[i, k] * X[k]
            X[i] = X[i] / LU[i, i]
        return X[:, 0] if vec else X


def solve(A, B, level: PrecisionLevel):
    """Solve ``A X = B``; raises :class:`SingularMatrixError`."""
    if level.is_native:
        try:
            return np.linalg.solve(np.asarray(A, dtype=float), np.asarray(B, dtype=float))
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(str(exc)) from exc
    return lu_solve(lu_factor(A, level), B, level)


def inv(A, level: PrecisionLevel):
    return solve(A, level.eye(A.shape[0]), level)


def norm1(A):
    A = np.asarray(A)
    return max(sum(abs(A[i, j]) for i in range(A.shape[0])) for j in range(A.shape[1]))


def cond1(A, level: PrecisionLevel):
    """1-norm condition number (exact inverse; matrices here are small)."""
    with level.context():
        try:
            Ai = inv(A, level)
        except SingularMatrixError:
            return level.scalar("inf") if not level.is_native else float("inf")
        return norm1(A) * norm1(Ai)


def matvec(A, x):
    return np.asarray(A) @ np.asarray(x)
