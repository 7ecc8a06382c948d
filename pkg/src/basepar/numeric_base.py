"""Gautier's numerical route to base parameters at any precision.

Singular values come from a one-sided (Hestenes) Jacobi SVD applied after a
Householder QR.  Rank is certified by rebuilding the observation matrix at
increasing precision and checking that the leading singular values stay put
while the trailing ones collapse.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .model import param_label
from .precision import PrecisionLevel, norm_inf

# rank-certification thresholds
RIDGE_DRIFT = 1e-6
RIDGE_SHRINK = 1e3
MAX_SWEEPS = 60


class NoConvergence(ArithmeticError):
    pass


class PinnedSingular(ValueError):
    pass


@dataclass
class SvdResult:
    U: np.ndarray
    s: list
    V: np.ndarray
    level: PrecisionLevel
    off_diagonal: object
    sweeps: int

    def sigma(self):
        return self.s


def _householder_qr(A, level):
    """Thin QR: returns Q (m x n, orthonormal columns) and R (n x n)."""
    m, n = A.shape
    R = A.copy()
    vs = []
    for k in range(min(m - 1, n)):
        x = R[k:, k].copy()
        nx = level.sqrt(np.dot(x, x))
        if nx == 0:
            vs.append(None)
            continue
        alpha = -nx if x[0] >= 0 else nx
        v = x
        v[0] = v[0] - alpha
        vv = np.dot(v, v)
        if vv == 0:
            vs.append(None)
            continue
        sub = R[k:, k:]
        R[k:, k:] = sub - np.outer(v, (v @ sub) * (2 / vv))
        vs.append((v, vv))
    Q = level.zeros((m, n))
    one = level.scalar(1)
    for i in range(n):
        Q[i, i] = one
    for k in range(len(vs) - 1, -1, -1):
        if vs[k] is None:
            continue
        v, vv = vs[k]
        sub = Q[k:, k:]
        Q[k:, k:] = sub - np.outer(v, (v @ sub) * (2 / vv))
    Rn = R[:n, :]
    for i in range(n):
        for j in range(i):
            Rn[i, j] = level.scalar(0)
    return Q, Rn


def round_robin_rounds(n):
    """Disjoint pair schedule: each round touches every column at most once."""
    players = list(range(n)) + ([None] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a is not None and b is not None:
                pairs.append((min(a, b), max(a, b)))
        rounds.append(pairs)
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def svd(W, level: PrecisionLevel = PrecisionLevel(), workers: int = 1) -> SvdResult:
    """Singular value decomposition ``W = U diag(s) V^T`` with ``s`` descending."""
    with level.context():
        W = level.convert(W) if not level.is_native else np.array(W, dtype=float)
        m, n = W.shape
        transposed = m < n
        if transposed:
            W = W.T.copy()
            m, n = n, m
        Q, A = _householder_qr(W, level)
        V = level.eye(n)
        tol = level.tol(2)
        cols = [A[:, i].copy() for i in range(n)]
        vcols = [V[:, i].copy() for i in range(n)]
        rounds = round_robin_rounds(n)

        def rotate(pair):
            # mpfr contexts are thread-local, so each worker re-enters it
            with level.context():
                return _rotate(pair)

        def _rotate(pair):
            i, j = pair
            ai, aj = cols[i], cols[j]
            alpha, beta, gamma = np.dot(ai, ai), np.dot(aj, aj), np.dot(ai, aj)
            if gamma == 0 or abs(gamma) <= tol * level.sqrt(alpha * beta):
                return None
            zeta = (beta - alpha) / (2 * gamma)
            t = 1 / (abs(zeta) + level.sqrt(1 + zeta * zeta))
            if zeta < 0:
                t = -t
            c = 1 / level.sqrt(1 + t * t)
            s = c * t
            vi, vj = vcols[i], vcols[j]
            return (i, j, c * ai - s * aj, s * ai + c * aj, c * vi - s * vj, s * vi + c * vj,
                    abs(gamma) / level.sqrt(alpha * beta))

        pool = ThreadPoolExecutor(workers) if workers > 1 else None
        worst = level.scalar(0)
        try:
            for sweep in range(1, MAX_SWEEPS + 1):
                rotated = False
                worst = level.scalar(0)
                for pairs in rounds:
                    results = list(pool.map(rotate, pairs)) if pool else [rotate(p) for p in pairs]
                    for res in results:
                        if res is None:
                            continue
                        i, j, ci, cj, vi, vj, off = res
                        cols[i], cols[j], vcols[i], vcols[j] = ci, cj, vi, vj
                        rotated = True
                        if off > worst:
                            worst = off
                if not rotated:
                    break
            else:
                raise NoConvergence(f"Jacobi SVD not converged after {MAX_SWEEPS} sweeps")
        finally:
            if pool:
                pool.shutdown()
        norms = [level.sqrt(np.dot(c, c)) for c in cols]
        order = sorted(range(n), key=lambda k: norms[k], reverse=True)
        s = [norms[k] for k in order]
        V = np.column_stack([vcols[k] for k in order])
        UR = level.zeros((n, n))
        for col, k in enumerate(order):
            if norms[k] != 0:
                UR[:, col] = cols[k] / norms[k]
        _complete_basis(UR, [i for i, k in enumerate(order) if norms[k] == 0], level)
        U = Q @ UR
        if transposed:
            U, V = V, U
        return SvdResult(U, s, V, level, worst, sweep)


def _complete_basis(M, missing, level):
    """Fill the listed columns of M with unit vectors orthogonal to the others."""
    n = M.shape[0]
    filled = [c for c in range(M.shape[1]) if c not in missing]
    for col in missing:
        for e in range(n):
            v = level.zeros(n)
            v[e] = level.scalar(1)
            for c in filled:
                v = v - M[:, c] * np.dot(M[:, c], v)
            nv = level.sqrt(np.dot(v, v))
            if nv > level.scalar("0.5"):
                M[:, col] = v / nv
                filled.append(col)
                break


# -- rank certification ----------------------------------------------------------

@dataclass
class RidgeReport:
    ladder: list
    spectra: dict
    rank: int | None
    certified: bool
    drift: float | None
    shrink: list
    reason: str = ""
    thresholds: dict = field(default_factory=lambda: {"drift": RIDGE_DRIFT, "shrink": RIDGE_SHRINK})

    def to_dict(self) -> dict:
        out = {"ladder": [str(p) for p in self.ladder], "rank": self.rank, "certified": self.certified,
               "max_leading_drift": self.drift, "trailing_shrink": self.shrink,
               "reason": self.reason, "thresholds": self.thresholds, "spectra": {}}
        for lvl, s in self.spectra.items():
            out["spectra"][str(lvl)] = [lvl.fmt(x) for x in s]
        return out


def _rel_drift(a, b):
    a, b = float(a), float(b)
    if b == 0:
        return 0.0 if a == 0 else float("inf")
    return abs(a - b) / abs(b)


def ridge_from_spectra(spectra: dict, ladder, drift=RIDGE_DRIFT, shrink=RIDGE_SHRINK) -> RidgeReport:
    """Certify the rank from singular values computed at each ladder level."""
    lo, hi = ladder[-2], ladder[-1]
    s_lo, s_hi = spectra[lo], spectra[hi]
    n = len(s_hi)
    s1 = float(s_hi[0]) if n else 0.0
    floor_hi = 10.0 ** (8 - hi.effective_digits) * s1
    # leading stable prefix between the top two levels
    r = 0
    while r < n and s_hi[r] != 0 and _rel_drift(s_lo[r], s_hi[r]) <= drift and float(s_hi[r]) > floor_hi:
        r += 1
    max_drift = max((_rel_drift(s_lo[k], s_hi[k]) for k in range(r)), default=0.0)
    shrinks = []
    for a, b in zip(ladder[:-1], ladder[1:]):
        if r < n:
            x, y = float(spectra[a][r]), float(spectra[b][r])
            shrinks.append(float("inf") if y == 0 else x / y)
    report = RidgeReport(list(ladder), spectra, r, False, max_drift, shrinks)
    if r == n:
        report.certified = True
        report.reason = "full rank: every singular value stable"
        return report
    trailing = float(s_hi[r])
    if trailing <= floor_hi or all(f >= shrink for f in shrinks):
        report.certified = True
        report.reason = f"sigma_{r + 1} collapses with precision"
    else:
        report.reason = f"sigma_{r + 1} does not shrink by {shrink:g} between levels"
    return report


def certify_rank(builder, ladder, drift=RIDGE_DRIFT, shrink=RIDGE_SHRINK, workers: int = 1) -> RidgeReport:
    """Rebuild W at every ladder level (``builder(level) -> matrix``) and certify its rank."""
    ladder = [PrecisionLevel.parse(p) for p in ladder]
    if len(ladder) < 2:
        raise ValueError("rank certification needs at least two precision levels")
    spectra, svds = {}, {}
    for lvl in ladder:
        W = builder(lvl)
        W = getattr(W, "W", W)
        res = svd(W, lvl, workers)
        spectra[lvl] = res.s
        svds[lvl] = res
    report = ridge_from_spectra(spectra, ladder, drift, shrink)
    report.svds = svds
    return report


def dp_rank_diagnostic(W, tol: float):
    """Tolerance-cut rank and consecutive singular-value ratios at double precision."""
    s = np.linalg.svd(np.asarray(W, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0, []
    rank = int(np.sum(s > tol * s[0]))
    gaps = [float(s[k] / s[k + 1]) if s[k + 1] > 0 else float("inf") for k in range(len(s) - 1)]
    return rank, gaps


# -- partition and beta ------------------------------------------------------------

PIVOT_RATIO = 0.1


def choose_partition(V2, level: PrecisionLevel = PrecisionLevel(), pinned=None):
    """Pick the eliminated parameters phi2 so that V22 is square and well conditioned.

    Returns ``(phi1, phi2)`` index lists, each ascending.
    """
    with level.context():
        n, k = V2.shape
        if pinned is not None:
            phi2 = sorted(int(i) for i in pinned)
            if len(phi2) != k or len(set(phi2)) != k or not all(0 <= i < n for i in phi2):
                raise PinnedSingular(f"pin set must name {k} distinct parameters, got {len(set(phi2))}")
            c = linalg.cond1(V2[phi2, :], level)
            limit = 10.0 ** (level.effective_digits / 2)
            if not float(c) < limit:
                raise PinnedSingular(f"pinned V22 is singular (condition {float(c):.3e})")
        else:
            M = V2.T.copy()
            free_rows = list(range(k))
            phi2 = []
            for col in range(n - 1, -1, -1):
                if not free_rows:
                    break
                overall = max(abs(M[r, c]) for r in free_rows for c in range(n))
                if overall == 0:
                    break
                piv = max(free_rows, key=lambda r: abs(M[r, col]))
                if abs(M[piv, col]) < PIVOT_RATIO * overall:
                    continue
                for r in free_rows:
                    if r != piv and M[r, col] != 0:
                        M[r] = M[r] - M[piv] * (M[r, col] / M[piv, col])
                free_rows.remove(piv)
                phi2.append(col)
            if free_rows:
                raise PinnedSingular("could not find a nonsingular V22")
            phi2.sort()
        phi1 = [i for i in range(n) if i not in set(phi2)]
        return phi1, phi2


@dataclass
class BaseParamSolution:
    phi1: list
    phi2: list
    beta: np.ndarray
    level: PrecisionLevel
    rank: int
    forced: bool = False
    cond_v22: float | None = None
    svd: SvdResult | None = None

    def coefficient(self, base_index: int, param_index: int):
        """beta entry for phi1 member ``base_index`` and phi2 member ``param_index``."""
        return self.beta[self.phi1.index(base_index), self.phi2.index(param_index)]

    def expressions(self, threshold=None) -> list[str]:
        level = self.level
        if threshold is None:
            threshold = 10.0 ** (6 - level.effective_digits / 2)
        out = []
        with level.context():
            for r, i in enumerate(self.phi1):
                out.append(self._expression(r, i, threshold))
        return out

    def _expression(self, r, i, threshold):
        terms = [param_label(i)]
        for c, j in enumerate(self.phi2):
            b = self.beta[r, c]
            if abs(float(b)) < threshold:
                continue
            sign = "-" if b < 0 else "+"
            terms.append(f"{sign} {self.level.fmt(-b if b < 0 else b)}*{param_label(j)}")
        return " ".join(terms)

    def reduced(self, W):
        """Columns of W kept in the reduced model W_b."""
        return np.asarray(W)[:, self.phi1]

    def apply(self, phi):
        """phi_b = phi1 + beta phi2."""
        phi = np.asarray(phi)
        return phi[self.phi1] + self.beta @ phi[self.phi2]

    def to_dict(self) -> dict:
        fmt = self.level.fmt
        return {
            "level": str(self.level), "rank": self.rank, "forced_rank": self.forced,
            "phi1": self.phi1, "phi2": self.phi2,
            "phi1_labels": [param_label(i) for i in self.phi1],
            "phi2_labels": [param_label(i) for i in self.phi2],
            "beta": [[fmt(x) for x in row] for row in self.beta],
            "cond_v22": self.cond_v22,
        }


def base_parameters(W, level: PrecisionLevel = PrecisionLevel(), pinned=None, rank=None,
                    svd_result: SvdResult | None = None, workers: int = 1) -> BaseParamSolution:
    """beta = -V21 V22^{-1} from the numerical nullspace of W.

    ``rank`` defaults to the count of singular values above ``10**(8-P) * s1``
    (callers normally pass a certified rank).
    """
    with level.context():
        res = svd_result or svd(W, level, workers)
        n = res.V.shape[0]
        forced = rank is not None
        if rank is None:
            floor = 10.0 ** (8 - level.effective_digits) * float(res.s[0])
            rank = sum(1 for x in res.s if float(x) > floor)
        V2 = res.V[:, rank:]
        if rank == n:
            return BaseParamSolution(list(range(n)), [], level.zeros((n, 0)), level, rank, forced, 1.0, res)
        phi1, phi2 = choose_partition(V2, level, pinned)
        V21, V22 = V2[phi1, :], V2[phi2, :]
        beta = -linalg.solve(V22.T, V21.T, level).T
        cond = float(linalg.cond1(V22, level))
        return BaseParamSolution(phi1, phi2, beta, level, rank, forced, cond, res)


def reduced_model_residual(W, sol: BaseParamSolution, phi):
    """|| W phi - W_b phi_b ||_inf."""
    level = sol.level
    with level.context():
        phi = level.convert(phi)
        W = level.convert(W)
        return norm_inf(W @ phi - sol.reduced(W) @ sol.apply(phi))
