"""KKT systems of the interior-point method.

The system solved at every iteration is

    [ P    A'   G'   ] [dx]   [rx]
    [ A    0    0    ] [dy] = [ry]
    [ G    0   -W^2  ] [dz]   [rz]

For second-order cones ``W^2 = eta^2 (I + u u' - v v')`` is dense per cone; the
sparse path lifts the two rank-one terms into two extra rows per cone so the
matrix stays sparse and quasi-definite. Static regularization keeps the
factorization well defined; iterative refinement against the unregularized
operator restores accuracy.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import ConeSet, NTScaling
from .transcription import StandardForm

__all__ = ["KKTError", "SparseKKT", "DenseKKT", "make_kkt"]


class KKTError(ArithmeticError):
    """Factorization failure."""


class SparseKKT:
    """Lifted sparse KKT with a fixed pattern and a precomputed data permutation."""

    def __init__(self, sf: StandardForm, cs: ConeSet, reg: float, refine_steps: int = 10):
        self.cs = cs
        self.refine_steps = refine_steps
        n, p, m = sf.n, sf.b.size, sf.h.size
        nq = cs.n_soc
        self.n, self.p, self.m = n, p, m
        self.dim = n + p + m + 2 * nq
        P = sp.coo_matrix(sp.triu(sf.P) + sp.triu(sf.P, 1).T)
        Pd = (sp.csr_matrix(P) + sp.csr_matrix((np.zeros(n), (np.arange(n), np.arange(n))), shape=(n, n))).tocoo()
        # make sure every diagonal entry is stored (explicit zeros kept by csr addition? enforce)
        diag_present = np.zeros(n, bool)
        diag_present[Pd.row[Pd.row == Pd.col]] = True
        pr, pc, pv = Pd.row, Pd.col, Pd.data
        if not diag_present.all():
            miss = np.flatnonzero(~diag_present)
            pr = np.concatenate([pr, miss])
            pc = np.concatenate([pc, miss])
            pv = np.concatenate([pv, np.zeros(miss.size)])
        A = sp.coo_matrix(sf.A)
        G = sp.coo_matrix(sf.G)
        soc_rows = n + p + cs.l + np.arange(m - cs.l)
        soc_seg = cs.seg
        a_cols = n + p + m + soc_seg
        b_cols = n + p + m + nq + soc_seg
        rows = [
            pr, n + A.row, A.col, n + p + G.row, G.col,
            n + np.arange(p), n + p + np.arange(m),
            soc_rows, a_cols, soc_rows, b_cols,
            n + p + m + np.arange(nq), n + p + m + nq + np.arange(nq),
        ]
        cols = [
            pc, A.col, n + A.row, G.col, n + p + G.row,
            n + np.arange(p), n + p + np.arange(m),
            a_cols, soc_rows, b_cols, soc_rows,
            n + p + m + np.arange(nq), n + p + m + nq + np.arange(nq),
        ]
        self._sizes = [r.size for r in rows]
        rows = np.concatenate(rows).astype(np.int64)
        cols = np.concatenate(cols).astype(np.int64)
        nnz = rows.size
        K = sp.coo_matrix((np.arange(1, nnz + 1, dtype=float), (rows, cols)), shape=(self.dim, self.dim)).tocsc()
        if K.nnz != nnz:
            raise KKTError("internal error: duplicate KKT pattern entries")
        self.perm = K.data.astype(np.int64) - 1
        self.K = K
        self._static = [pv, A.data, A.data, G.data, G.data]
        offs = np.concatenate([[0], np.cumsum(self._sizes)])
        self._offs = offs
        is_pdiag = pr == pc
        reg_vec = np.zeros(nnz)
        reg_vec[offs[0] : offs[1]][is_pdiag] = reg
        reg_vec[offs[5] : offs[6]] = -reg
        reg_vec[offs[6] : offs[7]] = -reg
        self.reg_vec = reg_vec
        self.lu = None
        self._permuted = False
        self._analyze()

    def _data(self, W: NTScaling | None) -> np.ndarray:
        cs, nq = self.cs, self.cs.n_soc
        zz = np.empty(self.m)
        if W is None:  # identity scaling
            zz[:] = -1.0
            eu = ev = np.zeros(self.m - cs.l)
        else:
            zz[: cs.l] = -(W.d**2)
            if nq:
                eta2, u, v = W.lifted_factors()
                eta = np.sqrt(eta2)
                zz[cs.l :] = -cs._bcast(eta2)
                eu = cs._bcast(eta) * u
                ev = cs._bcast(eta) * v
            else:
                eu = ev = np.zeros(0)
        return np.concatenate(self._static + [np.zeros(self.p), zz, eu, eu, ev, ev, np.ones(nq), -np.ones(nq)])

    def _analyze(self) -> None:
        """Fill-reducing ordering from the identity-scaled matrix.

        Every later factorization permutes the matrix symmetrically by this
        ordering and factors it in natural order, so results do not depend on
        the history of earlier solves.
        """
        Kreg = self.K.copy()
        Kreg.data = (self._data(None) + self.reg_vec)[self.perm]
        try:
            lu = spla.splu(Kreg, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise KKTError(f"sparse LU factorization failed: {exc}") from exc
        order = np.argsort(lu.perm_c)
        pattern = sp.csc_matrix(
            (np.arange(1, self.K.nnz + 1, dtype=float), self.K.indices.copy(), self.K.indptr.copy()), shape=self.K.shape
        )
        Kp = pattern[order][:, order].tocsc()
        Kp.sort_indices()
        # entry of Kp -> entry of K.data -> entry of the unsorted data vector
        self._pperm = self.perm[Kp.data.astype(np.int64) - 1]
        self._Kp = Kp
        self._order = order

    def update(self, W: NTScaling | None) -> None:
        data = self._data(W)
        self.exact = self.K.copy()
        self.exact.data = data[self.perm]
        regdata = data + self.reg_vec
        Kp = self._Kp.copy()
        Kp.data = regdata[self._pperm]
        try:
            self.lu = spla.splu(Kp, permc_spec="NATURAL", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
            self._permuted = True
            return
        except RuntimeError:
            pass
        # the fixed ordering met a zero pivot: factor this matrix on its own
        Kreg = self.K.copy()
        Kreg.data = regdata[self.perm]
        try:
            self.lu = spla.splu(Kreg, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1)
        except RuntimeError as exc:
            raise KKTError(f"sparse LU factorization failed: {exc}") from exc
        self._permuted = False

    def _lu_solve(self, rhs: np.ndarray) -> np.ndarray:
        if not self._permuted:
            return self.lu.solve(rhs)
        out = np.empty_like(rhs)
        out[self._order] = self.lu.solve(rhs[self._order])
        return out

    def solve(self, rx: np.ndarray, ry: np.ndarray, rz: np.ndarray):
        rhs = np.concatenate([rx, ry, rz, np.zeros(self.dim - self.n - self.p - self.m)])
        sol = self._lu_solve(rhs)
        norm_b = np.abs(rhs).max(initial=0.0)
        for _ in range(self.refine_steps):
            res = rhs - self.exact @ sol
            if np.abs(res).max(initial=0.0) <= 1e-13 * (1.0 + norm_b):
                break
            sol = sol + self._lu_solve(res)
        if not np.all(np.isfinite(sol)):
            raise KKTError("non-finite KKT solution")
        n, p, m = self.n, self.p, self.m
        return sol[:n], sol[n : n + p], sol[n + p : n + p + m]


class DenseKKT:
    """Dense LU of the unlifted KKT matrix (small or condensed problems)."""

    def __init__(self, sf: StandardForm, cs: ConeSet, reg: float, refine_steps: int = 10):
        self.cs = cs
        self.refine_steps = refine_steps
        n, p, m = sf.n, sf.b.size, sf.h.size
        self.n, self.p, self.m = n, p, m
        P = sf.P.toarray()
        P = np.triu(P) + np.triu(P, 1).T
        A = sf.A.toarray()
        G = sf.G.toarray()
        K = np.zeros((n + p + m, n + p + m))
        K[:n, :n] = P
        K[n : n + p, :n] = A
        K[:n, n : n + p] = A.T
        K[n + p :, :n] = G
        K[:n, n + p :] = G.T
        self.base = K
        reg_d = np.concatenate([np.full(n, reg), np.full(p + m, -reg)])
        self.reg_d = reg_d

    def update(self, W: NTScaling | None) -> None:
        cs, n, p = self.cs, self.n, self.p
        K = self.base.copy()
        o = n + p
        if W is None:
            idx = np.arange(self.m)
            K[o + idx, o + idx] = -1.0
        else:
            idx = np.arange(cs.l)
            K[o + idx, o + idx] = -(W.d**2)
        if cs.n_soc and W is not None:
            eta2, u, v = W.lifted_factors()
            for c, (st, q) in enumerate(zip(cs.starts, cs.q)):
                sl = slice(st - cs.l, st - cs.l + q)
                blk = eta2[c] * (np.eye(q) + np.outer(u[sl], u[sl]) - np.outer(v[sl], v[sl]))
                K[o + st : o + st + q, o + st : o + st + q] = -blk
        self.exact = K
        Kr = K.copy()
        Kr[np.diag_indices_from(Kr)] += self.reg_d
        try:
            self.lu = sla.lu_factor(Kr, check_finite=True)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise KKTError(f"dense LU factorization failed: {exc}") from exc

    def solve(self, rx, ry, rz):
        rhs = np.concatenate([rx, ry, rz])
        sol = sla.lu_solve(self.lu, rhs)
        norm_b = np.abs(rhs).max(initial=0.0)
        for _ in range(self.refine_steps):
            res = rhs - self.exact @ sol
            if np.abs(res).max(initial=0.0) <= 1e-13 * (1.0 + norm_b):
                break
            sol = sol + sla.lu_solve(self.lu, res)
        if not np.all(np.isfinite(sol)):
            raise KKTError("non-finite KKT solution")
        n, p = self.n, self.p
        return sol[:n], sol[n : n + p], sol[n + p :]


def make_kkt(sf: StandardForm, cs: ConeSet, reg: float, method: str = "auto"):
    if method == "auto":
        method = "dense" if sf.n + sf.b.size + sf.h.size <= 400 else "sparse"
    if method == "dense":
        return DenseKKT(sf, cs, reg)
    if method == "sparse":
        return SparseKKT(sf, cs, reg)
    raise ValueError(f"unknown KKT method {method!r}")
