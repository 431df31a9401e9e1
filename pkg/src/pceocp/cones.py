"""Vectorized algebra on products of a nonnegative orthant and second-order cones.

A vector in the cone product is stored flat: ``l`` orthant entries followed by
each second-order cone ``(u0, u1)`` with ``u0 >= ||u1||``. All operations work
on the whole product at once via segment reductions.
"""

from __future__ import annotations

import numpy as np

from .transcription import ConeDims

__all__ = ["ConeSet", "NTScaling"]


class ConeSet:
    """Index bookkeeping plus Jordan-algebra operations for a cone product."""

    def __init__(self, dims: ConeDims):
        self.dims = dims
        self.l = dims.l
        self.q = np.asarray(dims.q, dtype=np.int64)
        if np.any(self.q < 2):
            raise ValueError("second-order cones must have dimension >= 2 (use the orthant for 1)")
        self.m = dims.total
        self.n_soc = self.q.size
        self.nu = self.l + self.n_soc
        self.starts = self.l + (np.cumsum(self.q) - self.q).astype(np.int64)
        self.heads = self.starts
        # per-entry segment id over the SOC part
        self.seg = np.repeat(np.arange(self.n_soc), self.q)
        self.is_head = np.zeros(self.m - self.l, dtype=bool)
        self.is_head[self.starts - self.l] = True
        self.e = np.zeros(self.m)
        self.e[: self.l] = 1.0
        self.e[self.heads] = 1.0

    # -- helpers ----------------------------------------------------------
    def _segsum(self, v: np.ndarray) -> np.ndarray:
        if self.n_soc == 0:
            return np.zeros(0)
        return np.add.reduceat(v, self.starts - self.l)

    def _bcast(self, per_cone: np.ndarray) -> np.ndarray:
        return per_cone[self.seg]

    def _tail(self, v: np.ndarray) -> np.ndarray:
        """SOC part with heads zeroed."""
        t = v[self.l :].copy()
        t[self.is_head] = 0.0
        return t

    # -- Jordan algebra ---------------------------------------------------
    def jdot(self, u: np.ndarray) -> np.ndarray:
        """Per-SOC ``u0^2 - ||u1||^2``."""
        t = self._tail(u)
        return u[self.heads] ** 2 - self._segsum(t * t)

    def prod(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jordan product ``u o v``."""
        out = np.empty_like(u)
        out[: self.l] = u[: self.l] * v[: self.l]
        if self.n_soc:
            su, sv = u[self.l :], v[self.l :]
            u0 = self._bcast(u[self.heads])
            v0 = self._bcast(v[self.heads])
            soc = u0 * sv + v0 * su
            soc[self.is_head] = self._segsum(su * sv)
            out[self.l :] = soc
        return out

    def div(self, lam: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Solve ``lam o x = r`` for x (lam in the interior)."""
        out = np.empty_like(r)
        out[: self.l] = r[: self.l] / lam[: self.l]
        if self.n_soc:
            sl, sr = lam[self.l :], r[self.l :]
            l0 = lam[self.heads]
            r0 = r[self.heads]
            l1 = self._tail(lam)
            det = l0 * l0 - self._segsum(l1 * l1)
            x0 = (l0 * r0 - self._segsum(l1 * sr)) / det
            soc = (sr - self._bcast(x0) * l1) / self._bcast(l0)
            soc[self.is_head] = x0
            out[self.l :] = soc
        return out

    def min_eig(self, u: np.ndarray) -> float:
        """Smallest eigenvalue over the product (negative means outside)."""
        vals = []
        if self.l:
            vals.append(u[: self.l].min())
        if self.n_soc:
            t = self._tail(u)
            vals.append((u[self.heads] - np.sqrt(self._segsum(t * t))).min())
        return float(min(vals)) if vals else 0.0

    def shift_interior(self, u: np.ndarray) -> np.ndarray:
        alpha = -self.min_eig(u)
        if alpha < 0.0:
            return u
        return u + (1.0 + alpha) * self.e

    def max_step(self, u: np.ndarray, du: np.ndarray, cap: float = 1e10) -> float:
        """Largest alpha with ``u + alpha du`` in the cone (u interior)."""
        a = cap
        if self.l:
            d = du[: self.l]
            neg = d < 0
            if neg.any():
                a = min(a, float(np.min(-u[: self.l][neg] / d[neg])))
        if self.n_soc:
            su, sd = u[self.l :], du[self.l :]
            u0, d0 = u[self.heads], du[self.heads]
            ut, dt = self._tail(u), self._tail(du)
            # (u0 + a d0)^2 - ||u1 + a d1||^2 = A a^2 + 2 B a + C and u0 + a d0 >= 0
            A = d0 * d0 - self._segsum(dt * dt)
            B = u0 * d0 - self._segsum(ut * dt)
            C = u0 * u0 - self._segsum(ut * ut)
            alphas = np.full(self.n_soc, cap)
            disc = B * B - A * C
            with np.errstate(divide="ignore", invalid="ignore"):
                sq = np.sqrt(np.maximum(disc, 0.0))
                # smallest positive root of A a^2 + 2 B a + C
                r1 = np.where(A != 0, (-B - sq) / A, np.where(B != 0, -C / (2 * B), np.inf))
                r2 = np.where(A != 0, (-B + sq) / A, np.inf)
            for r in (r1, r2):
                ok = (r > 0) & np.isfinite(r) & (disc >= 0)
                alphas = np.where(ok, np.minimum(alphas, r), alphas)
            # head must stay nonnegative too
            with np.errstate(divide="ignore"):
                h = np.where(d0 < 0, -u0 / d0, np.inf)
            alphas = np.minimum(alphas, h)
            a = min(a, float(alphas.min()))
        return max(a, 0.0)

    def nt_scaling(self, s: np.ndarray, z: np.ndarray) -> "NTScaling":
        return NTScaling(self, s, z)


class NTScaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^{-1} s = lambda``."""

    def __init__(self, cs: ConeSet, s: np.ndarray, z: np.ndarray):
        self.cs = cs
        l = cs.l
        self.d = np.sqrt(s[:l] / z[:l])  # orthant: W = diag(d)
        if cs.n_soc:
            st, zt = cs._tail(s), cs._tail(z)
            s0, z0 = s[cs.heads], z[cs.heads]
            sJs = s0 * s0 - cs._segsum(st * st)
            zJz = z0 * z0 - cs._segsum(zt * zt)
            sJs = np.maximum(sJs, 1e-300)
            zJz = np.maximum(zJz, 1e-300)
            sn, zn = np.sqrt(sJs), np.sqrt(zJz)
            sbar = s[l:] / cs._bcast(sn)
            zbar = z[l:] / cs._bcast(zn)
            g = np.sqrt(np.maximum((1.0 + cs._segsum(sbar * zbar)) / 2.0, 1e-300))
            Jz = -zbar
            Jz[cs.is_head] = zbar[cs.is_head]
            wbar = (sbar + Jz) / cs._bcast(2.0 * g)
            # W = eta (2 w w' - J) with w = (wbar + e) / sqrt(2 (wbar0 + 1)), so w'Jw = 1.
            e0 = cs.is_head.astype(float)
            w = (wbar + e0) / cs._bcast(np.sqrt(2.0 * (wbar[cs.is_head] + 1.0)))
            self.w = w
            self.w0 = w[cs.is_head]
            wt = w.copy()
            wt[cs.is_head] = 0.0
            self.wt = wt
            self.eta = (sJs / zJz) ** 0.25
        self.lam = self.apply(z)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``W v``."""
        cs = self.cs
        out = np.empty_like(v)
        out[: cs.l] = self.d * v[: cs.l]
        if cs.n_soc:
            sv = v[cs.l :]
            wv = cs._segsum(self.w * sv)
            Jv = -sv.copy()
            Jv[cs.is_head] = sv[cs.is_head]
            out[cs.l :] = cs._bcast(self.eta) * (2.0 * self.w * cs._bcast(wv) - Jv)
        return out

    def apply_inv(self, v: np.ndarray) -> np.ndarray:
        """``W^{-1} v`` with ``W^{-1} = (2 J w w' J - J) / eta``."""
        cs = self.cs
        out = np.empty_like(v)
        out[: cs.l] = v[: cs.l] / self.d
        if cs.n_soc:
            sv = v[cs.l :]
            Jw = -self.w.copy()
            Jw[cs.is_head] = self.w[cs.is_head]
            Jv = -sv.copy()
            Jv[cs.is_head] = sv[cs.is_head]
            wJv = cs._segsum(Jw * sv)
            out[cs.l :] = (2.0 * Jw * cs._bcast(wJv) - Jv) / cs._bcast(self.eta)
        return out

    def apply_sq(self, v: np.ndarray) -> np.ndarray:
        return self.apply(self.apply(v))

    def lifted_factors(self):
        """Rank-two expansion ``W^2 = eta^2 (I + u u' - v v')`` per SOC.

        Returns per-entry arrays ``(eta2, u, v)`` over the SOC part, where ``u``
        and ``v`` are the per-cone vectors laid out flat.
        """
        cs = self.cs
        rho = np.sqrt(cs._segsum(self.wt * self.wt))
        w0 = self.w0
        m = 2.0 * rho * rho + 1.0
        g = 1.0 + 8.0 * w0 * w0 * rho * rho
        h = 4.0 * m * w0 * rho
        theta = g + h
        safe = np.where(rho > 0, rho, 1.0)
        nhat = self.wt / cs._bcast(safe)
        e0 = cs.is_head.astype(float)
        p = (e0 + nhat) / np.sqrt(2.0)
        qv = (e0 - nhat) / np.sqrt(2.0)
        u = p * cs._bcast(np.sqrt(np.maximum(theta - 1.0, 0.0)))
        v = qv * cs._bcast(np.sqrt(np.maximum(1.0 - 1.0 / theta, 0.0)))
        return self.eta**2, u, v
