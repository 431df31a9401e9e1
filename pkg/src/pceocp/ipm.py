"""Primal-dual interior-point method for convex QPs over orthant x SOC products.

The problem ``min 1/2 x'Px + q'x  s.t.  Ax = b, Gx + s = h, s in K`` is embedded
in a homogeneous self-dual model with extra scalars ``tau`` and ``kappa``:

    P x + A'y + G'z + q tau                     = 0
    A x - b tau                                 = 0
    G x + s - h tau                             = 0
    kappa + q'x + b'y + h'z + x'Px / tau         = 0
    (s, z) in K x K*,  tau, kappa >= 0

Each iteration takes a Mehrotra predictor-corrector step in Nesterov-Todd
scaled coordinates. Optimal points come out as ``x / tau``; ``tau -> 0`` with a
certificate signals infeasibility.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cones import ConeSet
from .kkt import KKTError, make_kkt
from .transcription import StandardForm

__all__ = ["IPMResult", "IPMWorkspace", "equilibrate", "ipm_solve"]


@dataclass
class IPMResult:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    objective: float
    solve_time: float
    certificate: str | None = None


# reduced tolerance for infeasibility certificates once the iteration stalls
_REDUCED_INFEAS = 5e-5
_MIN_STEP = 1e-10


def _inf(v: np.ndarray) -> float:
    return float(np.abs(v).max(initial=0.0))


def _col_inf(M: sp.csc_matrix) -> np.ndarray:
    M = sp.csc_matrix(M)
    if M.shape[0] == 0 or M.nnz == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _row_inf(M) -> np.ndarray:
    return _col_inf(sp.csc_matrix(M).T)


@dataclass
class Equilibration:
    """Scaled data ``cDPD, cDq, E_A A D, E_A b, E_G G D, E_G h``.

    Original iterates are ``x = D xh``, ``s = sh / E_G``, ``y = E_A yh / c``,
    ``z = E_G zh / c``. Each second-order cone gets a single row scale so the
    cone is mapped onto itself.
    """

    D: np.ndarray
    EA: np.ndarray
    EG: np.ndarray
    c: float
    sf: StandardForm


def equilibrate(sf: StandardForm, cs: ConeSet, iters: int = 15, bounds=(1e-4, 1e4)) -> Equilibration:
    n, p, m = sf.n, sf.b.size, sf.h.size
    P = sp.csc_matrix(sf.P)
    A = sp.csc_matrix(sf.A)
    G = sp.csc_matrix(sf.G)
    D, EA, EG = np.ones(n), np.ones(p), np.ones(m)
    lo, hi = bounds
    for _ in range(iters):
        col = np.maximum.reduce([_col_inf(P), _col_inf(A), _col_inf(G)]) if n else np.zeros(0)
        dd = 1.0 / np.sqrt(np.where(col > 0, col, 1.0))
        ea = _row_inf(A)
        ea = 1.0 / np.sqrt(np.where(ea > 0, ea, 1.0))
        eg = _row_inf(G)
        eg = np.where(eg > 0, eg, 1.0)
        if cs.n_soc:
            # one scale per cone: geometric mean of its row norms
            logs = cs._segsum(np.log(eg[cs.l :])) / cs.q
            eg[cs.l :] = np.exp(cs._bcast(logs))
        eg = 1.0 / np.sqrt(eg)
        dd = np.clip(dd, lo, hi)
        ea = np.clip(ea, lo, hi)
        eg = np.clip(eg, lo, hi)
        Dm = sp.diags(dd)
        P = Dm @ P @ Dm
        A = sp.diags(ea) @ A @ Dm
        G = sp.diags(eg) @ G @ Dm
        D *= dd
        EA *= ea
        EG *= eg
        if np.all(np.abs(1 - dd) < 1e-3) and np.all(np.abs(1 - ea) < 1e-3) and np.all(np.abs(1 - eg) < 1e-3):
            break
    q = D * sf.q
    pcol = _col_inf(P)
    c = 1.0 / max(float(pcol.mean()) if n else 1.0, float(np.abs(q).max(initial=0.0)), 1e-4)
    c = min(max(c, lo), hi)
    scaled = StandardForm(
        sp.csc_matrix(c * P), c * q, sp.csc_matrix(A), EA * sf.b, sp.csc_matrix(G), EG * sf.h, sf.cones
    )
    return Equilibration(D, EA, EG, c, scaled)


def _symmetrized(sf: StandardForm) -> StandardForm:
    """Return ``sf`` with P rebuilt from its upper triangle, as the KKT assembly reads it."""
    P = sp.csc_matrix(sf.P)
    if sp.tril(P, -1).nnz == 0 and sp.triu(P, 1).nnz:
        return dataclasses.replace(sf, P=sp.csc_matrix(P + sp.triu(P, 1).T))
    return sf


class IPMWorkspace:
    """Data that depends only on the program structure (P, A, G, cones).

    Re-solving with new ``q``, ``b``, ``h`` (as in receding-horizon control)
    reuses the equilibration, the scaled matrices and the KKT pattern.
    """

    def __init__(self, sf: StandardForm, opts):
        self._key = (sf.P, sf.A, sf.G)
        sf = _symmetrized(sf)
        self.cones = sf.cones
        self.kkt_method = opts.kkt
        self.regularization = opts.regularization
        self.cs = ConeSet(sf.cones)
        eq = equilibrate(sf, self.cs)
        self.D, self.EA, self.EG, self.c = eq.D, eq.EA, eq.EG, eq.c
        self.P0, self.A0, self.G0 = sp.csr_matrix(sf.P), sp.csr_matrix(sf.A), sp.csr_matrix(sf.G)
        self.A0T, self.G0T = self.A0.T.tocsr(), self.G0.T.tocsr()
        ssf = eq.sf
        self.P, self.A, self.G = sp.csr_matrix(ssf.P), sp.csr_matrix(ssf.A), sp.csr_matrix(ssf.G)
        self.AT, self.GT = self.A.T.tocsr(), self.G.T.tocsr()
        n = sf.n
        diag_scale = max(1.0, _inf(self.P.diagonal()) if n else 1.0)
        self.reg = max(opts.regularization, 1e-9 * diag_scale)
        self.kkt = make_kkt(ssf, self.cs, self.reg, opts.kkt)

    def matches(self, sf: StandardForm, opts) -> bool:
        P, A, G = self._key
        return (
            sf.P is P and sf.A is A and sf.G is G and sf.cones == self.cones
            and opts.kkt == self.kkt_method and opts.regularization == self.regularization
        )

    def scaled_vectors(self, sf: StandardForm):
        return self.c * self.D * sf.q, self.EA * sf.b, self.EG * sf.h


def ipm_solve(sf: StandardForm, opts, workspace: IPMWorkspace | None = None) -> IPMResult:
    """Solve a standard-form problem.

    Args:
        sf: the problem.
        opts: object with ``max_iterations``, ``eps_feas``, ``eps_gap``,
            ``eps_infeas``, ``regularization``, ``kkt`` and ``verbose`` attributes.
        workspace: optional cached structure from an earlier solve of a
            program with the same matrices; rebuilt if it does not match.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _ipm_solve(sf, opts, workspace)


def _ipm_solve(sf: StandardForm, opts, workspace: IPMWorkspace | None) -> IPMResult:
    t0 = time.perf_counter()
    ws = workspace if workspace is not None and workspace.matches(sf, opts) else IPMWorkspace(sf, opts)
    cs = ws.cs
    D, EA, EG, cscale = ws.D, ws.EA, ws.EG, ws.c
    P0, A0, G0, A0T, G0T = ws.P0, ws.A0, ws.G0, ws.A0T, ws.G0T
    q0, b0, h0 = sf.q, sf.b, sf.h
    P, A, G, AT, GT = ws.P, ws.A, ws.G, ws.AT, ws.GT
    q, b, h = ws.scaled_vectors(sf)
    n, p, m = q.size, b.size, h.size
    kkt = ws.kkt
    nu = cs.nu

    def unscale(x, y, z, s):
        return D * x, EA * y / cscale, EG * z / cscale, s / EG

    def result(status, x, y, z, s, tau, it, pres, dres, gap, cert=None):
        xo, yo, zo, so = unscale(x, y, z, s)
        if status == "infeasible":
            obj = float("nan")
        else:
            xo, yo, zo, so = xo / tau, yo / tau, zo / tau, so / tau
            obj = float(0.5 * xo @ (P0 @ xo) + q0 @ xo)
        return IPMResult(xo, yo, zo, so, status, it, pres, dres, gap, obj, time.perf_counter() - t0, cert)

    # -- initial point ----------------------------------------------------
    try:
        kkt.update(None)
        x, y, z = kkt.solve(-q, b, h)
    except KKTError:
        zero = np.zeros
        return result("numerical_error", zero(n), zero(p), zero(m), zero(m), 1.0, 0, np.inf, np.inf, np.inf)
    s = cs.shift_interior(-z) if m else np.zeros(0)
    z = cs.shift_interior(z) if m else np.zeros(0)
    tau, kappa = 1.0, 1.0

    nb, nh, nq = _inf(b0), _inf(h0), _inf(q0)
    pres = dres = gap = np.inf
    it = 0
    last = (x, y, z, s, tau, it, pres, dres, gap)

    def certificate(eps):
        x, y, z, s, tau, it, pres, dres, gap = last
        xo, yo, zo, so = unscale(x, y, z, s)
        byhz = float(b0 @ yo + h0 @ zo)
        if byhz < 0 and _inf(A0T @ yo + G0T @ zo) <= eps * -byhz:
            return result("infeasible", x, y / -byhz, z / -byhz, s, tau, it, pres, dres, gap, "primal")
        qx = float(q0 @ xo)
        if qx < 0 and max(_inf(P0 @ xo), _inf(A0 @ xo), _inf(G0 @ xo + so)) <= eps * -qx:
            return result("infeasible", x / -qx, y, z, s / -qx, tau, it, pres, dres, gap, "dual")
        return None

    def give_up(status):
        # stalled or broke down: accept an infeasibility certificate at reduced accuracy
        cert = certificate(_REDUCED_INFEAS)
        return cert if cert is not None else result(status, *last)
    for it in range(opts.max_iterations + 1):
        Px = P @ x
        ATy, GTz = AT @ y, GT @ z
        rx = Px + ATy + GTz + q * tau
        ry = A @ x - b * tau
        rz = G @ x + s - h * tau
        xPx = float(x @ Px)
        qx, by, hz = float(q @ x), float(b @ y), float(h @ z)
        rtau = kappa + qx + by + hz + xPx / tau

        # -- convergence tests on the unscaled iterate --------------------
        xo, yo, zo, so = unscale(x, y, z, s)
        Pxo, Axo, Gxo = P0 @ xo, A0 @ xo, G0 @ xo
        ATyo, GTzo = A0T @ yo, G0T @ zo
        pres = max(_inf(Axo - b0 * tau), _inf(Gxo + so - h0 * tau)) / tau
        dres = _inf(Pxo + ATyo + GTzo + q0 * tau) / tau
        xPxo = float(xo @ Pxo)
        qxo, byo, hzo = float(q0 @ xo), float(b0 @ yo), float(h0 @ zo)
        pobj = (0.5 * xPxo / tau + qxo) / tau
        dobj = (-0.5 * xPxo / tau - byo - hzo) / tau
        gap = abs(pobj - dobj)
        comp = float(so @ zo) / tau**2
        p_scale = 1.0 + max(nb, nh, _inf(Axo) / tau, _inf(Gxo) / tau, _inf(so) / tau)
        d_scale = 1.0 + max(nq, _inf(Pxo) / tau, _inf(ATyo) / tau, _inf(GTzo) / tau)
        if opts.verbose:
            print(f"{it:3d}  pobj {pobj:+.6e}  dobj {dobj:+.6e}  pres {pres:.1e}  dres {dres:.1e}  "
                  f"gap {gap:.1e}  tau {tau:.1e}  kappa {kappa:.1e}")
        if (
            pres <= opts.eps_feas * p_scale
            and dres <= opts.eps_feas * d_scale
            and (gap <= opts.eps_gap * (1.0 + min(abs(pobj), abs(dobj))) or abs(comp) <= opts.eps_gap)
        ):
            return result("optimal", x, y, z, s, tau, it, pres, dres, gap)
        # infeasibility certificates (scale-free ratios in original coordinates)
        last = (x, y, z, s, tau, it, pres, dres, gap)
        cert = certificate(opts.eps_infeas)
        if cert is not None:
            return cert
        if it == opts.max_iterations:
            break

        # -- Newton step -------------------------------------------------
        try:
            W = cs.nt_scaling(s, z)
            lam = W.lam
            kkt.update(W)
            x1, y1, z1 = kkt.solve(-q, b, h)
            qP = q + 2.0 * (Px / tau)
            den = kappa / tau + xPx / tau**2 - (qP @ x1 + b @ y1 + h @ z1)

            def direction(eta, d_s, d_k):
                wl = W.apply(cs.div(lam, d_s))
                x2, y2, z2 = kkt.solve(-eta * rx, -eta * ry, -eta * rz + wl)
                num = eta * rtau - d_k / tau + qP @ x2 + b @ y2 + h @ z2
                dtau = num / den
                dx = x2 + dtau * x1
                dy = y2 + dtau * y1
                dz = z2 + dtau * z1
                # from the linearized primal row; avoids cancellation in W^2 dz
                ds = -eta * rz - G @ dx + h * dtau
                dkappa = (-d_k - kappa * dtau) / tau
                return dx, dy, dz, ds, dtau, dkappa

            def step(ds, dz, dtau, dkappa):
                a = 1e10
                if m:
                    a = min(cs.max_step(s, ds), cs.max_step(z, dz))
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkappa < 0:
                    a = min(a, -kappa / dkappa)
                return a

            mu = (float(s @ z) + tau * kappa) / (nu + 1)
            lamlam = cs.prod(lam, lam)
            _, _, dza, dsa, dta, dka = direction(1.0, lamlam, tau * kappa)
            alpha_a = min(1.0, step(dsa, dza, dta, dka))
            sigma = (1.0 - alpha_a) ** 3
            corr = cs.prod(W.apply_inv(dsa), W.apply(dza))
            d_s = lamlam + corr - sigma * mu * cs.e
            d_k = tau * kappa + dta * dka - sigma * mu
            dx, dy, dz, ds, dt, dk = direction(1.0 - sigma, d_s, d_k)
            alpha = min(1.0, 0.99 * step(ds, dz, dt, dk))
        except (KKTError, FloatingPointError, ZeroDivisionError, ValueError):
            return give_up("numerical_error")
        if not np.isfinite(alpha) or alpha <= _MIN_STEP:
            return give_up("numerical_error")
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dt
        kappa = kappa + alpha * dk
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z)) and np.isfinite(tau)):
            return give_up("numerical_error")
    return give_up("max_iter")
