"""Small dense log-barrier interior-point solver.

Solves ``min f(x)  s.t.  G x <= h,  c(x) <= 0`` for convex ``f`` and ``c``
with damped Newton centring steps and a geometrically increasing barrier
weight. Sized for tens of variables; everything is dense numpy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
from scipy.optimize import nnls


class ConvexProblem(Protocol):
    n: int
    G: np.ndarray
    h: np.ndarray

    def values(self, x) -> tuple[float, np.ndarray] | None:
        """(f, c) at x, or None outside the functions' domain."""

    def derivatives(self, x) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray, Callable]:
        """(f, grad f, hess f, c, jac c, w -> sum_i w_i hess c_i)."""


@dataclass
class BarrierResult:
    x: np.ndarray
    status: str              # "optimal", "max-iter", "not-interior"
    t: float
    newton_steps: int
    gap: float               # m / t
    residual: float          # normalised first-order (KKT stationarity) residual
    multipliers: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _slack_values(prob, x):
    out = prob.values(x)
    if out is None:
        return None, None
    f, c = out
    return f, np.concatenate([prob.G @ x - prob.h, c])


def _strictly_feasible(prob, x) -> bool:
    _, s = _slack_values(prob, x)
    return s is not None and bool(np.all(s < 0))


def _centre(prob, x, t, tol, max_steps):
    """Newton's method on t f(x) - sum log(-s_i(x)); returns (x, steps)."""
    G, h = prob.G, prob.h
    steps = 0
    for steps in range(1, max_steps + 1):
        f, g, H, c, J, curv = prob.derivatives(x)
        s_lin = G @ x - h
        inv_lin = -1.0 / s_lin
        grad = t * g + G.T @ inv_lin
        hess = t * H + (G.T * inv_lin**2) @ G
        if c.size:
            inv_nl = -1.0 / c
            grad += J.T @ inv_nl
            hess += (J.T * inv_nl**2) @ J + curv(inv_nl)
        # symmetric diagonal scaling keeps thin feasible sets well conditioned
        dg = np.sqrt(np.maximum(np.abs(np.diag(hess)), 1e-300))
        try:
            dx = -np.linalg.solve(hess / np.outer(dg, dg), grad / dg) / dg
        except np.linalg.LinAlgError:
            dx = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        dec = float(-grad @ dx)
        # rounding in t * f limits how small the decrement can get
        if not np.isfinite(dec) or dec / 2.0 <= max(tol, 1e-14 * t * (abs(f) + 1.0)):
            break
        phi0 = t * f - np.sum(np.log(-s_lin)) - (np.sum(np.log(-c)) if c.size else 0.0)
        # largest step keeping the linear rows strictly inside
        gd = G @ dx
        grow = gd > 0
        alpha = min(1.0, 0.99 * float(np.min(-s_lin[grow] / gd[grow]))) if grow.any() else 1.0
        while alpha > 1e-14:
            xn = x + alpha * dx
            out = prob.values(xn)
            if out is not None:
                fn, cn = out
                sn = G @ xn - h
                if sn.max() < 0 and (cn.size == 0 or cn.max() < 0):
                    phin = t * fn - np.sum(np.log(-sn)) - np.sum(np.log(-cn))
                    if phin <= phi0 - 0.25 * alpha * dec:
                        break
            alpha *= 0.5
        else:
            break
        x = xn
    return x, steps


def barrier_solve(prob: ConvexProblem, x0, *, mu: float = 50.0, t0: float | None = None, gap_tol: float = 1e-8,
                  newton_tol: float = 1e-12, inner_tol: float = 1e-5, max_newton: int = 60,
                  max_outer: int = 40) -> BarrierResult:
    """Minimise from a strictly feasible ``x0``.

    Intermediate centring stops at ``inner_tol``; the last centre is
    polished to ``newton_tol``. ``t0=None`` picks the initial weight so the
    starting gap bound ``m / t0`` is comparable to ``|f(x0)|``.
    """
    x = np.asarray(x0, dtype=float).copy()
    _, s = _slack_values(prob, x)
    if s is None or np.any(s >= 0):
        return BarrierResult(x, "not-interior", 0.0, 0, np.inf, np.inf)
    m = s.size
    if t0 is None:
        f0, _ = prob.values(x)
        t0 = m / max(abs(f0), 1.0)
    t = t0
    total = 0
    status = "max-iter"
    for _ in range(max_outer):
        last = m / t < gap_tol
        x, k = _centre(prob, x, t, newton_tol if last else inner_tol, max_newton)
        total += k
        if last:
            status = "optimal"
            break
        t *= mu
    lam, resid = kkt_residual(prob, x, t)
    return BarrierResult(x, status, t, total, m / t, resid, lam)


def primal_dual_solve(prob: ConvexProblem, x0, *, mu: float = 10.0, gap_tol: float = 1e-8, feas_tol: float = 1e-9,
                      max_iter: int = 80, stop: Callable | None = None) -> BarrierResult:
    """Primal-dual path following on the log-barrier KKT system.

    Same problem and start requirements as :func:`barrier_solve`. Each
    iteration takes one damped Newton step on the perturbed KKT conditions
    ``grad f + A^T lam = 0``, ``-lam_i s_i = 1 / t`` and then raises ``t`` to
    ``mu * m / gap`` with ``gap = -s^T lam`` the surrogate duality measure.
    Usually needs far fewer Newton steps than re-centring from scratch.
    ``stop(x)`` returning True ends the run early with status "stopped".
    """
    G, h = prob.G, prob.h
    x = np.asarray(x0, dtype=float).copy()
    _, s = _slack_values(prob, x)
    if s is None or np.any(s >= 0):
        return BarrierResult(x, "not-interior", 0.0, 0, np.inf, np.inf)
    n_lin = G.shape[0]
    m = s.size
    lam = -1.0 / s
    lam *= 1.0 / max(1.0, float(np.max(lam)) * 1e-3)

    def kkt(x, lam, t):
        f, g, H, c, J, curv = prob.derivatives(x)
        s = np.concatenate([G @ x - h, c])
        A = np.vstack([G, J]) if c.size else G
        r_dual = g + A.T @ lam
        r_cent = -lam * s - 1.0 / t
        return f, g, H, c, J, curv, s, A, r_dual, r_cent

    status, it = "max-iter", 0
    t = mu * m / float(-s @ lam)
    cached = None  # KKT pieces at the accepted point, reused by the next iteration
    for it in range(1, max_iter + 1):
        if stop is not None and stop(x):
            status = "stopped"
            break
        f, g, H, c, J, curv, s, A, r_dual, r_cent = cached if cached is not None else kkt(x, lam, t)
        gap = float(-s @ lam)
        scale = max(1.0, float(np.linalg.norm(g)))
        if gap < gap_tol and np.linalg.norm(r_dual) <= feas_tol * scale:
            status = "optimal"
            break
        t = max(t, mu * m / gap)
        r_cent = -lam * s - 1.0 / t
        d = -lam / s
        hess = H + (A.T * d) @ A
        if c.size:
            hess += curv(lam[n_lin:])
        rhs = -r_dual - A.T @ (r_cent / s)
        dg = np.sqrt(np.maximum(np.abs(np.diag(hess)), 1e-300))
        try:
            dx = np.linalg.solve(hess / np.outer(dg, dg), rhs / dg) / dg
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(hess, rhs, rcond=None)[0]
        dlam = (r_cent - lam * (A @ dx)) / s
        neg = dlam < 0
        alpha = min(1.0, 0.99 * float(np.min(-lam[neg] / dlam[neg]))) if neg.any() else 1.0
        gd = G @ dx
        grow = gd > 0
        if grow.any():
            alpha = min(alpha, 0.99 * float(np.min(-s[:n_lin][grow] / gd[grow])))
        res0 = np.sqrt(r_dual @ r_dual + r_cent @ r_cent)
        while alpha > 1e-14:
            xn = x + alpha * dx
            _, sn = _slack_values(prob, xn)
            if sn is not None and np.all(sn < 0):
                ln = lam + alpha * dlam
                out = kkt(xn, ln, t)
                if np.sqrt(out[8] @ out[8] + out[9] @ out[9]) <= (1.0 - 0.01 * alpha) * res0:
                    break
            alpha *= 0.5
        else:
            status = "stalled"
            break
        x, lam, cached = xn, ln, out
    _, s = _slack_values(prob, x)
    gap = float(-s @ lam)
    lam_k, resid = kkt_residual(prob, x, m / max(gap, 1e-300))
    _, g, _, c, J, _ = prob.derivatives(x)
    A = np.vstack([G, J]) if c.size else G
    own = float(np.linalg.norm(g + A.T @ lam)) / max(1.0, float(np.linalg.norm(g)))
    if own <= resid:
        lam_k, resid = lam, own
    return BarrierResult(x, status, m / max(gap, 1e-300), it, gap, resid, lam_k)


def kkt_residual(prob: ConvexProblem, x, t: float, active_tol: float = 1e-6):
    """Normalised stationarity residual ``|g + A^T lam| / max(1, |g|)``.

    Two multiplier estimates are tried: the barrier's own ``1 / (t (-s))``
    and nonnegative least squares on the near-active constraints. The
    smaller residual is reported together with its multipliers.
    """
    _, g, _, c, J, _ = prob.derivatives(x)
    s = np.concatenate([prob.G @ x - prob.h, c])
    A = np.vstack([prob.G, J]) if c.size else prob.G
    norm = max(1.0, float(np.linalg.norm(g)))
    lam_bar = 1.0 / (t * -s)
    best = (lam_bar, float(np.linalg.norm(g + A.T @ lam_bar)) / norm)
    active = s >= -active_tol
    if active.any():
        lam_a, rnorm = nnls(A[active].T, -g)
        if rnorm / norm < best[1]:
            lam = np.zeros(s.size)
            lam[active] = lam_a
            best = (lam, rnorm / norm)
    elif float(np.linalg.norm(g)) / norm < best[1]:
        best = (np.zeros(s.size), float(np.linalg.norm(g)) / norm)
    return best


class _PhaseOne:
    """min s  s.t.  soft constraints <= s, hard constraints <= 0, over z = (x, s).

    Constraints already strictly satisfied at the start point stay hard so
    the iterate cannot wander out of the problem's domain.
    """

    def __init__(self, prob: ConvexProblem, soft_lin, soft_nl):
        self.prob = prob
        self.n = prob.n + 1
        self.soft_nl = soft_nl.astype(float)
        self.G = np.hstack([prob.G, -soft_lin.astype(float)[:, None]])
        self.h = prob.h

    def values(self, z):
        out = self.prob.values(z[:-1])
        if out is None:
            return None
        return z[-1], out[1] - self.soft_nl * z[-1]

    def derivatives(self, z):
        _, _, _, c, J, curv = self.prob.derivatives(z[:-1])
        n = self.n
        g = np.zeros(n)
        g[-1] = 1.0

        def curv_z(w):
            H = np.zeros((n, n))
            H[:-1, :-1] = curv(w)
            return H

        Jz = np.hstack([J, -self.soft_nl[:, None]]) if c.size else np.zeros((0, n))
        return z[-1], g, np.zeros((n, n)), c - self.soft_nl * z[-1], Jz, curv_z


def find_interior(prob: ConvexProblem, x0, *, margin: float = 1e-4, hard_below: float = -1e-4,
                  gap_tol: float = 1e-11, max_iter: int = 60):
    """Phase I: a strictly feasible point near ``x0``, or ``None``.

    Constraints with value below ``hard_below`` at ``x0`` are kept as hard
    barrier terms; the rest share one relaxation variable ``s`` which is
    driven below ``-margin``. A start that is feasible but hugging a
    boundary is recentred the same way, since barrier Newton steps are
    useless at slacks near round-off. When the margin is out of reach (a
    thin feasible set) the most interior point found is returned. ``None``
    means no strictly feasible point was found.
    """
    x0 = np.asarray(x0, dtype=float)
    _, s = _slack_values(prob, x0)
    if s is None:
        return None
    if np.max(s) < -margin:
        return x0.copy()
    soft = s >= min(hard_below, -margin)
    n_lin = prob.G.shape[0]
    phase = _PhaseOne(prob, soft[:n_lin], soft[n_lin:])
    z = np.append(x0, float(np.max(s[soft])) + 1e-3)
    # "most interior" = largest smallest slack over all constraints
    best = [x0.copy(), -float(np.max(s))] if np.all(s < 0) else [None, 0.0]

    def stop(zk):
        _, sz = _slack_values(prob, zk[:-1])
        if sz is None or not np.all(sz < 0):
            return False
        depth = -float(np.max(sz))
        if depth > best[1]:
            best[:] = [zk[:-1].copy(), depth]
        return zk[-1] < -margin

    res = primal_dual_solve(phase, z, gap_tol=gap_tol, max_iter=max_iter, stop=stop)
    if res.status == "stopped":
        return res.x[:-1].copy()
    stop(res.x)
    return best[0]
