"""Compression-ratio block: dual decomposition over the total energy budget.

For a fixed multiplier the groups decouple into one-dimensional problems
``max R(delta) - lam * E(delta)`` over a feasible set bounded below by the
distortion requirement and above by the latency budget. Each is solved by a
coarse grid seed followed by safeguarded Newton on the stationarity
condition. The multiplier follows a projected subgradient step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .link import LN2, AllocationState, SystemModel

SCAN_POINTS = 257


@dataclass(frozen=True)
class DeltaOptions:
    grid_size: int = 32            # M_delta
    tol: float = 1e-6              # epsilon_delta, Newton step tolerance
    energy_gap_rel: float = 1e-3   # stop when |sum E - E_max| < rel * E_max
    step0: float = 0.5
    max_iter: int = 200
    newton_iter: int = 40


@dataclass
class DeltaDualState:
    lam: float = 0.0
    iteration: int = 0
    history: list = field(default_factory=list)

    def step_size(self, step0: float) -> float:
        return step0 / math.sqrt(self.iteration + 1)


class GroupDelta:
    """One group's 1-D compression-ratio problem at fixed (p, b)."""

    def __init__(self, model: SystemModel, edge: int, p: float, b: float):
        self.model = model
        self.edge = int(edge)
        self.p = float(p)
        self.b = float(b)
        prof = model.profiles
        e = self.edge
        self.surf = (prof.a[e], prof.b[e], prof.d[e], prof.rho_min[e], prof.rho_max[e])
        i, j = int(model.edge_i[e]), int(model.edge_j[e])
        self.users = (i, j)
        self.gain = np.array([model.gain_sq[i], model.gain_sq[j]])
        self.q = np.array([model.source_bits[i], model.source_bits[j]])
        self.tau_dec = np.array([model.tau_dec[i], model.tau_dec[j]])
        self.tau_bs = model.tau_bs
        self.t_max = model.budgets.max_latency_s
        self.zeta = model.budgets.comp_energy_coeff_j
        self.noise = self.b * model.n0
        self.lower = float(model.delta_lb[e])
        self._intervals = None

    # -- model pieces, vectorised over delta ---------------------------------
    def _rho(self, delta):
        a, b, d, lo, hi = self.surf
        z = a * self.p + b * delta + d
        s_neg = 1.0 / (1.0 + np.exp(np.clip(z, -700, 700)))
        rho = lo + (hi - lo) * s_neg
        drho = -b * (hi - lo) * s_neg * (1.0 - s_neg)
        return rho, drho

    def evaluate(self, delta):
        """Rates, rate slopes, delays, latency and energy at each delta.

        Returned arrays have shape ``(2, len(delta))`` for per-user terms.
        """
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        rho, drho = self._rho(delta)
        ph = self.p * self.gain[:, None]          # p |h_u|^2
        two_bn = 2.0 * self.noise
        den_lo = two_bn + rho * ph
        den_hi = den_lo + ph
        rate = self.b * np.log2(den_hi / den_lo)
        # d R_u / d delta = -b p^2 h^4 rho' / (ln2 (2bN0 + (1+rho) p h^2)(2bN0 + rho p h^2))
        drate = -self.b * ph * ph * drho / (LN2 * den_hi * den_lo)
        with np.errstate(divide="ignore"):
            delay = np.where(rate > 0, self.q[:, None] * delta / np.where(rate > 0, rate, 1.0), np.inf)
        latency = self.tau_bs + np.max(delay + self.tau_dec[:, None], axis=0)
        tmax = np.max(delay, axis=0)
        energy = np.where(np.isinf(tmax), np.inf, self.p * tmax) - self.zeta * np.log(delta)
        return rate, drate, delay, latency, energy

    def objective(self, delta, lam: float, rate_weight: float = 1.0):
        rate, _, _, _, energy = self.evaluate(delta)
        return rate_weight * rate.sum(axis=0) - lam * energy

    def gradient(self, delta, lam: float, rate_weight: float = 1.0):
        """Derivative of the group objective, using the latency-dominant user."""
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        rate, drate, delay, _, _ = self.evaluate(delta)
        dom = np.argmax(delay, axis=0)
        cols = np.arange(delta.size)
        r_s, dr_s, q_s = rate[dom, cols], drate[dom, cols], self.q[dom]
        d_energy = self.p * q_s * (r_s - delta * dr_s) / r_s**2 - self.zeta / delta
        return rate_weight * drate.sum(axis=0) - lam * d_energy

    # -- feasible set ----------------------------------------------------------
    def _latency_gap(self, delta):
        return self.evaluate(delta)[3] - self.t_max

    def intervals(self):
        """Disjoint closed intervals of delta meeting distortion and latency."""
        if self._intervals is None:
            self._intervals = self._compute_intervals()
        return self._intervals

    def _compute_intervals(self):
        lo = self.lower
        if not lo <= 1.0:
            return []
        if lo == 1.0:
            return [(1.0, 1.0)] if self._latency_gap(1.0)[0] <= 0 else []
        xs = np.linspace(lo, 1.0, SCAN_POINTS)
        ok = self._latency_gap(xs) <= 0
        out, start = [], None
        for k in range(xs.size):
            if ok[k] and start is None:
                start = xs[k] if k == 0 else self._bisect(xs[k - 1], xs[k])
            if not ok[k] and start is not None:
                out.append((start, self._bisect(xs[k], xs[k - 1])))
                start = None
        if start is not None:
            out.append((start, 1.0))
        return out

    def _bisect(self, bad, good):
        """Boundary between an infeasible and a feasible delta; returns the feasible side."""
        gap = lambda x: float(self._latency_gap(x)[0])
        root = brentq(gap, bad, good, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        # brentq may land a hair on the infeasible side; step toward `good`
        step = np.spacing(root)
        while gap(root) > 0 and root != good:
            root = root + step if good > bad else root - step
            step *= 2.0
            if (root - good) * (good - bad) > 0:
                root = good
        return float(root)

    # -- 1-D maximisation -------------------------------------------------------
    def solve(self, lam: float, grid_size: int = 32, tol: float = 1e-6, newton_iter: int = 40,
              rate_weight: float = 1.0):
        """Maximise the group objective over the feasible set.

        Returns ``(delta, value)`` or ``None`` when the feasible set is empty.
        """
        ivs = self.intervals()
        if not ivs:
            return None
        total = sum(h - l for l, h in ivs)
        best_x, best_v = None, -np.inf
        for lo, hi in ivs:
            n = max(2, int(round(grid_size * (hi - lo) / total))) if total > 0 else 1
            xs = np.linspace(lo, hi, n) if hi > lo else np.array([lo])
            vals = self.objective(xs, lam, rate_weight)
            k = int(np.argmax(vals))
            if vals[k] > best_v:
                best_x, best_v = float(xs[k]), float(vals[k])
            for lo_b, hi_b in self._brackets(xs, vals, lo, hi):
                x = self._newton(lo_b, hi_b, lam, tol, newton_iter, rate_weight)
                v = float(self.objective(x, lam, rate_weight)[0])
                if v > best_v:
                    best_x, best_v = x, v
        return best_x, best_v

    @staticmethod
    def _brackets(xs, vals, lo, hi):
        """Neighbourhoods of the grid's local maxima."""
        n = xs.size
        for k in range(n):
            left = vals[k - 1] if k > 0 else -np.inf
            right = vals[k + 1] if k < n - 1 else -np.inf
            if vals[k] >= left and vals[k] >= right:
                yield (xs[k - 1] if k > 0 else lo, xs[k + 1] if k < n - 1 else hi)

    def _newton(self, lo, hi, lam, tol, max_iter, rate_weight):
        """Safeguarded Newton on the stationarity condition inside [lo, hi].

        Falls back to bisection whenever the Newton step leaves the bracket,
        and also splits at kinks where the latency-dominant user switches.
        """
        g_lo = self.gradient(lo, lam, rate_weight)[0]
        g_hi = self.gradient(hi, lam, rate_weight)[0]
        if g_lo <= 0 and g_hi <= 0:
            return float(lo)
        if g_lo >= 0 and g_hi >= 0:
            return float(hi)
        if g_lo < 0 < g_hi:  # local minimum inside: endpoints are candidates already
            return float(lo)
        x = 0.5 * (lo + hi)
        for _ in range(max_iter):
            h = 1e-7 * max(hi - lo, 1e-9)
            g3 = self.gradient(np.array([x, x - h, x + h]), lam, rate_weight)
            g, dg = g3[0], (g3[2] - g3[1]) / (2 * h)
            if g > 0:
                lo = x
            else:
                hi = x
            step = -g / dg if dg < 0 else None
            x_new = x + step if step is not None else None
            if x_new is None or not lo < x_new < hi:
                x_new = 0.5 * (lo + hi)
            if abs(x_new - x) < tol * 1e-3 or hi - lo < 1e-13:
                x = x_new
                break
            x = x_new
        return float(x)


def dual_energy_update(lam: float, total_energy: float, energy_max: float, step: float) -> float:
    return max(0.0, lam + step * (total_energy - energy_max))


@dataclass
class DeltaResult:
    delta: np.ndarray | None
    lam: float
    iterations: int
    status: str
    lam_history: list

    @property
    def feasible(self) -> bool:
        return self.delta is not None


def optimize_delta(model: SystemModel, edges, p, b, options: DeltaOptions | None = None,
                   lam0: float = 0.0) -> DeltaResult:
    """Compression-ratio allocation for fixed pairing and radio resources."""
    opt = options or DeltaOptions()
    groups = [GroupDelta(model, e, pk, bk) for e, pk, bk in zip(edges, p, b)]
    if any(not g.intervals() for g in groups):
        return DeltaResult(None, lam0, 0, "empty-interval", [lam0])
    e_max = model.budgets.energy_budget_j
    gap_tol = opt.energy_gap_rel * e_max
    dual = DeltaDualState(lam=lam0)
    lam_hist = [lam0]
    scale = None
    delta = None
    best_feasible = None
    status = "cap"
    for s in range(opt.max_iter):
        dual.iteration = s
        sol = [g.solve(dual.lam, opt.grid_size, opt.tol, opt.newton_iter) for g in groups]
        delta = np.array([x for x, _ in sol])
        energies = np.array([g.evaluate(x)[4][0] for g, x in zip(groups, delta)])
        rates = np.array([g.evaluate(x)[0].sum() for g, x in zip(groups, delta)])
        e_tot = float(energies.sum())
        if e_tot <= e_max and (best_feasible is None or rates.sum() > best_feasible[1]):
            best_feasible = (delta.copy(), float(rates.sum()))
        if scale is None:
            scale = max(float(rates.sum()), 1.0) / e_max
        lam_prev = dual.lam
        dual.lam = dual_energy_update(dual.lam, e_tot, e_max, dual.step_size(opt.step0) * scale / e_max)
        lam_hist.append(dual.lam)
        if abs(e_tot - e_max) < gap_tol:
            status = "converged"
            break
        if lam_prev == 0.0 and e_tot <= e_max:
            status = "slack"
            break
    iters = dual.iteration + 1
    if float(sum(g.evaluate(x)[4][0] for g, x in zip(groups, delta))) <= e_max:
        if status != "slack":
            delta, status = _fill_budget(groups, delta, e_max, opt, status)
        return DeltaResult(delta, dual.lam, iters, status, lam_hist)
    if best_feasible is not None:
        filled, status = _fill_budget(groups, best_feasible[0], e_max, opt, status + "+best-feasible")
        return DeltaResult(filled, dual.lam, iters, status, lam_hist)
    projected = _project_energy(groups, delta, e_max, opt)
    if projected is None:
        return DeltaResult(None, dual.lam, iters, "energy-infeasible", lam_hist)
    return DeltaResult(projected, dual.lam, iters, status + "+projected", lam_hist)


def _totals(groups, delta):
    """(sum rate, total energy, all deltas inside their feasible sets)."""
    rate = energy = 0.0
    inside = True
    for g, x in zip(groups, delta):
        r, _, _, lat, en = g.evaluate(x)
        rate += float(r.sum())
        energy += float(en[0])
        inside = inside and x >= g.lower - 1e-15 and lat[0] <= g.t_max
    return rate, energy, inside


def _fill_budget(groups, delta, e_max, opt: DeltaOptions, status: str, points: int = 65):
    """Primal recovery when the energy budget binds.

    The per-group objectives are not concave in delta, so the dual iterate can
    jump past the budget boundary and leave energy unused. Walk the segment
    from the feasible ``delta`` toward the unpenalised maximisers and keep the
    best feasible point, refining the last energy crossing by root finding.
    """
    free = np.array([g.solve(0.0, opt.grid_size, opt.tol, opt.newton_iter)[0] for g in groups])
    base_rate, _, _ = _totals(groups, delta)
    thetas = np.linspace(0.0, 1.0, points)
    best_t, best_rate = 0.0, base_rate
    prev_ok = True
    for k, t in enumerate(thetas[1:], start=1):
        rate, energy, inside = _totals(groups, delta + t * (free - delta))
        ok = inside and energy <= e_max
        if not ok and prev_ok and inside:
            # energy crossing between the previous point and this one
            h = lambda s: _totals(groups, delta + s * (free - delta))[1] - e_max  # noqa: E731
            s = brentq(h, thetas[k - 1], t, xtol=1e-12)
            while h(s) > 0 and s > thetas[k - 1]:
                s = max(thetas[k - 1], s - 1e-12)
            r_s, e_s, in_s = _totals(groups, delta + s * (free - delta))
            if in_s and e_s <= e_max and r_s > best_rate:
                best_t, best_rate = s, r_s
        if ok and rate > best_rate:
            best_t, best_rate = t, rate
        prev_ok = ok
    if best_t == 0.0:
        return delta, status
    return delta + best_t * (free - delta), status + "+filled"


def _project_energy(groups, delta, e_max, opt: DeltaOptions):
    """Shrink every delta toward the low end of its interval until energy fits."""
    lows = []
    for g, x in zip(groups, delta):
        lows.append(next(lo for lo, hi in g.intervals() if lo - 1e-15 <= x <= hi + 1e-15))
    lows = np.array(lows)
    for theta in np.linspace(1.0, 0.0, 41):
        cand = lows + theta * (delta - lows)
        if sum(g.evaluate(x)[4][0] for g, x in zip(groups, cand)) <= e_max:
            return cand
    # energy-minimising ratio per group
    cand = np.array([g.solve(1.0, opt.grid_size, opt.tol, opt.newton_iter, rate_weight=0.0)[0] for g in groups])
    if sum(g.evaluate(x)[4][0] for g, x in zip(groups, cand)) <= e_max:
        return cand
    return None


def feasible_delta_interval(model: SystemModel, edge: int, p: float, b: float):
    """Feasible delta set of one group as a list of disjoint intervals."""
    return GroupDelta(model, edge, p, b).intervals()


def optimize_state_delta(model: SystemModel, state: AllocationState, options: DeltaOptions | None = None,
                         lam0: float = 0.0) -> DeltaResult:
    return optimize_delta(model, state.edges(model), state.p, state.b, options, lam0)
