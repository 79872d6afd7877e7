"""Power-bandwidth block: trust-region successive convex approximation.

At each inner iteration the interference product ``q = p * rho(p, delta)``
is replaced by its tangent line at the current power, which makes both
logarithmic terms of the rate concave in ``(p, b)``. The subtracted term is
then linearised, giving a concave lower bound on every user's rate that is
tight at the expansion point. The resulting convex programme is solved in
scaled variables ``(p / P_max, b / B_max)`` by the barrier solver, and the
candidate is accepted or rejected by comparing true and predicted gains.

Internally the logarithms are written as ``ln(1 + A / b)``. This differs from
the ``ln(N0 + A N0 / b)`` form by ``(b / ln 2) ln N0`` in both terms, which
is linear in ``b`` and cancels exactly in the bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .barrier import barrier_solve, find_interior, primal_dual_solve
from .link import FEAS_TOL, LN2, AllocationState, SystemModel, check_feasible
from .profiles import RhoSurface, drho_dp, eval_rho

CONTINUOUS_CONSTRAINTS = ("power", "bandwidth", "nonnegative", "latency", "energy")


@dataclass(frozen=True)
class PBOptions:
    eta1: float = 0.1
    eta2: float = 0.75
    kappa_sh: float = 0.5
    kappa_ex: float = 2.0
    radius0_frac: float = 0.25       # initial radius as a fraction of p_k
    eps: float = 1e-4                # relative-improvement stop
    max_iter: int = 50
    radius_floor_frac: float = 1e-6  # of P_max
    bw_floor_hz: float = 1e3
    barrier_gap: float = 1e-8
    solver: str = "primal-dual"      # or "barrier" (plain re-centring scheme)
    extrapolate: bool = True         # extend accepted steps along their direction

    def __post_init__(self):
        if self.solver not in ("primal-dual", "barrier"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if not 0 < self.eta1 < self.eta2 < 1:
            raise ValueError("need 0 < eta1 < eta2 < 1")
        if not 0 < self.kappa_sh < 1 or self.kappa_ex <= 1:
            raise ValueError("need 0 < kappa_sh < 1 < kappa_ex")


@dataclass
class TrustRegionState:
    radii: np.ndarray
    p: np.ndarray
    b: np.ndarray
    eta1: float = 0.1
    eta2: float = 0.75
    kappa_sh: float = 0.5
    kappa_ex: float = 2.0
    eps: float = 1e-4

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        if np.any(self.radii <= 0):
            raise ValueError("trust radii must be positive")
        if not 0 < self.eta1 < self.eta2 < 1:
            raise ValueError("need 0 < eta1 < eta2 < 1")

    def update(self, eta: float | None, accepted: bool) -> None:
        """Radius rule: expand on a very successful step, shrink on rejection."""
        if not accepted:
            self.radii = self.radii * self.kappa_sh
        elif eta is not None and eta >= self.eta2:
            self.radii = self.radii * self.kappa_ex


# ---------------------------------------------------------------------------
# surrogate pieces

def qhat_coefficients(surface: RhoSurface, delta: float, p_anchor: float):
    """(slope, intercept) of the tangent to p * rho(p, delta) at ``p_anchor``."""
    if p_anchor < 0:
        raise ValueError("anchor power must be nonnegative")
    rho0 = eval_rho(surface, p_anchor, delta)
    slope = rho0 + p_anchor * drho_dp(surface, p_anchor, delta)
    return slope, p_anchor * rho0 - slope * p_anchor


def qhat(surface: RhoSurface, delta: float, p_anchor: float, p):
    slope, icpt = qhat_coefficients(surface, delta, p_anchor)
    return icpt + slope * np.asarray(p, dtype=float)


def r_plus(p, b, gain_sq, q, n0):
    """(b / ln2) ln(N0 + |h|^2 (p + q) / 2b)."""
    return b / LN2 * np.log(n0 + gain_sq * (p + q) / (2.0 * b))


def r_minus(p, b, gain_sq, q, n0):
    """(b / ln2) ln(N0 + |h|^2 q / 2b); ``p`` enters only through ``q``."""
    return b / LN2 * np.log(n0 + gain_sq * q / (2.0 * b))


def r_minus_grad(b, gain_sq, q, q_slope, n0):
    """Gradient of ``r_minus`` in (p, b) when q is affine in p with ``q_slope``."""
    u = n0 + gain_sq * q / (2.0 * b)
    d_p = gain_sq * q_slope / (2.0 * LN2 * u)
    d_b = (np.log(u) - gain_sq * q / (2.0 * b * u)) / LN2
    return d_p, d_b


@dataclass(frozen=True, eq=False)
class SurrogateModel:
    """Per-group surrogate data around an expansion point.

    Arrays are ``(K,)`` per group or ``(K, 2)`` per (group, member).
    """

    p0: np.ndarray
    b0: np.ndarray
    q_slope: np.ndarray
    q_icpt: np.ndarray
    gain: np.ndarray        # (K, 2) |h|^2
    n0: float
    floors: np.ndarray      # (K, 2) latency rate floors
    t_hat: np.ndarray       # (K,) max residual time budget of the pair
    comp_energy: float      # zeta * sum ln(1 / delta)
    # derived: A = alpha * p + beta for the plus / minus logs
    alpha_p: np.ndarray = field(init=False)
    beta_p: np.ndarray = field(init=False)
    grad_m: tuple = field(init=False)
    val_m: np.ndarray = field(init=False)

    def __post_init__(self):
        c = self.gain / (2.0 * self.n0)
        s, t = self.q_slope[:, None], self.q_icpt[:, None]
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("alpha_p", c * (1.0 + s))
        set_("beta_p", c * t)
        alpha_m, beta_m = c * s, c * t
        b0, p0 = self.b0[:, None], self.p0[:, None]
        z = (alpha_m * p0 + beta_m) / b0
        set_("val_m", b0 / LN2 * np.log1p(z))
        set_("grad_m", (alpha_m / (LN2 * (1.0 + z)), (np.log1p(z) - z / (1.0 + z)) / LN2))

    @property
    def num_groups(self) -> int:
        return self.p0.size

    def qhat(self, p):
        return self.q_icpt + self.q_slope * p

    def _plus(self, p, b):
        a = self.alpha_p * p[:, None] + self.beta_p
        z = a / b[:, None]
        return z, b[:, None] / LN2 * np.log1p(z)

    def rate_bounds(self, p, b):
        """Surrogate lower bound on each member's rate, shape (K, 2)."""
        p, b = np.asarray(p, dtype=float), np.asarray(b, dtype=float)
        _, rp = self._plus(p, b)
        dp, db = self.grad_m
        lin = self.val_m + dp * (p - self.p0)[:, None] + db * (b - self.b0)[:, None]
        return rp - lin

    def value(self, p, b) -> float:
        return float(np.sum(self.rate_bounds(p, b)))

    def rate_bound_grad(self, p, b):
        """(dR/dp, dR/db) per member, shape (K, 2) each, plus z and alpha for Hessians."""
        z, _ = self._plus(p, b)
        dp_m, db_m = self.grad_m
        d_p = self.alpha_p / (LN2 * (1.0 + z)) - dp_m
        d_b = (np.log1p(z) - z / (1.0 + z)) / LN2 - db_m
        return d_p, d_b, z


def build_surrogate(model: SystemModel, edges, delta, p, b) -> SurrogateModel:
    edges = np.asarray(edges, dtype=int)
    p, b, delta = (np.asarray(x, dtype=float) for x in (p, b, delta))
    prof = model.profiles
    rho0 = prof.rho(edges, p, delta)
    drho, _ = prof.rho_partials(edges, p, delta)
    slope = rho0 + p * drho
    icpt = p * rho0 - slope * p
    i, j = model.edge_i[edges], model.edge_j[edges]
    f_i, f_j = model.rate_floors(edges, delta)
    tb = model.time_budget
    zeta = model.budgets.comp_energy_coeff_j
    return SurrogateModel(
        p0=p.copy(), b0=b.copy(), q_slope=slope, q_icpt=icpt,
        gain=np.stack([model.gain_sq[i], model.gain_sq[j]], axis=1), n0=model.n0,
        floors=np.stack([f_i, f_j], axis=1).astype(float),
        t_hat=np.maximum(tb[i], tb[j]), comp_energy=float(zeta * np.sum(-np.log(delta))),
    )


def surrogate_rate_bound(model: SystemModel, edge: int, user: int, delta: float, anchor, p: float, b: float) -> float:
    """Surrogate rate bound of one member of one group around ``anchor = (p0, b0)``."""
    sur = build_surrogate(model, [edge], [delta], [anchor[0]], [anchor[1]])
    col = 0 if user == model.edge_i[edge] else 1
    if (col == 1) != (user == model.edge_j[edge]):
        raise ValueError(f"user {user} is not a member of edge {edge}")
    return float(sur.rate_bounds(np.array([p]), np.array([b]))[0, col])


# ---------------------------------------------------------------------------
# convex subproblem in scaled variables x = [p / P, b / B]

class _PBProblem:
    def __init__(self, sur: SurrogateModel, p_max, b_max, e_max, radii, bw_floor):
        k = sur.num_groups
        self.sur, self.k, self.n = sur, k, 2 * k
        self.P, self.B = p_max, b_max
        eye, zero = np.eye(k), np.zeros((k, k))
        rows, rhs = [], []

        def add(a_p, a_b, h):
            rows.append(np.concatenate([a_p, a_b]))
            rhs.append(h)

        add(np.ones(k), np.zeros(k), 1.0)
        add(np.zeros(k), np.ones(k), 1.0)
        add(p_max * sur.t_hat / e_max, np.zeros(k), 1.0 - sur.comp_energy / e_max)
        G = [np.array(rows)]
        h = [np.array(rhs)]
        G.append(np.hstack([eye, zero]))
        h.append((sur.p0 + radii) / p_max)
        G.append(np.hstack([-eye, zero]))
        h.append(-np.maximum(sur.p0 - radii, 0.0) / p_max)
        G.append(np.hstack([zero, -eye]))
        h.append(np.full(k, -bw_floor / b_max))
        # qhat >= 0 only binds where the tangent slope is negative
        neg = np.flatnonzero(sur.q_slope < 0)
        if neg.size:
            G.append(np.hstack([-sur.q_slope[neg, None] * eye[neg], np.zeros((neg.size, k))]))
            h.append(sur.q_icpt[neg] / p_max)
        self.G = np.vstack(G)
        self.h = np.concatenate(h)
        self.floor_mask = sur.floors > 0
        self._fl = np.where(self.floor_mask, sur.floors, 1.0)
        self._groups = np.nonzero(self.floor_mask)[0]
        self._setup_fast()

    def split(self, x):
        return x[: self.k] * self.P, x[self.k:] * self.B

    def _setup_fast(self):
        sur = self.sur
        dp_m, db_m = sur.grad_m
        self._a, self._beta = sur.alpha_p, sur.beta_p
        self._dpm, self._dbm = dp_m, db_m
        # linearised minus-log: val_m + dp (p - p0) + db (b - b0) = c0 + dp p + db b
        self._c0 = sur.val_m - dp_m * sur.p0[:, None] - db_m * sur.b0[:, None]
        self._inv_fl = (1.0 / self._fl)[self.floor_mask]
        self._idx = np.arange(self.k)

    def _core(self, x):
        k = self.k
        p, b = x[:k] * self.P, x[k:] * self.B
        if b.min() <= 0:
            return None
        bc = b[:, None]
        z = (self._a * p[:, None] + self._beta) / bc
        if z.min() <= -1.0:
            return None
        l1z = np.log1p(z)
        rates = bc * l1z / LN2 - (self._c0 + self._dpm * p[:, None] + self._dbm * bc)
        return p, b, z, l1z, rates

    def values(self, x):
        core = self._core(x)
        if core is None:
            return None
        rates = core[4]
        return -rates.sum() / self.B, 1.0 - rates[self.floor_mask] * self._inv_fl

    def derivatives(self, x):
        p, b, z, l1z, rates = self._core(x)
        a, k, P, B = self._a, self.k, self.P, self.B
        opz = 1.0 + z
        gp = (a / (LN2 * opz) - self._dpm) * P
        gb = ((l1z - z / opz) / LN2 - self._dbm) * B
        # Hessian of r_plus in (p, b): -1 / (ln2 b (1+z)^2) [[a^2, -a z], [-a z, z^2]]
        w = 1.0 / (LN2 * b[:, None] * opz * opz)
        hpp = -w * a * a * (P * P)
        hpb = w * a * z * (P * B)
        hbb = -w * z * z * (B * B)
        mask, inv_fl = self.floor_mask, self._inv_fl
        f = -rates.sum() / B
        g = np.concatenate([gp.sum(axis=1), gb.sum(axis=1)]) / -B
        H = self._assemble(hpp.sum(axis=1), hpb.sum(axis=1), hbb.sum(axis=1), -1.0 / B)
        c = 1.0 - rates[mask] * inv_fl
        J = np.zeros((self._groups.size, self.n))
        rows = np.arange(self._groups.size)
        J[rows, self._groups] = -gp[mask] * inv_fl
        J[rows, k + self._groups] = -gb[mask] * inv_fl
        hpp_m, hpb_m, hbb_m = hpp[mask], hpb[mask], hbb[mask]
        groups = self._groups

        def curvature(wc):
            sc = -wc * inv_fl
            return self._assemble(np.bincount(groups, hpp_m * sc, k), np.bincount(groups, hpb_m * sc, k),
                                  np.bincount(groups, hbb_m * sc, k))

        return f, g, H, c, J, curvature

    def _assemble(self, hpp, hpb, hbb, scale=1.0):
        k, idx = self.k, self._idx
        H = np.zeros((self.n, self.n))
        H[idx, idx] = hpp * scale
        H[idx, k + idx] = H[k + idx, idx] = hpb * scale
        H[k + idx, k + idx] = hbb * scale
        return H


@dataclass
class SubproblemResult:
    p: np.ndarray
    b: np.ndarray
    status: str            # "optimal", "max-iter", "degenerate-box", "infeasible"
    residual: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "max-iter", "degenerate-box")


def solve_convex_subproblem(model: SystemModel, sur: SurrogateModel, radii, options: PBOptions | None = None) -> SubproblemResult:
    """Maximise the surrogate sum rate over the convex feasible set."""
    opt = options or PBOptions()
    radii = np.broadcast_to(np.asarray(radii, dtype=float), sur.p0.shape)
    if np.any(radii <= 0):
        return SubproblemResult(sur.p0.copy(), sur.b0.copy(), "degenerate-box")
    bud = model.budgets
    prob = _PBProblem(sur, bud.total_power_watts, bud.total_bandwidth_hz, bud.energy_budget_j, radii, opt.bw_floor_hz)
    x0 = np.concatenate([sur.p0 / prob.P, sur.b0 / prob.B])
    start = find_interior(prob, x0)
    if start is None:
        return SubproblemResult(sur.p0.copy(), sur.b0.copy(), "infeasible", np.inf)
    solve = primal_dual_solve if opt.solver == "primal-dual" else barrier_solve
    res = solve(prob, start, gap_tol=opt.barrier_gap)
    p, b = prob.split(res.x)
    return SubproblemResult(p, b, res.status, res.residual)


def trust_ratio(true_new: float, true_old: float, pred_new: float, pred_old: float):
    """Actual over predicted improvement, or ``None`` when the prediction is not positive."""
    pred = pred_new - pred_old
    if not pred > 0:
        return None
    return (true_new - true_old) / pred


@dataclass
class PBResult:
    p: np.ndarray
    b: np.ndarray
    objective: float
    iterations: int
    status: str
    history: list          # accepted objective values, starting at the initial point
    radii: np.ndarray


def optimize_power_bandwidth(model: SystemModel, pairs, delta, p0, b0, options: PBOptions | None = None) -> PBResult:
    """Trust-region SCA over (p, b) with pairing and delta held fixed."""
    opt = options or PBOptions()
    state = AllocationState(pairs=pairs, p=p0, b=b0, delta=delta)
    edges = state.edges(model)
    delta = state.delta
    if not check_feasible(state, model, constraints=CONTINUOUS_CONSTRAINTS).ok:
        raise ValueError("initial power/bandwidth point is infeasible")
    p_max = model.budgets.total_power_watts
    floor = opt.radius_floor_frac * p_max
    tr = TrustRegionState(radii=np.maximum(opt.radius0_frac * state.p, floor), p=state.p.copy(), b=state.b.copy(),
                          eta1=opt.eta1, eta2=opt.eta2, kappa_sh=opt.kappa_sh, kappa_ex=opt.kappa_ex, eps=opt.eps)
    xi = float(np.sum(model.sum_rate(edges, tr.p, tr.b, delta)))
    history = [xi]
    status = "cap"
    m = 0
    for m in range(opt.max_iter):
        sur = build_surrogate(model, edges, delta, tr.p, tr.b)
        sub = solve_convex_subproblem(model, sur, tr.radii, opt)
        if not sub.ok:
            status = f"subproblem-{sub.status}"
            break
        pred_new, pred_old = sur.value(sub.p, sub.b), sur.value(tr.p, tr.b)
        eta = trust_ratio(float(np.sum(model.sum_rate(edges, sub.p, sub.b, delta))), xi, pred_new, pred_old)
        if eta is None:
            status = "no-predicted-gain"
            break
        # the model itself promises less than the stopping tolerance
        if pred_new - pred_old < opt.eps * max(1.0, abs(xi)) and np.all(tr.radii >= opt.radius0_frac * tr.p):
            status = "converged"
            break
        cand = state.replace(p=sub.p, b=sub.b)
        feasible = check_feasible(cand, model, constraints=CONTINUOUS_CONSTRAINTS).ok
        accepted = feasible and eta >= opt.eta1
        tr.update(eta, accepted)
        if accepted:
            xi_new = cand.objective(model)
            if opt.extrapolate:
                cand, xi_new = _extrapolate(model, state, tr.p, tr.b, cand, xi_new)
            gain = (xi_new - xi) / max(1.0, abs(xi))
            tr.p, tr.b, xi = cand.p.copy(), cand.b.copy(), xi_new
            history.append(xi)
            if gain < opt.eps:
                status = "converged"
                break
        elif np.all(tr.radii < floor):
            status = "radius-floor"
            break
    return PBResult(tr.p, tr.b, xi, m + 1, status, history, tr.radii)


def _extrapolate(model: SystemModel, state: AllocationState, p_old, b_old, cand: AllocationState, xi: float,
                 max_doublings: int = 8):
    """Push an accepted step further along its own direction.

    The tangent minoriser underestimates how much interference falls as power
    grows, so accepted steps are short. Doubling the step while the exact
    objective keeps improving and the point stays feasible is monotone by
    construction.
    """
    dp, db = cand.p - p_old, cand.b - b_old
    best, best_xi = cand, xi
    scale = 1.0
    for _ in range(max_doublings):
        scale *= 2.0
        p, b = p_old + scale * dp, b_old + scale * db
        if np.any(p < 0) or np.any(b <= 0):
            break
        trial = state.replace(p=p, b=b)
        if not check_feasible(trial, model, constraints=CONTINUOUS_CONSTRAINTS).ok:
            break
        val = trial.objective(model)
        if not val > best_xi:
            break
        best, best_xi = trial, val
    return best, best_xi


def equal_split(model: SystemModel):
    k = model.num_groups
    bud = model.budgets
    return np.full(k, bud.total_power_watts / k), np.full(k, bud.total_bandwidth_hz / k)


__all__ = [
    "PBOptions", "TrustRegionState", "SurrogateModel", "SubproblemResult", "PBResult",
    "qhat_coefficients", "qhat", "r_plus", "r_minus", "r_minus_grad", "build_surrogate",
    "surrogate_rate_bound", "solve_convex_subproblem", "trust_ratio", "optimize_power_bandwidth",
    "equal_split", "FEAS_TOL",
]
