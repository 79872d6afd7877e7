"""Pair profiles: semantic-interference surfaces and distortion envelopes.

A candidate pair (i, j) carries a reverse-sigmoid interference surface
``rho(p, delta)`` that is nonincreasing in both transmit power and
compression ratio, one distortion envelope per member, and a content
similarity score. Profiles normally come from profiling a trained
transceiver; here :func:`synth_profiles` generates them synthetically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit

DEFAULT_DELTA_GRID = (0.0625, 0.125, 0.25, 0.375, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class RhoSurface:
    a: float
    b: float
    d: float
    rho_min: float
    rho_max: float
    degenerate: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rho_min <= self.rho_max <= 1.0:
            raise ValueError(f"need 0 <= rho_min <= rho_max <= 1, got {self.rho_min}, {self.rho_max}")
        if not (self.a > 0 and self.b > 0):
            raise ValueError("sigmoid slopes a and b must be positive")


def _exponent(a, b, d, p, delta):
    return a * np.asarray(p, dtype=float) + b * np.asarray(delta, dtype=float) + d


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def rho_values(a, b, d, rho_min, rho_max, p, delta):
    """Vectorised surface evaluation; arguments broadcast."""
    z = _exponent(a, b, d, p, delta)
    # 1 / (1 + exp(z)) without overflow
    return rho_min + (rho_max - rho_min) * expit(-z)


def rho_partials(a, b, d, rho_min, rho_max, p, delta):
    """Return (d rho / dp, d rho / d delta); both are <= 0."""
    z = _exponent(a, b, d, p, delta)
    # phi / (1 + phi)^2 == sigmoid(z) * sigmoid(-z)
    core = -(rho_max - rho_min) * expit(z) * expit(-z)
    return a * core, b * core


def eval_rho(surface: RhoSurface, p, delta):
    s = surface
    return _scalar(rho_values(s.a, s.b, s.d, s.rho_min, s.rho_max, p, delta))


def drho_dp(surface: RhoSurface, p, delta):
    s = surface
    return _scalar(rho_partials(s.a, s.b, s.d, s.rho_min, s.rho_max, p, delta)[0])


def drho_ddelta(surface: RhoSurface, p, delta):
    s = surface
    return _scalar(rho_partials(s.a, s.b, s.d, s.rho_min, s.rho_max, p, delta)[1])


# ---------------------------------------------------------------------------
# fitting

@dataclass(frozen=True, eq=False)
class RhoSampleGrid:
    powers: np.ndarray
    deltas: np.ndarray
    samples: np.ndarray  # shape (len(powers), len(deltas))

    def __post_init__(self):
        p = np.asarray(self.powers, dtype=float)
        dl = np.asarray(self.deltas, dtype=float)
        s = np.asarray(self.samples, dtype=float)
        if np.any(np.diff(p) <= 0) or np.any(np.diff(dl) <= 0):
            raise ValueError("profiling grids must be strictly ascending")
        if s.shape != (p.size, dl.size):
            raise ValueError(f"sample matrix shape {s.shape} does not match grid {(p.size, dl.size)}")
        if np.any(s < 0) or np.any(s > 1):
            raise ValueError("interference samples must lie in [0, 1]")


def sample_grid(surface: RhoSurface, powers, deltas, noise_amplitude: float = 0.0, rng=None) -> RhoSampleGrid:
    """Sample a surface on ``powers x deltas``, optionally with uniform noise."""
    powers = np.asarray(powers, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    vals = eval_rho(surface, powers[:, None], deltas[None, :])
    if noise_amplitude > 0:
        rng = np.random.default_rng(rng)
        vals = vals + rng.uniform(-noise_amplitude, noise_amplitude, vals.shape)
    return RhoSampleGrid(powers, deltas, np.clip(vals, 0.0, 1.0))


def default_power_grid(total_power_w: float, num_groups: int, n: int = 8) -> np.ndarray:
    return np.geomspace(total_power_w / (5 * num_groups), total_power_w, n)


def _unpack(theta):
    a, b, d, rmin, t = theta
    return a, b, d, rmin, rmin + t * (1.0 - rmin)


def fit_rho(grid: RhoSampleGrid) -> RhoSurface:
    """Least-squares fit of (a, b, d, rho_min, rho_max) to profiled samples.

    Uses a bounded trust-region least-squares solver from a fixed schedule of
    eight starting points and keeps the lowest residual. ``rho_max`` is
    parametrised as ``rho_min + t (1 - rho_min)`` with ``t in [0, 1]`` so that
    the ordering constraint becomes a box bound.
    """
    P, D = np.meshgrid(grid.powers, grid.deltas, indexing="ij")
    P, D, y = P.ravel(), D.ravel(), np.asarray(grid.samples, dtype=float).ravel()
    if y.size < 5:
        raise ValueError("need at least 5 samples to fit an interference surface")
    if np.ptp(y) < 1e-12:
        level = float(np.clip(y[0], 0.0, 1.0))
        return RhoSurface(1.0, 1.0, 0.0, level, level, degenerate=True)

    def resid(theta):
        a, b, d, rmin, rmax = _unpack(theta)
        return rmin + (rmax - rmin) * expit(-(a * P + b * D + d)) - y

    def jac(theta):
        a, b, d, rmin, t = theta
        span = t * (1.0 - rmin)
        z = a * P + b * D + d
        sig = expit(-z)
        dsig_dz = -sig * expit(z)
        J = np.empty((y.size, 5))
        J[:, 0] = span * dsig_dz * P
        J[:, 1] = span * dsig_dz * D
        J[:, 2] = span * dsig_dz
        J[:, 3] = 1.0 - t * sig
        J[:, 4] = (1.0 - rmin) * sig
        return J

    p_span = max(grid.powers[-1] - grid.powers[0], 1e-12)
    d_span = max(grid.deltas[-1] - grid.deltas[0], 1e-12)
    lo, hi = float(y.min()), float(y.max())
    t0 = (hi - lo) / (1.0 - lo) if lo < 1.0 else 0.0
    # centre of the transition: where samples cross the midrange
    w = np.exp(-((y - 0.5 * (lo + hi)) / (0.25 * (hi - lo))) ** 2)
    centres = [
        (0.5 * (grid.powers[0] + grid.powers[-1]), 0.5 * (grid.deltas[0] + grid.deltas[-1])),
        (float(np.sum(w * P) / np.sum(w)), float(np.sum(w * D) / np.sum(w))),
    ]
    starts = []
    for pc, dc in centres:
        for sa, sb in ((1.0, 1.0), (4.0, 4.0), (1.0, 4.0), (4.0, 1.0)):
            a0, b0 = 4.0 * sa / p_span, 4.0 * sb / d_span
            starts.append(np.array([a0, b0, -(a0 * pc + b0 * dc), lo, min(max(t0, 0.0), 1.0)]))

    lower = [1e-9, 1e-9, -np.inf, 0.0, 0.0]
    upper = [np.inf, np.inf, np.inf, 1.0, 1.0]
    best, best_cost = None, np.inf
    for x0 in starts:
        x0 = np.clip(x0, np.array(lower) + 1e-12, np.array(upper))
        res = least_squares(resid, x0, jac=jac, bounds=(lower, upper), method="trf",
                            ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=500, x_scale="jac")
        if res.cost < best_cost:
            best, best_cost = res.x, res.cost
    a, b, d, rmin, rmax = _unpack(best)
    return RhoSurface(float(a), float(b), float(d), float(rmin), float(min(rmax, 1.0)))


# ---------------------------------------------------------------------------
# distortion envelopes

@dataclass(frozen=True, eq=False)
class DistortionEnvelope:
    """Nonincreasing piecewise-linear upper envelope of distortion vs delta.

    Outside the breakpoint range the envelope is extended flat.
    """

    deltas: np.ndarray
    values: np.ndarray

    def __call__(self, delta):
        out = np.interp(delta, self.deltas, self.values)
        return float(out) if np.ndim(out) == 0 else out

    def breakpoints(self) -> list[tuple[float, float]]:
        return [(float(x), float(v)) for x, v in zip(self.deltas, self.values)]


def build_envelope(samples) -> DistortionEnvelope:
    """Suffix-maximum envelope of ``(delta, distortion)`` samples.

    Each breakpoint takes the largest distortion observed at that or any
    larger compression ratio, which makes the result nonincreasing and an
    upper bound on every sample. Ties in delta keep the largest sample.
    """
    pts = np.asarray(samples, dtype=float).reshape(-1, 2)
    xs, inv = np.unique(pts[:, 0], return_inverse=True)
    if xs.size < 2:
        raise ValueError("an envelope needs at least two distinct compression ratios")
    vals = np.full(xs.size, -np.inf)
    np.maximum.at(vals, inv, pts[:, 1])
    vals = np.maximum.accumulate(vals[::-1])[::-1]
    return DistortionEnvelope(xs, vals)


def min_delta_for_distortion(env: DistortionEnvelope, d_max: float, delta_min: float):
    """Smallest delta in [delta_min, 1] whose envelope value is <= d_max.

    Returns ``None`` when even delta = 1 violates the threshold.
    """
    if env(1.0) > d_max:
        return None
    if env(delta_min) <= d_max:
        return float(delta_min)
    xs, vs = env.deltas, env.values
    idx = int(np.argmax(vs <= d_max))  # first breakpoint meeting the threshold
    x0, x1, v0, v1 = xs[idx - 1], xs[idx], vs[idx - 1], vs[idx]
    delta = x0 + (x1 - x0) * (v0 - d_max) / (v0 - v1)
    return float(min(max(delta, delta_min), 1.0))


# ---------------------------------------------------------------------------
# pair profile sets

def candidate_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


@dataclass(frozen=True, eq=False)
class PairProfileSet:
    """Surfaces, envelopes and similarity for every candidate pair i < j.

    Per-pair parameters are stored as flat arrays indexed by edge id, where
    edge ids enumerate pairs in lexicographic order.
    """

    num_users: int
    similarity: np.ndarray
    a: np.ndarray
    b: np.ndarray
    d: np.ndarray
    rho_min: np.ndarray
    rho_max: np.ndarray
    envelopes: tuple  # ((env_i, env_j), ...) per edge
    family: float = 1.0
    pairs: tuple = field(init=False)
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        pairs = tuple(candidate_pairs(self.num_users))
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "_index", {pr: e for e, pr in enumerate(pairs)})
        for name in ("similarity", "a", "b", "d", "rho_min", "rho_max"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (len(pairs),):
                raise ValueError(f"{name} must have one entry per candidate pair")
            object.__setattr__(self, name, arr)
        if len(self.envelopes) != len(pairs):
            raise ValueError("need one envelope pair per candidate pair")
        if np.any(self.rho_min < 0) or np.any(self.rho_max > 1) or np.any(self.rho_min > self.rho_max):
            raise ValueError("interference bounds must satisfy 0 <= rho_min <= rho_max <= 1")

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)

    def edge(self, i: int, j: int) -> int:
        return self._index[(i, j) if i < j else (j, i)]

    def surface(self, e: int) -> RhoSurface:
        return RhoSurface(self.a[e], self.b[e], self.d[e], self.rho_min[e], self.rho_max[e])

    def rho(self, edges, p, delta):
        e = np.asarray(edges)
        return rho_values(self.a[e], self.b[e], self.d[e], self.rho_min[e], self.rho_max[e], p, delta)

    def rho_partials(self, edges, p, delta):
        e = np.asarray(edges)
        return rho_partials(self.a[e], self.b[e], self.d[e], self.rho_min[e], self.rho_max[e], p, delta)

    def distortion(self, e: int, user: int, delta):
        """Envelope value for ``user`` (a member of edge ``e``) at ``delta``."""
        i, j = self.pairs[e]
        if user == i:
            return self.envelopes[e][0](delta)
        if user == j:
            return self.envelopes[e][1](delta)
        raise ValueError(f"user {user} is not a member of pair {self.pairs[e]}")

    def with_family(self, multiplier: float) -> "PairProfileSet":
        """Inflate both saturation levels by ``multiplier`` (clipped to [0, 1])."""
        if multiplier <= 0:
            raise ValueError("family multiplier must be positive")
        return PairProfileSet(
            num_users=self.num_users, similarity=self.similarity, a=self.a, b=self.b, d=self.d,
            rho_min=np.minimum(self.rho_min * multiplier, 1.0),
            rho_max=np.minimum(self.rho_max * multiplier, 1.0),
            envelopes=self.envelopes, family=self.family * multiplier,
        )


def pair_delta_lower_bound(profiles: PairProfileSet, pair, distortion_max, delta_min: float):
    """max(delta_min, delta_i^D, delta_j^D), or ``None`` if the pair can never meet it."""
    i, j = pair
    e = profiles.edge(i, j)
    bounds = [delta_min]
    for slot, u in enumerate((i, j)):
        bound = min_delta_for_distortion(profiles.envelopes[e][slot], float(distortion_max[u]), delta_min)
        if bound is None:
            return None
        bounds.append(bound)
    out = max(bounds)
    return out if out <= 1.0 else None


# ---------------------------------------------------------------------------
# synthetic profiler

@dataclass(frozen=True)
class ProfileGenParams:
    similarity_mode: str = "uniform"  # or "cluster"
    cluster_size: int = 4
    intra_cluster_range: tuple = (0.8, 1.0)
    inter_cluster_range: tuple = (0.0, 0.4)
    rho_lo: float = 0.02
    rho_lo_spread: float = 0.15
    rho_hi_base: float = 0.3
    rho_hi_spread: float = 0.5
    a_range: tuple = (4.0, 16.0)
    b_range: tuple = (4.0, 16.0)
    p_mid_w: float = 0.1
    delta_mid: float = 0.15
    delta_grid: tuple = DEFAULT_DELTA_GRID
    dist_floor: float = 0.0015
    dist_span: float = 0.02
    dist_scale: float = 0.08
    dist_factor_base: float = 0.6
    dist_factor_slope: float = 0.8
    dist_noise: float = 2e-4
    family: float = 1.0

    def __post_init__(self):
        if self.similarity_mode not in ("uniform", "cluster"):
            raise ValueError(f"unknown similarity mode {self.similarity_mode!r}")
        for name in ("a_range", "b_range", "intra_cluster_range", "inter_cluster_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} must be an ordered (low, high) range")
        if self.a_range[0] <= 0 or self.b_range[0] <= 0:
            raise ValueError("sigmoid slope ranges must be positive")
        if min(self.rho_lo, self.rho_lo_spread, self.rho_hi_base, self.rho_hi_spread) < 0:
            raise ValueError("interference mapping parameters must be nonnegative")
        if self.cluster_size < 1:
            raise ValueError("cluster_size must be >= 1")
        if len(self.delta_grid) < 2 or np.any(np.diff(self.delta_grid) <= 0):
            raise ValueError("delta_grid must be strictly ascending with >= 2 points")
        if self.family <= 0:
            raise ValueError("family multiplier must be positive")


def _similarities(n: int, gen: ProfileGenParams, rng) -> np.ndarray:
    pairs = candidate_pairs(n)
    if gen.similarity_mode == "uniform":
        return rng.uniform(0.0, 1.0, len(pairs))
    perm = rng.permutation(n)
    cluster = np.empty(n, dtype=int)
    cluster[perm] = np.arange(n) // gen.cluster_size
    same = np.array([cluster[i] == cluster[j] for i, j in pairs])
    intra = rng.uniform(*gen.intra_cluster_range, len(pairs))
    inter = rng.uniform(*gen.inter_cluster_range, len(pairs))
    return np.where(same, intra, inter)


def synth_profiles(num_users: int, gen: ProfileGenParams | None = None, seed=None) -> PairProfileSet:
    """Generate a synthetic profile set standing in for offline profiling."""
    gen = gen or ProfileGenParams()
    rng = np.random.default_rng(seed)
    m = len(candidate_pairs(num_users))
    s = _similarities(num_users, gen, rng)
    rho_min = np.clip(gen.rho_lo + (1.0 - s) * gen.rho_lo_spread, 0.0, 1.0)
    rho_max = np.clip(gen.rho_hi_base + (1.0 - s) * gen.rho_hi_spread, 0.0, 1.0)
    rho_max = np.maximum(rho_max, rho_min)
    a = np.exp(rng.uniform(*np.log(gen.a_range), m))
    b = np.exp(rng.uniform(*np.log(gen.b_range), m))
    d = -(a * gen.p_mid_w + b * gen.delta_mid)

    grid = np.asarray(gen.delta_grid, dtype=float)
    template = gen.dist_floor + gen.dist_span * np.exp(-grid / gen.dist_scale)
    factor = gen.dist_factor_base + gen.dist_factor_slope * (1.0 - s)
    noise = rng.uniform(-gen.dist_noise, gen.dist_noise, (m, 2, grid.size))
    envelopes = []
    for e in range(m):
        pair_env = []
        for slot in range(2):
            raw = np.maximum(factor[e] * template + noise[e, slot], 0.0)
            pair_env.append(build_envelope(np.column_stack([grid, raw])))
        envelopes.append(tuple(pair_env))

    base = PairProfileSet(num_users=num_users, similarity=s, a=a, b=b, d=d,
                          rho_min=rho_min, rho_max=rho_max, envelopes=tuple(envelopes))
    return base if gen.family == 1.0 else base.with_family(gen.family)


def refit_profiles(profiles: PairProfileSet, powers, deltas, noise_amplitude: float = 0.0, seed=None) -> PairProfileSet:
    """Re-derive every surface by sampling it on a grid and fitting it back.

    This reproduces the profile-then-fit offline step on synthetic truth.
    """
    rng = np.random.default_rng(seed)
    fitted = [fit_rho(sample_grid(profiles.surface(e), powers, deltas, noise_amplitude, rng))
              for e in range(profiles.num_pairs)]
    return PairProfileSet(
        num_users=profiles.num_users, similarity=profiles.similarity,
        a=[f.a for f in fitted], b=[f.b for f in fitted], d=[f.d for f in fitted],
        rho_min=[f.rho_min for f in fitted], rho_max=[f.rho_max for f in fitted],
        envelopes=profiles.envelopes, family=profiles.family,
    )


# ---------------------------------------------------------------------------
# file format

def profiles_to_dict(profiles: PairProfileSet) -> dict:
    records = []
    for e, (i, j) in enumerate(profiles.pairs):
        env_i, env_j = profiles.envelopes[e]
        records.append({
            "i": i, "j": j,
            "s": float(profiles.similarity[e]),
            "a": float(profiles.a[e]), "b": float(profiles.b[e]), "d": float(profiles.d[e]),
            "rho_min": float(profiles.rho_min[e]), "rho_max": float(profiles.rho_max[e]),
            "envelope_i": env_i.breakpoints(),
            "envelope_j": env_j.breakpoints(),
        })
    return {"format": "sfma-profiles/1", "num_users": profiles.num_users,
            "family": profiles.family, "pairs": records}


def profiles_from_dict(data: dict) -> PairProfileSet:
    n = int(data["num_users"])
    recs = {(int(r["i"]), int(r["j"])): r for r in data["pairs"]}
    pairs = candidate_pairs(n)
    missing = [pr for pr in pairs if pr not in recs]
    if missing or len(recs) != len(pairs):
        raise ValueError(f"profile file must list every candidate pair exactly once; missing {missing[:3]}")
    ordered = [recs[pr] for pr in pairs]

    def env(points):
        pts = np.asarray(points, dtype=float)
        return DistortionEnvelope(pts[:, 0], pts[:, 1])

    return PairProfileSet(
        num_users=n,
        similarity=[r["s"] for r in ordered],
        a=[r["a"] for r in ordered], b=[r["b"] for r in ordered], d=[r["d"] for r in ordered],
        rho_min=[r["rho_min"] for r in ordered], rho_max=[r["rho_max"] for r in ordered],
        envelopes=tuple((env(r["envelope_i"]), env(r["envelope_j"])) for r in ordered),
        family=float(data.get("family", 1.0)),
    )


def save_profiles(profiles: PairProfileSet, path) -> None:
    Path(path).write_text(json.dumps(profiles_to_dict(profiles), indent=1))


def load_profiles(path) -> PairProfileSet:
    return profiles_from_dict(json.loads(Path(path).read_text()))
