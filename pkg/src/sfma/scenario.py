"""Synthetic downlink scenarios: user drops, path loss, shadowing and budgets.

Everything inside the optimiser is linear SI (W, Hz, s, J, bits). dB and dBm
only appear at the configuration boundary and are converted here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_DISTANCE_KM = 0.01


def dbm_to_watts(x):
    out = 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)
    return float(out) if out.ndim == 0 else out


def watts_to_dbm(w: float) -> float:
    return 10.0 * np.log10(w) + 30.0


def drop_users(n: int, cell_radius_m: float, seed) -> np.ndarray:
    """Drop ``n`` users uniformly (by area) over a disk centred on the BS.

    Returns an ``(n, 2)`` array of x/y positions in metres.
    """
    if n <= 0 or n % 2:
        raise ValueError(f"number of users must be positive and even, got {n}")
    if cell_radius_m < 0:
        raise ValueError("cell radius must be nonnegative")
    rng = np.random.default_rng(seed)
    r = cell_radius_m * np.sqrt(rng.random(n))
    theta = 2.0 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def path_loss_db(distance_km, d_min_km: float = MIN_DISTANCE_KM):
    """128.1 + 37.6 log10(d) with d in km, clamped below at ``d_min_km``."""
    d = np.maximum(np.asarray(distance_km, dtype=float), d_min_km)
    if np.any(d <= 0):
        raise ValueError("distance must be positive after clamping")
    out = 128.1 + 37.6 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def channel_gain_sq(path_loss_db, shadow_db=0.0):
    """Linear power gain |h|^2 from path loss and shadowing (both in dB)."""
    out = 10.0 ** (-(np.asarray(path_loss_db, dtype=float) + shadow_db) / 10.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class SystemBudgets:
    """Global budgets and per-user constants for one draw (linear SI units)."""

    total_power_watts: float
    total_bandwidth_hz: float
    max_latency_s: float
    energy_budget_j: float
    noise_psd_w_per_hz: float
    distortion_max: np.ndarray
    delta_min: float
    comp_energy_coeff_j: float
    bs_cpu_hz: float
    user_cpu_hz: np.ndarray
    bs_cycles: float
    dec_cycles: np.ndarray
    source_bits: np.ndarray

    def __post_init__(self):
        scalars = {
            "total_power_watts": self.total_power_watts,
            "total_bandwidth_hz": self.total_bandwidth_hz,
            "max_latency_s": self.max_latency_s,
            "energy_budget_j": self.energy_budget_j,
            "noise_psd_w_per_hz": self.noise_psd_w_per_hz,
            "comp_energy_coeff_j": self.comp_energy_coeff_j,
            "bs_cpu_hz": self.bs_cpu_hz,
            "bs_cycles": self.bs_cycles,
        }
        for name, value in scalars.items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if not 0.0 < self.delta_min <= 1.0:
            raise ValueError(f"delta_min must lie in (0, 1], got {self.delta_min}")
        for name in ("distortion_max", "user_cpu_hz", "dec_cycles", "source_bits"):
            arr = getattr(self, name)
            if np.any(np.asarray(arr) <= 0):
                raise ValueError(f"{name} must be strictly positive")
        # at least one user must have a positive residual time budget
        if not self.max_latency_s > self.tau_bs + float(np.min(self.tau_dec)):
            raise ValueError("max_latency_s leaves no positive transmission-time budget")

    @property
    def num_users(self) -> int:
        return len(self.source_bits)

    @property
    def tau_bs(self) -> float:
        """BS-side encoding latency C^BS / f_BS."""
        return self.bs_cycles / self.bs_cpu_hz

    @property
    def tau_dec(self) -> np.ndarray:
        return self.dec_cycles / self.user_cpu_hz

    @property
    def time_budget(self) -> np.ndarray:
        """Residual transmission-time budget per user (may be <= 0)."""
        return self.max_latency_s - self.tau_bs - self.tau_dec


def make_budgets(
    num_users: int,
    *,
    power_dbm: float = 30.0,
    bandwidth_hz: float = 10e6,
    max_latency_s: float = 0.1,
    energy_budget_j: float = 0.25,
    noise_psd_dbm_per_hz: float = -174.0,
    distortion_max: float = 0.005,
    delta_min: float = 0.0625,
    comp_energy_coeff_j: float = 5e-3,
    bs_cpu_hz: float = 10e9,
    user_cpu_hz: float = 1e9,
    bs_cycles: float = 1e8,
    dec_cycles: float = 1e7,
    source_bits: float = 256 * 256 * 3 * 8,
) -> SystemBudgets:
    """Build budgets from config-level units (dBm for power and noise PSD)."""
    ones = np.ones(num_users)
    budgets = SystemBudgets(
        total_power_watts=dbm_to_watts(power_dbm),
        total_bandwidth_hz=float(bandwidth_hz),
        max_latency_s=float(max_latency_s),
        energy_budget_j=float(energy_budget_j),
        noise_psd_w_per_hz=dbm_to_watts(noise_psd_dbm_per_hz),
        distortion_max=distortion_max * ones,
        delta_min=float(delta_min),
        comp_energy_coeff_j=float(comp_energy_coeff_j),
        bs_cpu_hz=float(bs_cpu_hz),
        user_cpu_hz=user_cpu_hz * ones,
        bs_cycles=float(bs_cycles),
        dec_cycles=dec_cycles * ones,
        source_bits=source_bits * ones,
    )
    return budgets


@dataclass(frozen=True, eq=False)
class Scenario:
    """One Monte Carlo draw: user positions, channel gains and budgets."""

    positions: np.ndarray
    gain_sq: np.ndarray
    budgets: SystemBudgets
    seed: int | None = None
    shadow_db: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.gain_sq)
        if n % 2:
            raise ValueError("scenario needs an even number of users")
        if np.any(self.gain_sq <= 0):
            raise ValueError("channel gains must be strictly positive")
        if self.budgets.num_users != n:
            raise ValueError("budgets and scenario disagree on the number of users")

    @property
    def num_users(self) -> int:
        return len(self.gain_sq)

    @property
    def num_groups(self) -> int:
        return self.num_users // 2

    @property
    def distances_m(self) -> np.ndarray:
        return np.hypot(self.positions[:, 0], self.positions[:, 1])


def generate_scenario(
    num_users: int,
    seed: int,
    *,
    cell_radius_m: float = 250.0,
    shadow_sigma_db: float = 4.0,
    budgets: SystemBudgets | None = None,
    d_min_km: float = MIN_DISTANCE_KM,
) -> Scenario:
    """Draw user positions and path-loss-plus-shadowing gains for one seed."""
    if budgets is None:
        budgets = make_budgets(num_users)
    ss = np.random.SeedSequence(seed)
    pos_seed, shadow_seed = ss.spawn(2)
    positions = drop_users(num_users, cell_radius_m, pos_seed)
    dist_km = np.hypot(positions[:, 0], positions[:, 1]) / 1000.0
    shadow = np.random.default_rng(shadow_seed).normal(0.0, shadow_sigma_db, num_users)
    gains = channel_gain_sq(path_loss_db(dist_km, d_min_km), shadow)
    return Scenario(positions=positions, gain_sq=np.atleast_1d(gains), budgets=budgets,
                    seed=seed, shadow_db=shadow)
