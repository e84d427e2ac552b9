"""Panel geometry, target/UE placement, AoI sampling and physical constants.

Units are SI and angles are radians everywhere in here. Conversions from
dBm / dB / degrees happen only at the config boundary (see ``dmaisac.config``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

C0 = 299_792_458.0  # speed of light [m/s]
DEFAULT_TRIALS = 500


def dbm_to_watt(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float)) + 30.0


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class PanelConfig:
    n_rf: int
    n_e: int
    d_e: float
    d_rf: float
    carrier_freq: float
    waveguide_alpha: float = 0.0
    waveguide_beta: float | None = None  # None -> free-space wavenumber 2*pi/lambda

    def __post_init__(self):
        if self.n_rf < 1 or self.n_e < 1:
            raise ValueError(f"need n_rf >= 1 and n_e >= 1, got {self.n_rf}, {self.n_e}")
        if self.d_e <= 0 or self.d_rf <= 0:
            raise ValueError("element spacings must be positive")
        if self.carrier_freq <= 0:
            raise ValueError("carrier_freq must be positive")
        if self.waveguide_beta is None:
            object.__setattr__(self, "waveguide_beta", 2 * np.pi / self.wavelength)

    @property
    def wavelength(self) -> float:
        return C0 / self.carrier_freq

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def n_elements(self) -> int:
        return self.n_rf * self.n_e

    def positions(self) -> np.ndarray:
        """All element positions, shape (N, 3), element-major order (i-1)*N_E + n."""
        i, n = np.meshgrid(np.arange(self.n_rf), np.arange(self.n_e), indexing="ij")
        pos = np.zeros((self.n_rf, self.n_e, 3))
        pos[..., 0] = n * self.d_e
        pos[..., 2] = i * self.d_rf
        return pos.reshape(-1, 3)

    def intra_strip_locations(self) -> np.ndarray:
        """rho_{i,n} for every element, element-major, shape (N,)."""
        return np.tile(np.arange(self.n_e) * self.d_e, self.n_rf)


@dataclass(frozen=True)
class SphericalPoint:
    r: float
    theta: float
    phi: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"range must be positive, got {self.r}")
        if not 0 < self.theta < np.pi:
            raise ValueError(f"theta must lie in (0, pi), got {self.theta}")
        if not -np.pi < self.phi <= np.pi:
            raise ValueError(f"phi must lie in (-pi, pi], got {self.phi}")

    @classmethod
    def deg(cls, r, theta_deg, phi_deg) -> "SphericalPoint":
        return cls(float(r), float(np.deg2rad(theta_deg)), float(np.deg2rad(phi_deg)))

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.theta, self.phi])

    def cartesian(self) -> np.ndarray:
        return spherical_to_cartesian(self)


@dataclass(frozen=True)
class ScenarioConfig:
    panel: PanelConfig
    targets: tuple[SphericalPoint, ...]
    num_ues: int
    reflection_coeffs: tuple[complex, ...]
    aoi: tuple[SphericalPoint, ...]
    noise_var: float
    p_max: float
    snr_thresholds: tuple[float, ...]
    num_symbols: int = 100
    radiation_exponent: float = 0.0

    def __post_init__(self):
        errors = check_scenario(self)
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    def ue_powers(self) -> np.ndarray:
        return np.full(self.num_ues, self.p_max)

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


def check_scenario(sc: ScenarioConfig) -> list[str]:
    errors = []
    k = len(sc.targets)
    if not 0 <= sc.num_ues <= k:
        errors.append(f"num_ues={sc.num_ues} must lie in [0, K={k}]")
    if len(sc.reflection_coeffs) != k:
        errors.append(f"reflection_coeffs has {len(sc.reflection_coeffs)} entries, expected K={k}")
    if len(sc.aoi) < 1:
        errors.append("aoi needs at least one point")
    if not sc.noise_var > 0:
        errors.append(f"noise_var must be > 0, got {sc.noise_var}")
    if not sc.p_max > 0:
        errors.append(f"p_max must be > 0, got {sc.p_max}")
    if len(sc.snr_thresholds) != sc.num_ues:
        errors.append(f"snr_thresholds has {len(sc.snr_thresholds)} entries, expected U={sc.num_ues}")
    elif any(not g > 0 for g in sc.snr_thresholds):
        errors.append("snr_thresholds must be > 0 (linear)")
    if sc.num_symbols < 1:
        errors.append(f"num_symbols must be >= 1, got {sc.num_symbols}")
    if sc.radiation_exponent < 0:
        errors.append("radiation_exponent must be >= 0")
    return errors


def element_position(panel: PanelConfig, i: int, n: int) -> np.ndarray:
    """Position of element n on microstrip i (both 1-based)."""
    if not (1 <= i <= panel.n_rf and 1 <= n <= panel.n_e):
        raise IndexError(f"element ({i}, {n}) outside {panel.n_rf}x{panel.n_e} panel")
    return np.array([(n - 1) * panel.d_e, 0.0, (i - 1) * panel.d_rf])


def intra_strip_location(panel: PanelConfig, n: int) -> float:
    if not 1 <= n <= panel.n_e:
        raise IndexError(f"element index {n} outside 1..{panel.n_e}")
    return (n - 1) * panel.d_e


def spherical_to_cartesian(p) -> np.ndarray:
    """Physics convention: theta from +z, phi from +x in the xy-plane.

    Accepts a SphericalPoint or an array whose last axis is (r, theta, phi).
    """
    if isinstance(p, SphericalPoint):
        p = p.as_array()
    p = np.asarray(p, dtype=float)
    r, th, ph = p[..., 0], p[..., 1], p[..., 2]
    st = np.sin(th)
    return np.stack([r * st * np.cos(ph), r * st * np.sin(ph), r * np.cos(th)], axis=-1)


def cartesian_to_spherical(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    th = np.arccos(np.clip(x[..., 2] / r, -1.0, 1.0))
    ph = np.arctan2(x[..., 1], x[..., 0])
    return np.stack([r, th, ph], axis=-1)


def spherical_jacobian(p) -> np.ndarray:
    """d(x, y, z)/d(r, theta, phi); shape (..., 3, 3) with columns per parameter."""
    p = np.asarray(p, dtype=float)
    r, th, ph = p[..., 0], p[..., 1], p[..., 2]
    st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    jac = np.empty(p.shape[:-1] + (3, 3))
    jac[..., :, 0] = np.stack([st * cp, st * sp, ct], axis=-1)
    jac[..., :, 1] = np.stack([r * ct * cp, r * ct * sp, -r * st], axis=-1)
    jac[..., :, 2] = np.stack([-r * st * sp, r * st * cp, np.zeros_like(r)], axis=-1)
    return jac


def points_array(points) -> np.ndarray:
    return np.array([p.as_array() for p in points], dtype=float).reshape(-1, 3)


def aoi_points(n_points=8, theta=np.deg2rad(30.0), phi_range=(np.deg2rad(10.0), np.deg2rad(80.0)),
               r_range=(2.0, 10.0), pattern="diagonal", grid_shape=None) -> tuple[SphericalPoint, ...]:
    """Discretize the area of interest at a fixed elevation.

    ``diagonal`` interpolates (phi, r) jointly between the range corners;
    ``grid`` lays out a phi x r grid of ``grid_shape`` (defaults to a near-square
    factorization of ``n_points``).
    """
    if pattern == "diagonal":
        t = np.linspace(0.0, 1.0, n_points)
        phis = phi_range[0] + t * (phi_range[1] - phi_range[0])
        rs = r_range[0] + t * (r_range[1] - r_range[0])
        return tuple(SphericalPoint(float(r), float(theta), float(ph)) for r, ph in zip(rs, phis))
    if pattern == "grid":
        if grid_shape is None:
            a = int(np.floor(np.sqrt(n_points)))
            while n_points % a:
                a -= 1
            grid_shape = (n_points // a, a)
        n_phi, n_r = grid_shape
        pts = []
        for ph in np.linspace(*phi_range, n_phi):
            for r in np.linspace(*r_range, n_r):
                pts.append(SphericalPoint(float(r), float(theta), float(ph)))
        return tuple(pts)
    raise ValueError(f"unknown AoI pattern {pattern!r}")


def pathloss_reflections(panel: PanelConfig, targets, seed=0) -> tuple[complex, ...]:
    """|beta_k| = lambda / (4 pi r_k) with a seeded uniform phase."""
    rng = np.random.default_rng(seed)
    phases = rng.uniform(-np.pi, np.pi, len(targets))
    return tuple(complex(panel.wavelength / (4 * np.pi * t.r) * np.exp(1j * ph))
                 for t, ph in zip(targets, phases))


# Target layout is not published; these sit inside the AoI slice (theta = 30 deg).
_DEFAULT_TARGETS_DEG = (
    (3.0, 30.0, 25.0),   # UE 1
    (7.0, 30.0, 60.0),   # UE 2
    (4.5, 30.0, 42.0),
    (6.0, 30.0, 18.0),
    (9.0, 30.0, 74.0),
)


def default_panel(n_rf=8, n_e=64, carrier_freq=20e9) -> PanelConfig:
    lam = C0 / carrier_freq
    return PanelConfig(n_rf=n_rf, n_e=n_e, d_e=lam / 5, d_rf=lam / 2, carrier_freq=carrier_freq)


def default_scenario(beta_mode="pathloss", seed=0, aoi_pattern="diagonal") -> ScenarioConfig:
    """Full-size configuration: 20 GHz, 8x64 DMA, K=5 targets of which U=2 UEs, |A|=8."""
    return make_scenario(n_rf=8, n_e=64, n_targets=5, num_ues=2, n_aoi=8, snr_db=30.0,
                         beta_mode=beta_mode, seed=seed, aoi_pattern=aoi_pattern)


def reduced_scenario(beta_mode="pathloss", seed=0, snr_db=20.0) -> ScenarioConfig:
    """Desk-scale instance used by the test suite: 4x8 DMA, K=3, U=2, |A|=4."""
    return make_scenario(n_rf=4, n_e=8, n_targets=3, num_ues=2, n_aoi=4, snr_db=snr_db,
                         beta_mode=beta_mode, seed=seed)


def make_scenario(n_rf, n_e, n_targets, num_ues, n_aoi, snr_db=30.0, p_max_dbm=0.0,
                  noise_dbm=-100.0, num_symbols=100, beta_mode="pathloss", seed=0,
                  aoi_pattern="diagonal", targets=None) -> ScenarioConfig:
    panel = default_panel(n_rf, n_e)
    if targets is None:
        targets = tuple(SphericalPoint.deg(*t) for t in _DEFAULT_TARGETS_DEG[:n_targets])
    if beta_mode == "pathloss":
        betas = pathloss_reflections(panel, targets, seed)
    elif beta_mode == "unit":
        betas = (1.0 + 0j,) * len(targets)
    else:
        raise ValueError(f"unknown beta_mode {beta_mode!r}")
    return ScenarioConfig(
        panel=panel,
        targets=tuple(targets),
        num_ues=num_ues,
        reflection_coeffs=betas,
        aoi=aoi_points(n_aoi, pattern=aoi_pattern),
        noise_var=float(dbm_to_watt(noise_dbm)),
        p_max=float(dbm_to_watt(p_max_dbm)),
        snr_thresholds=(float(db_to_linear(snr_db)),) * num_ues,
        num_symbols=num_symbols,
    )
