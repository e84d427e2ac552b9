"""Waveguide propagation, near-field steering vectors and uplink channels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import PanelConfig, ScenarioConfig, points_array, spherical_jacobian, spherical_to_cartesian


class SingularityError(ValueError):
    """Raised when a quantity is evaluated at a singular point (e.g. a source on an element)."""

    def __init__(self, msg, min_eig=None):
        super().__init__(msg)
        self.min_eig = min_eig


@dataclass(frozen=True)
class PropagationMatrix:
    diag: np.ndarray

    def matrix(self) -> np.ndarray:
        return np.diag(self.diag)


@dataclass(frozen=True)
class ChannelSet:
    h_los: np.ndarray   # (U, N)
    h_scat: np.ndarray  # (U, N)

    @property
    def h_total(self) -> np.ndarray:
        return self.h_los + self.h_scat


@dataclass(frozen=True)
class SteeringJacobian:
    d_r: np.ndarray
    d_theta: np.ndarray
    d_phi: np.ndarray

    def stacked(self) -> np.ndarray:
        """Columns stacked along the last axis as (..., N, 3) in (r, theta, phi) order."""
        return np.stack([self.d_r, self.d_theta, self.d_phi], axis=-1)


def build_propagation_matrix(panel: PanelConfig) -> PropagationMatrix:
    rho = panel.intra_strip_locations()
    return PropagationMatrix(np.exp(-rho * (panel.waveguide_alpha + 1j * panel.waveguide_beta)))


def _as_points(p) -> np.ndarray:
    if hasattr(p, "as_array"):
        return p.as_array()
    if isinstance(p, (list, tuple)) and p and hasattr(p[0], "as_array"):
        return points_array(p)
    return np.asarray(p, dtype=float)


def _geometry(panel: PanelConfig, pts: np.ndarray):
    x = spherical_to_cartesian(pts)                       # (..., 3)
    v = x[..., None, :] - panel.positions()               # (..., N, 3) element -> point
    rho = np.linalg.norm(v, axis=-1)
    if np.any(rho < 1e-12):
        raise SingularityError("point coincides with a metamaterial element")
    return x, v, rho


def _amplitude(v, rho, b):
    if b == 0:
        return 1.0 / (4 * np.pi * rho)
    cos_el = np.clip(v[..., 2] / rho, 0.0, None)
    return np.sqrt(2 * (b + 1) * cos_el ** b) / (4 * np.pi * rho)


def steering_vector(panel: PanelConfig, p, radiation_exponent=0.0) -> np.ndarray:
    """Near-field RX steering vector(s).

    ``p`` is a SphericalPoint, a sequence of them, or an array (..., 3) of
    (r, theta, phi); the result has shape (..., N).
    """
    pts = _as_points(p)
    _, v, rho = _geometry(panel, pts)
    return _amplitude(v, rho, radiation_exponent) * np.exp(1j * panel.wavenumber * rho)


def steering_jacobian(panel: PanelConfig, p, radiation_exponent=0.0) -> SteeringJacobian:
    """Analytic d a / d(r, theta, phi) through the Cartesian chain rule."""
    pts = _as_points(p)
    _, v, rho = _geometry(panel, pts)
    b = radiation_exponent
    g = _amplitude(v, rho, b) * np.exp(1j * panel.wavenumber * rho)
    u_hat = v / rho[..., None]
    # grad_x log g = (b/2) e_z / v_z - (b/2 + 1) u/rho + j k u
    grad = (1j * panel.wavenumber - (b / 2 + 1) / rho)[..., None] * u_hat
    if b != 0:
        vz = v[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            ez_term = np.where(vz > 0, (b / 2) / vz, 0.0)
        grad[..., 2] += ez_term
    grad = grad * g[..., None]                            # (..., N, 3) d g / d x
    jac = spherical_jacobian(pts)                          # (..., 3, 3)
    cols = np.einsum("...nk,...kp->...np", grad, jac)
    return SteeringJacobian(cols[..., 0], cols[..., 1], cols[..., 2])


def build_channels(sc: ScenarioConfig) -> ChannelSet:
    a = steering_vector(sc.panel, sc.targets, sc.radiation_exponent)   # (K, N)
    beta = np.asarray(sc.reflection_coeffs, dtype=complex)
    u_count = sc.num_ues
    h_los = a[:u_count].copy()
    weighted = beta[:, None] * a
    total = weighted.sum(axis=0)
    h_scat = total[None, :] - weighted[:u_count]
    return ChannelSet(h_los=h_los, h_scat=h_scat)


def received_snr(W, P, h_u, tx_power, noise_var) -> float:
    W = np.asarray(W)
    pdiag = P.diag if isinstance(P, PropagationMatrix) else np.diag(np.asarray(P))
    h_u = np.asarray(h_u)
    if W.shape[0] != pdiag.shape[0] or h_u.shape[-1] != pdiag.shape[0]:
        raise ValueError(f"dimension mismatch: W {W.shape}, P {pdiag.shape}, h {h_u.shape}")
    g = W.conj().T @ (pdiag.conj() * h_u)
    return float(tx_power * np.vdot(g, g).real / noise_var)


def effective_channel(W, P: PropagationMatrix, vecs) -> np.ndarray:
    """W^H P^H v for each row of ``vecs`` (..., N) -> (..., N_RF)."""
    return (np.asarray(vecs) * P.diag.conj()) @ np.asarray(W).conj()


def unit_symbols(num_ues, num_symbols, rng_seed=0, kind="qpsk") -> np.ndarray:
    """Unit-modulus symbol rows, so T^-1 s s^H = 1 exactly.

    ``orthogonal`` gives DFT rows, which are also mutually orthogonal across UEs
    (requires U <= T).
    """
    if kind == "qpsk":
        rng = np.random.default_rng(rng_seed)
        k = rng.integers(0, 4, size=(num_ues, num_symbols))
        return np.exp(1j * (np.pi / 4 + np.pi / 2 * k))
    if kind == "orthogonal":
        if num_ues > num_symbols:
            raise ValueError("orthogonal symbols need U <= T")
        t = np.arange(num_symbols)
        return np.exp(2j * np.pi * np.outer(np.arange(num_ues), t) / num_symbols)
    raise ValueError(f"unknown symbol kind {kind!r}")


def synthesize_rx_signal(sc: ScenarioConfig, W, P: PropagationMatrix, rng_seed=0, symbols=None,
                         tx_powers=None, channels: ChannelSet | None = None) -> np.ndarray:
    """Y = W^H P^H sum_u sqrt(P_u) h_u s_u + N, noise CN(0, sigma^2) on each RF-chain output."""
    rng = np.random.default_rng(rng_seed)
    ch = channels if channels is not None else build_channels(sc)
    powers = sc.ue_powers() if tx_powers is None else np.asarray(tx_powers, dtype=float)
    if symbols is None:
        symbols = unit_symbols(sc.num_ues, sc.num_symbols, rng.integers(2**32))
    n_rf = np.asarray(W).shape[1]
    g = effective_channel(W, P, ch.h_total)               # (U, N_RF)
    Y = (np.sqrt(powers)[:, None] * g).T @ symbols
    noise = rng.standard_normal((n_rf, symbols.shape[1])) + 1j * rng.standard_normal((n_rf, symbols.shape[1]))
    return Y + np.sqrt(sc.noise_var / 2) * noise
