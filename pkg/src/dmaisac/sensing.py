"""Localization with near-field MUSIC on the combined RF-chain outputs, Monte-Carlo sweeps and maps."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import fisher
from .channel import (PropagationMatrix, build_channels, build_propagation_matrix, steering_jacobian,
                      steering_vector, synthesize_rx_signal, unit_symbols)
from .design import DesignResult, run_design
from .scenario import ScenarioConfig, dbm_to_watt, db_to_linear, spherical_to_cartesian


class SubspaceError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    r_min: float = 1.5
    r_max: float = 12.0
    n_r: int = 120
    phi_min: float = np.deg2rad(5.0)
    phi_max: float = np.deg2rad(85.0)
    n_phi: int = 140
    theta: float = np.deg2rad(30.0)

    @property
    def r_axis(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.n_r)

    @property
    def phi_axis(self) -> np.ndarray:
        return np.linspace(self.phi_min, self.phi_max, self.n_phi)

    def points(self) -> np.ndarray:
        """(n_r, n_phi, 3) spherical coordinates."""
        rr, pp = np.meshgrid(self.r_axis, self.phi_axis, indexing="ij")
        return np.stack([rr, np.full_like(rr, self.theta), pp], axis=-1)

    def cell_half_diagonal(self, r, phi) -> np.ndarray:
        """Half the Cartesian diagonal of the grid cell at (r, phi)."""
        dr = (self.r_max - self.r_min) / max(self.n_r - 1, 1)
        dphi = (self.phi_max - self.phi_min) / max(self.n_phi - 1, 1)
        r, phi = np.broadcast_arrays(np.asarray(r, float), np.asarray(phi, float))
        a = spherical_to_cartesian(np.stack([r, np.full_like(r, self.theta), phi], axis=-1))
        b = spherical_to_cartesian(np.stack([r + dr, np.full_like(r, self.theta), phi + dphi], axis=-1))
        return 0.5 * np.linalg.norm(b - a, axis=-1)


@dataclass
class MusicGrid:
    r_axis: np.ndarray
    phi_axis: np.ndarray
    theta: float
    spectrum: np.ndarray       # (n_r, n_phi)


@dataclass
class Peaks:
    points: np.ndarray         # (K, 3) spherical, NaN rows when padded
    indices: list
    flagged: bool


@dataclass
class TrialResult:
    estimates: np.ndarray      # (K, 3) Cartesian
    errors: np.ndarray         # (K,) per true target, NaN when unmatched
    rmse: float
    flagged: bool


def effective_steering(sc: ScenarioConfig, W, P: PropagationMatrix, grid: GridSpec) -> np.ndarray:
    """Unit-norm W^H P^H a(g) over the grid, shape (n_r, n_phi, N_RF)."""
    a = steering_vector(sc.panel, grid.points(), sc.radiation_exponent)
    g = (a * P.diag.conj()) @ np.asarray(W).conj()
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def music_spectrum(Y, W, P: PropagationMatrix, grid: GridSpec, k_hat: int, sc: ScenarioConfig = None,
                   steering=None) -> MusicGrid:
    """1 / ||E_n^H a~(g)||^2 with E_n the N_RF - k_hat weakest eigenvectors of Y Y^H / T."""
    Y = np.asarray(Y)
    n_rf = Y.shape[0]
    if n_rf <= k_hat:
        raise SubspaceError(f"need N_RF > K_hat for a noise subspace (N_RF={n_rf}, K_hat={k_hat})")
    if steering is None:
        steering = effective_steering(sc, W, P, grid)
    R = Y @ Y.conj().T / Y.shape[1]
    _, vecs = np.linalg.eigh(R)
    En = vecs[:, :n_rf - k_hat]
    proj = np.einsum("...k,kj->...j", steering, En.conj())
    denom = np.sum(np.abs(proj) ** 2, axis=-1)
    spec = 1.0 / np.maximum(denom, np.finfo(float).tiny)
    return MusicGrid(grid.r_axis, grid.phi_axis, grid.theta, spec)


def pick_peaks(mg: MusicGrid, k_hat: int, min_separation=2) -> Peaks:
    """k_hat largest strict 8-neighbour maxima at least ``min_separation`` cells apart (Chebyshev).

    Ties go to the lower (r, phi) index; missing peaks are NaN rows with ``flagged`` set.
    """
    S = np.asarray(mg.spectrum, dtype=float)
    padded = np.pad(S, 1, constant_values=-np.inf)
    is_max = np.ones(S.shape, dtype=bool)
    n_r, n_phi = S.shape
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            is_max &= S > padded[1 + di:1 + di + n_r, 1 + dj:1 + dj + n_phi]
    ii, jj = np.nonzero(is_max)
    order = np.lexsort((jj, ii, -S[ii, jj]))
    chosen = []
    for k in order:
        if all(max(abs(ii[k] - a), abs(jj[k] - b)) >= min_separation for a, b in chosen):
            chosen.append((int(ii[k]), int(jj[k])))
        if len(chosen) == k_hat:
            break
    pts = np.full((k_hat, 3), np.nan)
    for row, (a, b) in enumerate(chosen):
        pts[row] = (mg.r_axis[a], mg.theta, mg.phi_axis[b])
    return Peaks(pts, chosen, len(chosen) < k_hat)


def match_estimates(truth_xyz, est_xyz) -> np.ndarray:
    """Per-target error after optimal one-to-one assignment; NaN for targets left unmatched."""
    truth_xyz = np.asarray(truth_xyz)
    est_xyz = np.asarray(est_xyz)
    valid = np.all(np.isfinite(est_xyz), axis=1)
    errors = np.full(len(truth_xyz), np.nan)
    if not valid.any():
        return errors
    D = np.linalg.norm(truth_xyz[:, None, :] - est_xyz[None, valid, :], axis=-1)
    rows, cols = linear_sum_assignment(D)
    errors[rows] = D[rows, cols]
    return errors


def localize(Y, sc, W, P, grid, k_hat, steering=None) -> tuple[np.ndarray, bool]:
    mg = music_spectrum(Y, W, P, grid, k_hat, sc, steering)
    pk = pick_peaks(mg, k_hat)
    return spherical_to_cartesian(pk.points), pk.flagged


def run_trial(sc, W, P, grid, noise_seed, tx_power, k_hat=None, steering=None, channels=None) -> TrialResult:
    k_hat = sc.num_targets if k_hat is None else k_hat
    truth = spherical_to_cartesian(np.array([t.as_array() for t in sc.targets]))
    Y = synthesize_rx_signal(sc, W, P, noise_seed, tx_powers=np.full(sc.num_ues, tx_power), channels=channels)
    est, flagged = localize(Y, sc, W, P, grid, k_hat, steering)
    err = match_estimates(truth, est)
    ok = np.isfinite(err)
    rmse = float(np.sqrt(np.mean(err[ok] ** 2))) if ok.any() else float("nan")
    return TrialResult(est, err, rmse, flagged or not ok.all())


def target_peb_m(sc: ScenarioConfig, W, P: PropagationMatrix, tx_power=None) -> float:
    """Metres-only bound comparable to a per-target RMSE: sqrt(Tr C_xyz / K) from the target FIM."""
    powers = None if tx_power is None else np.full(max(sc.num_ues, 1), tx_power)
    F = fisher.fim(sc, fisher.weights_to_qrx(W), P, mode="targets", tx_powers=powers, check=False)
    try:
        total = fisher.peb_cartesian(F, np.array([t.as_array() for t in sc.targets]))
    except fisher.SingularityError:
        return float("inf")
    return float(total / np.sqrt(sc.num_targets))


def area_peb(sc: ScenarioConfig, W, P: PropagationMatrix, tx_power=None, aoi_coupling="leg") -> float:
    powers = None if tx_power is None else np.full(max(sc.num_ues, 1), tx_power)
    F = fisher.fim(sc, fisher.weights_to_qrx(W), P, mode="aoi", tx_powers=powers, aoi_coupling=aoi_coupling,
                   check=False)
    try:
        return fisher.peb(F)
    except fisher.SingularityError:
        return float("inf")


RMSE_COLUMNS = ("power_dbm", "rmse_m", "peb", "peb_m", "grid_floor_m", "miss_rate")


def monte_carlo_rmse(sc: ScenarioConfig, design: DesignResult, power_sweep_dbm, trials=50, seed=0,
                     grid: GridSpec | None = None, k_hat=None) -> list[dict]:
    """RMSE of MUSIC localization against the bounds, one row per transmit power.

    Trial t uses the random stream (seed, t) at every power, so the sweep
    compares powers on common noise and symbol draws.
    ``peb`` is the area bound sqrt(Tr I^-1) over the AoI (mixed units);
    ``peb_m`` is the per-target Cartesian bound that an RMSE can be held to.
    """
    grid = grid or GridSpec()
    P = build_propagation_matrix(sc.panel)
    W = design.weights.w_rx()
    steering = effective_steering(sc, W, P, grid)
    channels = build_channels(sc)
    k_hat = sc.num_targets if k_hat is None else k_hat
    tg = np.array([t.as_array() for t in sc.targets])
    floor = float(np.sqrt(np.mean(grid.cell_half_diagonal(tg[:, 0], tg[:, 2]) ** 2)))
    rows = []
    for p_dbm in power_sweep_dbm:
        p_w = dbm_to_watt(p_dbm)
        sq, count, missed = 0.0, 0, 0
        for t in range(trials):
            res = run_trial(sc, W, P, grid, [seed, t], p_w, k_hat, steering, channels)
            ok = np.isfinite(res.errors)
            sq += float(np.sum(res.errors[ok] ** 2))
            count += int(ok.sum())
            missed += int((~ok).sum())
        rows.append({
            "power_dbm": float(p_dbm),
            "rmse_m": float(np.sqrt(sq / count)) if count else float("nan"),
            "peb": area_peb(sc, W, P, p_w),
            "peb_m": target_peb_m(sc, W, P, p_w),
            "grid_floor_m": floor,
            "miss_rate": missed / (trials * sc.num_targets),
        })
    return rows


SNR_SWEEP_COLUMNS = ("gamma_db", "peb", "status", "min_snr_db", "flags")


def snr_tradeoff_sweep(sc: ScenarioConfig, methods, gamma_sweep_db, **design_kw) -> dict[str, list[dict]]:
    """Redesign per threshold and method; rows keyed by method."""
    P = build_propagation_matrix(sc.panel)
    out = {m.upper(): [] for m in methods}
    for g_db in gamma_sweep_db:
        sc_g = sc.with_(snr_thresholds=tuple([float(db_to_linear(g_db))] * sc.num_ues))
        lifted = fisher.build_lifted(sc_g, P)
        for m in methods:
            res = run_design(m, sc_g, P, lifted, **design_kw)
            out[m.upper()].append({
                "gamma_db": float(g_db),
                "peb": res.peb_aoi,
                "status": res.status,
                "min_snr_db": float(np.min(res.achieved_snrs)) if sc.num_ues else float("nan"),
                "flags": ";".join(res.flags),
            })
    return out


def beampattern_map(sc: ScenarioConfig, design: DesignResult, grid: GridSpec | None = None,
                    P: PropagationMatrix | None = None, spreading=False) -> np.ndarray:
    """||W^H P^H a(g)||^2 over the grid, normalized to a maximum of 1.

    By default a(g) is scaled to unit norm so the map shows array gain only;
    with ``spreading=True`` the 1/rho amplitude decay stays in and the
    nearest ranges dominate.
    """
    grid = grid or GridSpec()
    P = P if P is not None else build_propagation_matrix(sc.panel)
    a = steering_vector(sc.panel, grid.points(), sc.radiation_exponent)
    if not spreading:
        a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    g = (a * P.diag.conj()) @ design.weights.w_rx().conj()
    gain = np.sum(np.abs(g) ** 2, axis=-1)
    return gain / gain.max()


def point_fims(sc: ScenarioConfig, W, P: PropagationMatrix, points) -> np.ndarray:
    """3x3 FIM of a lone virtual scatterer at each point, shape (..., 3, 3).

    The UE-to-point coupling has unit modulus and is shared by the point's
    three parameters, so it drops out of the per-point block.
    """
    pts = np.asarray(points, dtype=float)
    J = steering_jacobian(sc.panel, pts, sc.radiation_exponent).stacked()     # (..., N, 3)
    V = np.einsum("...nk,nr->...rk", J * P.diag.conj()[:, None], np.asarray(W).conj())
    powers = sc.ue_powers() if sc.num_ues else np.array([sc.p_max])
    F = fisher.fim_scale(sc) * powers.sum() * np.einsum("...rk,...rl->...kl", V.conj(), V).real
    return F


def peb_map(sc: ScenarioConfig, design: DesignResult, grid: GridSpec | None = None,
            P: PropagationMatrix | None = None) -> np.ndarray:
    """sqrt(Tr F^-1) of the single-point FIM over the grid; +inf where singular."""
    grid = grid or GridSpec()
    P = P if P is not None else build_propagation_matrix(sc.panel)
    F = point_fims(sc, design.weights.w_rx(), P, grid.points())
    out = np.full(F.shape[:-2], np.inf)
    for idx in np.ndindex(out.shape):
        try:
            out[idx] = fisher.peb(F[idx])
        except fisher.SingularityError:
            pass
    return out


# --- CSV output ------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, rows, columns):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for row in rows:
            wr.writerow([_fmt(row[c]) for c in columns])


def write_map(path, matrix, grid: GridSpec):
    """Matrix CSV (rows = range samples, columns = azimuth samples) plus ``<path>.axes.csv``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(matrix):
            wr.writerow([_fmt(v) for v in row])
    with open(str(path) + ".axes.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["axis", "index", "value"])
        for k, v in enumerate(grid.r_axis):
            wr.writerow(["r_m", k, _fmt(v)])
        for k, v in enumerate(grid.phi_axis):
            wr.writerow(["phi_rad", k, _fmt(v)])
        wr.writerow(["theta_rad", 0, _fmt(grid.theta)])


__all__ = [
    "GridSpec", "MusicGrid", "Peaks", "TrialResult", "SubspaceError", "effective_steering", "music_spectrum",
    "pick_peaks", "match_estimates", "localize", "run_trial", "monte_carlo_rmse", "snr_tradeoff_sweep",
    "beampattern_map", "point_fims", "peb_map", "target_peb_m", "area_peb", "write_table", "write_map",
    "RMSE_COLUMNS", "SNR_SWEEP_COLUMNS", "unit_symbols",
]
