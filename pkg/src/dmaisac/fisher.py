"""Fisher information over target / AoI positions, PEB, and the lifted blocks fed to the designs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import PropagationMatrix, SingularityError, build_channels, steering_jacobian
from .scenario import ScenarioConfig, SphericalPoint, points_array, spherical_jacobian, spherical_to_cartesian

PARAM_NAMES = ("r", "theta", "phi")
COND_LIMIT = 1e12


class StructureError(ValueError):
    pass


@dataclass(frozen=True)
class ParamVector:
    points: tuple[SphericalPoint, ...]

    @property
    def dim(self) -> int:
        return 3 * len(self.points)

    def labels(self) -> list[tuple[int, str]]:
        return [(k, name) for k in range(len(self.points)) for name in PARAM_NAMES]

    def as_array(self) -> np.ndarray:
        return points_array(self.points)


@dataclass
class FimBundle:
    matrix: np.ndarray
    params: ParamVector
    scale_constants: dict = field(default_factory=dict)


@dataclass
class DerivativeSet:
    """Per-stream derivative vectors d h_u / d [xi]_p, shape (S, 3M, N), plus stream powers."""
    derivs: np.ndarray
    powers: np.ndarray
    params: ParamVector


def _illuminators(sc: ScenarioConfig, tx_powers=None):
    if sc.num_ues == 0:
        return np.array([sc.p_max if tx_powers is None else float(np.atleast_1d(tx_powers)[0])]), None
    powers = sc.ue_powers() if tx_powers is None else np.broadcast_to(
        np.asarray(tx_powers, dtype=float), (sc.num_ues,)).copy()
    ues = spherical_to_cartesian(points_array(sc.targets[:sc.num_ues]))
    return powers, ues


def _jac_rows(sc, pts) -> np.ndarray:
    """(M, N, 3) Jacobian -> (3M, N) rows ordered (r_1, theta_1, phi_1, ...)."""
    J = steering_jacobian(sc.panel, pts, sc.radiation_exponent).stacked()
    return np.transpose(J, (0, 2, 1)).reshape(-1, sc.panel.n_elements)


def channel_derivatives(sc: ScenarioConfig, mode="aoi", points=None, aoi_coupling="leg",
                        tx_powers=None, include_targets=False) -> DerivativeSet:
    """Derivatives of every stream's channel w.r.t. the position parameters.

    targets: parameters of target k enter UE u's channel through beta_k * a(k)
             for k != u and through the LoS term for k == u.
    aoi:     each AoI point is a virtual unit-reflectivity scatterer in every
             UE's channel. With ``aoi_coupling="leg"`` the reflection carries the
             UE-to-point path phase; ``"common"`` uses coupling 1 for all UEs.
    """
    powers, ue_xyz = _illuminators(sc, tx_powers)
    n_streams = len(powers)
    if mode == "targets":
        pts = tuple(sc.targets) if points is None else tuple(points)
        rows = _jac_rows(sc, pts)
        beta = np.asarray(sc.reflection_coeffs, dtype=complex)
        coup = np.repeat(beta[None, :], n_streams, axis=0)
        for u in range(min(sc.num_ues, n_streams)):
            coup[u, u] = 1.0
        if sc.num_ues == 0:
            coup[:] = beta
        derivs = np.repeat(coup, 3, axis=1)[:, :, None] * rows[None]
        return DerivativeSet(derivs, powers, ParamVector(pts))
    if mode != "aoi":
        raise ValueError(f"unknown mode {mode!r}")
    pts = tuple(sc.aoi) if points is None else tuple(points)
    rows = _jac_rows(sc, pts)
    if aoi_coupling == "leg" and ue_xyz is not None:
        pa = spherical_to_cartesian(points_array(pts))
        dist = np.linalg.norm(ue_xyz[:, None, :] - pa[None], axis=-1)
        coup = np.exp(1j * sc.panel.wavenumber * dist)
    elif aoi_coupling in ("leg", "common"):
        coup = np.ones((n_streams, len(pts)), dtype=complex)
    else:
        raise ValueError(f"unknown aoi_coupling {aoi_coupling!r}")
    derivs = np.repeat(coup, 3, axis=1)[:, :, None] * rows[None]
    ds = DerivativeSet(derivs, powers, ParamVector(pts))
    if include_targets:
        tg = channel_derivatives(sc, "targets", tx_powers=tx_powers)
        ds = DerivativeSet(np.concatenate([ds.derivs, tg.derivs], axis=1), powers,
                           ParamVector(pts + tg.params.points))
    return ds


def fim_scale(sc: ScenarioConfig) -> float:
    return 2.0 * sc.num_symbols / sc.noise_var


def _check_qrx(Q, n_rf, n_e):
    Q = np.asarray(Q)
    n = n_rf * n_e
    if Q.shape != (n, n):
        raise StructureError(f"Q_rx must be {n}x{n}, got {Q.shape}")
    scale = max(np.abs(Q).max(), 1e-300)
    mask = np.kron(np.eye(n_rf, dtype=bool), np.ones((n_e, n_e), dtype=bool))
    if np.abs(Q[~mask]).max(initial=0.0) > 1e-10 * scale:
        raise StructureError("Q_rx is not block-diagonal with N_E x N_E blocks")
    if np.abs(Q - Q.conj().T).max() > 1e-10 * scale:
        raise StructureError("Q_rx is not Hermitian")
    for i in range(n_rf):
        blk = Q[i * n_e:(i + 1) * n_e, i * n_e:(i + 1) * n_e]
        if np.linalg.eigvalsh(0.5 * (blk + blk.conj().T)).min() < -1e-8 * scale:
            raise StructureError(f"Q_rx block {i} is not PSD")


def fim_from_derivatives(ds: DerivativeSet, Q_rx, P: PropagationMatrix, scale: float) -> np.ndarray:
    """[I]_{ij} = scale * Re sum_u P_u (d_{u,i})^H P Q P^H d_{u,j}."""
    n_streams, m3, _ = ds.derivs.shape
    Q = np.asarray(Q_rx)
    G = ds.derivs * P.diag.conj()
    F = np.zeros((m3, m3))
    for u in range(n_streams):
        F += ds.powers[u] * np.real(G[u].conj() @ Q @ G[u].T)
    F *= scale
    return 0.5 * (F + F.T)


def fim(sc: ScenarioConfig, Q_rx, P: PropagationMatrix, mode="aoi", params=None, aoi_coupling="leg",
        tx_powers=None, include_targets=False, check=True) -> FimBundle:
    if check:
        _check_qrx(Q_rx, sc.panel.n_rf, sc.panel.n_e)
    ds = channel_derivatives(sc, mode, None if params is None else params.points, aoi_coupling,
                             tx_powers, include_targets)
    F = fim_from_derivatives(ds, Q_rx, P, fim_scale(sc))
    return FimBundle(F, ds.params, {"T": sc.num_symbols, "noise_var": sc.noise_var,
                                    "powers": ds.powers.tolist()})


def weights_to_qrx(W) -> np.ndarray:
    W = np.asarray(W)
    return W @ W.conj().T


def _equilibrate(F):
    """D F D with D = diag(F)^-1/2, so the condition test ignores the metre/radian unit mix."""
    dg = np.diag(F).copy()
    dg[dg <= 0] = 1.0
    d = 1.0 / np.sqrt(dg)
    return d[:, None] * F * d[None, :], d


def regularize(F: np.ndarray) -> tuple[np.ndarray, float]:
    """Add eps*I, eps = 1e-12 Tr/dim, when the equilibrated cond(F) > 1e12; returns (F', eps)."""
    Fn, _ = _equilibrate(F)
    ev = np.linalg.eigvalsh(Fn)
    if ev[-1] > 0 and ev[0] > ev[-1] / COND_LIMIT:
        return F, 0.0
    eps = 1e-12 * np.trace(F) / F.shape[0]
    return F + eps * np.eye(F.shape[0]), eps


def crb(F, regularized=False) -> np.ndarray:
    """Inverse FIM. Singular means cond(D F D) > 1e12 for the diagonal equilibration D."""
    F = F.matrix if isinstance(F, FimBundle) else np.asarray(F)
    if regularized:
        F, eps = regularize(F)
        if eps > 0:
            return np.linalg.inv(F)
    Fn, d = _equilibrate(F)
    ev = np.linalg.eigvalsh(Fn)
    if np.any(np.diag(F) <= 0) or ev[-1] <= 0 or ev[0] <= ev[-1] / COND_LIMIT:
        raise SingularityError(f"singular FIM (equilibrated eigenvalues {ev[0]:.3e} .. {ev[-1]:.3e})",
                               min_eig=ev[0])
    return d[:, None] * np.linalg.inv(Fn) * d[None, :]


def peb(F, regularized=False) -> float:
    """sqrt(Tr{I^-1}); mixed units (metres and radians) as in the position-bound definition."""
    C = crb(F, regularized)
    return float(np.sqrt(np.trace(C)))


def peb_cartesian(F, points, per_point=False):
    """Metres-only bound: the CRB mapped through d(x,y,z)/d(r,theta,phi) for each point."""
    C = crb(F)
    pts = points_array(points) if not isinstance(points, np.ndarray) else points
    J = spherical_jacobian(pts)
    traces = np.array([np.trace(J[k] @ C[3 * k:3 * k + 3, 3 * k:3 * k + 3] @ J[k].T)
                       for k in range(len(pts))])
    return np.sqrt(traces) if per_point else float(np.sqrt(traces.sum()))


# --- lifting ---------------------------------------------------------------

def lift_matrix(n_e) -> np.ndarray:
    """M = [I, j1] so that lift(A, const) = M^H A M."""
    return np.hstack([np.eye(n_e), 1j * np.ones((n_e, 1))])


def lift_quadratic(A, include_constant=True) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if np.abs(A - A.conj().T).max(initial=0.0) > 1e-10 * max(np.abs(A).max(initial=0.0), 1e-300):
        raise StructureError("lift_quadratic needs a Hermitian matrix")
    n = A.shape[0]
    out = np.zeros((n + 1, n + 1), dtype=complex)
    col = A @ (1j * np.ones(n))
    out[:n, :n] = A
    out[:n, n] = col
    out[n, :n] = col.conj()
    if include_constant:
        out[n, n] = A.sum().real
    return out


def lifted_rank_one(q) -> np.ndarray:
    v = np.append(np.asarray(q, dtype=complex), 1.0)
    return np.outer(v, v.conj())


def qrx_from_lifted(Q_blocks) -> np.ndarray:
    """Effective block-diagonal Q_RX implied by lifted Q_i: 0.25 M Q_i M^H per block."""
    Q_blocks = np.asarray(Q_blocks)
    n_rf, m, _ = Q_blocks.shape
    M = lift_matrix(m - 1)
    out = np.zeros((n_rf * (m - 1), n_rf * (m - 1)), dtype=complex)
    for i, Qi in enumerate(Q_blocks):
        s = slice(i * (m - 1), (i + 1) * (m - 1))
        out[s, s] = 0.25 * M @ Qi @ M.conj().T
    return out


def _block_vectors(vecs, n_rf, n_e):
    return np.asarray(vecs).reshape(vecs.shape[:-1] + (n_rf, n_e))


@dataclass
class LiftedBlocks:
    h_blocks: np.ndarray      # (U, N_RF, N_E+1, N_E+1)
    b_blocks: np.ndarray      # (N_RF, N_E+1, N_E+1)
    fim_vectors: np.ndarray   # (S, 3|A|, N_RF, N_E): sqrt(c P_u) (P^H d_{u,p}) split per microstrip
    include_constant: bool = True

    @property
    def n_rf(self) -> int:
        return self.b_blocks.shape[0]

    @property
    def n_params(self) -> int:
        return self.fim_vectors.shape[1]

    def fim_block(self, p, q, i) -> np.ndarray:
        """Lifted L with [I]_{pq} = sum_i 0.25 Tr{L_i Q_i} for rank-one lifted Q_i."""
        gp = self.fim_vectors[:, p, i]
        gq = self.fim_vectors[:, q, i]
        S = gq.T @ gp.conj()
        return lift_quadratic(0.5 * (S + S.conj().T), self.include_constant)

    def fim_blocks(self) -> np.ndarray:
        """All entry-wise lifted FIM matrices, shape (3|A|, 3|A|, N_RF, N_E+1, N_E+1)."""
        m3 = self.n_params
        out = np.empty((m3, m3, self.n_rf) + self.b_blocks.shape[1:], dtype=complex)
        for p in range(m3):
            for q in range(p, m3):
                for i in range(self.n_rf):
                    out[p, q, i] = self.fim_block(p, q, i)
                    out[q, p, i] = out[p, q, i]
        return out

    def fim_of(self, Q_blocks) -> np.ndarray:
        """FIM implied by (possibly relaxed) lifted Q_i blocks."""
        if not self.include_constant:
            raise NotImplementedError("fim_of is defined for constant-corrected lifting")
        Q_blocks = np.asarray(Q_blocks)
        n_e = Q_blocks.shape[-1] - 1
        Mt = lift_matrix(n_e)
        # Tr{lift(Herm(g_q g_p^H)) Q} = Re(ghat_p^H Q ghat_q) with ghat = M^H g
        F = np.zeros((self.n_params, self.n_params))
        for i, Qi in enumerate(Q_blocks):
            gh = self.fim_vectors[:, :, i, :] @ Mt.conj()     # (S, 3A, N_E+1) = (M^H g)^T
            F += np.einsum("spa,ab,sqb->pq", gh.conj(), Qi, gh).real
        return 0.25 * 0.5 * (F + F.T)


def build_h_blocks(sc: ScenarioConfig, P: PropagationMatrix, include_constant=True, channels=None) -> np.ndarray:
    ch = channels if channels is not None else build_channels(sc)
    n_rf, n_e = sc.panel.n_rf, sc.panel.n_e
    g = _block_vectors(ch.h_total * P.diag.conj(), n_rf, n_e)   # (U, N_RF, N_E)
    out = np.zeros((sc.num_ues, n_rf, n_e + 1, n_e + 1), dtype=complex)
    for u in range(sc.num_ues):
        for i in range(n_rf):
            out[u, i] = lift_quadratic(np.outer(g[u, i], g[u, i].conj()), include_constant)
    return out


def build_b_matrix(sc: ScenarioConfig, P: PropagationMatrix, points=None) -> np.ndarray:
    """B = sum over AoI points and their (r, theta, phi) of (P^H d)(P^H d)^H."""
    pts = tuple(sc.aoi) if points is None else tuple(points)
    if not pts:
        n = sc.panel.n_elements
        return np.zeros((n, n), dtype=complex)
    G = _jac_rows(sc, pts) * P.diag.conj()
    return G.T @ G.conj()


def build_b_blocks(sc: ScenarioConfig, P: PropagationMatrix, include_constant=True, points=None) -> np.ndarray:
    B = build_b_matrix(sc, P, points)
    n_rf, n_e = sc.panel.n_rf, sc.panel.n_e
    return np.array([lift_quadratic(B[i * n_e:(i + 1) * n_e, i * n_e:(i + 1) * n_e], include_constant)
                     for i in range(n_rf)])


def build_lifted(sc: ScenarioConfig, P: PropagationMatrix, include_constant=True, aoi_coupling="leg",
                 include_targets=False) -> LiftedBlocks:
    ds = channel_derivatives(sc, "aoi", aoi_coupling=aoi_coupling, include_targets=include_targets)
    c = fim_scale(sc)
    vec = np.sqrt(c * ds.powers)[:, None, None] * ds.derivs * P.diag.conj()
    return LiftedBlocks(
        h_blocks=build_h_blocks(sc, P, include_constant),
        b_blocks=build_b_blocks(sc, P, include_constant),
        fim_vectors=_block_vectors(vec, sc.panel.n_rf, sc.panel.n_e),
        include_constant=include_constant,
    )
