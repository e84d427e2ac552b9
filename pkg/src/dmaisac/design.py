"""Receive-weight designs: Schur-complement CRB SDR (P1), trace-FIM SDR (P2), closed form (CFS).

All three share the lifted per-microstrip variables Q_i (size N_E+1) from
``fisher.build_lifted``; a rank-one Q_i = [q; 1][q; 1]^H maps to the Lorentzian
weights w = 0.5 (j + q).
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fisher
from .channel import PropagationMatrix, build_propagation_matrix, received_snr
from .scenario import ScenarioConfig, linear_to_db
from .sdp import (INFEASIBLE, NUMERICAL_FAILURE, OPTIMAL, NumericalFailure, SdpProblem, hermitian_embed,
                  hermitian_unembed, principal_eigvec, solve)

METHODS = ("P1", "P2", "CFS")
SNR_SLACK_DB = 0.5
RANK_ONE_TOL = 1e-6
# non-optimal solver exits are still used when their residuals are this small
ACCEPT_RESIDUAL = 1e-4


class DesignInfeasible(RuntimeError):
    def __init__(self, msg, report):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class LorentzianWeights:
    phases: np.ndarray          # (N_RF, N_E)
    strict: bool = False

    @property
    def weights(self) -> np.ndarray:
        w = 0.5 * (1j + np.exp(1j * self.phases))
        w[np.abs(w) < 1e-12] = 0.0    # the null point phi = -pi/2 is exactly zero, not 3e-17
        return w

    def w_rx(self) -> np.ndarray:
        """Block matrix (N, N_RF): column i carries microstrip i's weights only."""
        n_rf, n_e = self.phases.shape
        W = np.zeros((n_rf * n_e, n_rf), dtype=complex)
        w = self.weights
        for i in range(n_rf):
            W[i * n_e:(i + 1) * n_e, i] = w[i]
        return W

    def q_vectors(self) -> np.ndarray:
        return np.exp(1j * self.phases)


def lorentzian_project(q, strict=False):
    """Phases arg(q) (clamped to [-pi/2, pi/2] when strict) and w = 0.5 (j + e^{j phi})."""
    phi = np.angle(np.asarray(q))
    if strict:
        phi = np.clip(phi, -np.pi / 2, np.pi / 2)
    return phi, LorentzianWeights(np.atleast_1d(phi)).weights.reshape(np.shape(phi))


@dataclass
class Audit:
    snr_db: np.ndarray
    snr_flags: np.ndarray        # True where SNR falls short of gamma by more than 0.5 dB
    peb: float
    fim_singular: bool


@dataclass
class DesignResult:
    method: str
    weights: LorentzianWeights
    achieved_snrs: np.ndarray    # dB, from the projected weights
    peb_aoi: float
    snr_flags: np.ndarray
    status: str = "ok"
    flags: list = field(default_factory=list)
    solver_diag: dict = field(default_factory=dict)
    relaxed_objective: float = float("nan")
    rank_one_gap: np.ndarray = None
    relaxed_q: np.ndarray = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, np.ndarray):
                return [clean(v) for v in x.tolist()]
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, (np.floating, float)):
                x = float(x)
                return x if np.isfinite(x) else str(x)
            if isinstance(x, (np.integer, np.bool_)):
                return x.item()
            return x

        return clean({
            "method": self.method,
            "status": self.status,
            "phases": self.weights.phases,
            "strict_codebook": self.weights.strict,
            "achieved_snr_db": self.achieved_snrs,
            "snr_flags": self.snr_flags,
            "peb_aoi": self.peb_aoi,
            "relaxed_objective": self.relaxed_objective,
            "rank_one_gap": self.rank_one_gap if self.rank_one_gap is not None else [],
            "flags": self.flags,
            "solver": self.solver_diag,
            "wall_time_s": self.wall_time,
        })

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_phases_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["i", "n", "phi"])
            for i, row in enumerate(self.weights.phases, start=1):
                for n, phi in enumerate(row, start=1):
                    wr.writerow([i, n, repr(float(phi))])


# --- audit -----------------------------------------------------------------

def audit(sc: ScenarioConfig, P: PropagationMatrix, weights: LorentzianWeights, channels=None,
          aoi_coupling="leg") -> Audit:
    """Recompute SNRs and area PEB from the final discrete weights."""
    from .channel import build_channels

    W = weights.w_rx()
    ch = channels if channels is not None else build_channels(sc)
    powers = sc.ue_powers()
    snr = np.array([received_snr(W, P, ch.h_total[u], powers[u], sc.noise_var) for u in range(sc.num_ues)])
    with np.errstate(divide="ignore"):
        snr_db = linear_to_db(snr)
    gamma_db = linear_to_db(np.asarray(sc.snr_thresholds, dtype=float))
    flags = snr_db < gamma_db - SNR_SLACK_DB
    F = fisher.fim(sc, fisher.weights_to_qrx(W), P, mode="aoi", aoi_coupling=aoi_coupling, check=False)
    try:
        value = fisher.peb(F)
        singular = False
    except fisher.SingularityError:
        value, singular = float("inf"), True
    return Audit(snr_db=np.asarray(snr_db), snr_flags=np.asarray(flags), peb=value, fim_singular=singular)


def _finish(method, sc, P, phases, strict, started, aoi_coupling, **extra) -> DesignResult:
    lw = LorentzianWeights(phases=phases, strict=strict)
    a = audit(sc, P, lw, aoi_coupling=aoi_coupling)
    flags = list(extra.pop("flags", []))
    for u in np.flatnonzero(a.snr_flags):
        flags.append(f"snr_shortfall_ue{u + 1}")
    if a.fim_singular:
        flags.append("fim_singular")
    return DesignResult(method=method, weights=lw, achieved_snrs=a.snr_db, peb_aoi=a.peb, snr_flags=a.snr_flags,
                        flags=flags, wall_time=time.perf_counter() - started, **extra)


def recover_phases(Q_blocks, strict=False):
    """Principal-eigenvector recovery per lifted block; returns phases and sigma2/sigma1 per block."""
    phases, gaps = [], []
    for Qi in Q_blocks:
        vals = np.linalg.eigvalsh(0.5 * (Qi + Qi.conj().T))
        _, u = principal_eigvec(Qi)
        phi, _ = lorentzian_project(u[:-1], strict)
        phases.append(phi)
        gaps.append(max(vals[-2], 0.0) / vals[-1] if vals[-1] > 0 else 1.0)
    return np.array(phases), np.array(gaps)


# --- closed form -----------------------------------------------------------

def design_cfs(sc: ScenarioConfig, P: PropagationMatrix | None = None, lifted=None, strict=False,
               aoi_coupling="leg") -> DesignResult:
    """q_i from the principal eigenvector of each lifted B_i; no solver."""
    started = time.perf_counter()
    P = P if P is not None else build_propagation_matrix(sc.panel)
    B = lifted.b_blocks if lifted is not None else fisher.build_b_blocks(sc, P)
    phases = []
    for Bi in B:
        _, u = principal_eigvec(Bi)
        phi, _ = lorentzian_project(u[:-1], strict)
        phases.append(phi)
    phases = np.array(phases)
    q = np.exp(1j * phases)
    objective = float(sum(np.trace(Bi @ fisher.lifted_rank_one(qi)).real for Bi, qi in zip(B, q)))
    return _finish("CFS", sc, P, phases, strict, started, aoi_coupling, relaxed_objective=objective,
                   solver_diag={"solver": "none"})


# --- SDP assembly ----------------------------------------------------------

def _embed_coef(L, factor):
    """Real symmetric coefficient C with <C, X> = factor * Tr{L unembed(X)}."""
    return 0.5 * factor * hermitian_embed(L)


def _common_constraints(prob, sc, lifted, relaxation, snr_mode):
    """diag / trace constraints on each Q_i and the SNR rows; returns SNR row indices."""
    n_rf = lifted.n_rf
    n1 = lifted.b_blocks.shape[-1]
    for i in range(n_rf):
        if relaxation == "diag":
            for k in range(n1):
                prob.add_constraint({i: [(k, k, 1.0), (k + n1, k + n1, 1.0)]}, 2.0)
        elif relaxation == "trace":
            prob.add_constraint({i: np.eye(2 * n1)}, 2.0 * n1)
        else:
            raise ValueError(f"unknown relaxation {relaxation!r}")
    rows = []
    powers = sc.ue_powers()
    if snr_mode == "scaled":
        H = lifted.h_blocks
        factor = 0.25
        rhs = [sc.noise_var * g / p for g, p in zip(sc.snr_thresholds, powers)]
    elif snr_mode == "literal":
        # unscaled constraint sum_i Tr{H_ui Q_i} >= gamma_u, H without the constant term
        H = fisher.build_h_blocks(sc, build_propagation_matrix(sc.panel), include_constant=False)
        factor = 1.0
        rhs = list(sc.snr_thresholds)
    else:
        raise ValueError(f"unknown snr_mode {snr_mode!r}")
    for u in range(sc.num_ues):
        terms = {i: _embed_coef(H[u, i], factor) for i in range(n_rf)}
        rows.append(prob.add_constraint(terms, rhs[u], sense=">="))
    return rows


def _unembed_blocks(sol, n_rf):
    return np.array([hermitian_unembed(sol.block_values[i]) for i in range(n_rf)])


def _fim_scaling(lifted):
    n1 = lifted.b_blocks.shape[-1]
    ref = lifted.fim_of(np.broadcast_to(np.eye(n1), (lifted.n_rf, n1, n1)))
    d = 1.0 / np.sqrt(np.diag(ref))
    return d


def _run_solver(prob, solver_opts):
    sol = solve(prob, **(solver_opts or {}))
    diag = {"status": sol.status, "iterations": sol.iterations,
            "residuals": {k: float(v) for k, v in sol.residuals.items()},
            "objective": sol.objective_value, "dual_objective": sol.dual_objective}
    return sol, diag


def _usable(sol) -> bool:
    if sol.status == OPTIMAL:
        return True
    if sol.status == INFEASIBLE:
        return False
    r = sol.residuals
    return max(r["primal"], r["dual"], r["gap"]) < ACCEPT_RESIDUAL


def infeasibility_report(sc: ScenarioConfig, lifted, relaxation="diag", solver_opts=None) -> dict:
    """For each UE, the best relaxed SNR achievable alone versus its threshold."""
    n_rf = lifted.n_rf
    n1 = lifted.b_blocks.shape[-1]
    powers = sc.ue_powers()
    report = {"binding": [], "per_ue": []}
    for u in range(sc.num_ues):
        prob = SdpProblem([2 * n1] * n_rf)
        if relaxation == "diag":
            for i in range(n_rf):
                for k in range(n1):
                    prob.add_constraint({i: [(k, k, 1.0), (k + n1, k + n1, 1.0)]}, 2.0)
        else:
            for i in range(n_rf):
                prob.add_constraint({i: np.eye(2 * n1)}, 2.0 * n1)
        prob.add_objective({i: -_embed_coef(lifted.h_blocks[u, i], 0.25) for i in range(n_rf)})
        sol = solve(prob, **(solver_opts or {}))
        best = -sol.objective_value * powers[u] / sc.noise_var
        need = sc.snr_thresholds[u]
        entry = {"constraint": f"snr_ue{u + 1}", "required_db": float(linear_to_db(need)),
                 "max_relaxed_db": float(linear_to_db(max(best, 1e-300)))}
        report["per_ue"].append(entry)
        if best < need:
            report["binding"].append(entry["constraint"])
    if not report["binding"]:
        report["binding"] = [f"snr_ue{u + 1}" for u in range(sc.num_ues)]
        report["note"] = "each constraint is attainable alone; jointly infeasible"
    return report


def build_p2_problem(sc, lifted, relaxation="diag", snr_mode="scaled"):
    n_rf = lifted.n_rf
    n1 = lifted.b_blocks.shape[-1]
    prob = SdpProblem([2 * n1] * n_rf)
    _common_constraints(prob, sc, lifted, relaxation, snr_mode)
    bscale = max(np.abs(lifted.b_blocks).max(), 1e-300)
    prob.add_objective({i: -_embed_coef(lifted.b_blocks[i] / bscale, 1.0) for i in range(n_rf)})
    return prob, bscale


def build_p1_problem(sc, lifted, relaxation="diag", snr_mode="scaled", schur="per_param"):
    """Schur-complement SDR of min Tr{I^-1}.

    The FIM enters through the diagonally scaled I' = D I D (D = diag(ref)^-1/2
    at Q_i = I), which keeps its entries O(1); the objective weights D_aa^2 undo
    the scaling so the optimum equals Tr{I^-1}.
    """
    n_rf = lifted.n_rf
    n1 = lifted.b_blocks.shape[-1]
    m3 = lifted.n_params
    d = _fim_scaling(lifted)
    coefs = {}
    for p in range(m3):
        for q in range(p, m3):
            coefs[p, q] = [_embed_coef(lifted.fim_block(p, q, i), 0.25 * d[p] * d[q]) for i in range(n_rf)]
    w = d ** 2
    wscale = w.max()
    if schur == "per_param":
        sizes = [2 * n1] * n_rf + [m3 + 1] * m3
        prob = SdpProblem(sizes)
        _common_constraints(prob, sc, lifted, relaxation, snr_mode)
        for a in range(m3):
            blk = n_rf + a
            for (p, q), cs in coefs.items():
                terms = {i: cs[i] for i in range(n_rf)}
                terms[blk] = [(p, q, -1.0 if p == q else -0.5)]
                prob.add_constraint(terms, 0.0)
            for p in range(m3):
                prob.add_constraint({blk: [(p, m3, 0.5)]}, 1.0 if p == a else 0.0)
        prob.add_objective({n_rf + a: [(m3, m3, w[a] / wscale)] for a in range(m3)})
    elif schur == "joint":
        # one LMI [[I', Id], [Id, V]] >= 0, min sum_a w_a V_aa
        blk = n_rf
        prob = SdpProblem([2 * n1] * n_rf + [2 * m3])
        _common_constraints(prob, sc, lifted, relaxation, snr_mode)
        for (p, q), cs in coefs.items():
            terms = {i: cs[i] for i in range(n_rf)}
            terms[blk] = [(p, q, -1.0 if p == q else -0.5)]
            prob.add_constraint(terms, 0.0)
        for p in range(m3):
            for q in range(m3):
                prob.add_constraint({blk: [(p, m3 + q, 0.5)]}, 1.0 if p == q else 0.0)
        prob.add_objective({blk: [(m3 + a, m3 + a, w[a] / wscale) for a in range(m3)]})
    else:
        raise ValueError(f"unknown schur formulation {schur!r}")
    return prob, wscale


def _design_sdp(method, sc, P, lifted, relaxation, snr_mode, strict, solver_opts, aoi_coupling, **build_kw):
    started = time.perf_counter()
    P = P if P is not None else build_propagation_matrix(sc.panel)
    lifted = lifted if lifted is not None else fisher.build_lifted(sc, P, aoi_coupling=aoi_coupling)
    if method == "P1":
        prob, obj_scale = build_p1_problem(sc, lifted, relaxation, snr_mode, **build_kw)
    else:
        prob, obj_scale = build_p2_problem(sc, lifted, relaxation, snr_mode)
    sol, diag = _run_solver(prob, solver_opts)
    diag["constraints"] = prob.n_constraints
    diag["blocks"] = prob.psd_sizes
    if sol.status == INFEASIBLE:
        report = infeasibility_report(sc, lifted, relaxation, solver_opts) if sc.num_ues else {}
        raise DesignInfeasible(f"{method}: SNR constraints infeasible ({', '.join(report.get('binding', []))})",
                               report)
    if not _usable(sol):
        raise NumericalFailure(f"{method}: solver stopped with status {sol.status} "
                               f"(residuals {diag['residuals']})")
    flags = [] if sol.status == OPTIMAL else ["solver_inaccurate"]
    Q = _unembed_blocks(sol, lifted.n_rf)
    phases, gaps = recover_phases(Q, strict)
    if np.any(gaps >= RANK_ONE_TOL):
        flags.append("rank_one_gap")
    value = sol.objective_value * obj_scale
    if method == "P2":
        value = -value
    return _finish(method, sc, P, phases, strict, started, aoi_coupling, relaxed_objective=value,
                   rank_one_gap=gaps, relaxed_q=Q, solver_diag=diag, flags=flags)


def design_p1(sc: ScenarioConfig, P: PropagationMatrix | None = None, lifted=None, relaxation="diag",
              snr_mode="scaled", strict=False, schur="per_param", solver_opts=None,
              aoi_coupling="leg") -> DesignResult:
    """Direct area CRB minimization; ``relaxed_objective`` is Tr{I^-1} at the relaxed optimum."""
    return _design_sdp("P1", sc, P, lifted, relaxation, snr_mode, strict, solver_opts, aoi_coupling,
                       schur=schur)


def design_p2(sc: ScenarioConfig, P: PropagationMatrix | None = None, lifted=None, relaxation="diag",
              snr_mode="scaled", strict=False, solver_opts=None, aoi_coupling="leg") -> DesignResult:
    """Maximize sum_i Tr{B_i Q_i}; ``relaxed_objective`` is that sum at the relaxed optimum."""
    return _design_sdp("P2", sc, P, lifted, relaxation, snr_mode, strict, solver_opts, aoi_coupling)


def run_design(method, sc, P=None, lifted=None, **kw) -> DesignResult:
    """Dispatch by name; infeasible and failed SDP designs come back as a status, not an exception."""
    method = method.upper()
    started = time.perf_counter()
    P = P if P is not None else build_propagation_matrix(sc.panel)
    if method == "CFS":
        kw = {k: v for k, v in kw.items() if k in ("strict", "aoi_coupling")}
        return design_cfs(sc, P, lifted, **kw)
    fn = {"P1": design_p1, "P2": design_p2}.get(method)
    if fn is None:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    try:
        return fn(sc, P, lifted, **kw)
    except (DesignInfeasible, NumericalFailure) as exc:
        n_rf, n_e = sc.panel.n_rf, sc.panel.n_e
        status = "infeasible" if isinstance(exc, DesignInfeasible) else NUMERICAL_FAILURE
        diag = {"error": str(exc)}
        if isinstance(exc, DesignInfeasible):
            diag["report"] = exc.report
        return DesignResult(method=method, weights=LorentzianWeights(np.full((n_rf, n_e), np.nan)),
                            achieved_snrs=np.full(sc.num_ues, np.nan), peb_aoi=float("nan"),
                            snr_flags=np.zeros(sc.num_ues, bool), status=status, solver_diag=diag,
                            wall_time=time.perf_counter() - started)


# --- complexity ------------------------------------------------------------

@dataclass(frozen=True)
class ComplexityReport:
    n_p1: int
    n_p2: int
    cfs_svd: int
    p1_lmi_sizes: tuple
    p2_lmi_sizes: tuple

    def as_dict(self) -> dict:
        return asdict(self)


def complexity_report(sc: ScenarioConfig) -> ComplexityReport:
    """Variable counts and LMI sizes entering the interior-point complexity O(n^2 sum m^2 + n sum m^3).

    n_P1 = 3|A| + N_RF (N_E+1)^2, n_P2 = N_RF (N_E+1)^2, CFS = N_RF (N_E+1)^3.
    """
    n_rf, n_e = sc.panel.n_rf, sc.panel.n_e
    a3 = 3 * len(sc.aoi)
    lifted = n_rf * (n_e + 1) ** 2
    p2_sizes = (n_e + 1,) * n_rf
    return ComplexityReport(
        n_p1=a3 + lifted,
        n_p2=lifted,
        cfs_svd=n_rf * (n_e + 1) ** 3,
        p1_lmi_sizes=(a3 + 1,) * a3 + p2_sizes,
        p2_lmi_sizes=p2_sizes,
    )
