import json
import time
from types import SimpleNamespace

import numpy as np
import pytest

from dmaisac import fisher
from dmaisac.channel import build_channels, build_propagation_matrix, received_snr, steering_jacobian
from dmaisac.design import (DesignInfeasible, LorentzianWeights, audit, complexity_report, design_cfs, design_p1,
                            design_p2, lorentzian_project, run_design)
from dmaisac.scenario import SphericalPoint, db_to_linear, default_scenario, make_scenario


def single_point_scenario(n_rf, n_e, point):
    pt = SphericalPoint.deg(*point)
    return make_scenario(n_rf, n_e, 1, 0, 1, targets=(pt,)).with_(aoi=(pt,))


# --- codebook -----------------------------------------------------------------

def test_lorentzian_project_examples():
    phi, w = lorentzian_project(np.array([1.0 + 0j]))
    assert phi[0] == 0.0 and w[0] == pytest.approx(0.5 + 0.5j) and abs(w[0]) == pytest.approx(np.sqrt(2) / 2)
    phi, w = lorentzian_project(np.array([1j]))
    assert phi[0] == pytest.approx(np.pi / 2) and w[0] == pytest.approx(1j)
    phi, w = lorentzian_project(np.array([-1j]))
    assert phi[0] == pytest.approx(-np.pi / 2) and w[0] == 0
    phi, _ = lorentzian_project(np.array([-1j, -1.0 + 0.1j, -1.0 - 0.1j]), strict=True)
    assert phi[0] == pytest.approx(-np.pi / 2)
    assert phi[1] == pytest.approx(np.pi / 2) and phi[2] == pytest.approx(-np.pi / 2)


def test_weights_on_circle_and_block_support():
    lw = LorentzianWeights(np.random.default_rng(0).uniform(-np.pi, np.pi, (3, 5)))
    assert np.abs(np.abs(lw.weights - 0.5j) - 0.5).max() <= 1e-12
    W = lw.w_rx()
    mask = np.kron(np.eye(3, dtype=bool), np.ones((5, 1), dtype=bool))
    assert np.array_equal(W != 0, mask)
    assert np.array_equal(W[mask].reshape(3, 5), lw.weights)


# --- audit --------------------------------------------------------------------

def test_audit_all_null_weights(reduced, reduced_P):
    a = audit(reduced, reduced_P, LorentzianWeights(np.full((4, 8), -np.pi / 2)))
    assert np.all(np.isneginf(a.snr_db)) and a.snr_flags.all()
    assert a.fim_singular and a.peb == np.inf


def test_audit_matches_received_snr(reduced, reduced_P):
    lw = LorentzianWeights(np.random.default_rng(2).uniform(-np.pi, np.pi, (4, 8)))
    a = audit(reduced, reduced_P, lw)
    h = build_channels(reduced).h_total
    for u in range(2):
        lin = received_snr(lw.w_rx(), reduced_P, h[u], reduced.p_max, reduced.noise_var)
        assert a.snr_db[u] == pytest.approx(10 * np.log10(lin))


# --- design results on the reduced instance --------------------------------------

def test_all_designs_on_codebook(reduced_designs):
    for res in reduced_designs.values():
        assert res.status == "ok"
        assert np.abs(np.abs(res.weights.weights - 0.5j) - 0.5).max() <= 1e-9


def test_dominance_chain(reduced_designs):
    p1, p2, cfs = (reduced_designs[m] for m in ("P1", "P2", "CFS"))
    assert p1.peb_aoi <= p2.peb_aoi * 1.05
    assert p1.peb_aoi <= cfs.peb_aoi
    assert p2.relaxed_objective >= cfs.relaxed_objective * (1 - 1e-9)


def test_p1_schur_exactness(reduced_designs, reduced_lifted):
    p1 = reduced_designs["P1"]
    direct = np.trace(np.linalg.inv(reduced_lifted.fim_of(p1.relaxed_q)))
    assert p1.relaxed_objective == pytest.approx(direct, rel=1e-4)


def test_p2_rank_one_and_recovery(reduced_designs, reduced_lifted, reduced):
    p2 = reduced_designs["P2"]
    assert np.all(p2.rank_one_gap < 1e-6) and "rank_one_gap" not in p2.flags
    q = p2.weights.q_vectors()
    for u in range(reduced.num_ues):
        for i in range(reduced.panel.n_rf):
            H = reduced_lifted.h_blocks[u, i]
            relaxed = np.trace(H @ p2.relaxed_q[i]).real
            recovered = np.trace(H @ fisher.lifted_rank_one(q[i])).real
            assert recovered == pytest.approx(relaxed, rel=1e-2)


def test_snr_compliance_or_flag(reduced_designs, reduced):
    gamma_db = 10 * np.log10(reduced.snr_thresholds)
    for m in ("P1", "P2"):
        res = reduced_designs[m]
        if np.all(res.rank_one_gap < 1e-6):
            assert np.all(res.achieved_snrs >= gamma_db - 0.5)
        else:
            assert "rank_one_gap" in res.flags


def test_cfs_much_faster_than_p1(reduced_designs):
    assert reduced_designs["CFS"].wall_time < 0.01 * reduced_designs["P1"].wall_time


def test_result_serialization(reduced_designs, tmp_path):
    res = reduced_designs["P1"]
    res.write_json(tmp_path / "d.json")
    data = json.loads((tmp_path / "d.json").read_text())
    assert data["method"] == "P1" and len(data["phases"]) == 4
    res.write_phases_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "i,n,phi" and len(lines) == 1 + 32


def test_joint_schur_same_optimum(reduced, reduced_P, reduced_lifted, reduced_designs):
    joint = design_p1(reduced, reduced_P, reduced_lifted, schur="joint")
    assert joint.relaxed_objective == pytest.approx(reduced_designs["P1"].relaxed_objective, rel=1e-4)


def test_strict_codebook_range(reduced, reduced_P, reduced_lifted):
    for m in ("CFS", "P2"):
        res = run_design(m, reduced, reduced_P, reduced_lifted, strict=True)
        assert np.all(np.abs(res.weights.phases) <= np.pi / 2 + 1e-15)
        assert res.weights.strict


def test_literal_snr_mode(reduced, reduced_P, reduced_lifted):
    # without the sigma^2 / P_u factor the constraint compares a raw channel gain to gamma_u
    with pytest.raises(DesignInfeasible):
        design_p2(reduced, reduced_P, reduced_lifted, snr_mode="literal")
    tiny = reduced.with_(snr_thresholds=(1e-12, 1e-12))
    assert design_p2(tiny, reduced_P, reduced_lifted, snr_mode="literal").status == "ok"


# --- closed form ----------------------------------------------------------------

def test_cfs_recovers_rank_one_phases():
    rng = np.random.default_rng(5)
    v = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
    B = np.array([fisher.lifted_rank_one(vi) for vi in v])
    sc = make_scenario(2, 4, 1, 0, 1)
    res = design_cfs(sc, lifted=SimpleNamespace(b_blocks=B))
    assert np.allclose(res.weights.phases, np.angle(v), atol=1e-12)


def test_cfs_flags_snr_shortfall(reduced, reduced_P, reduced_lifted):
    sc = reduced.with_(snr_thresholds=(1e12, 1e12))
    res = design_cfs(sc, reduced_P)
    assert res.status == "ok" and res.snr_flags.all()
    assert "snr_shortfall_ue1" in res.flags and "snr_shortfall_ue2" in res.flags


def test_p2_equals_cfs_without_users():
    sc = make_scenario(4, 8, 3, 0, 4)
    P = build_propagation_matrix(sc.panel)
    lifted = fisher.build_lifted(sc, P)
    p2 = design_p2(sc, P, lifted, relaxation="trace")
    cfs = design_cfs(sc, P, lifted)
    expected = sum(np.linalg.eigvalsh(B)[-1] for B in lifted.b_blocks) * 9
    assert p2.relaxed_objective == pytest.approx(expected, rel=1e-5)
    assert np.allclose(np.exp(1j * p2.weights.phases), np.exp(1j * cfs.weights.phases), atol=1e-5)


# --- P1 against brute force ----------------------------------------------------

def brute_force_trace_crb(sc, n_grid=41):
    """min over a full-circle phase grid of Tr{I^-1} for N_RF=2, N_E=2 and one virtual point."""
    P = build_propagation_matrix(sc.panel)
    J = steering_jacobian(sc.panel, sc.aoi[0].as_array()).stacked() * P.diag.conj()[:, None]   # (N, 3)
    c = fisher.fim_scale(sc) * sc.p_max
    phis = np.linspace(-np.pi, np.pi, n_grid, endpoint=False)
    p1, p2 = np.meshgrid(phis, phis, indexing="ij")
    w = 0.5 * (1j + np.exp(1j * np.stack([p1.ravel(), p2.ravel()], axis=1)))           # (G, 2)
    R = []
    for i in range(2):
        v = w.conj() @ J[2 * i:2 * i + 2]                                                  # (G, 3)
        R.append(c * np.einsum("gk,gl->gkl", v.conj(), v).real)
    best = np.inf
    for a in range(len(R[0])):
        F = R[0][a] + R[1]
        det = np.linalg.det(F)
        minors = (F[:, 1, 1] * F[:, 2, 2] - F[:, 1, 2] ** 2 + F[:, 0, 0] * F[:, 2, 2] - F[:, 0, 2] ** 2
                  + F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = minors / det
        ok = (det > 0) & (val > 0)
        if ok.any():
            best = min(best, float(np.min(val[ok])))
    return best


def test_p1_matches_brute_force():
    sc = single_point_scenario(2, 2, (3.0, 30.0, 40.0))
    res = design_p1(sc)
    brute = brute_force_trace_crb(sc)
    assert res.relaxed_objective <= brute * (1 + 1e-6)        # relaxation is a lower bound
    assert brute <= res.relaxed_objective * 1.02
    assert res.peb_aoi ** 2 <= brute * 1.02


def test_p1_single_chain_is_singular():
    # one RF output and one illuminator: the 3x3 FIM has rank <= 2 for every weight
    sc = single_point_scenario(1, 2, (3.0, 30.0, 40.0))
    assert run_design("P1", sc).status == "infeasible"


# --- constraint handling -------------------------------------------------------

def overshoot(sc, P):
    ones = LorentzianWeights(np.zeros((sc.panel.n_rf, sc.panel.n_e)))
    snr = 10 ** (audit(sc, P, ones).snr_db / 10)
    return sc.with_(snr_thresholds=tuple(1e6 * snr))


@pytest.mark.parametrize("method", ["P1", "P2"])
def test_infeasible_threshold(method, reduced, reduced_P, reduced_lifted):
    sc = overshoot(reduced, reduced_P)
    res = run_design(method, sc, reduced_P, reduced_lifted)
    assert res.status == "infeasible"
    assert set(res.solver_diag["report"]["binding"]) == {"snr_ue1", "snr_ue2"}
    fn = design_p1 if method == "P1" else design_p2
    with pytest.raises(DesignInfeasible):
        fn(sc, reduced_P, reduced_lifted)


def test_loosening_threshold_never_hurts(reduced, reduced_P, reduced_lifted, reduced_designs):
    tight = reduced.with_(snr_thresholds=(db_to_linear(30.0),) * 2)
    loose = reduced.with_(snr_thresholds=(1e-12,) * 2)
    p1_t = design_p1(tight, reduced_P, reduced_lifted)
    p1_l = design_p1(loose, reduced_P, reduced_lifted)
    assert p1_l.relaxed_objective <= p1_t.relaxed_objective * (1 + 1e-6)
    p2_t = design_p2(tight, reduced_P, reduced_lifted)
    p2_l = design_p2(loose, reduced_P, reduced_lifted)
    assert p2_l.relaxed_objective >= p2_t.relaxed_objective * (1 - 1e-6)


def test_binding_threshold_costs_sensing(reduced, reduced_P, reduced_lifted):
    """Push UE 1 close to its best relaxed SNR so the constraint binds."""
    from dmaisac.design import infeasibility_report
    rep = infeasibility_report(reduced, reduced_lifted)
    best_db = rep["per_ue"][0]["max_relaxed_db"]
    values = []
    for margin in (20.0, 3.0, 0.5):
        g = db_to_linear(best_db - margin)
        sc = reduced.with_(snr_thresholds=(g, reduced.snr_thresholds[1]))
        values.append(design_p2(sc, reduced_P, reduced_lifted).relaxed_objective)
    assert values[0] >= values[1] * (1 - 1e-6) >= values[2] * (1 - 1e-6)
    assert values[2] < values[0]


def test_unknown_method_rejected(reduced):
    with pytest.raises(ValueError):
        run_design("P3", reduced)


# --- complexity -----------------------------------------------------------------

def test_complexity_report_default():
    rep = complexity_report(default_scenario())
    assert rep.n_p1 == 33824 and rep.n_p2 == 33800 and rep.cfs_svd == 2197000
    assert rep.p1_lmi_sizes == (25,) * 24 + (65,) * 8
    assert rep.p2_lmi_sizes == (65,) * 8
