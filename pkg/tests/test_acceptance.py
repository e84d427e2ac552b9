"""The twelve acceptance criteria, each reported as one PASS/FAIL line at the end of the run."""
import time

import numpy as np
import pytest

from dmaisac import fisher
from dmaisac.channel import build_channels, build_propagation_matrix, effective_channel, unit_symbols
from dmaisac.cli import main
from dmaisac.design import LorentzianWeights, complexity_report, design_cfs
from dmaisac.scenario import SphericalPoint, default_scenario, make_scenario
from dmaisac.sdp import OPTIMAL, solve
from dmaisac.selftest import ANALYTIC_PROGRAMS
from dmaisac.sensing import GridSpec, beampattern_map, monte_carlo_rmse, snr_tradeoff_sweep

from conftest import random_weights, record_acceptance
from test_channel import jacobian_errors, random_points
from test_fisher import _target_channels, brute_force_fim, scaled_error


def test_01_lorentzian_feasibility(reduced_designs, reduced):
    n_rf, n_e = reduced.panel.n_rf, reduced.panel.n_e
    mask = np.kron(np.eye(n_rf), np.ones((n_e, 1))).astype(bool)
    worst, support_ok = 0.0, True
    for res in reduced_designs.values():
        worst = max(worst, np.abs(np.abs(res.weights.weights - 0.5j) - 0.5).max())
        W = res.weights.w_rx()
        support_ok &= W.shape == mask.shape and not np.any(W[~mask])
    assert record_acceptance(1, "Lorentzian feasibility", worst <= 1e-9 and support_ok,
                             f"max ||w-0.5j|-0.5| = {worst:.2e}, block support {support_ok}")


def test_02_jacobian_oracle():
    panel = default_scenario().panel
    err = jacobian_errors(panel, random_points(20, seed=11)).max()
    assert record_acceptance(2, "steering Jacobian vs finite differences", err <= 1e-4,
                             f"max relative error {err:.2e} on 20 points")


def test_03_fim_oracle():
    sc = make_scenario(n_rf=2, n_e=3, n_targets=2, num_ues=2, n_aoi=2, num_symbols=4)
    P = build_propagation_matrix(sc.panel)
    W = random_weights(2, 3, seed=5).w_rx()
    S = unit_symbols(sc.num_ues, sc.num_symbols, kind="orthogonal")
    F = fisher.fim(sc, fisher.weights_to_qrx(W), P, mode="targets").matrix
    pts = np.array([t.as_array() for t in sc.targets])
    G = brute_force_fim(sc, W, P, S, lambda p: _target_channels(sc, p), pts)
    err = scaled_error(F, G)
    min_eig = np.linalg.eigvalsh(F).min()
    psd = min_eig >= -1e-8 * np.linalg.norm(F)
    assert record_acceptance(3, "FIM vs mean-vector differentiation", err <= 1e-4 and psd,
                             f"relative error {err:.2e}, min eig {min_eig:.2e}")


def test_04_lifting_identity(reduced, reduced_P):
    H = fisher.build_h_blocks(reduced, reduced_P)
    h = build_channels(reduced).h_total
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        lw = LorentzianWeights(rng.uniform(-np.pi, np.pi, (reduced.panel.n_rf, reduced.panel.n_e)))
        q, W = lw.q_vectors(), lw.w_rx()
        for u in range(reduced.num_ues):
            lifted = sum(0.25 * np.trace(H[u, i] @ fisher.lifted_rank_one(q[i])).real
                         for i in range(reduced.panel.n_rf))
            direct = np.linalg.norm(effective_channel(W, reduced_P, h[u])) ** 2
            worst = max(worst, abs(lifted - direct) / direct)
    assert record_acceptance(4, "lifting identity", worst <= 1e-10, f"max relative error {worst:.2e} over 50 q")


def test_05_solver_oracles():
    details, ok = [], True
    for name, build in ANALYTIC_PROGRAMS.items():
        prob, expected = build()
        sol = solve(prob)
        err = abs(sol.objective_value - expected)
        gaps = [h["pobj"] - h["dobj"] for h in sol.history]
        ok &= sol.status == OPTIMAL and err <= 1e-6 and min(gaps) >= 0.0
        details.append(f"{name} err {err:.1e} min gap {min(gaps):.1e}")
    assert record_acceptance(5, "SDP solver oracles", ok, "; ".join(details))


def test_06_design_dominance(reduced_designs, reduced_lifted):
    p1, p2, cfs = (reduced_designs[m] for m in ("P1", "P2", "CFS"))
    q = cfs.weights.q_vectors()
    at_cfs = sum(np.trace(B @ fisher.lifted_rank_one(qi)).real for B, qi in zip(reduced_lifted.b_blocks, q))
    ok = p1.peb_aoi <= 1.05 * p2.peb_aoi and p2.relaxed_objective >= at_cfs * (1 - 1e-9)
    assert record_acceptance(6, "design dominance", ok,
                             f"PEB P1 {p1.peb_aoi:.4g} vs P2 {p2.peb_aoi:.4g}; "
                             f"relaxed P2 {p2.relaxed_objective:.6g} vs at CFS {at_cfs:.6g}")


def test_07_snr_compliance(reduced_designs, reduced):
    gamma_db = 10 * np.log10(reduced.snr_thresholds)
    ok, details = True, []
    for m in ("P1", "P2"):
        res = reduced_designs[m]
        if np.all(res.rank_one_gap < 1e-6):
            good = bool(np.all(res.achieved_snrs >= gamma_db - 0.5))
            details.append(f"{m} rank-one, SNR {np.round(res.achieved_snrs, 1).tolist()} dB")
        else:
            good = "rank_one_gap" in res.flags
            details.append(f"{m} gap {np.max(res.rank_one_gap):.1e} flagged {good}")
        ok &= good
    assert record_acceptance(7, "SNR compliance", ok, "; ".join(details))


def test_08_tradeoff_trends(reduced):
    out = snr_tradeoff_sweep(reduced, ["P1", "P2", "CFS"], [10.0, 20.0, 30.0])
    peb = {m: np.array([r["peb"] for r in rows]) for m, rows in out.items()}
    ok = all(r["status"] == "ok" for rows in out.values() for r in rows)
    for m in ("P1", "P2"):
        ok &= bool(np.all(peb[m][1:] >= peb[m][:-1] * (1 - 1e-6)))
    cfs_spread = np.ptp(peb["CFS"]) / peb["CFS"][0]
    ok &= cfs_spread <= 1e-9
    assert record_acceptance(8, "SNR trade-off trends", ok,
                             ", ".join(f"{m} {np.array2string(v, precision=6)}" for m, v in peb.items()))


def test_09_rmse_peb_relation(reduced, reduced_designs):
    powers = [-30.0, -25.0, -20.0, -15.0, -10.0, -5.0, 0.0]
    ok, details = True, []
    for m, res in reduced_designs.items():
        rows = monte_carlo_rmse(reduced, res, powers, trials=50, seed=0)
        rmse = np.array([r["rmse_m"] for r in rows])
        peb = np.array([r["peb"] for r in rows])
        floor = rows[0]["grid_floor_m"]
        cell = 2.0 * floor
        monotone = bool(np.all(rmse[1:] <= rmse[:-1] + cell))
        above = rmse > floor
        bounded = bool(np.all(rmse[above] >= peb[above]))
        ok &= monotone and bounded
        details.append(f"{m} RMSE {np.round(rmse, 3).tolist()} PEB {np.round(peb, 4).tolist()} "
                       f"monotone {monotone} bound {bounded}")
    assert record_acceptance(9, "RMSE vs power and PEB", ok, "; ".join(details) + f"; cell {cell:.3f} m")


def test_10_beam_focusing():
    pt = SphericalPoint.deg(2.0, 30.0, 45.0)
    sc = make_scenario(8, 64, 1, 0, 1, targets=(pt,)).with_(aoi=(pt,))
    grid = GridSpec()
    bp = beampattern_map(sc, design_cfs(sc), grid)
    i, j = np.unravel_index(np.argmax(bp), bp.shape)
    ti, tj = np.argmin(np.abs(grid.r_axis - pt.r)), np.argmin(np.abs(grid.phi_axis - pt.phi))
    off = max(abs(i - ti), abs(j - tj))
    assert record_acceptance(10, "CFS beam focusing", off <= 2,
                             f"argmax r {grid.r_axis[i]:.3f} m phi {np.rad2deg(grid.phi_axis[j]):.2f} deg, "
                             f"{off} cells from the point")


def test_11_complexity():
    rep = complexity_report(default_scenario())
    got = (rep.n_p1, rep.n_p2, rep.cfs_svd)
    assert record_acceptance(11, "complexity report", got == (33824, 33800, 2197000), f"{got}")


EXPERIMENTS = [
    ["design"],
    ["rmse-sweep", "--method", "CFS,P2", "--trials", "5", "--grid", "40", "48", "--powers=-20,-10,0"],
    ["snr-sweep", "--method", "CFS,P2", "--gammas", "10,20"],
    ["beampattern", "--method", "CFS", "--grid", "30", "35"],
    ["peb-map", "--method", "CFS,P2", "--grid", "30", "35"],
]


def test_12_determinism(tmp_path):
    mismatched, n_files = [], 0
    for argv in EXPERIMENTS:
        dirs = [tmp_path / f"{argv[0]}_{k}" for k in (0, 1)]
        for d in dirs:
            assert main(argv + ["--seed", "3", "--out", str(d)]) == 0
        names = sorted(p.name for p in dirs[0].glob("*.csv"))
        assert names == sorted(p.name for p in dirs[1].glob("*.csv"))
        for name in names:
            n_files += 1
            if (dirs[0] / name).read_bytes() != (dirs[1] / name).read_bytes():
                mismatched.append(name)
    assert record_acceptance(12, "determinism", not mismatched and n_files > 0,
                             f"{n_files} CSV artifacts compared, mismatched {mismatched}")
