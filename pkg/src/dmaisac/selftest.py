"""Analytic SDPs with known optima, used by the CLI self-test and the test suite."""
from __future__ import annotations

import numpy as np

from .sdp import OPTIMAL, SdpProblem, hermitian_embed, solve


def min_eigenvalue_program() -> tuple[SdpProblem, float]:
    """min Tr{diag(1,2) X} s.t. Tr X = 1 -> 1."""
    p = SdpProblem([2])
    p.add_objective({0: np.diag([1.0, 2.0])})
    p.add_constraint({0: np.eye(2)}, 1.0)
    return p, 1.0


def determinant_program() -> tuple[SdpProblem, float]:
    """min t s.t. [[t, 1], [1, t]] PSD -> 1 (X_11 = X_22 = t, X_12 = 1)."""
    p = SdpProblem([2])
    p.add_objective({0: [(0, 0, 1.0)]})
    p.add_constraint({0: [(0, 0, 1.0), (1, 1, -1.0)]}, 0.0)
    p.add_constraint({0: [(0, 1, 0.5)]}, 1.0)
    return p, 1.0


def identity_bound_program(n=3) -> tuple[SdpProblem, float]:
    """max Tr X s.t. X + S = I with S PSD, written as min -Tr X -> -n."""
    p = SdpProblem([n, n])
    p.add_objective({0: -np.eye(n)})
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0 if i == j else 0.5
            p.add_constraint({0: E, 1: E}, 1.0 if i == j else 0.0)
    return p, -float(n)


ANALYTIC_PROGRAMS = {
    "min_eigenvalue": min_eigenvalue_program,
    "two_by_two_determinant": determinant_program,
    "identity_bound": identity_bound_program,
}


def weak_duality_gap(sol) -> float:
    """Smallest pobj - dobj over the iterates (nonnegative when weak duality holds)."""
    return min(h["pobj"] - h["dobj"] for h in sol.history)


def run_selftest(tol=1e-6) -> list[dict]:
    results = []
    for name, build in ANALYTIC_PROGRAMS.items():
        prob, expected = build()
        sol = solve(prob)
        err = abs(sol.objective_value - expected)
        wd = weak_duality_gap(sol)
        ok = sol.status == OPTIMAL and err <= tol and wd >= -1e-9 * max(1.0, abs(expected))
        results.append({"name": name, "passed": bool(ok),
                        "detail": f"status {sol.status}, objective {sol.objective_value:.10g} "
                                  f"(expected {expected:g}, error {err:.2e}), min pobj-dobj {wd:.2e}"})
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        A = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        B = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        H, X = A + A.conj().T, B + B.conj().T
        lhs = np.trace(H @ X).real
        rhs = 0.5 * np.trace(hermitian_embed(H) @ hermitian_embed(X))
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    results.append({"name": "hermitian_embed_trace", "passed": bool(worst <= 1e-12),
                    "detail": f"max relative trace mismatch {worst:.2e} over 50 pairs"})
    return results
