"""Small dense semidefinite programs: builder, primal-dual interior-point solver, helpers.

Standard form over PSD blocks X_b and a nonnegative vector x::

    minimize    sum_b <C_b, X_b> + c^T x
    subject to  sum_b <A_{k,b}, X_b> + a_k^T x  (= or >=)  b_k
                X_b PSD, x >= 0

">=" rows get their own surplus column in the LP block. The solver is a
path-following method with the HKM search direction and a Mehrotra
predictor-corrector step, run on a big-M augmentation that starts strictly
feasible (see ``solve``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

SQRT2 = np.sqrt(2.0)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"
NUMERICAL_FAILURE = "numerical_failure"


class NumericalFailure(RuntimeError):
    pass


# --- symmetric vectorization ----------------------------------------------

def svec_index(n):
    """Row-major upper-triangle indices and the sqrt(2) weights."""
    iu, ju = np.triu_indices(n)
    w = np.where(iu == ju, 1.0, SQRT2)
    lookup = np.full((n, n), -1, dtype=int)
    lookup[iu, ju] = np.arange(len(iu))
    lookup[ju, iu] = lookup[iu, ju]
    return iu, ju, w, lookup


def svec(X):
    X = np.asarray(X)
    iu, ju, w, _ = _cached_index(X.shape[-1])
    return X[..., iu, ju] * w


def smat(v, n):
    iu, ju, w, _ = _cached_index(n)
    v = np.asarray(v)
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., iu, ju] = v / w
    out[..., ju, iu] = v / w
    return out


_INDEX_CACHE: dict[int, tuple] = {}


def _cached_index(n):
    if n not in _INDEX_CACHE:
        _INDEX_CACHE[n] = svec_index(n)
    return _INDEX_CACHE[n]


def hermitian_embed(H) -> np.ndarray:
    """[[Re H, -Im H], [Im H, Re H]]; Tr{H X} = 0.5 Tr{embed(H) embed(X)}."""
    H = np.asarray(H)
    if np.abs(H - H.conj().T).max(initial=0.0) > 1e-10 * max(np.abs(H).max(initial=0.0), 1e-300):
        raise ValueError("hermitian_embed needs a Hermitian matrix")
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def hermitian_unembed(X) -> np.ndarray:
    """Complex Hermitian matrix represented by a (not necessarily structured) real 2n block."""
    X = np.asarray(X)
    n = X.shape[0] // 2
    return 0.5 * (X[:n, :n] + X[n:, n:]) + 0.5j * (X[n:, :n] - X[:n, n:])


def principal_eigvec(H):
    """Dominant eigenpair, phase-normalised so the last entry is real and nonnegative.

    Falls back to the largest-magnitude entry as the phase anchor when the last
    entry is below 1e-9.
    """
    H = np.asarray(H)
    if not np.all(np.isfinite(H)):
        raise NumericalFailure("non-finite matrix")
    try:
        vals, vecs = np.linalg.eigh(0.5 * (H + H.conj().T))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc)) from exc
    v = vecs[:, -1]
    anchor = v[-1] if abs(v[-1]) >= 1e-9 else v[np.argmax(np.abs(v))]
    if np.iscomplexobj(v):
        v = v * np.exp(-1j * np.angle(anchor))
        v[-1 if abs(v[-1]) >= 1e-9 else np.argmax(np.abs(v))] = abs(anchor)
    elif anchor < 0:
        v = -v
    return float(vals[-1]), v


# --- problem ----------------------------------------------------------------

class SdpProblem:
    """Builder for the standard-form program described in the module docstring."""

    def __init__(self, psd_sizes, n_lp=0):
        self.psd_sizes = [int(n) for n in psd_sizes]
        self.n_lp = int(n_lp)
        self.rhs: list[float] = []
        self.senses: list[str] = []
        # entries: block -> lists (row, i, j, value) with i <= j; row 0 is the objective
        self._ent: dict[int, list] = {b: [] for b in range(len(self.psd_sizes))}
        self._lp = ([], [], [])  # (row, col, value)

    @property
    def n_constraints(self) -> int:
        return len(self.rhs)

    def _add_matrix(self, row, block, M):
        n = self.psd_sizes[block]
        if isinstance(M, (list, tuple)):
            for i, j, v in M:
                i, j = (i, j) if i <= j else (j, i)
                self._push(block, row, [i], [j], [v])
            return
        M = np.asarray(M, dtype=float)
        if M.shape != (n, n):
            raise ValueError(f"block {block} expects {n}x{n}, got {M.shape}")
        if np.abs(M - M.T).max(initial=0.0) > 1e-12 * max(np.abs(M).max(initial=0.0), 1.0):
            raise ValueError("coefficient matrices must be symmetric")
        iu, ju = np.triu_indices(n)
        vals = M[iu, ju]
        nz = vals != 0
        self._push(block, row, iu[nz], ju[nz], vals[nz])

    def _push(self, block, row, ii, jj, vals):
        vals = np.asarray(vals, dtype=float)
        self._ent[block].append((np.full(len(vals), row, dtype=np.int64), np.asarray(ii, dtype=np.int64),
                                 np.asarray(jj, dtype=np.int64), vals))

    def add_objective(self, terms=None, lp=None):
        for b, M in (terms or {}).items():
            self._add_matrix(0, b, M)
        for col, v in (lp or {}).items():
            self._lp[0].append(0)
            self._lp[1].append(int(col))
            self._lp[2].append(float(v))

    def add_constraint(self, terms, rhs, sense="=", lp=None) -> int:
        if sense not in ("=", ">="):
            raise ValueError(f"unknown sense {sense!r}")
        row = len(self.rhs) + 1
        self.rhs.append(float(rhs))
        self.senses.append(sense)
        for b, M in terms.items():
            self._add_matrix(row, b, M)
        for col, v in (lp or {}).items():
            if not 0 <= col < self.n_lp:
                raise ValueError(f"lp column {col} out of range")
            self._lp[0].append(row)
            self._lp[1].append(int(col))
            self._lp[2].append(float(v))
        return row - 1

    # compiled form: svec'd sparse matrices, row 0 = objective
    def compile(self):
        m = len(self.rhs)
        n_ge = sum(s == ">=" for s in self.senses)
        a_blocks = []
        for b, n in enumerate(self.psd_sizes):
            _, _, w, lookup = _cached_index(n)
            if self._ent[b]:
                r, i, j, v = (np.concatenate(x) for x in zip(*self._ent[b]))
                cols = lookup[i, j]
                vals = v * w[cols]
            else:
                r = cols = np.zeros(0, dtype=int)
                vals = np.zeros(0)
            mat = sp.csr_matrix((vals, (r, cols)), shape=(m + 1, n * (n + 1) // 2))
            mat.sum_duplicates()
            a_blocks.append(mat)
        lr, lc, lv = (list(x) for x in self._lp)
        col = self.n_lp
        for k, s in enumerate(self.senses):
            if s == ">=":
                lr.append(k + 1)
                lc.append(col)
                lv.append(-1.0)
                col += 1
        a_lp = sp.csr_matrix((lv, (lr, lc)), shape=(m + 1, self.n_lp + n_ge))
        a_lp.sum_duplicates()
        return a_blocks, a_lp, np.asarray(self.rhs, dtype=float)


@dataclass
class SdpSolution:
    block_values: list
    lp_values: np.ndarray
    objective_value: float
    dual_objective: float
    status: str
    iterations: int
    residuals: dict
    y: np.ndarray = None
    dual_blocks: list = None
    history: list = field(default_factory=list)


def _max_step(X, dX):
    """Largest alpha with X + alpha dX PSD (inf if dX keeps it PSD)."""
    try:
        L = np.linalg.cholesky(X)
        T = sla.solve_triangular(L, sla.solve_triangular(L, dX, lower=True).T, lower=True)
        lam = np.linalg.eigvalsh(0.5 * (T + T.T))[0]
    except np.linalg.LinAlgError:
        ev, V = np.linalg.eigh(X)
        ev = np.maximum(ev, 1e-300)
        S = V / np.sqrt(ev)
        lam = np.linalg.eigvalsh(S.T @ dX @ S)[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _lp_step(x, dx):
    neg = dx < 0
    return np.inf if not np.any(neg) else float(np.min(-x[neg] / dx[neg]))


def solve(problem: SdpProblem, tol_primal=1e-7, tol_dual=1e-7, tol_gap=1e-6, max_iter=200,
          big_m=10.0, retries=3, verbose=False) -> SdpSolution:
    """Solve ``problem``; deterministic given the problem data.

    The interior-point iteration runs on a big-M augmentation that has an
    explicit strictly feasible primal-dual start::

        min <C,X> + c^T x + M tau
        s.t. A(X) + a x + tau r0 = b,   sum_b Tr X_b + 1^T x + s = M_d

    with r0 = b - A(X0) - a x0 so (X0, x0, tau=1) is feasible, and the dual of
    the trace row shifting Z0 = C + omega I into the interior. Iterates stay
    feasible, so the recorded objectives obey weak duality at every step.

    M and M_d start small (large values wreck the conditioning) and grow by
    100x whenever the augmented optimum has tau > 0 or the trace row active.
    If that persists after ``retries`` escalations the problem is reported
    infeasible (tau > 0: no feasible X; trace row active: unbounded).
    """
    a_blocks, a_lp, b_raw = problem.compile()
    m_pen, m_tr = big_m, big_m
    flagged = None
    for _ in range(retries + 1):
        sol, tau, trace_active = _solve_augmented(problem.psd_sizes, a_blocks, a_lp, b_raw, tol_primal,
                                                  tol_dual, tol_gap, max_iter, m_pen, m_tr, verbose)
        if sol.status != OPTIMAL:
            if flagged is not None:
                flagged.status = INFEASIBLE
                return flagged
            return sol
        if tau <= 1e-7 and not trace_active:
            return sol
        flagged = sol
        if tau > 1e-7:
            m_pen *= 100.0
        if trace_active:
            m_tr *= 100.0
    flagged.status = INFEASIBLE
    return flagged


def _solve_augmented(sizes, a_blocks, a_lp, b_raw, tol_primal, tol_dual, tol_gap, max_iter, m_pen, m_tr,
                     verbose):
    m = len(b_raw)

    # row scaling: every constraint normalised to unit coefficient norm
    row_norm = np.zeros(m)
    for A in a_blocks + [a_lp]:
        row_norm += np.asarray(A[1:].multiply(A[1:]).sum(axis=1)).ravel()
    row_norm = np.sqrt(row_norm)
    row_norm[row_norm == 0] = 1.0
    D = sp.diags(1.0 / row_norm)
    A0 = [(D @ blk[1:]).tocsr() for blk in a_blocks]
    Alp0 = (D @ a_lp[1:]).tocsr()
    b0 = b_raw / row_norm
    C = [smat(np.asarray(blk[0].todense()).ravel(), n) for blk, n in zip(a_blocks, sizes)]
    clp0 = np.asarray(a_lp[0].todense()).ravel()
    c_norm = max(1.0, np.sqrt(sum(np.sum(Cb * Cb) for Cb in C) + clp0 @ clp0))
    b_norm = max(1.0, np.linalg.norm(b0))
    C = [Cb / c_norm for Cb in C]
    clp0 = clp0 / c_norm
    b0 = b0 / b_norm
    n_lp0 = Alp0.shape[1]

    # feasible start for the augmented program
    xi = max(10.0, max(np.sqrt(n) for n in sizes) if sizes else 10.0)
    X = [xi * np.eye(n) for n in sizes]
    x0 = np.full(n_lp0, xi)
    r0 = b0 - (Alp0 @ x0 if n_lp0 else 0.0) - sum((Ab @ svec(Xb) for Ab, Xb in zip(A0, X)), np.zeros(m))
    pen = m_pen * (1.0 + np.abs(r0).sum())
    start_trace = sum(np.trace(Xb) for Xb in X) + x0.sum()
    budget = m_tr * max(start_trace, 1.0)

    # augmented data: rows 0..m-1 original, row m the trace bound; LP columns [x, tau, s]
    A = [sp.vstack([Ab, sp.csr_matrix(svec(np.eye(n))[None, :])]).tocsr() for Ab, n in zip(A0, sizes)]
    tau_col = np.append(r0, 0.0)[:, None]
    tr_lp = sp.csr_matrix(np.append(np.ones(n_lp0), [0.0, 1.0])[None, :])
    Alp = sp.vstack([sp.hstack([Alp0, sp.csr_matrix(tau_col[:-1]), sp.csr_matrix((m, 1))]), tr_lp]).tocsr()
    b = np.append(b0, budget)
    clp = np.append(clp0, [pen, 0.0])
    x = np.append(x0, [1.0, budget - start_trace])
    m_aug = m + 1
    n_lp = n_lp0 + 2
    nu = sum(sizes) + n_lp

    lam_c = min([np.linalg.eigvalsh(Cb)[0] for Cb in C] + [clp0.min(initial=np.inf), 0.0])
    omega = max(1.0, 1.0 - 2 * lam_c, np.sqrt(xi))
    y = np.zeros(m_aug)
    y[-1] = -omega
    Z = [Cb + omega * np.eye(n) for Cb, n in zip(C, sizes)]
    z = np.append(clp0 + omega, [pen, omega])

    touch = []
    for Ab, n in zip(A, sizes):
        rows = np.unique(Ab.nonzero()[0])
        dense = Ab[rows].toarray()
        touch.append((rows, dense, smat(dense, n)))
    At = [Ab.T.tocsr() for Ab in A]
    Alp_t = Alp.T.tocsr()

    def op_A(X, x):
        out = Alp @ x
        for Ab, Xb in zip(A, X):
            out = out + Ab @ svec(Xb)
        return out

    def op_At(y):
        return [smat(Atb @ y, n) for Atb, n in zip(At, sizes)], Alp_t @ y

    def inner(X, Y):
        return sum(float(np.sum(Xb * Yb)) for Xb, Yb in zip(X, Y))

    history = []
    status = MAX_ITER
    it = 0
    relp = reld = gap = np.inf
    c_frob = np.sqrt(sum(np.sum(Cb * Cb) for Cb in C) + clp @ clp)
    scale = c_norm * b_norm
    for it in range(max_iter + 1):
        ATy, ATy_lp = op_At(y)
        Rp = b - op_A(X, x)
        Rd = [Cb - Zb - Ab for Cb, Zb, Ab in zip(C, Z, ATy)]
        rd_lp = clp - z - ATy_lp
        pobj = inner(C, X) + clp @ x
        dobj = b @ y
        mu = (inner(X, Z) + x @ z) / nu
        relp = np.linalg.norm(Rp[:m] * row_norm * b_norm) / (1 + np.linalg.norm(b_raw))
        reld = np.sqrt(sum(np.sum(R * R) for R in Rd) + rd_lp @ rd_lp) / (1 + c_frob)
        gap = abs(pobj - dobj) * scale / (1 + (abs(pobj) + abs(dobj)) * scale)
        history.append({"iter": it, "pobj": pobj * scale, "dobj": dobj * scale,
                        "primal_res": relp, "dual_res": reld, "gap": gap, "mu": mu,
                        "tau": x[n_lp0]})
        if verbose:
            print(f"{it:3d} pobj {pobj:+.8e} dobj {dobj:+.8e} relp {relp:.1e} reld {reld:.1e} "
                  f"gap {gap:.1e} tau {x[n_lp0]:.1e}")
        if relp < tol_primal and reld < tol_dual and gap < tol_gap:
            status = OPTIMAL
            break
        if it == max_iter:
            break

        try:
            Zinv = [np.linalg.inv(Zb) for Zb in Z]
            M = np.zeros((m_aug, m_aug))
            for (rows, dense, mats), Xb, Zi in zip(touch, X, Zinv):
                if len(rows) == 0:
                    continue
                G = Xb @ mats @ Zi
                M[np.ix_(rows, rows)] += dense @ svec(0.5 * (G + np.swapaxes(G, -1, -2))).T
            M += (Alp @ sp.diags(x / z) @ Alp_t).toarray()
            M = 0.5 * (M + M.T)
            M[np.diag_indices(m_aug)] *= 1.0 + 1e-14
            chol = sla.cho_factor(M, lower=True)
        except (np.linalg.LinAlgError, sla.LinAlgError):
            status = NUMERICAL_FAILURE
            break

        def direction(sig_mu, corr, corr_lp):
            K = [sig_mu * Zi - Xb - Xb @ Rb @ Zi - cb for Zi, Xb, Rb, cb in zip(Zinv, X, Rd, corr)]
            K = [0.5 * (Kb + Kb.T) for Kb in K]
            k_lp = sig_mu / z - x - x * rd_lp / z - corr_lp
            h = Rp - op_A(K, k_lp)
            dy = np.zeros(m_aug)
            resid = h
            for _ in range(3):
                # iterative refinement against the primal Newton equation
                dy = dy + sla.cho_solve(chol, resid)
                Ady, Ady_lp = op_At(dy)
                dX = [Kb + Xb @ Ab @ Zi for Kb, Xb, Ab, Zi in zip(K, X, Ady, Zinv)]
                dX = [0.5 * (d + d.T) for d in dX]
                dx = k_lp + x * Ady_lp / z
                resid = Rp - op_A(dX, dx)
                if np.abs(resid).max() <= 1e-15 * (1 + np.abs(Rp).max() + np.abs(h).max()):
                    break
            dZ = [Rb - Ab for Rb, Ab in zip(Rd, Ady)]
            dz = rd_lp - Ady_lp
            return dX, dy, dZ, dx, dz

        def steps(dX, dZ, dx, dz):
            ap = min([_max_step(Xb, d) for Xb, d in zip(X, dX)] + [_lp_step(x, dx)])
            ad = min([_max_step(Zb, d) for Zb, d in zip(Z, dZ)] + [_lp_step(z, dz)])
            return ap, ad

        zeros = [np.zeros_like(Xb) for Xb in X]
        dXa, dya, dZa, dxa, dza = direction(0.0, zeros, np.zeros(n_lp))
        ap, ad = steps(dXa, dZa, dxa, dza)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = (inner([Xb + ap * d for Xb, d in zip(X, dXa)], [Zb + ad * d for Zb, d in zip(Z, dZa)])
                  + (x + ap * dxa) @ (z + ad * dza)) / nu
        expo = max(1.0, 3.0 * min(ap, ad) ** 2)
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** expo)) if mu > 0 else 0.0
        corr = [dX_ @ dZ_ @ Zi for dX_, dZ_, Zi in zip(dXa, dZa, Zinv)]
        dX, dy, dZ, dx, dz = direction(sigma * mu, corr, dxa * dza / z)
        ap, ad = steps(dX, dZ, dx, dz)
        tau_step = 0.9 + 0.09 * min(1.0, ap, ad)
        ap, ad = min(1.0, tau_step * ap), min(1.0, tau_step * ad)
        if max(ap, ad) < 1e-12:
            status = NUMERICAL_FAILURE
            break
        X = [Xb + ap * d for Xb, d in zip(X, dX)]
        x = x + ap * dx
        y = y + ad * dy
        Z = [Zb + ad * d for Zb, d in zip(Z, dZ)]
        z = z + ad * dz

    tau = float(x[n_lp0])
    # trace row active: slack s ~ 0 while its multiplier stays bounded away from 0
    trace_active = bool(x[-1] < 1e-6 * budget and -y[-1] > 1e-9)
    sol = SdpSolution(
        block_values=[Xb * b_norm for Xb in X],
        lp_values=x[:n_lp0] * b_norm,
        objective_value=(inner(C, X) + clp0 @ x[:n_lp0]) * scale,
        dual_objective=float(b0 @ y[:m]) * scale,
        status=status,
        iterations=it,
        residuals={"primal": relp, "dual": reld, "gap": gap, "tau": tau},
        y=y[:m] * c_norm / row_norm,
        dual_blocks=[Zb * c_norm for Zb in Z],
        history=history,
    )
    return sol, tau, trace_active


# --- plain-text dump --------------------------------------------------------

def dump_problem(problem: SdpProblem, path):
    """Write the problem as text; see docs/sdp_format.md."""
    lines = ["SDPDUMP 1",
             "psd " + " ".join(str(n) for n in [len(problem.psd_sizes)] + problem.psd_sizes),
             f"lp {problem.n_lp}",
             f"m {problem.n_constraints}",
             "rhs " + " ".join(repr(float(v)) for v in problem.rhs),
             "sense " + " ".join(problem.senses)]
    for b in range(len(problem.psd_sizes)):
        if not problem._ent[b]:
            continue
        for r, i, j, v in zip(*(np.concatenate(x) for x in zip(*problem._ent[b]))):
            lines.append(f"{r} {b + 1} {i + 1} {j + 1} {float(v)!r}")
    for r, c, v in zip(*problem._lp):
        lines.append(f"{r} L {c + 1} {c + 1} {float(v)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_problem(path) -> SdpProblem:
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip() and not ln.startswith("#")]
    if rows[0] != ["SDPDUMP", "1"]:
        raise ValueError("not an SDPDUMP v1 file")
    header = {r[0]: r[1:] for r in rows[1:6]}
    sizes = [int(s) for s in header["psd"][1:]]
    prob = SdpProblem(sizes, int(header["lp"][0]))
    prob.rhs = [float(v) for v in header.get("rhs", [])]
    prob.senses = header.get("sense", [])
    if len(prob.rhs) != int(header["m"][0]) or len(prob.senses) != len(prob.rhs):
        raise ValueError("inconsistent constraint count")
    for r in rows[6:]:
        row, blk, i, j, v = int(r[0]), r[1], int(r[2]) - 1, int(r[3]) - 1, float(r[4])
        if blk == "L":
            prob._lp[0].append(row)
            prob._lp[1].append(i)
            prob._lp[2].append(v)
        else:
            prob._push(int(blk) - 1, row, [i], [j], [v])
    return prob
