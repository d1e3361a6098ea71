"""Small dense strictly convex QP solver.

Solves  min 0.5 x'Hx + g'x  s.t.  A x <= b  for problems with a handful of
variables and up to a few hundred rows. Dual active-set iteration: starts from
the unconstrained minimizer and adds violated constraints one at a time, so no
feasibility phase is needed and infeasibility is detected exactly (unbounded
dual step). Selection rules are deterministic; after a stall threshold the
entering rule switches to least-index to rule out cycling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

TOL = 1e-9
STALL_SWITCH = 40
MAX_ITERS = 300


@dataclass
class QpResult:
    status: str                # "optimal" | "infeasible" | "stalled"
    x: np.ndarray | None
    iterations: int
    active: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def solve_qp(H: np.ndarray, g: np.ndarray, A: np.ndarray | None = None,
             b: np.ndarray | None = None) -> QpResult:
    """Minimize 0.5 x'Hx + g'x subject to A x <= b.

    H must be symmetric positive definite. A may be None/empty for an
    unconstrained solve. Rows of A need not be independent.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    chol = cho_factor(H, lower=True)
    x = cho_solve(chol, -g)
    if A is None or len(A) == 0:
        return QpResult("optimal", x, 0)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)

    active: list[int] = []
    u = np.zeros(0)            # multipliers for the active rows
    it = 0
    pending = -1               # constraint being driven feasible, -1 if none
    u_pending = 0.0
    while it < MAX_ITERS:
        it += 1
        if pending < 0:
            s = A @ x - b
            if active:
                s[np.array(active)] = 0.0
            worst = np.argmax(s) if it <= STALL_SWITCH else _first_violated(s)
            if s[worst] <= TOL:
                return QpResult("optimal", x, it, active)
            pending = int(worst)
            u_pending = 0.0
        npv = A[pending]
        if active:
            N = A[np.array(active)].T                     # n x k
            GiN = cho_solve(chol, N)
            M = N.T @ GiN                                 # k x k
            Gin = cho_solve(chol, npv)
            try:
                r = np.linalg.solve(M, N.T @ Gin)
            except np.linalg.LinAlgError:
                return _fallback(H, g, A, b, it)
            z = Gin - GiN @ r
        else:
            r = np.zeros(0)
            z = cho_solve(chol, npv)

        znp = float(z @ npv)
        sviol = float(npv @ x - b[pending])               # > 0 while violated
        t2 = np.inf if znp <= TOL * max(1.0, npv @ npv) else sviol / znp
        if len(r) and np.any(r > TOL):
            with np.errstate(divide="ignore"):
                ratios = np.where(r > TOL, u / np.maximum(r, TOL), np.inf)
            t1 = float(np.min(ratios))
            j_drop = int(np.argmin(ratios))
        else:
            t1, j_drop = np.inf, -1
        t = min(t1, t2)
        if not np.isfinite(t):
            return QpResult("infeasible", None, it, active)
        if t > 0.0:
            if np.isfinite(t2):
                x = x - t * z
            if len(u):
                u = u - t * r
            u_pending += t
        if t == t2 and np.isfinite(t2):
            active.append(pending)
            u = np.append(u, u_pending)
            pending = -1
        else:
            # partial step: drop the blocking row, keep driving `pending`
            active.pop(j_drop)
            u = np.delete(u, j_drop)
    return _fallback(H, g, A, b, it)


def _first_violated(s: np.ndarray) -> int:
    idx = np.nonzero(s > TOL)[0]
    return int(idx[0]) if len(idx) else int(np.argmax(s))


def _fallback(H, g, A, b, iters_used: int) -> QpResult:
    """Certify feasibility by LP, then descend with a primal active set.

    Only reached when the dual iteration stalls (degenerate geometry); kept
    simple on purpose.
    """
    from scipy.optimize import linprog

    n = H.shape[1]
    m = len(b)
    # max margin: min -s  s.t. Ax + s <= b
    c = np.zeros(n + 1)
    c[-1] = -1.0
    Aub = np.hstack([A, np.ones((m, 1))])
    res = linprog(c, A_ub=Aub, b_ub=b, bounds=[(None, None)] * n + [(None, 1.0)],
                  method="highs")
    if not res.success or res.x[-1] < -TOL:
        return QpResult("infeasible", None, iters_used)
    x = _primal_descent(H, g, A, b, res.x[:n])
    return QpResult("stalled", x, iters_used)


def _primal_descent(H, g, A, b, x0, max_iters: int = 500) -> np.ndarray:
    chol = cho_factor(H, lower=True)
    x = x0.copy()
    active = [int(i) for i in np.nonzero(A @ x - b > -TOL)[0]]
    for _ in range(max_iters):
        N = A[active] if active else np.zeros((0, len(x)))
        k = len(active)
        KKT = np.block([[H, N.T], [N, np.zeros((k, k))]])
        rhs = np.concatenate([-g, b[active] if active else np.zeros(0)])
        try:
            sol = np.linalg.solve(KKT, rhs)
        except np.linalg.LinAlgError:
            active = active[:-1]
            continue
        xs, lam = sol[: len(x)], sol[len(x):]
        step = xs - x
        if np.linalg.norm(step) <= TOL:
            if k == 0 or np.all(lam >= -TOL):
                return xs
            active.pop(int(np.argmin(lam)))
            continue
        # largest feasible step toward xs
        Ai = np.delete(np.arange(len(b)), active) if active else np.arange(len(b))
        num = b[Ai] - A[Ai] @ x
        den = A[Ai] @ step
        mask = den > TOL
        alpha = 1.0
        hit = -1
        if np.any(mask):
            ratios = num[mask] / den[mask]
            j = int(np.argmin(ratios))
            if ratios[j] < alpha:
                alpha = max(ratios[j], 0.0)
                hit = int(Ai[mask][j])
        x = x + alpha * step
        if hit >= 0:
            active.append(hit)
    return x
