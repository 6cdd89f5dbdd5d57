"""Numerical kernels shared by the congestion and network models.

Dense convex QP (primal-dual interior point with an active-set polish),
potential minimisation on a capped simplex, safeguarded scalar root
finding and a 1-D grid + golden-section maximiser.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"


@dataclass
class QpProblem:
    """minimize 0.5 x'Px + c'x  s.t.  A x = b,  G x <= h,  lb <= x <= ub.

    Profit-maximisation problems are stored through the negation of their
    objective, so ``P`` must be positive semidefinite.
    """

    P: np.ndarray
    c: np.ndarray
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        self.A, self.b = _rows(self.A, self.b, n, "A")
        self.G, self.h = _rows(self.G, self.h, n, "G")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds must have one entry per variable")

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.c @ x)


def _rows(M, v, n, name):
    if M is None or np.size(M) == 0:
        return np.zeros((0, n)), np.zeros(0)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    v = np.asarray(v, dtype=float).ravel()
    if M.shape[1] != n or M.shape[0] != v.size:
        raise ValueError(f"{name} has shape {M.shape} but rhs has {v.size} entries")
    return M, v


@dataclass
class QpSolution:
    x: np.ndarray
    status: str
    objective: float
    y_eq: np.ndarray
    z_ineq: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    residuals: dict = field(default_factory=dict)
    iterations: int = 0

    @property
    def kkt_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else math.inf


def kkt_residuals(problem: QpProblem, x, y_eq, z_ineq, z_lower, z_upper, scale: float = 1.0) -> dict:
    """KKT residuals of a candidate primal/dual point, objective divided by ``scale``."""
    P, c = problem.P / scale, problem.c / scale
    grad = P @ x + c + problem.A.T @ y_eq + problem.G.T @ z_ineq - z_lower + z_upper
    finite_lo = np.isfinite(problem.lb)
    finite_hi = np.isfinite(problem.ub)
    primal = [np.abs(problem.A @ x - problem.b), np.maximum(problem.G @ x - problem.h, 0.0),
              np.maximum(problem.lb - x, 0.0)[finite_lo], np.maximum(x - problem.ub, 0.0)[finite_hi]]
    slack_g = problem.h - problem.G @ x
    compl = [np.abs(z_ineq * slack_g),
             np.abs(z_lower[finite_lo] * (x - problem.lb)[finite_lo]),
             np.abs(z_upper[finite_hi] * (problem.ub - x)[finite_hi])]
    dual = [np.maximum(-z_ineq, 0.0), np.maximum(-z_lower, 0.0), np.maximum(-z_upper, 0.0)]

    def _mx(parts):
        return max((float(np.max(p)) for p in parts if p.size), default=0.0)

    return {
        "stationarity": float(np.max(np.abs(grad))) if grad.size else 0.0,
        "primal": _mx(primal),
        "dual": _mx(dual),
        "complementarity": _mx(compl),
    }


def _independent_rows(A, b, tol=1e-10):
    if A.shape[0] == 0:
        return A, b, np.arange(0)
    _, R, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(diag[0], 1.0))) if diag.size else 0
    keep = np.sort(piv[:rank])
    return A[keep], b[keep], keep


def solve_qp(problem: QpProblem, tolerance: float = 1e-9, x0=None, max_iter: int = 200) -> QpSolution:
    """Solve a convex QP and certify the result through its KKT residuals.

    Never raises on infeasibility; the returned ``status`` tells the truth.
    ``x0`` is an optional warm start for the primal iterate.
    """
    n = problem.n
    scale = max(float(np.max(np.abs(problem.P), initial=0.0)), float(np.max(np.abs(problem.c), initial=0.0)))
    if scale <= 0.0:
        scale = 1.0
    P = problem.P / scale
    c = problem.c / scale

    A_full, b_full = problem.A, problem.b
    A, b, keep = _independent_rows(A_full, b_full)
    if A_full.shape[0]:
        x_ls = np.linalg.lstsq(A_full, b_full, rcond=None)[0]
        if np.max(np.abs(A_full @ x_ls - b_full)) > 1e-8 * max(1.0, np.max(np.abs(b_full))):
            return _failed(problem, INFEASIBLE)

    lo_idx = np.flatnonzero(np.isfinite(problem.lb))
    hi_idx = np.flatnonzero(np.isfinite(problem.ub))
    G = np.vstack([problem.G, -np.eye(n)[lo_idx], np.eye(n)[hi_idx]])
    h = np.concatenate([problem.h, -problem.lb[lo_idx], problem.ub[hi_idx]])
    m, p = G.shape[0], A.shape[0]

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if lo_idx.size or hi_idx.size:
        lo = np.where(np.isfinite(problem.lb), problem.lb, -np.inf)
        hi = np.where(np.isfinite(problem.ub), problem.ub, np.inf)
        x = np.clip(x, lo, hi)
    y = np.zeros(p)
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(m)

    it = 0
    for it in range(1, max_iter + 1):
        r_d = P @ x + c + A.T @ y + G.T @ z
        r_p = A @ x - b
        r_g = G @ x + s - h
        mu = float(s @ z / m) if m else 0.0
        if max(np.max(np.abs(r_d), initial=0.0), np.max(np.abs(r_p), initial=0.0),
               np.max(np.abs(r_g), initial=0.0)) < 1e-11 and mu < 1e-12:
            break

        w = z / s if m else np.zeros(0)
        H = P + (G.T * w) @ G
        K = np.zeros((n + p, n + p))
        K[:n, :n] = H + 1e-13 * np.eye(n)
        K[:n, n:] = A.T
        K[n:, :n] = A
        K[n:, n:] = -1e-13 * np.eye(p)

        def direction(r_c):
            rhs = np.concatenate([-r_d - G.T @ ((r_c + z * r_g) / s), -r_p])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            dx, dy = sol[:n], sol[n:]
            ds = -r_g - G @ dx
            dz = (r_c - z * ds) / s
            return dx, dy, ds, dz

        if m == 0:
            dx, dy, _, _ = direction(np.zeros(0))
            x, y = x + dx, y + dy
            continue

        # on divergence keep the last finite iterate and let the KKT audit judge it
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            dx, dy, ds, dz = direction(-s * z)
        if not all(np.all(np.isfinite(v)) for v in (dx, dy, ds, dz)):
            break
        a_aff = min(_max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz) / m)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            dx, dy, ds, dz = direction(-s * z + sigma * mu - ds * dz)
        if not all(np.all(np.isfinite(v)) for v in (dx, dy, ds, dz)):
            break
        step = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        x, y, s, z = x + step * dx, y + step * dy, s + step * ds, z + step * dz
        if step * np.max(np.abs(dx), initial=0.0) < 1e-15 and mu < 1e-10:
            break

    # recover duals per constraint class
    y_full = np.zeros(A_full.shape[0])
    y_full[keep] = y
    n_g = problem.G.shape[0]
    z_ineq = z[:n_g].copy()
    z_lower = np.zeros(n)
    z_upper = np.zeros(n)
    z_lower[lo_idx] = z[n_g:n_g + lo_idx.size]
    z_upper[hi_idx] = z[n_g + lo_idx.size:]

    x, y_full, z_ineq, z_lower, z_upper = _polish(problem, P, c, x, s, z, y_full, z_ineq, z_lower, z_upper,
                                                  lo_idx, hi_idx, scale)
    res = kkt_residuals(problem, x, y_full, z_ineq, z_lower, z_upper, scale)
    # snap interior-point leftovers onto bounds they sit on
    snapped = x.copy()
    for bound in (problem.lb, problem.ub):
        near = np.isfinite(bound) & (np.abs(x - bound) <= 1e-10 * np.maximum(1.0, np.abs(bound)))
        snapped[near] = bound[near]
    res_snap = kkt_residuals(problem, snapped, y_full, z_ineq, z_lower, z_upper, scale)
    if max(res_snap.values()) <= max(tolerance, max(res.values())):
        x, res = snapped, res_snap
    if max(res.values()) <= tolerance:
        status = OPTIMAL
    elif res["primal"] > math.sqrt(tolerance):
        status = INFEASIBLE
    else:
        status = ITERATION_LIMIT
    return QpSolution(x=x, status=status, objective=problem.objective(x),
                      y_eq=y_full * scale, z_ineq=z_ineq * scale,
                      z_lower=z_lower * scale, z_upper=z_upper * scale,
                      residuals=res, iterations=it)


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _polish(problem, P, c, x, s, z, y, z_ineq, z_lower, z_upper, lo_idx, hi_idx, scale):
    # Re-solve the equality-constrained KKT system on the guessed active set;
    # keep the result only if it is feasible and improves the residuals.
    n = problem.n
    n_g = problem.G.shape[0]
    active = z > s
    act_g = np.flatnonzero(active[:n_g])
    act_lo = lo_idx[active[n_g:n_g + lo_idx.size]]
    act_hi = hi_idx[active[n_g + lo_idx.size:]]
    rows = [problem.A, problem.G[act_g], -np.eye(n)[act_lo], np.eye(n)[act_hi]]
    rhs = [problem.b, problem.h[act_g], -problem.lb[act_lo], problem.ub[act_hi]]
    C = np.vstack(rows)
    d = np.concatenate(rhs)
    k = C.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = C.T
    K[n:, :n] = C
    sol = np.linalg.lstsq(K, np.concatenate([-c, d]), rcond=None)[0]
    xp, lam = sol[:n], sol[n:]
    # active bounds hold exactly, not up to least-squares roundoff
    xp[act_lo] = problem.lb[act_lo]
    xp[act_hi] = problem.ub[act_hi]
    na = problem.A.shape[0]
    yp = lam[:na]
    zg = np.zeros(n_g)
    zg[act_g] = lam[na:na + act_g.size]
    zl = np.zeros(n)
    zl[act_lo] = lam[na + act_g.size:na + act_g.size + act_lo.size]
    zu = np.zeros(n)
    zu[act_hi] = lam[na + act_g.size + act_lo.size:]
    old = kkt_residuals(problem, x, y, z_ineq, z_lower, z_upper, scale)
    new = kkt_residuals(problem, xp, yp, zg, zl, zu, scale)
    if max(new.values()) < max(old.values()):
        return xp, yp, zg, zl, zu
    return x, y, z_ineq, z_lower, z_upper


def _failed(problem, status):
    n = problem.n
    return QpSolution(x=np.full(n, np.nan), status=status, objective=math.nan,
                      y_eq=np.zeros(problem.A.shape[0]), z_ineq=np.zeros(problem.G.shape[0]),
                      z_lower=np.zeros(n), z_upper=np.zeros(n),
                      residuals={"primal": math.inf})


def minimize_capped_simplex_potential(delays: Sequence[Callable[[float], float]], caps: Sequence[float],
                                      inverses: Optional[Sequence[Optional[Callable[[float], float]]]] = None,
                                      ) -> np.ndarray:
    """Minimise sum_j int_0^{x_j} d_j on {x >= 0, sum x = 1, x_j <= cap_j}.

    Works on the common delay level: the optimum is the smallest level
    lambda at which the arcs can absorb a unit of flow, each arc carrying
    the largest flow whose delay does not exceed lambda. Delays must be
    continuous and non-decreasing. ``inverses[j](lam)``, when given, returns
    sup{z >= 0 : d_j(z) <= lam} (possibly inf) and replaces the inner
    bisection.
    """
    k = len(delays)
    caps = np.minimum(np.asarray(caps, dtype=float), 1.0)
    if k == 0:
        raise ValueError("degenerate network: no arcs")
    if np.any(caps < 0):
        raise ValueError("negative capacity")
    if caps.sum() < 1.0 - 1e-12:
        raise ValueError("infeasible: arc capacities cannot carry the unit demand")
    inverses = list(inverses) if inverses is not None else [None] * k

    def take(lam):
        out = np.empty(k)
        for j in range(k):
            if delays[j](0.0) > lam:
                out[j] = 0.0
            elif inverses[j] is not None:
                out[j] = min(inverses[j](lam), caps[j])
            else:
                out[j] = _sup_below(delays[j], lam, caps[j])
        return out

    d0 = np.array([d(0.0) for d in delays])
    lam_lo = float(np.min(d0)) - 1.0
    lam_hi = float(np.max(d0))
    width = 1.0
    while take(lam_hi).sum() < 1.0:
        lam_hi += width
        width *= 2.0
        if width > 1e300:
            raise ValueError("could not bracket the equilibrium delay level")
    for _ in range(400):
        mid = 0.5 * (lam_lo + lam_hi)
        if mid <= lam_lo or mid >= lam_hi:
            break
        if take(mid).sum() >= 1.0:
            lam_hi = mid
        else:
            lam_lo = mid
    x_lo = take(lam_lo)
    x_hi = np.maximum(take(lam_hi), x_lo)
    gap = x_hi - x_lo
    rest = 1.0 - x_lo.sum()
    if gap.sum() <= 0:
        return x_lo
    return x_lo + gap * (rest / gap.sum())


def _sup_below(d, lam, cap):
    if d(cap) <= lam:
        return cap
    lo, hi = 0.0, cap
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if d(mid) <= lam:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class RootProblem:
    func: Callable[[float], float]
    lo: float
    hi: float
    tolerance: float = 1e-8
    derivative: Optional[Callable[[float], float]] = None


def find_root(problem: RootProblem, max_iter: int = 500) -> float:
    """Safeguarded root finding: Newton steps inside the bracket, bisection otherwise."""
    f = problem.func
    lo, hi = float(problem.lo), float(problem.hi)
    if lo > hi:
        lo, hi = hi, lo
    f_lo, f_hi = f(lo), f(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise ValueError(f"no sign change on [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}")
    x = 0.5 * (lo + hi)
    best, best_val = x, math.inf
    for _ in range(max_iter):
        fx = f(x)
        if abs(fx) < best_val:
            best, best_val = x, abs(fx)
        if fx == 0.0:
            return x
        if np.sign(fx) == np.sign(f_lo):
            lo, f_lo = x, fx
        else:
            hi, f_hi = x, fx
        if best_val <= problem.tolerance and hi - lo <= 1e-12 * max(1.0, abs(x)):
            break
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(x)):
            break
        nxt = 0.5 * (lo + hi)
        if problem.derivative is not None:
            dfx = problem.derivative(x)
            if dfx and math.isfinite(dfx):
                cand = x - fx / dfx
                if lo < cand < hi:
                    nxt = cand
        x = nxt
    if best_val > problem.tolerance:
        raise ValueError(f"root finder stalled with residual {best_val:.3e} on [{lo}, {hi}]")
    return best


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def maximize_1d(func: Callable[[float], float], lo: float, hi: float, grid_size: int = 10001,
                tolerance: float = 1e-10) -> tuple[float, float]:
    """Grid scan followed by golden-section refinement around the best cell.

    Ties on the grid resolve to the leftmost point; the refined point replaces
    the grid point only when it is strictly better.
    """
    grid = np.linspace(lo, hi, grid_size)
    values = np.array([func(t) for t in grid])
    k = int(np.argmax(values))
    best_x, best_v = float(grid[k]), float(values[k])
    a = float(grid[max(k - 1, 0)])
    b = float(grid[min(k + 1, grid_size - 1)])
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = func(c), func(d)
    while b - a > tolerance:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = func(d)
    for cand in (a, 0.5 * (a + b), b):
        v = func(cand)
        if v > best_v:
            best_x, best_v = cand, v
    return best_x, best_v
