"""Self-contained linear-programming engine with primal and dual extraction.

The solver is a bounded-variable revised simplex over a dense numpy tableau:
phase 1 drives artificial variables out of an infeasible start, phase 2
optimizes the true costs.  Dantzig pricing is used until a degeneracy budget
of ``5 * (rows + columns)`` pivots is spent, after which Bland's rule takes
over to guarantee termination.  The dense basis inverse is maintained by
rank-one updates with periodic refactorization.

Row duals follow the minimization convention: ``<=`` rows price
non-positive, ``>=`` rows non-negative, equalities free.  All tolerances
live in module constants so every consumer agrees on them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

FEAS_TOL = 1e-7          # primal feasibility, absolute
RC_TOL = 1e-6            # reduced-cost optimality threshold
PIVOT_TOL = 1e-9         # direction entries below this count as zero
PIVOT_ACCEPT = 1e-7      # smallest pivot magnitude allowed into the basis
REFACTOR_EVERY = 40      # pivots between basis refactorizations

LE, EQ, GE = "<=", "=", ">="


class LpError(ValueError):
    """Raised for malformed linear programs."""


@dataclass
class Variable:
    lower: float = 0.0
    upper: float = np.inf
    cost: float = 0.0

    def __post_init__(self):
        if self.lower > self.upper:
            raise LpError(f"variable bounds crossed: [{self.lower}, {self.upper}]")


@dataclass
class Row:
    coeffs: Mapping[int, float]
    sense: str
    rhs: float

    def __post_init__(self):
        if self.sense not in (LE, EQ, GE):
            raise LpError(f"unknown row sense {self.sense!r}")


@dataclass
class LinearProgram:
    """min c.x subject to rows and variable bounds."""

    variables: list[Variable] = field(default_factory=list)
    rows: list[Row] = field(default_factory=list)

    def add_variable(self, lower=0.0, upper=np.inf, cost=0.0) -> int:
        self.variables.append(Variable(lower, upper, cost))
        return len(self.variables) - 1

    def add_row(self, coeffs: Mapping[int, float], sense: str, rhs: float) -> int:
        for j in coeffs:
            if not 0 <= j < len(self.variables):
                raise LpError(f"row references unknown variable {j}")
        self.rows.append(Row(dict(coeffs), sense, rhs))
        return len(self.rows) - 1

    def dump(self) -> str:
        """Plain-text fixed layout of the LP, for debugging."""
        out = ["min " + " + ".join(
            f"{v.cost:g} x{j}" for j, v in enumerate(self.variables) if v.cost
        )]
        for i, r in enumerate(self.rows):
            terms = " + ".join(f"{c:g} x{j}" for j, c in sorted(r.coeffs.items()))
            out.append(f"r{i}: {terms} {r.sense} {r.rhs:g}")
        for j, v in enumerate(self.variables):
            out.append(f"x{j} in [{v.lower:g}, {v.upper:g}]")
        return "\n".join(out)


@dataclass
class LpSolution:
    status: str                      # optimal | infeasible | unbounded | iteration-limit
    primal: np.ndarray | None = None
    dual: np.ndarray | None = None
    objective: float = np.nan
    basis: tuple[int, ...] | None = None        # for warm starts
    at_upper: frozenset[int] | None = None

    def value(self, j: int) -> float:
        return float(self.primal[j])


class _Simplex:
    """Bounded-variable revised simplex over G x = b, l <= x <= u."""

    def __init__(self, G, b, c, lower, upper, max_iters, pivot_accept=PIVOT_ACCEPT):
        self.G = G
        self.b = b
        self.c = c
        self.l = lower
        self.u = upper
        self.m, self.N = G.shape
        self.max_iters = max_iters
        self.pivot_accept = pivot_accept
        self.degenerate_pivots = 0
        self.bland_after = 5 * (self.m + self.N)
        self.iterations = 0

    def start(self, basis, at_upper):
        self.basis = list(basis)
        self.in_basis = np.zeros(self.N, dtype=bool)
        self.in_basis[self.basis] = True
        self.at_upper = np.zeros(self.N, dtype=bool)
        for j in at_upper:
            self.at_upper[j] = True
        self.refactor()

    def refactor(self):
        B = self.G[:, self.basis]
        lu, piv = scipy.linalg.lu_factor(B, check_finite=False)
        diag = np.abs(np.diag(lu))
        if diag.size and diag.min() <= 1e-12 * max(1.0, float(diag.max())):
            self._repair_basis()
            B = self.G[:, self.basis]
            lu, piv = scipy.linalg.lu_factor(B, check_finite=False)
            diag = np.abs(np.diag(lu))
            if diag.size and diag.min() <= 1e-12 * max(1.0, float(diag.max())):
                raise LpError("singular basis")
        self.lu = (lu, piv)
        self.etas: list[tuple[int, np.ndarray]] = []
        self.recompute_x()

    def _repair_basis(self):
        """Replace dependent basis columns; slacks always complete the rank.

        A repaired basis can leave the recomputed point outside its bounds;
        the caller's feasibility checks (or phase 1 on a cold restart) deal
        with that.  Raises when even repair cannot reach full rank.
        """
        candidates = list(self.basis)
        in_cand = set(candidates)
        for j in range(self.N):  # slacks and artificials live past the structurals
            if j not in in_cand:
                candidates.append(j)
        work = self.G[:, candidates].copy()
        m = self.m
        chosen: list[int] = []
        row = 0
        for c_pos, var in enumerate(candidates):
            if row >= m:
                break
            col = work[row:, c_pos]
            pividx = int(np.argmax(np.abs(col)))
            if abs(col[pividx]) <= 1e-10:
                continue
            pivrow = row + pividx
            if pivrow != row:
                work[[row, pivrow], :] = work[[pivrow, row], :]
            below = work[row + 1:, c_pos]
            factors = below / work[row, c_pos]
            work[row + 1:, :] -= np.outer(factors, work[row, :])
            chosen.append(var)
            row += 1
        if row < m:
            raise LpError("basis repair failed: row rank deficient")
        evicted = [v for v in self.basis if v not in set(chosen)]
        self.basis = chosen
        self.in_basis[:] = False
        self.in_basis[self.basis] = True
        for v in evicted:
            self.at_upper[v] = bool(
                np.isfinite(self.u[v]) and not np.isfinite(self.l[v])
            )

    def ftran(self, col):
        """Solve B w = col through the factorization and the eta file."""
        w = scipy.linalg.lu_solve(self.lu, col, check_finite=False)
        for r, d in self.etas:
            wr = w[r] / d[r]
            w -= d * wr
            w[r] = wr
        return w

    def btran(self, rhs):
        """Solve B^T y = rhs (duals run through the eta file in reverse)."""
        y = np.asarray(rhs, dtype=float).copy()
        for r, d in reversed(self.etas):
            s = d @ y - d[r] * y[r]
            y[r] = (y[r] - s) / d[r]
        return scipy.linalg.lu_solve(self.lu, y, trans=1, check_finite=False)

    def recompute_x(self):
        x = np.where(self.at_upper, self.u, self.l)
        x = np.where(np.isfinite(x), x, 0.0)
        x[self.basis] = 0.0
        rhs = self.b - self.G @ x
        x[self.basis] = self.ftran(rhs)
        self.x = x

    def duals(self):
        return self.btran(self.c[self.basis])

    def reduced_costs(self, y):
        return self.c - y @ self.G

    def run(self):
        """Iterate to optimality; returns a status string.

        Two safeguards keep huge-scale LPs from spinning at the optimum:
        the entering threshold grows with the dual magnitude (reduced costs
        inherit roundoff of that order), and a watchdog refactorizes and
        stops once the objective has made no progress for a long stretch.
        """
        since_refactor = 0
        banned: set[int] = set()  # numerically unusable entering columns
        while True:
            if self.iterations >= self.max_iters:
                return "iteration-limit"
            self.iterations += 1
            y = self.duals()
            d = self.reduced_costs(y)
            noise = 1e-12 * (1.0 + float(np.abs(y).max(initial=0.0)))
            tol = max(RC_TOL, noise * (len(self.etas) + 1))
            movable = ~self.in_basis & (self.u > self.l)
            viol_low = movable & ~self.at_upper & (d < -tol)
            viol_up = movable & self.at_upper & (d > tol)
            candidates = [j for j in np.flatnonzero(viol_low | viol_up) if j not in banned]
            if not candidates:
                return "optimal"
            candidates = np.asarray(candidates)
            if self.degenerate_pivots > self.bland_after:
                q = int(candidates[0])
            else:
                q = int(candidates[np.argmax(np.abs(d[candidates]))])
            direction = -1.0 if self.at_upper[q] else 1.0

            w = self.ftran(self.G[:, q])
            # entering moves by direction * t >= 0; basics move by -direction * w * t
            bland = self.degenerate_pivots > self.bland_after
            ratios = []
            for pos, var in enumerate(self.basis):
                rate = direction * w[pos]
                if rate > PIVOT_TOL:
                    t = max(self.x[var] - self.l[var], 0.0) / rate
                elif rate < -PIVOT_TOL:
                    t = max(self.u[var] - self.x[var], 0.0) / (-rate)
                else:
                    continue
                ratios.append((t, pos, var))
            step = min((t for t, _, _ in ratios), default=np.inf)
            leave_pos = -1
            if ratios and np.isfinite(step):
                # Harris-style: among steps whose overshoot stays inside the
                # feasibility tolerance, take the sturdiest pivot
                window = [(t, pos, var) for t, pos, var in ratios
                          if (t - step) * abs(w[pos]) <= FEAS_TOL]
                if bland:
                    _, leave_pos, _ = min(window, key=lambda r: r[2])
                else:
                    _, leave_pos, _ = max(window, key=lambda r: (abs(w[r[1]]), -r[2]))
                step = max(min(t for t, _, _ in window), 0.0)
            bound_range = self.u[q] - self.l[q]
            if bound_range < step:
                step = bound_range
                leave_pos = -2  # bound flip
            if not np.isfinite(step):
                return "unbounded"
            if (leave_pos >= 0 and self.etas
                    and abs(w[leave_pos]) < 1e-6 * max(1.0, float(np.abs(w).max()))):
                self.refactor()  # borderline pivot: retry against fresh factors
                continue
            if leave_pos >= 0 and abs(w[leave_pos]) < self.pivot_accept:
                banned.add(q)  # pivot would destroy the basis; try another column
                continue
            if step <= FEAS_TOL:
                self.degenerate_pivots += 1

            self.x[q] += direction * step
            self.x[self.basis] -= direction * step * w
            if leave_pos == -2:
                self.at_upper[q] = ~self.at_upper[q]
                banned.clear()
                continue
            leaving = self.basis[leave_pos]
            rate = direction * w[leave_pos]
            self.at_upper[leaving] = rate < 0  # hit upper bound when moving up
            self.x[leaving] = self.u[leaving] if rate < 0 else self.l[leaving]
            self.in_basis[leaving] = False
            self.in_basis[q] = True
            self.basis[leave_pos] = q
            banned.clear()
            self.etas.append((leave_pos, w.copy()))
            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                self.refactor()
                since_refactor = 0


def _standard_form(lp: LinearProgram):
    """Append one slack per row: G x = b with slack bounds encoding the sense.

    Rows are equilibrated (divided by their largest structural coefficient)
    so that big-M couplings and demand-scaled columns do not wreck the basis
    conditioning; duals must be multiplied back by the returned scales.
    """
    n = len(lp.variables)
    m = len(lp.rows)
    N = n + m
    G = np.zeros((m, N))
    b = np.zeros(m)
    lower = np.full(N, -np.inf)
    upper = np.full(N, np.inf)
    cost = np.zeros(N)
    scales = np.ones(m)
    for j, v in enumerate(lp.variables):
        lower[j], upper[j], cost[j] = v.lower, v.upper, v.cost
    for i, row in enumerate(lp.rows):
        magnitude = max((abs(c) for c in row.coeffs.values()), default=1.0)
        s_i = 1.0 / magnitude if magnitude > 1.0 else 1.0
        scales[i] = s_i
        for j, c in row.coeffs.items():
            G[i, j] = c * s_i
        b[i] = row.rhs * s_i
        s = n + i
        G[i, s] = 1.0
        if row.sense == LE:
            lower[s], upper[s] = 0.0, np.inf
        elif row.sense == GE:
            lower[s], upper[s] = -np.inf, 0.0
        else:
            lower[s], upper[s] = 0.0, 0.0
    return G, b, cost, lower, upper, scales


def solve_lp(
    lp: LinearProgram,
    warm_basis: Sequence[int] | None = None,
    warm_at_upper: frozenset[int] | None = None,
    max_iters: int | None = None,
) -> LpSolution:
    """Solve the LP, returning primal values, row duals, and basis information.

    ``warm_basis``/``warm_at_upper`` (taken from a previous solution of an LP
    with the same rows) skip phase 1 when the old basis is still primal
    feasible; otherwise the solve silently falls back to a cold start.  A
    numerically wrecked run is retried once from a cold start before failing.
    """
    attempts = []
    if warm_basis is not None:
        attempts.append((warm_basis, warm_at_upper, PIVOT_ACCEPT))
    attempts.append((None, None, PIVOT_ACCEPT))
    attempts.append((None, None, PIVOT_ACCEPT * 1e3))
    last_error = None
    for basis, upper_set, accept in attempts:
        try:
            return _solve_lp_once(lp, basis, upper_set, max_iters, pivot_accept=accept)
        except LpError as exc:
            last_error = exc
    raise last_error


def _solve_lp_once(
    lp: LinearProgram,
    warm_basis: Sequence[int] | None = None,
    warm_at_upper: frozenset[int] | None = None,
    max_iters: int | None = None,
    pivot_accept: float = PIVOT_ACCEPT,
) -> LpSolution:
    n = len(lp.variables)
    m = len(lp.rows)
    if m == 0:
        x = np.array([_finite_start(v.lower, v.upper, v.cost) for v in lp.variables])
        return LpSolution("optimal", x, np.zeros(0), float(x @ [v.cost for v in lp.variables]),
                          basis=(), at_upper=frozenset())
    G, b, cost, lower, upper, row_scales = _standard_form(lp)
    N = n + m
    if max_iters is None:
        max_iters = max(60_000, 150 * (m + N))

    if warm_basis is not None and len(warm_basis) == m and all(0 <= j < N for j in warm_basis):
        sim = _Simplex(G, b, cost, lower, upper, max_iters, pivot_accept)
        try:
            sim.start(list(warm_basis), warm_at_upper or frozenset())
        except LpError:
            sim = None
        if sim is not None:
            slack = np.concatenate([sim.x - lower, upper - sim.x])
            slack = slack[np.isfinite(slack)]
            if slack.size == 0 or slack.min() >= -FEAS_TOL:
                np.clip(sim.x, np.where(np.isfinite(lower), lower, -np.inf),
                        np.where(np.isfinite(upper), upper, np.inf), out=sim.x)
                status = sim.run()
                return _finish(lp, sim, n, status, row_scales)

    # cold start: rest every variable at its bound nearest zero, absorb the
    # residual into slacks where their bounds allow, artificials elsewhere
    x0 = np.array([_finite_start(lower[j], upper[j], 0.0) for j in range(N)])
    resid = b - G @ x0
    basis: list[int] = []
    art_cols: list[np.ndarray] = []
    art_meta: list[int] = []
    for i in range(m):
        s = n + i
        s_val = x0[s] + resid[i]
        if lower[s] - FEAS_TOL <= s_val <= upper[s] + FEAS_TOL:
            x0[s] = s_val
            resid[i] = 0.0
            basis.append(s)
        else:
            col = np.zeros(m)
            col[i] = 1.0 if resid[i] >= 0 else -1.0
            art_cols.append(col)
            art_meta.append(i)
            basis.append(N + len(art_cols) - 1)
    if art_cols:
        G1 = np.hstack([G, np.column_stack(art_cols)])
        n_art = len(art_cols)
        lower1 = np.concatenate([lower, np.zeros(n_art)])
        upper1 = np.concatenate([upper, np.full(n_art, np.inf)])
        phase1_cost = np.concatenate([np.zeros(N), np.ones(n_art)])
        sim = _Simplex(G1, b, phase1_cost, lower1, upper1, max_iters, pivot_accept)
        at_upper0 = frozenset(
            j for j in range(N) if j not in basis and np.isinf(lower[j]) and np.isfinite(upper[j])
        )
        sim.start(basis, at_upper0)
        status = sim.run()
        if status == "iteration-limit":
            return LpSolution("iteration-limit")
        infeas = float(phase1_cost @ sim.x)
        if infeas > FEAS_TOL * max(1.0, float(np.abs(b).sum())):
            return LpSolution("infeasible")
        # pin artificials at zero and swap in the real costs
        sim.u[N:] = 0.0
        sim.x[N:] = np.clip(sim.x[N:], 0.0, 0.0)
        _drive_out_artificials(sim, N)
        sim.c = np.concatenate([cost, np.zeros(n_art)])
        status = sim.run()
    else:
        sim = _Simplex(G, b, cost, lower, upper, max_iters, pivot_accept)
        at_upper0 = frozenset(
            j for j in range(N) if j not in basis and np.isinf(lower[j]) and np.isfinite(upper[j])
        )
        sim.start(basis, at_upper0)
        status = sim.run()
    return _finish(lp, sim, n, status, row_scales)


def _finite_start(lo: float, up: float, cost: float) -> float:
    if np.isfinite(lo):
        return lo
    if np.isfinite(up):
        return up
    return 0.0


def _drive_out_artificials(sim: _Simplex, N: int):
    """Pivot zero-valued basic artificials out wherever a real pivot exists."""
    for pos in range(sim.m):
        var = sim.basis[pos]
        if var < N:
            continue
        unit = np.zeros(sim.m)
        unit[pos] = 1.0
        row = sim.btran(unit) @ sim.G[:, :N]
        pivots = np.flatnonzero((np.abs(row) > PIVOT_ACCEPT) & ~sim.in_basis[:N])
        if pivots.size == 0:
            continue  # redundant row; artificial stays basic, pinned at zero
        q = int(pivots[0])
        w = sim.ftran(sim.G[:, q])
        if abs(w[pos]) < PIVOT_ACCEPT:
            continue
        sim.in_basis[var] = False
        sim.in_basis[q] = True
        sim.at_upper[q] = False
        sim.basis[pos] = q
        sim.etas.append((pos, w.copy()))
        sim.recompute_x()


def _finish(lp: LinearProgram, sim: _Simplex, n: int, status: str, row_scales) -> LpSolution:
    if status == "unbounded":
        return LpSolution("unbounded")
    sim.refactor()
    x = sim.x[:n].copy()
    y = sim.duals()
    objective = float(np.array([v.cost for v in lp.variables]) @ x)
    sol = LpSolution(
        status if status != "optimal" else "optimal",
        primal=x,
        dual=np.asarray(y[: len(lp.rows)], dtype=float) * row_scales,
        objective=objective,
        basis=tuple(int(j) for j in sim.basis),
        at_upper=frozenset(int(j) for j in np.flatnonzero(sim.at_upper)),
    )
    return sol


def verify_solution(lp: LinearProgram, sol: LpSolution,
                    feas_tol=FEAS_TOL, gap_tol=1e-7, cs_tol=1e-6) -> dict:
    """Residuals of the optimality conditions, for tests and diagnostics.

    Returns primal feasibility residual, relative duality gap (with bound
    contributions), and the worst complementary-slackness product.
    """
    if sol.status != "optimal":
        raise LpError(f"cannot verify a {sol.status} solution")
    x = sol.primal
    y = sol.dual
    primal_resid = 0.0
    cs_resid = 0.0
    for i, row in enumerate(lp.rows):
        act = sum(c * x[j] for j, c in row.coeffs.items())
        slack = row.rhs - act
        if row.sense == LE:
            primal_resid = max(primal_resid, -slack)
            cs_resid = max(cs_resid, abs(y[i] * slack))
        elif row.sense == GE:
            primal_resid = max(primal_resid, slack)
            cs_resid = max(cs_resid, abs(y[i] * slack))
        else:
            primal_resid = max(primal_resid, abs(slack))
    dual_obj = float(sum(y[i] * row.rhs for i, row in enumerate(lp.rows)))
    # reduced costs contribute through variables resting at finite bounds
    d = np.array([v.cost for v in lp.variables], dtype=float)
    for i, row in enumerate(lp.rows):
        for j, c in row.coeffs.items():
            d[j] -= y[i] * c
    for j, v in enumerate(lp.variables):
        at_lower = np.isfinite(v.lower) and abs(x[j] - v.lower) <= 1e-6 * max(1, abs(v.lower))
        at_upper = np.isfinite(v.upper) and abs(x[j] - v.upper) <= 1e-6 * max(1, abs(v.upper))
        if at_lower and d[j] > 0:
            dual_obj += d[j] * v.lower
        elif at_upper and d[j] < 0:
            dual_obj += d[j] * v.upper
        elif not (at_lower or at_upper):
            # interior (basic) variables must price out to zero
            cs_resid = max(cs_resid, abs(d[j]))
    scale = max(1.0, abs(sol.objective))
    gap = abs(sol.objective - dual_obj) / scale
    return {
        "primal_residual": primal_resid,
        "duality_gap": gap,
        "complementary_slackness": cs_resid,
        "feasible": primal_resid <= feas_tol,
        "gap_ok": gap <= gap_tol,
        "cs_ok": cs_resid <= cs_tol * scale,
    }
