"""Column generation with congestion feedback inside a branch-and-price tree.

Each tree node runs a loop of: solve the restricted master at fixed travel
times, read duals, price new columns, refresh the travel times from the
master's flows (damped to avoid oscillation), and repeat until no improving
column exists or the objective stalls.  Cycle cuts are separated lazily on
integral supports.  Fractional nodes branch first on the most fractional
path variable, then on the time-weighted most fractional tree arc; children
violating contraflow or out-degree consistency are dropped outright.

The travel-time feedback makes the per-node bounds heuristic, not proven:
integral candidates are therefore re-scored with the true congestion
objective before touching the incumbent, and pruning compares heuristic
bounds against that true incumbent value.
"""

from __future__ import annotations

import heapq
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import evalcheck
from .lpcore import solve_lp
from .master import (
    BranchState,
    Column,
    CycleCut,
    DualPrices,
    MasterSolution,
    build_rmp,
    dummy_column,
    read_master_solution,
    separate_cycles,
)
from .netgraph import bpr_time
from .pricing import needs_refuel, price_all
from .scenario import Scenario, origins
from .solution import (
    STATUS_EXHAUSTED,
    STATUS_FEASIBLE,
    STATUS_INFEASIBLE,
    ClassPlan,
    OriginPath,
    Solution,
)

PRUNE_TOL = 1e-9
DUMMY_ACTIVE_TOL = 1e-6


@dataclass
class SolverConfig:
    max_colgen_iters: int = 200
    max_nodes: int = 500
    reduced_cost_tol: float = 1e-6
    integrality_tol: float = 1e-6
    damping: float = 0.5
    refuel_convention: str = "geq"
    seed: int = 0

    @classmethod
    def from_file(cls, path) -> "SolverConfig":
        doc = json.loads(Path(path).read_text())
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SearchNode:
    node_id: int
    branch: BranchState
    pool: list[Column]
    cuts: tuple[CycleCut, ...] = ()
    lp_objective: float = -np.inf
    depth: int = 0
    status: str = "open"


@dataclass
class ColgenResult:
    master: MasterSolution | None
    pool: list[Column]
    fixed_times: np.ndarray
    iterations: int
    columns_added: int
    infeasible: bool = False
    best_integral: Solution | None = None  # best true-scored tree seen in the loop
    dummy_active: bool = False  # a dummy column survived a fully priced-out master


def free_flow_times(scenario: Scenario) -> np.ndarray:
    net = scenario.network
    return np.array([bpr_time(a, 0.0) for a in net.arcs])


def congested_times(scenario: Scenario, volumes: np.ndarray) -> np.ndarray:
    net = scenario.network
    return np.array([bpr_time(a, max(float(v), 0.0)) for a, v in zip(net.arcs, volumes)])


def column_generation(
    scenario: Scenario,
    pool: list[Column],
    branch: BranchState,
    cuts: tuple[CycleCut, ...],
    config: SolverConfig,
) -> ColgenResult:
    """Run the pricing loop at one tree node; the pool grows in place order.

    Travel times start at free flow and are refreshed from each master's
    flow assignment with damping.  Stops when pricing yields no improving
    column, the objective is stagnant for three rounds, or the iteration cap
    is reached.
    """
    net = scenario.network
    n_arcs = len(net.arcs)
    v_hat = np.zeros(n_arcs)
    t_hat = congested_times(scenario, v_hat)
    orig_list = origins(scenario)
    pinned_pairs = {(c.origin, c.cls) for c in branch.lambda_fixed_one}
    pairs = [
        (o, k) for k in range(len(scenario.classes)) for o in orig_list
        if (o, k) not in pinned_pairs
    ]
    pool = list(pool)
    master = None
    warm_basis = None
    warm_upper = None
    prev_nvars = None
    prev_obj = None
    stagnant = 0
    added_total = 0
    iterations = 0
    empty_rounds = 0
    best_integral: Solution | None = None

    for _ in range(config.max_colgen_iters):
        iterations += 1
        model = build_rmp(scenario, pool, t_hat, branch, cuts)
        nvars = len(model.lp.variables)
        basis = None
        at_upper = None
        if warm_basis is not None:
            # slack indices shift when columns are appended; remap them
            basis = [j if j < prev_nvars else j - prev_nvars + nvars for j in warm_basis]
            at_upper = frozenset(
                j if j < prev_nvars else j - prev_nvars + nvars for j in warm_upper
            )
        sol = solve_lp(model.lp, warm_basis=basis, warm_at_upper=at_upper)
        if sol.status == "iteration-limit" and basis is not None:
            sol = solve_lp(model.lp)  # cold restart, fresh pivot budget
        if sol.status == "infeasible":
            return ColgenResult(None, pool, t_hat, iterations, added_total, infeasible=True)
        if sol.status != "optimal":
            raise RuntimeError(f"master solve ended with status {sol.status}")
        warm_basis, warm_upper, prev_nvars = sol.basis, sol.at_upper, nvars
        master = read_master_solution(model, sol, config.integrality_tol)

        # the loop walks through many trees as travel times evolve; keep the
        # best one by its true congested objective, not the fixed-time proxy
        if master.integral:
            candidate = extract_candidate(scenario, master, config)
        else:
            candidate = completion_candidate(scenario, master, config)
        if candidate is not None and evalcheck.validate_solution(candidate, scenario).ok:
            candidate.objective = evalcheck.true_objective(candidate, scenario)
            if (best_integral is None
                    or candidate.objective.total < best_integral.objective.total):
                best_integral = candidate

        duals = DualPrices(pi=master.pi, mu=master.mu)
        results = price_all(
            scenario, pairs, t_hat, duals, branch,
            forbidden=branch.lambda_fixed_zero, convention=config.refuel_convention,
        )
        in_pool = set(pool)
        new_cols = []
        for key in sorted(results):
            res = results[key]
            if res.column is not None and res.reduced_cost < -config.reduced_cost_tol:
                if res.column not in in_pool:
                    new_cols.append(res.column)
                    in_pool.add(res.column)
        v_new = np.array([master.v.get(a, 0.0) for a in range(n_arcs)])
        # successive-averages step: start at the configured damping, then decay
        # so the best-response flow feedback cannot lock into a limit cycle
        step = min(1.0 - config.damping, 1.0 / max(iterations, 1))
        v_hat = v_hat + step * (v_new - v_hat)
        t_prev = t_hat
        t_hat = congested_times(scenario, v_hat)
        t_shift = float(np.max(np.abs(t_hat - t_prev) / np.maximum(t_prev, 1e-6))) if n_arcs else 0.0
        if not new_cols:
            empty_rounds += 1
            if t_shift > 1e-5 and empty_rounds < 3:
                continue  # pricing is clean but times are still settling
            # fully priced out at stable times: a surviving dummy proves some
            # (origin, class) has no feasible path under the current fixings
            dummy_active = any(
                val > DUMMY_ACTIVE_TOL
                for col, val in master.lam.items() if col.is_dummy
            )
            return ColgenResult(master, pool, t_hat, iterations, added_total,
                                best_integral=best_integral, dummy_active=dummy_active)
        empty_rounds = 0
        pool.extend(new_cols)
        added_total += len(new_cols)
        if prev_obj is not None:
            rel = abs(master.objective - prev_obj) / max(1.0, abs(prev_obj))
            stagnant = stagnant + 1 if rel < 1e-6 else 0
            if stagnant >= 3:
                break
        prev_obj = master.objective
    return ColgenResult(master, pool, t_hat, iterations, added_total,
                        best_integral=best_integral)


def evaluate_node(scenario: Scenario, node: SearchNode, config: SolverConfig) -> ColgenResult:
    """Column generation plus lazy cycle separation until a stable master."""
    result = column_generation(scenario, node.pool, node.branch, node.cuts, config)
    rounds = 0
    while not result.infeasible and rounds < 8:
        new_cuts = separate_cycles(result.master.x, scenario.network)
        new_cuts -= set(node.cuts)
        if not new_cuts:
            break
        node.cuts = tuple(list(node.cuts) + sorted(new_cuts, key=lambda c: (c.cls, sorted(c.arcs))))
        extra = column_generation(scenario, result.pool, node.branch, node.cuts, config)
        extra.iterations += result.iterations
        extra.columns_added += result.columns_added
        if extra.best_integral is None or (
            result.best_integral is not None
            and result.best_integral.objective.total < extra.best_integral.objective.total
        ):
            extra.best_integral = result.best_integral
        result = extra
        rounds += 1
    node.pool = result.pool
    if result.infeasible:
        node.status = "infeasible"
    else:
        node.lp_objective = result.master.objective
        if result.best_integral is not None:
            result.best_integral = polish_candidate(scenario, result.best_integral, config)
    return result


def branch(
    node: SearchNode,
    master: MasterSolution,
    scenario: Scenario,
    fixed_times,
    config: SolverConfig,
    next_id,
) -> list[SearchNode]:
    """Children of a fractional node, most-fractional path variable first.

    With all path variables integral, branches on the fractional tree arc
    with the largest time-weighted value.  A child whose fixing would
    complete a contraflow pair, or give a node two forced outgoing arcs, is
    dropped.
    """
    tol = config.integrality_tol
    net = scenario.network
    frac_lam = [
        (col, val) for col, val in master.lam.items()
        if tol < val < 1.0 - tol
    ]
    children: list[SearchNode] = []
    if frac_lam:
        col, _ = min(
            frac_lam,
            key=lambda cv: (abs(cv[1] - 0.5), cv[0].origin, cv[0].cls, cv[0].arcs),
        )
        for value in (1, 0):
            children.append(SearchNode(
                node_id=next_id(),
                branch=node.branch.with_lambda(col, value),
                pool=list(node.pool),
                cuts=node.cuts,
                lp_objective=master.objective,
                depth=node.depth + 1,
            ))
        return children

    frac_x = [
        (key, val) for key, val in master.x.items() if tol < val < 1.0 - tol
    ]
    if not frac_x:
        raise ValueError("branch() called on an integral master solution")
    (arc, cls), _ = max(
        frac_x, key=lambda kv: (fixed_times[kv[0][0]] * kv[1], -kv[0][0], -kv[0][1])
    )
    fixed = node.branch.x_fixed_map()
    for value in (1, 0):
        if value == 1:
            rev = net.reverse_pair.get(arc)
            if rev is not None and any(
                fixed.get((rev, q)) == 1 for q in range(len(scenario.classes))
            ):
                continue  # would force both directions of one road
            tail = net.arcs[arc].tail
            if any(
                fixed.get((a2, cls)) == 1 for a2 in net.out_arcs[tail] if a2 != arc
            ):
                continue  # node already has a forced outgoing arc
        children.append(SearchNode(
            node_id=next_id(),
            branch=node.branch.with_x(arc, cls, value),
            pool=list(node.pool),
            cuts=node.cuts,
            lp_objective=master.objective,
            depth=node.depth + 1,
        ))
    return children


def extract_candidate(
    scenario: Scenario, master: MasterSolution, config: SolverConfig
) -> Solution | None:
    """Build a Solution from an integral master; None when a dummy survives.

    Per-origin routes are read off the tree arcs (successor chains), per-class
    flows recomputed from demand so paths and flows agree exactly.
    """
    net = scenario.network
    for col, val in master.lam.items():
        if col.is_dummy and val > DUMMY_ACTIVE_TOL:
            return None
    plans = []
    total_flow: dict[int, float] = {}
    for k, vc in enumerate(scenario.classes):
        tree = tuple(sorted(a for (a, kk), val in master.x.items() if kk == k and val > 0.5))
        succ: dict[int, int] = {}
        for a in tree:
            succ.setdefault(net.arcs[a].tail, a)
        paths: dict[int, OriginPath] = {}
        flows: dict[int, float] = {}
        for origin in origins(scenario):
            arcs = []
            cur = origin
            seen = {origin}
            broken = False
            while cur != net.shelter:
                a = succ.get(cur)
                if a is None:
                    broken = True
                    break
                arcs.append(a)
                cur = net.arcs[a].head
                if cur in seen:
                    broken = True
                    break
                seen.add(cur)
            if broken:
                return None  # cycle or dangle survived; candidate unusable
            hops = sum(1 for a in arcs if not net.arcs[a].uncapacitated)
            paths[origin] = OriginPath(
                arcs=tuple(arcs), hops=hops,
                refuel=needs_refuel(hops, vc.tau_hops, config.refuel_convention),
            )
            q = vc.demand_at(origin)
            if q:
                for a in arcs:
                    flows[a] = flows.get(a, 0.0) + q
        plans.append(ClassPlan(cls=k, name=vc.name, tree_arcs=tree, paths=paths, flows=flows))
        for a, q in flows.items():
            total_flow[a] = total_flow.get(a, 0.0) + q
    return Solution(
        status=STATUS_FEASIBLE,
        plans=tuple(plans),
        total_flow=total_flow,
        refuel_convention=config.refuel_convention,
        label=scenario.label,
    )


def assemble_from_successors(
    scenario: Scenario, succs: list[dict[int, int]], config: SolverConfig
) -> Solution | None:
    """Build a Solution from per-class successor maps.

    Returns None when some chain dangles or cycles, or a route that triggers
    refueling never touches a station.  Flows are derived from demand so the
    result is internally consistent by construction.
    """
    net = scenario.network
    plans = []
    total_flow: dict[int, float] = {}
    for k, vc in enumerate(scenario.classes):
        succ = succs[k]
        paths: dict[int, OriginPath] = {}
        flows: dict[int, float] = {}
        for origin in origins(scenario):
            arcs = []
            cur = origin
            guard = 0
            while cur != net.shelter:
                a = succ.get(cur)
                if a is None:
                    return None
                arcs.append(a)
                cur = net.arcs[a].head
                guard += 1
                if guard > len(net.nodes):
                    return None
            hops = sum(1 for a in arcs if not net.arcs[a].uncapacitated)
            refuel = needs_refuel(hops, vc.tau_hops, config.refuel_convention)
            if refuel:
                on_path = {origin} | {net.arcs[a].head for a in arcs}
                if not (on_path & vc.stations):
                    return None
            paths[origin] = OriginPath(arcs=tuple(arcs), hops=hops, refuel=refuel)
            q = vc.demand_at(origin)
            if q:
                for a in arcs:
                    flows[a] = flows.get(a, 0.0) + q
        plans.append(ClassPlan(
            cls=k, name=vc.name, tree_arcs=tuple(sorted(set(succ.values()))),
            paths=paths, flows=flows))
        for a, q in flows.items():
            total_flow[a] = total_flow.get(a, 0.0) + q
    return Solution(
        status=STATUS_FEASIBLE, plans=tuple(plans), total_flow=total_flow,
        refuel_convention=config.refuel_convention, label=scenario.label)


def completion_candidate(
    scenario: Scenario, master: MasterSolution, config: SolverConfig
) -> Solution | None:
    """Integral solution read off an integral-lambda master with degenerate x.

    The tree arcs carry no objective weight, so the LP frequently returns
    fractional x even when every origin's path choice is settled.  When each
    node's selected path agrees with the suffix of every path through it,
    setting each node's successor to the first arc of its own selected column
    is an equally optimal, integral choice of x.  Returns None when some
    lambda is fractional, a dummy is active, suffixes disagree, or the
    completed trees would clash on an anti-parallel road pair.
    """
    tol = config.integrality_tol
    net = scenario.network
    selected: dict[tuple[int, int], Column] = {}
    for col, val in master.lam.items():
        if val > 1.0 - tol:
            if col.is_dummy:
                return None
            selected[(col.origin, col.cls)] = col
        elif val > tol:
            return None
    orig_list = origins(scenario)
    succs: list[dict[int, int]] = []
    for k in range(len(scenario.classes)):
        succ: dict[int, int] = {}
        for o in orig_list:
            col = selected.get((o, k))
            if col is None or not col.arcs:
                return None
            succ[o] = col.arcs[0]
        for feeder in net.super_shelter_feeders:
            for a in net.out_arcs[feeder]:
                if net.arcs[a].uncapacitated and net.arcs[a].head == net.shelter:
                    succ[feeder] = a
                    break
        for o in orig_list:
            cur = o
            for a in selected[(o, k)].arcs:
                if succ.get(cur) != a:
                    return None  # suffix disagreement: no integral x matches
                cur = net.arcs[a].head
        succs.append(succ)
    arc_sets = [set(s.values()) for s in succs]
    seen = set()
    for a, rev in net.reverse_pair.items():
        if (rev, a) in seen:
            continue
        seen.add((a, rev))
        if any(a in s for s in arc_sets) and any(rev in s for s in arc_sets):
            return None
    return assemble_from_successors(scenario, succs, config)


def polish_candidate(scenario: Scenario, solution: Solution, config: SolverConfig) -> Solution:
    """Deterministic 1-opt descent over per-class successor arcs.

    The time-feedback loop settles on best-response trees, which can leave
    classes piled onto one congested corridor.  This pass tries, for every
    class and node, each alternative outgoing arc; a move is kept when the
    rewired trees stay acyclic, contraflow-clean, and refuel-feasible, and
    strictly lower the true congested objective.  Repeats to a local optimum.
    """
    net = scenario.network
    succs: list[dict[int, int]] = []
    for plan in solution.plans:
        succ = {}
        for a in sorted(plan.tree_arcs):
            succ.setdefault(net.arcs[a].tail, a)
        succs.append(succ)
    best = solution
    best_total = solution.objective.total
    non_shelter = sorted(net.nodes - {net.shelter})

    def assemble(succs_now):
        return assemble_from_successors(scenario, succs_now, config)

    for _ in range(20):
        improved = False
        for k in range(len(scenario.classes)):
            for node in non_shelter:
                current = succs[k].get(node)
                for alt in net.out_arcs[node]:
                    if alt == current:
                        continue
                    rev = net.reverse_pair.get(alt)
                    if rev is not None and any(
                        rev in s.values() for s in succs
                    ):
                        continue
                    old = succs[k][node]
                    succs[k][node] = alt
                    candidate = assemble(succs)
                    if candidate is None:
                        succs[k][node] = old
                        continue
                    score = true_objective_safe(candidate, scenario)
                    if score is not None and score.total < best_total - 1e-12:
                        candidate.objective = score
                        best = candidate
                        best_total = score.total
                        improved = True
                    else:
                        succs[k][node] = old
        if not improved:
            break
    if best is not solution and not evalcheck.validate_solution(best, scenario).ok:
        return solution
    return best


def true_objective_safe(candidate: Solution, scenario: Scenario):
    try:
        return evalcheck.true_objective(candidate, scenario)
    except ValueError:
        return None


def solve(scenario: Scenario, config: SolverConfig | None = None) -> Solution:
    """Best-bound branch-and-price over the scenario; returns the incumbent.

    Integral candidates are validated and re-scored with the true congested
    objective before they may become the incumbent; node bounds above the
    incumbent's true value are pruned.  Deterministic for a fixed scenario
    and configuration.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    orig_list = origins(scenario)
    root_pool = [
        dummy_column(o, k)
        for k in range(len(scenario.classes))
        for o in orig_list
    ]
    counter = iter(range(1, 10**9))
    root = SearchNode(node_id=0, branch=BranchState(), pool=root_pool)
    frontier: list[tuple[float, int, int, SearchNode]] = []
    heapq.heappush(frontier, (-np.inf, 0, 0, root))
    incumbent: Solution | None = None
    incumbent_total = np.inf
    nodes_explored = 0
    colgen_iterations = 0
    real_columns: set[Column] = set()
    exhausted = False

    while frontier:
        if nodes_explored >= config.max_nodes:
            exhausted = True
            break
        _, _, _, node = heapq.heappop(frontier)
        if node.lp_objective >= incumbent_total - PRUNE_TOL:
            node.status = "pruned"
            continue
        nodes_explored += 1
        result = evaluate_node(scenario, node, config)
        colgen_iterations += result.iterations
        real_columns.update(c for c in node.pool if not c.is_dummy)
        if result.infeasible:
            continue
        if result.dummy_active:
            node.status = "infeasible"
            continue
        # feasible trees observed along the node's time-feedback trajectory
        if result.best_integral is not None:
            if result.best_integral.objective.total < incumbent_total - PRUNE_TOL:
                incumbent = result.best_integral
                incumbent_total = incumbent.objective.total
        master = result.master
        if master.objective >= incumbent_total - PRUNE_TOL:
            node.status = "pruned"
            continue
        if master.integral:
            candidate = extract_candidate(scenario, master, config)
            if candidate is None:
                node.status = "infeasible"
                continue
            report = evalcheck.validate_solution(candidate, scenario)
            if not report.ok:
                node.status = "infeasible"
                continue
            candidate.objective = evalcheck.true_objective(candidate, scenario)
            node.status = "integral"
            if candidate.objective.total < incumbent_total - PRUNE_TOL:
                incumbent = candidate
                incumbent_total = candidate.objective.total
            continue
        # an integral completion at equal LP value settles the node: the x
        # fractionality was pure degeneracy, nothing is left to branch on
        completed = completion_candidate(scenario, master, config)
        if completed is not None and evalcheck.validate_solution(completed, scenario).ok:
            completed.objective = evalcheck.true_objective(completed, scenario)
            node.status = "integral"
            if completed.objective.total < incumbent_total - PRUNE_TOL:
                incumbent = completed
                incumbent_total = completed.objective.total
            continue
        children = branch(node, master, scenario, result.fixed_times, config,
                          lambda: next(counter))
        for child in children:
            heapq.heappush(
                frontier,
                (child.lp_objective, -child.depth, child.node_id, child),
            )

    wall = time.perf_counter() - t0
    diagnostics = {
        "colgen_iterations": colgen_iterations,
        "nodes_explored": nodes_explored,
        "columns_generated": len(real_columns),
        "wall_seconds": wall,
        "config": config.to_dict(),
    }
    if incumbent is not None:
        incumbent.diagnostics = diagnostics
        return incumbent
    status = STATUS_EXHAUSTED if exhausted else STATUS_INFEASIBLE
    return Solution(
        status=status,
        refuel_convention=config.refuel_convention,
        label=scenario.label,
        diagnostics=diagnostics,
    )
