"""Restricted main problem over a pool of evacuation-path columns.

The master LP couples per-origin path choices (lambda), per-class tree arcs
(x), per-class arc flows (f), and total arc flows (v) under fixed travel
times.  Its duals drive the pricing step: pi prices each (arc, class)
linking row, mu each (origin, class) convexity row.

Hop counts deliberately ignore uncapacitated shelter-feeder arcs: those are
bookkeeping edges, not driven distance, so range and refueling rules see
only physical hops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .lpcore import EQ, LE, LinearProgram, LpSolution
from .netgraph import Network
from .scenario import Scenario, origins

DUMMY_COST = 1e9


@dataclass(frozen=True)
class Column:
    """A feasible origin-to-shelter path for one (origin, class) pair.

    ``hops`` counts capacitated arcs only.  ``refuel`` records whether the
    path is long enough to trigger refueling (and therefore passes a
    station).  Dummy columns have no arcs and exist only to keep every
    convexity row feasible; one surviving at positive value marks the
    instance infeasible.
    """

    origin: int
    cls: int
    arcs: tuple[int, ...]
    hops: int
    refuel: bool
    is_dummy: bool = False


def dummy_column(origin: int, cls: int) -> Column:
    return Column(origin=origin, cls=cls, arcs=(), hops=0, refuel=False, is_dummy=True)


def path_hops(network: Network, arcs: tuple[int, ...]) -> int:
    """Physical hop count of an arc sequence (shelter feeders excluded)."""
    return sum(1 for a in arcs if not network.arcs[a].uncapacitated)


@dataclass(frozen=True)
class CycleCut:
    cls: int
    arcs: frozenset[int]

    @property
    def rhs(self) -> int:
        return len(self.arcs) - 1


@dataclass(frozen=True)
class BranchState:
    """Variable fixings accumulated along a branch-and-price path."""

    lambda_fixed_one: frozenset[Column] = frozenset()
    lambda_fixed_zero: frozenset[Column] = frozenset()
    x_fixed: tuple[tuple[tuple[int, int], int], ...] = ()

    def x_fixed_map(self) -> dict[tuple[int, int], int]:
        return dict(self.x_fixed)

    def with_lambda(self, column: Column, value: int) -> "BranchState":
        if value == 1:
            return BranchState(self.lambda_fixed_one | {column},
                               self.lambda_fixed_zero, self.x_fixed)
        return BranchState(self.lambda_fixed_one,
                           self.lambda_fixed_zero | {column}, self.x_fixed)

    def with_x(self, arc: int, cls: int, value: int) -> "BranchState":
        items = dict(self.x_fixed)
        items[(arc, cls)] = value
        return BranchState(self.lambda_fixed_one, self.lambda_fixed_zero,
                           tuple(sorted(items.items())))


@dataclass
class DualPrices:
    pi: dict[tuple[int, int], float]   # (arc, class) -> linking dual
    mu: dict[tuple[int, int], float]   # (origin, class) -> convexity dual


@dataclass
class MasterSolution:
    lam: dict[Column, float]
    x: dict[tuple[int, int], float]
    f: dict[tuple[int, int], float]
    v: dict[int, float]
    pi: dict[tuple[int, int], float]
    mu: dict[tuple[int, int], float]
    objective: float
    integral: bool


@dataclass
class RmpModel:
    """The built LP plus the index maps needed to read a solve back out."""

    lp: LinearProgram
    scenario: Scenario
    columns: list[Column]
    x_index: dict[tuple[int, int], int]
    f_index: dict[tuple[int, int], int]
    v_index: dict[int, int]
    lam_index: dict[Column, int]
    linking_rows: dict[tuple[int, int], int]
    convexity_rows: dict[tuple[int, int], int]


def column_cost(column: Column, scenario: Scenario, fixed_times) -> float:
    """Objective coefficient of a column at the given fixed travel times."""
    if column.is_dummy:
        return DUMMY_COST
    vc = scenario.classes[column.cls]
    q = vc.demand_at(column.origin)
    travel = sum(fixed_times[a] for a in column.arcs)
    refuel = vc.refuel_rate * column.hops if column.refuel else 0.0
    return q * (travel + refuel)


def build_rmp(
    scenario: Scenario,
    pool,
    fixed_times,
    branch: BranchState | None = None,
    cuts: tuple[CycleCut, ...] = (),
) -> RmpModel:
    """Assemble the restricted main problem LP for the current pool.

    Raises if some (origin, class) pair has no column at all; seed pools with
    dummy columns to avoid that.
    """
    branch = branch or BranchState()
    net = scenario.network
    node_list = sorted(net.nodes)
    orig_list = origins(scenario)
    n_arcs = len(net.arcs)
    classes = scenario.classes
    big_m = max(scenario.total_demand, 1.0)

    by_pair: dict[tuple[int, int], list[Column]] = {}
    columns: list[Column] = list(pool)
    for col in columns:
        by_pair.setdefault((col.origin, col.cls), []).append(col)
    for k in range(len(classes)):
        for o in orig_list:
            if (o, k) not in by_pair:
                raise ValueError(f"column pool has no entry for origin {o}, class {k}")

    lp = LinearProgram()
    x_fixed = branch.x_fixed_map()
    x_index: dict[tuple[int, int], int] = {}
    for k in range(len(classes)):
        for a in range(n_arcs):
            pin = x_fixed.get((a, k))
            lo, up = (float(pin), float(pin)) if pin is not None else (0.0, 1.0)
            x_index[(a, k)] = lp.add_variable(lo, up, 0.0)
    f_index: dict[tuple[int, int], int] = {}
    for k in range(len(classes)):
        for a in range(n_arcs):
            f_index[(a, k)] = lp.add_variable(0.0, float("inf"), 0.0)
    v_index = {a: lp.add_variable(0.0, float("inf"), 0.0) for a in range(n_arcs)}

    lam_index: dict[Column, int] = {}
    for col in columns:
        if col in branch.lambda_fixed_one:
            lo, up = 1.0, 1.0
        elif col in branch.lambda_fixed_zero:
            lo, up = 0.0, 0.0
        else:
            lo, up = 0.0, 1.0
        lam_index[col] = lp.add_variable(lo, up, column_cost(col, scenario, fixed_times))

    linking_rows: dict[tuple[int, int], int] = {}
    for k, vc in enumerate(classes):
        per_arc: dict[int, dict[int, float]] = {}
        for col in columns:
            if col.cls != k or col.is_dummy:
                continue
            q = vc.demand_at(col.origin)
            for a in col.arcs:
                per_arc.setdefault(a, {})[lam_index[col]] = (
                    per_arc.get(a, {}).get(lam_index[col], 0.0) + q
                )
        for a in range(n_arcs):
            coeffs = dict(per_arc.get(a, {}))
            coeffs[f_index[(a, k)]] = -1.0
            linking_rows[(a, k)] = lp.add_row(coeffs, EQ, 0.0)

    convexity_rows: dict[tuple[int, int], int] = {}
    for k in range(len(classes)):
        for o in orig_list:
            coeffs = {lam_index[c]: 1.0 for c in by_pair[(o, k)]}
            convexity_rows[(o, k)] = lp.add_row(coeffs, EQ, 1.0)

    for k in range(len(classes)):
        for a in range(n_arcs):
            lp.add_row({f_index[(a, k)]: 1.0, x_index[(a, k)]: -big_m}, LE, 0.0)

    for k in range(len(classes)):
        for node in node_list:
            if node == net.shelter:
                continue
            coeffs = {x_index[(a, k)]: 1.0 for a in net.out_arcs[node]}
            if not coeffs:
                raise ValueError(f"node {node} has no outgoing arcs; no tree can span it")
            lp.add_row(coeffs, EQ, 1.0)

    seen_pairs = set()
    for a, rev in sorted(net.reverse_pair.items()):
        if (rev, a) in seen_pairs:
            continue
        seen_pairs.add((a, rev))
        for k in range(len(classes)):
            for q in range(len(classes)):
                lp.add_row({x_index[(a, k)]: 1.0, x_index[(rev, q)]: 1.0}, LE, 1.0)

    for a in range(n_arcs):
        coeffs = {v_index[a]: 1.0}
        for k in range(len(classes)):
            coeffs[f_index[(a, k)]] = -1.0
        lp.add_row(coeffs, EQ, 0.0)

    for cut in cuts:
        lp.add_row({x_index[(a, cut.cls)]: 1.0 for a in cut.arcs}, LE, float(cut.rhs))

    return RmpModel(
        lp=lp, scenario=scenario, columns=columns,
        x_index=x_index, f_index=f_index, v_index=v_index, lam_index=lam_index,
        linking_rows=linking_rows, convexity_rows=convexity_rows,
    )


def read_master_solution(model: RmpModel, sol: LpSolution, integrality_tol: float = 1e-6) -> MasterSolution:
    """Unpack an optimal LP solve into named master quantities."""
    if sol.status != "optimal":
        raise ValueError(f"cannot read a {sol.status} LP solve")
    lam = {col: sol.value(j) for col, j in model.lam_index.items()}
    x = {key: sol.value(j) for key, j in model.x_index.items()}
    f = {key: sol.value(j) for key, j in model.f_index.items()}
    v = {a: sol.value(j) for a, j in model.v_index.items()}
    duals = extract_duals(sol, model)
    integral = all(
        min(abs(val), abs(1.0 - val)) <= integrality_tol for val in lam.values()
    ) and all(
        min(abs(val), abs(1.0 - val)) <= integrality_tol for val in x.values()
    )
    return MasterSolution(
        lam=lam, x=x, f=f, v=v, pi=duals.pi, mu=duals.mu,
        objective=sol.objective, integral=integral,
    )


def extract_duals(sol: LpSolution, model: RmpModel) -> DualPrices:
    """Dual prices of the linking and convexity rows of an optimal solve."""
    if sol.status != "optimal":
        raise ValueError(f"cannot extract duals from a {sol.status} solve")
    pi = {key: float(sol.dual[row]) for key, row in model.linking_rows.items()}
    mu = {key: float(sol.dual[row]) for key, row in model.convexity_rows.items()}
    return DualPrices(pi=pi, mu=mu)


def separate_cycles(x_values: dict[tuple[int, int], float], network: Network) -> set[CycleCut]:
    """Find directed cycles in each class's x support and emit one cut each.

    The support is the arc set with x above one half; cycles are located by
    depth-first search, and each found cycle is removed before searching for
    the next, so disjoint cycles yield distinct cuts.
    """
    cuts: set[CycleCut] = set()
    classes = sorted({k for (_, k) in x_values})
    for k in classes:
        support = {a for (a, kk), val in x_values.items() if kk == k and val > 0.5}
        while True:
            cycle = _find_cycle(support, network)
            if cycle is None:
                break
            cuts.add(CycleCut(cls=k, arcs=frozenset(cycle)))
            support -= set(cycle)
    return cuts


def _find_cycle(support: set[int], network: Network):
    out: dict[int, list[int]] = {}
    for a in sorted(support):
        out.setdefault(network.arcs[a].tail, []).append(a)
    color: dict[int, int] = {}
    for start in sorted(out):
        if color.get(start, 0):
            continue
        stack: list[tuple[int, list[int]]] = [(start, list(out.get(start, ())))]
        color[start] = 1
        path_arcs: list[int] = []
        while stack:
            node, pending = stack[-1]
            if pending:
                arc = pending.pop(0)
                head = network.arcs[arc].head
                state = color.get(head, 0)
                if state == 1:
                    # back edge: unwind the stack to the cycle entry
                    cycle = [arc]
                    for (n2, _), a2 in zip(reversed(stack), reversed(path_arcs)):
                        cycle.append(a2)
                        if network.arcs[a2].tail == head:
                            break
                    return cycle
                if state == 0:
                    color[head] = 1
                    stack.append((head, list(out.get(head, ()))))
                    path_arcs.append(arc)
            else:
                color[node] = 2
                stack.pop()
                if path_arcs:
                    path_arcs.pop()
    return None
