"""Ground-truth objective evaluation, constraint validation, and a small-instance oracle.

``true_objective`` scores a solution with the actual congestion-dependent
travel times at its final flows, never with the fixed times the search
iterated on.  ``validate_solution`` re-checks the full arc-formulation
constraint families on a finished solution and reports every violation with
the family that failed.  ``oracle_solve`` exhaustively enumerates candidate
evacuation trees on small instances and returns the true optimum; it shares
nothing with the column-generation path, which is what makes it a usable
cross-check.

Constraint families are numbered as in the arc formulation of the model:

  2  total flow aggregation          8-10  hop-depth labeling
  3  per-class flow conservation     11    no refueling at the shelter
  4  flow only on tree arcs          12    refuel trigger at the hop bound
  5  out-degree one per node         13    station access along the route
  6  no cycles (tree structure)
  7  contraflow exclusivity
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .master import path_hops
from .netgraph import bpr_time
from .pricing import needs_refuel
from .scenario import Scenario, origins
from .solution import (
    STATUS_FEASIBLE,
    STATUS_INFEASIBLE,
    ClassPlan,
    ObjectiveParts,
    OriginPath,
    Solution,
)

FLOW_TOL = 1e-6


class OracleSizeError(ValueError):
    """Raised when an instance is too large for exhaustive enumeration."""


@dataclass(frozen=True)
class Violation:
    family: str          # constraint family id, e.g. "5" or "8-10"
    location: str        # node / arc / class description
    magnitude: float
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def families(self) -> set[str]:
        return {v.family for v in self.violations}

    def to_text(self) -> str:
        if self.ok:
            return "PASS: all constraint families satisfied\n"
        lines = [f"FAIL: {len(self.violations)} violation(s)"]
        for v in self.violations:
            lines.append(f"family={v.family} at={v.location} magnitude={v.magnitude:.6g} {v.detail}")
        return "\n".join(lines) + "\n"


def true_objective(solution: Solution, scenario: Scenario) -> ObjectiveParts:
    """Exact objective of a solution: congested travel time plus refueling time.

    Travel time prices every arc at the solution's actual total flow.  The
    refueling term charges each origin whose route length triggers refueling
    its class rate times the full hop distance driven.  Raises if the stored
    flows do not match the stored paths; validate first.
    """
    net = scenario.network
    recomputed = _flows_from_paths(solution, scenario)
    for k, plan in enumerate(solution.plans):
        for a in set(plan.flows) | set(recomputed[k]):
            got, want = plan.flows.get(a, 0.0), recomputed[k].get(a, 0.0)
            if abs(got - want) > FLOW_TOL * max(1.0, abs(want)):
                raise ValueError(
                    f"class {k}: flow on arc {net.arcs[a].tail}->{net.arcs[a].head} "
                    f"is {got}, paths imply {want}; validate the solution first"
                )
    travel = 0.0
    for a, v in solution.total_flow.items():
        travel += bpr_time(net.arcs[a], v) * v
    refuel = 0.0
    convention = solution.refuel_convention
    for plan in solution.plans:
        vc = scenario.classes[plan.cls]
        for origin, op in plan.paths.items():
            if needs_refuel(op.hops, vc.tau_hops, convention):
                refuel += vc.demand_at(origin) * vc.refuel_rate * op.hops
    total = travel + refuel
    demand = scenario.total_demand
    average = total / demand if demand > 0 else 0.0
    return ObjectiveParts(travel=travel, refuel=refuel, total=total, average=average)


def _flows_from_paths(solution: Solution, scenario: Scenario) -> list[dict[int, float]]:
    out = []
    for plan in solution.plans:
        vc = scenario.classes[plan.cls]
        flows: dict[int, float] = {}
        for origin, op in plan.paths.items():
            q = vc.demand_at(origin)
            if q == 0:
                continue
            for a in op.arcs:
                flows[a] = flows.get(a, 0.0) + q
        out.append(flows)
    return out


def validate_solution(solution: Solution, scenario: Scenario) -> ValidationReport:
    """Check every constraint family against a finished solution.

    Never raises on content: each failed check lands in the report with the
    family id, a location, and the violation magnitude.
    """
    net = scenario.network
    report = ValidationReport()
    convention = solution.refuel_convention
    non_shelter = sorted(net.nodes - {net.shelter})

    # family 2: total flow aggregates the class flows
    for a in sorted(set(solution.total_flow) | {
        a for plan in solution.plans for a in plan.flows
    }):
        total = sum(plan.flows.get(a, 0.0) for plan in solution.plans)
        got = solution.total_flow.get(a, 0.0)
        if abs(got - total) > FLOW_TOL * max(1.0, abs(total)):
            report.violations.append(Violation(
                "2", f"arc {net.arcs[a].tail}->{net.arcs[a].head}", abs(got - total),
                "total flow differs from the sum of class flows"))

    for plan in solution.plans:
        vc = scenario.classes[plan.cls]
        k = plan.cls
        tree = set(plan.tree_arcs)
        succ: dict[int, list[int]] = {}
        for a in tree:
            succ.setdefault(net.arcs[a].tail, []).append(a)

        # family 5: exactly one outgoing tree arc per non-shelter node
        for node in non_shelter:
            degree = len(succ.get(node, ()))
            if degree != 1:
                report.violations.append(Violation(
                    "5", f"node {node} class {k}", abs(degree - 1),
                    f"out-degree {degree} in the evacuation tree"))

        # family 3: per-class flow conservation at every non-shelter node
        for node in non_shelter:
            outflow = sum(plan.flows.get(a, 0.0) for a in net.out_arcs[node])
            inflow = sum(plan.flows.get(a, 0.0) for a in net.in_arcs[node])
            q = vc.demand_at(node)
            resid = abs(outflow - inflow - q)
            if resid > FLOW_TOL * max(1.0, q):
                report.violations.append(Violation(
                    "3", f"node {node} class {k}", resid, "flow conservation broken"))

        # family 4: flow only on tree arcs
        for a, flow in plan.flows.items():
            if flow > FLOW_TOL and a not in tree:
                report.violations.append(Violation(
                    "4", f"arc {net.arcs[a].tail}->{net.arcs[a].head} class {k}", flow,
                    "positive flow on an arc outside the evacuation tree"))

        # family 6: tree arcs must chain into the shelter without cycles
        depth = _tree_depths(net, tree)
        if depth is None:
            report.violations.append(Violation(
                "6", f"class {k}", 1.0, "evacuation tree contains a directed cycle"))
            depth = {}
        else:
            for node in non_shelter:
                if len(succ.get(node, ())) == 1 and node not in depth:
                    report.violations.append(Violation(
                        "6", f"node {node} class {k}", 1.0,
                        "successor chain never reaches the shelter"))

        # families 8-10: stored path hop labels must match tree depth
        for origin, op in sorted(plan.paths.items()):
            if origin in depth and op.hops != depth[origin]:
                report.violations.append(Violation(
                    "8-10", f"node {origin} class {k}", abs(op.hops - depth[origin]),
                    f"path labels {op.hops} hops but the tree depth is {depth[origin]}"))

        # family 11: the shelter side never refuels
        for origin, op in plan.paths.items():
            if op.hops == 0 and op.refuel:
                report.violations.append(Violation(
                    "11", f"node {origin} class {k}", 1.0,
                    "zero-distance origin flagged for refueling"))

        # family 12: refuel flag consistent with the hop bound
        for origin, op in sorted(plan.paths.items()):
            required = needs_refuel(op.hops, vc.tau_hops, convention)
            if bool(op.refuel) != required and op.hops > 0:
                report.violations.append(Violation(
                    "12", f"node {origin} class {k}", 1.0,
                    f"refuel flag {op.refuel} but {op.hops} hops against bound {vc.tau_hops}"))

        # family 13: refueling routes must pass a compatible station
        for origin, op in sorted(plan.paths.items()):
            if not needs_refuel(op.hops, vc.tau_hops, convention):
                continue
            nodes_on_path = {origin} | {net.arcs[a].head for a in op.arcs}
            if not (nodes_on_path & vc.stations):
                report.violations.append(Violation(
                    "13", f"node {origin} class {k}", 1.0,
                    "route triggers refueling but visits no station"))

        # paths must lie inside the tree (surfaces as family 4/5 misuse)
        for origin, op in sorted(plan.paths.items()):
            stray = [a for a in op.arcs if a not in tree]
            if stray:
                report.violations.append(Violation(
                    "4", f"node {origin} class {k}", float(len(stray)),
                    "stored path leaves the evacuation tree"))

    # family 7: no road serves both directions, across any class pair
    seen = set()
    for a, rev in sorted(net.reverse_pair.items()):
        if (rev, a) in seen:
            continue
        seen.add((a, rev))
        for p1 in solution.plans:
            for p2 in solution.plans:
                if a in p1.tree_arcs and rev in p2.tree_arcs:
                    report.violations.append(Violation(
                        "7",
                        f"arcs {net.arcs[a].tail}<->{net.arcs[a].head} "
                        f"classes {p1.cls},{p2.cls}", 1.0,
                        "anti-parallel arcs selected in both directions"))
    return report


def _tree_depths(net, tree: set[int]):
    """Physical hop depth of every node that reaches the shelter inside ``tree``.

    Returns None when the successor structure contains a directed cycle.
    """
    succ = {}
    for a in sorted(tree):
        succ.setdefault(net.arcs[a].tail, a)
    depth = {net.shelter: 0}
    for start in sorted(succ):
        if start in depth:
            continue
        chain = []
        node = start
        while node not in depth:
            if node in chain:
                return None
            chain.append(node)
            arc_id = succ.get(node)
            if arc_id is None:
                break
            node = net.arcs[arc_id].head
        if node in depth:
            base = depth[node]
            for nd in reversed(chain):
                arc_id = succ[nd]
                base += 0 if net.arcs[arc_id].uncapacitated else 1
                depth[nd] = base
    return depth


def oracle_solve(scenario: Scenario, convention: str = "geq") -> Solution:
    """Exhaustive optimum over all per-class evacuation trees (small instances).

    Enumerates, per class, every out-degree-one arc selection over the
    non-shelter nodes, keeps the arborescences whose routes satisfy the
    refueling rules, rejects cross-class contraflow conflicts over the
    Cartesian product, and scores survivors with the true objective.
    """
    net = scenario.network
    if len(net.nodes) > 7:
        raise OracleSizeError(f"oracle accepts at most 7 nodes, got {len(net.nodes)}")
    if len(scenario.classes) > 2:
        raise OracleSizeError(f"oracle accepts at most 2 classes, got {len(scenario.classes)}")

    if any(vc.tau_hops == 0 for vc in scenario.classes):
        return Solution(status=STATUS_INFEASIBLE, refuel_convention=convention,
                        label=scenario.label, diagnostics={"method": "oracle"})

    non_shelter = sorted(net.nodes - {net.shelter})
    per_class_trees: list[list[dict[int, int]]] = []
    for vc in scenario.classes:
        trees = []
        choices = [net.out_arcs[n] for n in non_shelter]
        if any(not c for c in choices):
            per_class_trees.append([])
            continue
        for combo in itertools.product(*choices):
            succ = dict(zip(non_shelter, combo))
            feasible = True
            depths: dict[int, int] = {net.shelter: 0}
            for node in non_shelter:
                hops, stationed, cur = 0, node in vc.stations, node
                seen = {node}
                while cur != net.shelter:
                    arc = net.arcs[succ[cur]]
                    cur = arc.head
                    if cur in seen:
                        feasible = False
                        break
                    seen.add(cur)
                    hops += 0 if arc.uncapacitated else 1
                    stationed = stationed or cur in vc.stations
                if not feasible:
                    break
                if needs_refuel(hops, vc.tau_hops, convention) and not stationed:
                    feasible = False
                    break
                depths[node] = hops
            if feasible:
                trees.append(succ)
        per_class_trees.append(trees)

    if any(not trees for trees in per_class_trees):
        return Solution(status=STATUS_INFEASIBLE, refuel_convention=convention,
                        label=scenario.label, diagnostics={"method": "oracle"})

    seen_pairs = set()
    rev_pairs = []
    for a, rev in sorted(net.reverse_pair.items()):
        if (rev, a) not in seen_pairs:
            seen_pairs.add((a, rev))
            rev_pairs.append((a, rev))

    best: Solution | None = None
    best_key = None
    for combo in itertools.product(*per_class_trees):
        arc_sets = [frozenset(succ.values()) for succ in combo]
        conflict = False
        for i in range(len(arc_sets)):
            for j in range(len(arc_sets)):
                for a, rev in rev_pairs:
                    if a in arc_sets[i] and rev in arc_sets[j]:
                        conflict = True
                        break
                if conflict:
                    break
            if conflict:
                break
        if conflict:
            continue
        candidate = _assemble(scenario, combo, convention)
        score = true_objective(candidate, scenario)
        candidate.objective = score
        key = (score.total, tuple(sorted(s for s in arc_sets[0])))
        if best is None or key < best_key:
            best, best_key = candidate, key
    if best is None:
        return Solution(status=STATUS_INFEASIBLE, refuel_convention=convention,
                        label=scenario.label, diagnostics={"method": "oracle"})
    best.diagnostics = {"method": "oracle"}
    best.label = scenario.label
    return best


def _assemble(scenario: Scenario, succ_by_class, convention: str) -> Solution:
    net = scenario.network
    plans = []
    total_flow: dict[int, float] = {}
    for k, succ in enumerate(succ_by_class):
        vc = scenario.classes[k]
        paths: dict[int, OriginPath] = {}
        flows: dict[int, float] = {}
        for origin in origins(scenario):
            arcs = []
            cur = origin
            while cur != net.shelter:
                a = succ[cur]
                arcs.append(a)
                cur = net.arcs[a].head
            hops = path_hops(net, tuple(arcs))
            paths[origin] = OriginPath(
                arcs=tuple(arcs), hops=hops,
                refuel=needs_refuel(hops, vc.tau_hops, convention),
            )
            q = vc.demand_at(origin)
            for a in arcs:
                flows[a] = flows.get(a, 0.0) + q
        plans.append(ClassPlan(
            cls=k, name=vc.name,
            tree_arcs=tuple(sorted(set(succ.values()))),
            paths=paths, flows=flows,
        ))
        for a, q in flows.items():
            total_flow[a] = total_flow.get(a, 0.0) + q
    return Solution(
        status=STATUS_FEASIBLE, plans=tuple(plans), total_flow=total_flow,
        refuel_convention=convention, label=scenario.label,
    )
