"""Per-(origin, class) pricing: hop- and station-constrained shortest paths.

Pricing searches for the minimum reduced-cost elementary path from an origin
to the shelter under dual prices from the master solve.  A path is feasible
when it is elementary and, if long enough to trigger refueling, visits at
least one compatible station.

Costs factor through unit arc weights ``t_ij - pi_ij`` scaled by the origin
demand, so one backward hop-layered dynamic program per class prices every
origin at once.  That DP relaxes over walks; since walks bound elementary
paths from below, a simple argmin walk is the exact elementary optimum.
Whenever the walk revisits a node, some unit weight is negative, or branch
rules exclude specific paths, an exact elementary labeling takes over.

The labeling carries (hops, station flag, visited set) resources; a label is
discarded only when another label at the same node is no worse in cost,
hops, and station access, visits no extra nodes, and is excluded by no extra
forbidden paths.  Each label additionally tracks which forbidden paths it
still prefixes, making branch exclusions exact.  A backward walk bound
prunes labels that provably cannot beat the best completion found.

Refueling triggers when a path's physical hop count reaches the class hop
bound (configurable to strict excess).  A hop bound of zero means the
vehicle cannot traverse any link at all, so no feasible path exists.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .master import BranchState, Column, DualPrices
from .scenario import Scenario, origins as scenario_origins

INFEASIBLE = float("inf")


@dataclass(frozen=True)
class Label:
    node: int
    hops: int
    station_visited: bool
    visited: frozenset[int]
    base_cost: float  # unit cost: sum of (t - pi) along the path, unscaled
    arcs: tuple[int, ...]
    fmask: int  # bitmask of forbidden paths this label is still a prefix of


@dataclass(frozen=True)
class PricingResult:
    column: Column | None
    reduced_cost: float


def needs_refuel(hops: int, tau: int, convention: str = "geq") -> bool:
    if convention == "geq":
        return hops >= tau
    if convention == "gt":
        return hops > tau
    raise ValueError(f"unknown refuel convention {convention!r}")


def allowed_arcs(scenario: Scenario, cls: int, branch: BranchState | None) -> frozenset[int]:
    """Arc ids this class may use under the branch fixings."""
    net = scenario.network
    all_arcs = set(range(len(net.arcs)))
    if branch is None:
        return frozenset(all_arcs)
    fixed = branch.x_fixed_map()
    removed = {a for (a, k), val in fixed.items() if k == cls and val == 0}
    for (a, k), val in fixed.items():
        if k == cls and val == 1:
            tail = net.arcs[a].tail
            removed.update(b for b in net.out_arcs[tail] if b != a)
    return frozenset(all_arcs - removed)


def _unit_weights(scenario, cls, fixed_times, duals, arcs_ok):
    return {a: fixed_times[a] - duals.pi.get((a, cls), 0.0) for a in sorted(arcs_ok)}


class _WalkProfile:
    """Backward hop-layered walk DP for one class, vectorized over nodes.

    ``cost[g, f, n]`` is the minimum unit cost of a walk from node n to the
    shelter using g physical hops, where f marks a station somewhere on the
    walk (n included).  Valid as a lower bound on elementary paths; exact
    whenever the reconstructed argmin walk happens to be simple.
    """

    def __init__(self, scenario: Scenario, cls: int, weights: Mapping[int, float]):
        net = scenario.network
        vc = scenario.classes[cls]
        self.net = net
        self.weights = weights
        self.max_hops = len(net.nodes) - 1
        self.index = {n: i for i, n in enumerate(sorted(net.nodes))}
        n_nodes = len(self.index)
        station = np.zeros(n_nodes, dtype=bool)
        for s in vc.stations:
            station[self.index[s]] = True
        self.station = station

        # walks never continue out of the shelter: arrival ends the route
        real = [(a, w) for a, w in weights.items()
                if not net.arcs[a].uncapacitated and net.arcs[a].tail != net.shelter]
        supers = [(a, w) for a, w in weights.items()
                  if net.arcs[a].uncapacitated and net.arcs[a].tail != net.shelter]
        r_tail = np.array([self.index[net.arcs[a].tail] for a, _ in real], dtype=int)
        r_head = np.array([self.index[net.arcs[a].head] for a, _ in real], dtype=int)
        r_w = np.array([w for _, w in real])
        s_tail = np.array([self.index[net.arcs[a].tail] for a, _ in supers], dtype=int)
        s_head = np.array([self.index[net.arcs[a].head] for a, _ in supers], dtype=int)
        s_w = np.array([w for _, w in supers])

        cost = np.full((self.max_hops + 1, 2, n_nodes), INFEASIBLE)
        cost[0, 0, self.index[net.shelter]] = 0.0

        def relax_layer(layer, tails, heads, ws, out_layer):
            if tails.size == 0:
                return
            through = np.minimum(layer[0, heads], layer[1, heads]) + ws
            plain0 = layer[0, heads] + ws
            plain1 = layer[1, heads] + ws
            st = self.station[tails]
            # station tails land in flag 1 no matter the suffix flag
            np.minimum.at(out_layer[1], tails[st], through[st])
            np.minimum.at(out_layer[0], tails[~st], plain0[~st])
            np.minimum.at(out_layer[1], tails[~st], plain1[~st])

        for g in range(self.max_hops + 1):
            relax_layer(cost[g], s_tail, s_head, s_w, cost[g])  # zero-hop feeders
            if g == self.max_hops:
                break
            relax_layer(cost[g], r_tail, r_head, r_w, cost[g + 1])
        self.cost = cost

    def suffix_bound(self) -> dict[int, float]:
        """Per-node lower bound on any completion cost, flags and hops aside."""
        per_node = self.cost.min(axis=(0, 1))
        return {n: float(per_node[i]) for n, i in self.index.items()
                if np.isfinite(per_node[i])}

    def _descend(self, origin, g, flag):
        """Rebuild one argmin walk by greedy local descent through the layers."""
        net = self.net
        arcs = []
        node, gg, ff = origin, g, flag
        guard = 0
        while node != net.shelter or gg > 0:
            guard += 1
            if guard > 3 * (self.max_hops + 2):
                return None
            here = self.cost[gg, ff, self.index[node]]
            found = False
            for a in net.out_arcs[node]:
                w = self.weights.get(a)
                if w is None:
                    continue
                arc = net.arcs[a]
                hi = self.index[arc.head]
                ng = gg if arc.uncapacitated else gg - 1
                if ng < 0:
                    continue
                if self.station[self.index[node]] and not ff:
                    continue  # station nodes always carry the flag
                flag_opts = (0, 1) if (ff and self.station[self.index[node]]) else (ff,)
                for nf in flag_opts:
                    nxt_cost = self.cost[ng, nf, hi]
                    if np.isfinite(nxt_cost) and abs(here - (nxt_cost + w)) <= 1e-9 * max(1.0, abs(here)):
                        arcs.append(a)
                        node, gg, ff = arc.head, ng, nf
                        found = True
                        break
                if found:
                    break
            if not found:
                return None
        return arcs

    def price_origin(self, scenario, cls, origin, duals, convention):
        """Best feasible (cost, hops, flag) state for one origin, or None."""
        vc = scenario.classes[cls]
        q = vc.demand_at(origin)
        mu = duals.mu.get((origin, cls), 0.0)
        oi = self.index[origin]
        best_rc = INFEASIBLE
        best_state = None
        for g in range(self.max_hops + 1):
            for flag in (1, 0):
                cost = self.cost[g, flag, oi]
                if not np.isfinite(cost):
                    continue
                refuel = needs_refuel(g, vc.tau_hops, convention)
                if refuel and not flag:
                    continue
                rc = q * cost + (q * vc.refuel_rate * g if refuel else 0.0) - mu
                if rc < best_rc - 1e-15:
                    best_rc = rc
                    best_state = (g, flag)
        if best_state is None:
            return None
        arcs = self._descend(origin, best_state[0], best_state[1])
        if arcs is None:
            return "nonsimple"
        nodes_seq = [origin] + [self.net.arcs[a].head for a in arcs]
        if len(set(nodes_seq)) != len(nodes_seq):
            return "nonsimple"
        hops = sum(1 for a in arcs if not self.net.arcs[a].uncapacitated)
        refuel = needs_refuel(hops, vc.tau_hops, convention)
        column = Column(origin=origin, cls=cls, arcs=tuple(arcs), hops=hops, refuel=refuel)
        return PricingResult(column=column, reduced_cost=best_rc)


def _dominates(a: Label, b: Label) -> bool:
    return (
        a.base_cost <= b.base_cost
        and a.hops <= b.hops
        and (a.station_visited or not b.station_visited)
        and a.visited <= b.visited
        and (a.fmask & ~b.fmask) == 0
    )


def _exact_labeling(
    scenario: Scenario,
    origin: int,
    cls: int,
    weights: Mapping[int, float],
    duals: DualPrices,
    forbidden_paths: tuple[tuple[int, ...], ...],
    convention: str,
    suffix_lb: Mapping[int, float] | None = None,
) -> PricingResult:
    net = scenario.network
    vc = scenario.classes[cls]
    q = vc.demand_at(origin)
    mu = duals.mu.get((origin, cls), 0.0)
    full_mask = (1 << len(forbidden_paths)) - 1
    shelter = net.shelter
    lb = suffix_lb or {}

    start = Label(
        node=origin, hops=0, station_visited=origin in vc.stations,
        visited=frozenset((origin,)), base_cost=0.0, arcs=(), fmask=full_mask,
    )
    buckets: dict[int, list[Label]] = {origin: [start]}
    counter = 0
    queue: list[tuple[float, int, Label]] = []
    heapq.heappush(queue, (lb.get(origin, 0.0), counter, start))
    best_rc = INFEASIBLE
    best_label = None

    def shelter_rc(label: Label):
        refuel = needs_refuel(label.hops, vc.tau_hops, convention)
        if refuel and not label.station_visited:
            return None
        if label.fmask and any(
            label.fmask >> bit & 1 and len(forbidden_paths[bit]) == len(label.arcs)
            for bit in range(len(forbidden_paths))
        ):
            return None
        return q * label.base_cost + (q * vc.refuel_rate * label.hops if refuel else 0.0) - mu

    while queue:
        _, _, label = heapq.heappop(queue)
        if label not in buckets.get(label.node, ()):
            continue  # superseded by dominance
        bound = lb.get(label.node)
        if bound is None and lb:
            continue  # cannot reach the shelter at all
        if bound is not None and q * (label.base_cost + bound) - mu >= best_rc:
            continue  # provably cannot beat the incumbent completion
        for a in net.out_arcs[label.node]:
            if a not in weights:
                continue
            arc = net.arcs[a]
            nxt = arc.head
            if nxt in label.visited:
                continue
            mask = 0
            if label.fmask:
                pos = len(label.arcs)
                for bit, fpath in enumerate(forbidden_paths):
                    if label.fmask >> bit & 1 and pos < len(fpath) and fpath[pos] == a:
                        mask |= 1 << bit
            new = Label(
                node=nxt,
                hops=label.hops + (0 if arc.uncapacitated else 1),
                station_visited=label.station_visited or nxt in vc.stations,
                visited=label.visited | {nxt},
                base_cost=label.base_cost + weights[a],
                arcs=label.arcs + (a,),
                fmask=mask,
            )
            bucket = buckets.setdefault(nxt, [])
            dominated = False
            for other in bucket:
                if _dominates(other, new):
                    # on a full tie prefer the lexicographically smaller path
                    if _dominates(new, other) and new.arcs < other.arcs:
                        continue
                    dominated = True
                    break
            if dominated:
                continue
            bucket[:] = [o for o in bucket if not _dominates(new, o)] + [new]
            if nxt == shelter:
                rc = shelter_rc(new)
                if rc is not None and (rc < best_rc or (rc == best_rc and (
                        best_label is None or new.arcs < best_label.arcs))):
                    best_rc = rc
                    best_label = new
            else:
                counter += 1
                heapq.heappush(
                    queue, (new.base_cost + lb.get(nxt, 0.0), counter, new)
                )

    # the incumbent tracking above prefers earlier finds on exact ties; do a
    # final sweep over surviving shelter labels for deterministic tie-breaks
    for label in buckets.get(shelter, ()):
        rc = shelter_rc(label)
        if rc is None:
            continue
        if rc < best_rc or (rc == best_rc and (best_label is None or label.arcs < best_label.arcs)):
            best_rc = rc
            best_label = label
    if best_label is None:
        return PricingResult(None, INFEASIBLE)
    refuel = needs_refuel(best_label.hops, vc.tau_hops, convention)
    column = Column(
        origin=origin, cls=cls, arcs=best_label.arcs,
        hops=best_label.hops, refuel=refuel,
    )
    return PricingResult(column=column, reduced_cost=best_rc)


def solve_pricing(
    scenario: Scenario,
    origin: int,
    cls: int,
    fixed_times: Sequence[float],
    duals: DualPrices,
    branch: BranchState | None = None,
    forbidden: Iterable[Column] = (),
    convention: str = "geq",
) -> PricingResult:
    """Minimum reduced-cost feasible path for one (origin, class) pair.

    Returns an absent column with infinite reduced cost when no feasible
    path exists (which is a valid outcome, e.g. zero hop bound or no
    reachable station on any short-enough route).
    """
    vc = scenario.classes[cls]
    if vc.tau_hops == 0:
        return PricingResult(None, INFEASIBLE)
    arcs_ok = allowed_arcs(scenario, cls, branch)
    weights = _unit_weights(scenario, cls, fixed_times, duals, arcs_ok)
    forbidden_paths = tuple(
        c.arcs for c in forbidden
        if c.origin == origin and c.cls == cls and not c.is_dummy
    )
    profile = _WalkProfile(scenario, cls, weights)
    if not forbidden_paths and all(w >= -1e-12 for w in weights.values()):
        result = profile.price_origin(scenario, cls, origin, duals, convention)
        if result is None:
            return PricingResult(None, INFEASIBLE)
        if result != "nonsimple":
            return result
    return _exact_labeling(
        scenario, origin, cls, weights, duals, forbidden_paths, convention,
        suffix_lb=profile.suffix_bound(),
    )


def price_all(
    scenario: Scenario,
    pairs: Iterable[tuple[int, int]],
    fixed_times: Sequence[float],
    duals: DualPrices,
    branch: BranchState | None = None,
    forbidden: Iterable[Column] = (),
    convention: str = "geq",
) -> dict[tuple[int, int], PricingResult]:
    """Price every requested (origin, class) pair; order-independent results.

    One backward walk profile per class serves all of its origins; origins
    whose argmin walk is non-elementary, or that carry forbidden paths, are
    re-priced exactly.
    """
    forbidden = tuple(forbidden)
    results: dict[tuple[int, int], PricingResult] = {}
    by_class: dict[int, list[int]] = {}
    for origin, cls in pairs:
        by_class.setdefault(cls, []).append(origin)
    for cls in sorted(by_class):
        vc = scenario.classes[cls]
        if vc.tau_hops == 0:
            for origin in by_class[cls]:
                results[(origin, cls)] = PricingResult(None, INFEASIBLE)
            continue
        arcs_ok = allowed_arcs(scenario, cls, branch)
        weights = _unit_weights(scenario, cls, fixed_times, duals, arcs_ok)
        profile = _WalkProfile(scenario, cls, weights)
        nonneg = all(w >= -1e-12 for w in weights.values())
        suffix_lb = None
        for origin in sorted(by_class[cls]):
            forbidden_paths = tuple(
                c.arcs for c in forbidden
                if c.origin == origin and c.cls == cls and not c.is_dummy
            )
            result = None
            if nonneg and not forbidden_paths:
                result = profile.price_origin(scenario, cls, origin, duals, convention)
                if result is None:
                    result = PricingResult(None, INFEASIBLE)
                elif result == "nonsimple":
                    result = None
            if result is None:
                if suffix_lb is None:
                    suffix_lb = profile.suffix_bound()
                result = _exact_labeling(
                    scenario, origin, cls, weights, duals, forbidden_paths,
                    convention, suffix_lb=suffix_lb,
                )
            results[(origin, cls)] = result
    return results
