"""Solution containers and their JSON serialization.

Arc references inside a serialized solution use (tail, head) node pairs so
documents stay meaningful without the in-memory arc indexing; loading a
document back resolves pairs against the scenario's network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

from .netgraph import Network

STATUS_FEASIBLE = "optimal-heuristic"
STATUS_INFEASIBLE = "infeasible"
STATUS_EXHAUSTED = "exhausted-no-solution"


@dataclass(frozen=True)
class OriginPath:
    arcs: tuple[int, ...]
    hops: int
    refuel: bool


@dataclass
class ClassPlan:
    cls: int
    name: str
    tree_arcs: tuple[int, ...]
    paths: dict[int, OriginPath]
    flows: dict[int, float]


@dataclass
class ObjectiveParts:
    travel: float = 0.0
    refuel: float = 0.0
    total: float = 0.0
    average: float = 0.0

    def as_dict(self) -> dict:
        return {"travel": self.travel, "refuel": self.refuel,
                "total": self.total, "average": self.average}


@dataclass
class Solution:
    status: str
    plans: tuple[ClassPlan, ...] = ()
    total_flow: dict[int, float] = field(default_factory=dict)
    objective: ObjectiveParts = field(default_factory=ObjectiveParts)
    diagnostics: dict = field(default_factory=dict)
    refuel_convention: str = "geq"
    label: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == STATUS_FEASIBLE

    def to_dict(self, network: Network, canonical: bool = False) -> dict:
        """Serializable form; ``canonical`` zeroes volatile timing fields."""
        diagnostics = dict(self.diagnostics)
        if canonical:
            diagnostics["wall_seconds"] = 0.0
        def pair(a: int) -> list[int]:
            arc = network.arcs[a]
            return [arc.tail, arc.head]
        return {
            "status": self.status,
            "label": self.label,
            "refuel_convention": self.refuel_convention,
            "objective": self.objective.as_dict(),
            "classes": [
                {
                    "id": p.cls,
                    "name": p.name,
                    "tree_arcs": [pair(a) for a in p.tree_arcs],
                    "paths": {
                        str(o): {
                            "arcs": [pair(a) for a in op.arcs],
                            "hops": op.hops,
                            "refuel": op.refuel,
                        }
                        for o, op in sorted(p.paths.items())
                    },
                    "flows": {f"{pair(a)[0]}->{pair(a)[1]}": q
                              for a, q in sorted(p.flows.items()) if q},
                }
                for p in self.plans
            ],
            "total_flow": {f"{pair(a)[0]}->{pair(a)[1]}": q
                           for a, q in sorted(self.total_flow.items()) if q},
            "diagnostics": diagnostics,
        }

    def to_json(self, network: Network, canonical: bool = False) -> str:
        return json.dumps(self.to_dict(network, canonical=canonical),
                          indent=2, sort_keys=True)


def solution_from_dict(doc: Mapping, network: Network) -> Solution:
    """Rebuild a Solution from its document form against a known network."""
    arc_of = {(a.tail, a.head): i for i, a in enumerate(network.arcs)}

    def resolve(pair) -> int:
        key = (int(pair[0]), int(pair[1]))
        if key not in arc_of:
            raise ValueError(f"solution references unknown arc {key[0]}->{key[1]}")
        return arc_of[key]

    plans = []
    for cdoc in doc.get("classes", []):
        paths = {
            int(o): OriginPath(
                arcs=tuple(resolve(p) for p in pdoc["arcs"]),
                hops=int(pdoc["hops"]),
                refuel=bool(pdoc["refuel"]),
            )
            for o, pdoc in cdoc.get("paths", {}).items()
        }
        flows = {}
        for key, q in cdoc.get("flows", {}).items():
            tail, head = key.split("->")
            flows[resolve((tail, head))] = float(q)
        plans.append(
            ClassPlan(
                cls=int(cdoc["id"]),
                name=str(cdoc.get("name", f"class-{cdoc['id']}")),
                tree_arcs=tuple(sorted(resolve(p) for p in cdoc.get("tree_arcs", []))),
                paths=paths,
                flows=flows,
            )
        )
    total_flow = {}
    for key, q in doc.get("total_flow", {}).items():
        tail, head = key.split("->")
        total_flow[resolve((tail, head))] = float(q)
    obj = doc.get("objective", {})
    return Solution(
        status=str(doc["status"]),
        plans=tuple(plans),
        total_flow=total_flow,
        objective=ObjectiveParts(
            travel=float(obj.get("travel", 0.0)),
            refuel=float(obj.get("refuel", 0.0)),
            total=float(obj.get("total", 0.0)),
            average=float(obj.get("average", 0.0)),
        ),
        diagnostics=dict(doc.get("diagnostics", {})),
        refuel_convention=str(doc.get("refuel_convention", "geq")),
        label=str(doc.get("label", "")),
    )
