"""Vehicle classes, evacuation demand, and scenario documents.

A scenario couples one network with a list of vehicle fuel classes.  Each
class carries a hop bound (the driving-range proxy), a refueling rate in
hours per hop, the set of nodes hosting compatible refueling stations, and a
per-origin demand map.  Scenario documents are JSON; demand is given either
explicitly per class or as population shares of per-node totals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .netgraph import Network, add_super_shelter, hopify, parse_tntp


class ScenarioError(ValueError):
    """Raised for invalid scenario documents."""


@dataclass(frozen=True)
class VehicleClass:
    """One vehicle fuel type: range bound, refueling behavior, and demand."""

    id: int
    name: str
    tau_hops: int
    refuel_rate: float  # hours per hop
    stations: frozenset[int]
    demand: Mapping[int, float]

    def demand_at(self, node: int) -> float:
        return self.demand.get(node, 0.0)

    @property
    def total_demand(self) -> float:
        return sum(self.demand.values())


@dataclass(frozen=True)
class Scenario:
    """A network plus the vehicle classes evacuating over it."""

    network: Network
    classes: tuple[VehicleClass, ...]
    spacing: float | None = None
    label: str = ""

    @property
    def total_demand(self) -> float:
        return sum(c.total_demand for c in self.classes)


def tau_from_range(driving_range: float, spacing: float) -> int:
    """Hop bound for a vehicle range at a controlled spacing: floor(range/spacing).

    Flooring keeps the bound on the comfortable side of the true range, so a
    vehicle is never planned beyond what it can actually drive.
    """
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    if driving_range < 0:
        raise ValueError(f"driving range must be non-negative, got {driving_range}")
    return int(math.floor(driving_range / spacing))


def origins(scenario: Scenario) -> list[int]:
    """Every node that needs a route: all nodes except the shelter side.

    Excludes the terminal shelter and the physical shelter nodes feeding it.
    Zero-demand nodes (hop-transform dummies included) are kept so that every
    node receives a path and the selected paths can span an evacuation tree.
    """
    net = scenario.network
    excluded = {net.shelter} | set(net.super_shelter_feeders)
    return sorted(n for n in net.nodes if n not in excluded)


def _as_node_map(raw: Mapping, what: str) -> dict[int, float]:
    out: dict[int, float] = {}
    for key, value in raw.items():
        try:
            node = int(key)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{what}: non-integer node id {key!r}") from exc
        value = float(value)
        if value < 0:
            raise ScenarioError(f"{what}: negative demand {value} at node {node}")
        out[node] = value
    return out


def _split_by_shares(
    node_totals: dict[int, float], shares: list[float]
) -> list[dict[int, float]]:
    """Split per-node totals into whole-vehicle class demands.

    Every class but the first gets its share rounded to whole vehicles; the
    first class absorbs the rounding residual so the per-node sum is exact.
    """
    maps: list[dict[int, float]] = [dict() for _ in shares]
    for node, total in node_totals.items():
        assigned = 0.0
        for k in range(len(shares) - 1, 0, -1):
            part = float(round(shares[k] * total))
            maps[k][node] = part
            assigned += part
        maps[0][node] = total - assigned
        if maps[0][node] < 0:
            raise ScenarioError(
                f"share rounding drove class 1 demand negative at node {node}"
            )
    return maps


def load_scenario(document, base_dir: str | Path | None = None) -> Scenario:
    """Load and validate a scenario from a JSON document.

    ``document`` may be a path, JSON text, or an already-parsed mapping.
    Relative network paths resolve against ``base_dir`` (defaulting to the
    document's own directory when a path was given).
    """
    if isinstance(document, Mapping):
        doc = dict(document)
    else:
        path = Path(str(document))
        if path.suffix == ".json" or path.exists():
            if not path.exists():
                raise ScenarioError(f"scenario file not found: {path}")
            if base_dir is None:
                base_dir = path.parent
            doc = json.loads(path.read_text())
        else:
            doc = json.loads(str(document))
    base = Path(base_dir) if base_dir is not None else Path(".")

    try:
        network_path = doc["network_path"]
        shelters = list(doc["shelters"])
        class_docs = list(doc["classes"])
    except KeyError as exc:
        raise ScenarioError(f"scenario document missing field {exc}") from exc
    if not class_docs:
        raise ScenarioError("scenario declares no vehicle classes")

    net_file = Path(network_path)
    if not net_file.is_absolute():
        net_file = base / net_file
    if not net_file.exists():
        raise ScenarioError(f"network file not found: {net_file}")
    network = parse_tntp(net_file.read_text())

    spacing = doc.get("spacing_miles")
    if spacing is not None:
        network = hopify(network, float(spacing))
    network = add_super_shelter(network, shelters)

    node_totals = None
    if "node_totals" in doc:
        node_totals = _as_node_map(doc["node_totals"], "node_totals")

    share_classes = [i for i, c in enumerate(class_docs) if "share" in c]
    demand_classes = [i for i, c in enumerate(class_docs) if "demand" in c]
    if share_classes and demand_classes:
        raise ScenarioError("mix of share-based and explicit demand classes is not supported")
    if share_classes:
        if node_totals is None:
            raise ScenarioError("share-based classes require node_totals")
        shares = [float(class_docs[i]["share"]) for i in share_classes]
        if abs(sum(shares) - 1.0) > 1e-9:
            raise ScenarioError(f"population shares sum to {sum(shares)}, expected 1")
        share_maps = _split_by_shares(node_totals, shares)
    elif not demand_classes:
        raise ScenarioError("every class needs either a demand map or a share")

    real_nodes = network.nodes - {network.shelter} - network.dummy_nodes
    shelter_side = {network.shelter} | set(network.super_shelter_feeders)
    classes: list[VehicleClass] = []
    for idx, cdoc in enumerate(class_docs):
        name = str(cdoc.get("name", f"class-{idx + 1}"))
        tau = int(cdoc["tau_hops"])
        if tau < 0:
            raise ScenarioError(f"class {name}: tau_hops must be >= 0")
        rate_min = float(cdoc.get("refuel_rate_min_per_hop", 0.0))
        if rate_min < 0:
            raise ScenarioError(f"class {name}: negative refuel rate")
        stations = frozenset(int(s) for s in cdoc.get("stations", []))
        for s in stations:
            if s not in real_nodes:
                raise ScenarioError(f"class {name}: station node {s} is not in the network")
        if share_classes:
            demand = share_maps[share_classes.index(idx)]
        else:
            demand = _as_node_map(cdoc["demand"], f"class {name} demand")
        for node, q in demand.items():
            if node not in network.nodes:
                raise ScenarioError(f"class {name}: demand at unknown node {node}")
            if node in shelter_side and q > 0:
                raise ScenarioError(f"class {name}: shelter node {node} must have zero demand")
        demand = {n: q for n, q in sorted(demand.items()) if q > 0}
        classes.append(
            VehicleClass(
                id=idx, name=name, tau_hops=tau, refuel_rate=rate_min / 60.0,
                stations=stations, demand=demand,
            )
        )
    if len({c.id for c in classes}) != len(classes):
        raise ScenarioError("duplicate class ids")

    reachable = network.nodes_reaching_shelter()
    for c in classes:
        for node, q in c.demand.items():
            if q > 0 and node not in reachable:
                raise ScenarioError(
                    f"class {c.name}: node {node} has demand but no path to the shelter"
                )

    return Scenario(
        network=network,
        classes=tuple(classes),
        spacing=float(spacing) if spacing is not None else None,
        label=str(doc.get("label", "")),
    )


def dump_scenario(scenario: Scenario, network_path: str) -> dict:
    """Back-serialize a scenario to its document form (for round-trip tests)."""
    doc = {
        "label": scenario.label,
        "network_path": network_path,
        "shelters": sorted(scenario.network.super_shelter_feeders),
        "classes": [
            {
                "name": c.name,
                "tau_hops": c.tau_hops,
                "refuel_rate_min_per_hop": c.refuel_rate * 60.0,
                "stations": sorted(c.stations),
                "demand": {str(n): q for n, q in sorted(c.demand.items())},
            }
            for c in scenario.classes
        ],
    }
    if scenario.spacing is not None:
        doc["spacing_miles"] = scenario.spacing
    return doc
