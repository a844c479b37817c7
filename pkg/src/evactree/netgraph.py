"""Road-network model for evacuation planning.

A network is a directed graph whose arcs carry BPR congestion parameters
(free-flow time, capacity, alpha, beta).  Networks are built from TNTP
link-table files and then reshaped by two transforms:

* ``add_super_shelter`` funnels one or more physical shelter nodes into a
  single artificial terminal through zero-time, uncapacitated arcs, so the
  rest of the pipeline always routes toward a single root.
* ``hopify`` subdivides long arcs into chains of unit-hop arcs so that hop
  counts approximate physical distance at a controlled spacing.

Networks are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence


class NetworkError(ValueError):
    """Raised for structurally invalid networks or transforms."""


class TntpParseError(NetworkError):
    """Raised when a TNTP document cannot be parsed; carries the line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Arc:
    """One directed link with BPR delay parameters.

    ``uncapacitated`` marks artificial arcs (e.g. shelter feeders) that are
    free of congestion and always traversed in zero time.
    """

    tail: int
    head: int
    free_flow_time: float
    capacity: float
    length: float | None = None
    bpr_alpha: float = 0.15
    bpr_beta: float = 4.0
    uncapacitated: bool = False

    def __post_init__(self):
        if self.uncapacitated:
            if self.free_flow_time != 0.0:
                raise NetworkError(
                    f"uncapacitated arc {self.tail}->{self.head} must have zero free-flow time"
                )
        else:
            if not self.capacity > 0:
                raise NetworkError(f"arc {self.tail}->{self.head}: capacity must be positive")
        if self.free_flow_time < 0:
            raise NetworkError(f"arc {self.tail}->{self.head}: negative free-flow time")
        if self.bpr_beta < 1:
            raise NetworkError(f"arc {self.tail}->{self.head}: BPR beta must be >= 1")


def bpr_time(arc: Arc, flow: float) -> float:
    """Travel time of ``arc`` at the given flow, by the BPR delay function.

    Returns ``t0 * (1 + alpha * (flow / capacity) ** beta)``; uncapacitated
    arcs always take zero time regardless of flow.
    """
    if flow < 0:
        raise ValueError(f"negative flow {flow} on arc {arc.tail}->{arc.head}")
    if arc.uncapacitated:
        return 0.0
    return arc.free_flow_time * (1.0 + arc.bpr_alpha * (flow / arc.capacity) ** arc.bpr_beta)


class Network:
    """Immutable directed network with arc indices as canonical arc ids.

    ``reverse_pair`` maps an arc index to the index of the anti-parallel arc
    representing the same physical road in the opposite direction; it is a
    partial involution.  ``dummy_nodes`` are subdivision artifacts from
    ``hopify`` and never carry demand.
    """

    def __init__(
        self,
        nodes: Iterable[int],
        arcs: Sequence[Arc],
        shelter: int | None = None,
        reverse_pair: Mapping[int, int] | None = None,
        dummy_nodes: Iterable[int] = (),
    ):
        self.nodes = frozenset(nodes)
        self.arcs = tuple(arcs)
        self.shelter = shelter
        self.reverse_pair = dict(reverse_pair or {})
        self.dummy_nodes = frozenset(dummy_nodes)
        self._validate()
        out: dict[int, list[int]] = {n: [] for n in self.nodes}
        inn: dict[int, list[int]] = {n: [] for n in self.nodes}
        for idx, arc in enumerate(self.arcs):
            out[arc.tail].append(idx)
            inn[arc.head].append(idx)
        self.out_arcs = {n: tuple(v) for n, v in out.items()}
        self.in_arcs = {n: tuple(v) for n, v in inn.items()}

    def _validate(self):
        if self.shelter is not None and self.shelter not in self.nodes:
            raise NetworkError(f"shelter {self.shelter} is not a network node")
        for arc in self.arcs:
            if arc.tail not in self.nodes or arc.head not in self.nodes:
                raise NetworkError(f"arc {arc.tail}->{arc.head} has endpoints outside the node set")
        for a, b in self.reverse_pair.items():
            if self.reverse_pair.get(b) != a:
                raise NetworkError("reverse_pair is not an involution")
        if self.shelter in self.dummy_nodes:
            raise NetworkError("the shelter cannot be a dummy node")

    @property
    def super_shelter_feeders(self) -> frozenset[int]:
        """Physical shelter nodes attached to an artificial terminal."""
        if self.shelter is None:
            return frozenset()
        return frozenset(
            a.tail for a in self.arcs if a.uncapacitated and a.head == self.shelter
        )

    def nodes_reaching_shelter(self) -> frozenset[int]:
        """All nodes with at least one directed path to the shelter."""
        if self.shelter is None:
            raise NetworkError("network has no shelter bound")
        seen = {self.shelter}
        stack = [self.shelter]
        while stack:
            node = stack.pop()
            for idx in self.in_arcs[node]:
                tail = self.arcs[idx].tail
                if tail not in seen:
                    seen.add(tail)
                    stack.append(tail)
        return frozenset(seen)


# TNTP link-table fields, in file order.
_TNTP_FIELDS = (
    "init_node", "term_node", "capacity", "length", "free_flow_time",
    "b", "power", "speed", "toll", "link_type",
)


def parse_tntp(text: str) -> Network:
    """Parse a TNTP metadata+link-table document into a Network.

    The link table must carry, per row: init node, term node, capacity,
    length, free flow time, B, power, speed, toll, type, with rows terminated
    by ``;``.  The B and power fields become the per-arc BPR alpha and beta.
    The shelter is left unbound; a scenario binds it later.
    """
    n_nodes = None
    n_links = None
    lines = text.splitlines()
    body_start = 0
    for i, raw in enumerate(lines):
        line = raw.split("~")[0].strip()
        if not line:
            continue
        if line.startswith("<"):
            if ">" not in line:
                raise TntpParseError(f"malformed metadata tag {raw!r}", i + 1)
            tag, _, value = line.partition(">")
            tag = tag.strip("< ").upper()
            value = value.strip()
            if tag == "END OF METADATA":
                body_start = i + 1
                break
            if tag in ("NUMBER OF NODES", "NUMBER OF LINKS"):
                try:
                    parsed = int(value)
                except ValueError as exc:
                    raise TntpParseError(f"non-numeric value for <{tag}>: {value!r}", i + 1) from exc
                if tag == "NUMBER OF NODES":
                    n_nodes = parsed
                else:
                    n_links = parsed
            # other tags (<FIRST THRU NODE>, <TOTAL OD FLOW>, ...) are ignored
        else:
            # files without an explicit end-of-metadata marker: first data line
            body_start = i
            break
    if n_nodes is None or n_links is None:
        raise TntpParseError("missing <NUMBER OF NODES> or <NUMBER OF LINKS> header")

    arcs: list[Arc] = []
    for i in range(body_start, len(lines)):
        line = lines[i].split("~")[0].strip()
        if not line:
            continue
        line = line.rstrip(";").strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < len(_TNTP_FIELDS):
            raise TntpParseError(
                f"link row has {len(parts)} fields, expected {len(_TNTP_FIELDS)}", i + 1
            )
        try:
            values = [float(p) for p in parts[: len(_TNTP_FIELDS)]]
        except ValueError as exc:
            raise TntpParseError(f"non-numeric field in link row: {line!r}", i + 1) from exc
        tail, head = int(values[0]), int(values[1])
        for endpoint in (tail, head):
            if not 1 <= endpoint <= n_nodes:
                raise TntpParseError(
                    f"link {tail}->{head} touches node {endpoint} outside the declared "
                    f"1..{n_nodes} range", i + 1
                )
        arcs.append(
            Arc(
                tail=tail,
                head=head,
                capacity=values[2],
                length=values[3],
                free_flow_time=values[4],
                bpr_alpha=values[5],
                bpr_beta=values[6],
            )
        )
    if len(arcs) != n_links:
        raise TntpParseError(
            f"header declares {n_links} links but the body lists {len(arcs)}"
        )
    index = {(a.tail, a.head): i for i, a in enumerate(arcs)}
    reverse_pair = {}
    for i, a in enumerate(arcs):
        j = index.get((a.head, a.tail))
        if j is not None:
            reverse_pair[i] = j
    return Network(nodes=range(1, n_nodes + 1), arcs=arcs, reverse_pair=reverse_pair)


def dump_tntp(network: Network) -> str:
    """Serialize a pre-transform network back to TNTP text (round-trip safe)."""
    if network.shelter is not None or network.dummy_nodes:
        raise NetworkError("only untransformed networks serialize to TNTP")
    lines = [
        f"<NUMBER OF NODES> {max(network.nodes) if network.nodes else 0}",
        f"<NUMBER OF LINKS> {len(network.arcs)}",
        "<FIRST THRU NODE> 1",
        "<END OF METADATA>",
        "~ init term capacity length fft b power speed toll type ;",
    ]
    for a in network.arcs:
        lines.append(
            f"{a.tail} {a.head} {a.capacity!r} {a.length!r} {a.free_flow_time!r} "
            f"{a.bpr_alpha!r} {a.bpr_beta!r} 0 0 1 ;"
        )
    return "\n".join(lines) + "\n"


def add_super_shelter(network: Network, shelters: Sequence[int]) -> Network:
    """Attach a fresh terminal node fed by every listed shelter.

    Each shelter gets one zero-time uncapacitated arc into the new node,
    which becomes the network shelter.  Applied even for a single shelter so
    downstream code never special-cases the root.
    """
    if not shelters:
        raise NetworkError("shelter list is empty")
    if len(set(shelters)) != len(shelters):
        raise NetworkError(f"duplicate shelter in {list(shelters)}")
    for s in shelters:
        if s not in network.nodes:
            raise NetworkError(f"unknown shelter node {s}")
    if network.shelter is not None:
        raise NetworkError("network already has a shelter bound")
    super_node = max(network.nodes) + 1
    arcs = list(network.arcs)
    for s in shelters:
        arcs.append(
            Arc(tail=s, head=super_node, free_flow_time=0.0, capacity=math.inf,
                length=0.0, bpr_alpha=0.0, bpr_beta=1.0, uncapacitated=True)
        )
    return Network(
        nodes=set(network.nodes) | {super_node},
        arcs=arcs,
        shelter=super_node,
        reverse_pair=network.reverse_pair,
        dummy_nodes=network.dummy_nodes,
    )


def hopify(network: Network, spacing: float) -> Network:
    """Subdivide arcs so one hop spans at most ``spacing`` distance units.

    An arc of length L becomes ceil(L / spacing) unit-hop arcs chained
    through fresh zero-demand dummy nodes.  Each sub-arc inherits capacity
    and BPR shape and takes time/length 1/h of the original, so total
    free-flow time is preserved exactly.  Ceiling rounding overestimates hop
    distance by at most one hop, keeping plans conservative.

    Anti-parallel road pairs stay mutually exclusive through their entry
    sub-arcs: the first segment of each direction is paired, which is enough
    because interior dummy nodes have a single outgoing arc.
    """
    if spacing <= 0:
        raise NetworkError(f"spacing must be positive, got {spacing}")
    for a in network.arcs:
        if a.length is None and not a.uncapacitated:
            raise NetworkError(f"arc {a.tail}->{a.head} has no length; cannot hopify")

    next_node = max(network.nodes) + 1
    nodes = set(network.nodes)
    dummy_nodes = set(network.dummy_nodes)
    new_arcs: list[Arc] = []
    first_segment: dict[int, int] = {}  # original arc idx -> new idx of entry sub-arc

    for idx, a in enumerate(network.arcs):
        if a.uncapacitated:
            first_segment[idx] = len(new_arcs)
            new_arcs.append(a)
            continue
        hops = max(1, math.ceil(a.length / spacing))
        chain = [a.tail]
        for _ in range(hops - 1):
            nodes.add(next_node)
            dummy_nodes.add(next_node)
            chain.append(next_node)
            next_node += 1
        chain.append(a.head)
        first_segment[idx] = len(new_arcs)
        for seg in range(hops):
            new_arcs.append(
                Arc(
                    tail=chain[seg],
                    head=chain[seg + 1],
                    free_flow_time=a.free_flow_time / hops,
                    capacity=a.capacity,
                    length=(a.length / hops) if a.length is not None else None,
                    bpr_alpha=a.bpr_alpha,
                    bpr_beta=a.bpr_beta,
                )
            )
    reverse_pair = {
        first_segment[i]: first_segment[j] for i, j in network.reverse_pair.items()
    }
    return Network(
        nodes=nodes,
        arcs=new_arcs,
        shelter=network.shelter,
        reverse_pair=reverse_pair,
        dummy_nodes=dummy_nodes,
    )
