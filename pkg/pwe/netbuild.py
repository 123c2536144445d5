"""The layered network: walls as layers, tiles as nodes, LOS transfers as links."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import ConstructionError
from .geometry import Tile, Vec2, los_visible, unit_dir
from .scenario import Scenario

logger = logging.getLogger(__name__)


@dataclass
class Link:
    """A directed power transfer.

    ``source``/``target`` are flat node indices; None stands for the Tx (source)
    or the Rx (target). ``direction`` points from source to target: it is the
    outgoing direction o at the source and the impinging direction d at the
    target. The slots are the link's positions in the endpoint nodes' lists.
    """

    source: int | None
    target: int | None
    direction: Vec2
    distance: float
    source_slot: int | None = None
    target_slot: int | None = None


@dataclass
class TileNode:
    k: int
    l: int
    index: int
    tile: Tile
    omega: float = 0.0
    incoming: list[Link] = field(default_factory=list)
    outgoing: list[Link] = field(default_factory=list)

    @property
    def label(self) -> str:
        return f"{self.k + 1},{self.l + 1}"

    @cached_property
    def out_dirs(self) -> np.ndarray:
        return np.array([link.direction.as_tuple() for link in self.outgoing])


@dataclass(frozen=True)
class LayerArrays:
    """Dense link arrays of one layer.

    Rows are the layer's nodes in ``l`` order. Incoming columns are the
    previous layer's nodes (one Tx column on the first layer), outgoing columns
    the next layer's nodes (one Rx column on the last layer). Missing links are
    masked out and carry zero directions. Column order matches the slot order
    of every node's ``incoming`` and ``outgoing`` lists.
    """

    indices: np.ndarray
    base_normals: np.ndarray
    in_dirs: np.ndarray
    in_mask: np.ndarray
    out_dirs: np.ndarray
    out_mask: np.ndarray

    def in_view(self, values: np.ndarray, row: int) -> np.ndarray:
        return values[row][self.in_mask[row]]

    def out_view(self, values: np.ndarray, row: int) -> np.ndarray:
        return values[row][self.out_mask[row]]

    def link_view(self, values: np.ndarray, row: int) -> np.ndarray:
        return values[row][np.ix_(self.in_mask[row], self.out_mask[row])]


@dataclass
class LayeredNet:
    layers: list[list[TileNode]]
    input_links: list[Link]
    inter_links: list[list[Link]]
    output_links: list[Link]

    @property
    def kappa(self) -> int:
        return len(self.layers)

    @cached_property
    def nodes(self) -> list[TileNode]:
        return [node for layer in self.layers for node in layer]

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def node(self, k: int, l: int) -> TileNode:
        return self.layers[k][l]

    def node_for_tile(self, key: tuple[int, int]) -> TileNode | None:
        for node in self.nodes:
            if node.tile.key == key:
                return node
        return None

    @property
    def layer_sizes(self) -> list[int]:
        return [len(layer) for layer in self.layers]

    def omegas(self) -> np.ndarray:
        return np.array([node.omega for node in self.nodes], dtype=float)

    def set_omegas(self, omegas: np.ndarray) -> None:
        for node, omega in zip(self.nodes, omegas):
            node.omega = float(omega)

    @cached_property
    def output_positions(self) -> dict[tuple[int, int], int]:
        """Position in ``output_links`` keyed by (source node, source slot)."""
        return {
            (link.source, link.source_slot): position
            for position, link in enumerate(self.output_links)
        }

    @cached_property
    def layer_arrays(self) -> list[LayerArrays]:
        arrays = []
        for k, layer in enumerate(self.layers):
            sources = 1 if k == 0 else len(self.layers[k - 1])
            targets = 1 if k == self.kappa - 1 else len(self.layers[k + 1])
            in_dirs = np.zeros((len(layer), sources, 2))
            in_mask = np.zeros((len(layer), sources), dtype=bool)
            out_dirs = np.zeros((len(layer), targets, 2))
            out_mask = np.zeros((len(layer), targets), dtype=bool)
            for node in layer:
                for link in node.incoming:
                    column = 0 if link.source is None else self.nodes[link.source].l
                    in_dirs[node.l, column] = link.direction.as_tuple()
                    in_mask[node.l, column] = True
                for link in node.outgoing:
                    column = 0 if link.target is None else self.nodes[link.target].l
                    out_dirs[node.l, column] = link.direction.as_tuple()
                    out_mask[node.l, column] = True
            arrays.append(
                LayerArrays(
                    indices=np.array([node.index for node in layer], dtype=int),
                    base_normals=np.array(
                        [node.tile.base_normal.as_tuple() for node in layer]
                    ),
                    in_dirs=in_dirs,
                    in_mask=in_mask,
                    out_dirs=out_dirs,
                    out_mask=out_mask,
                )
            )
        return arrays

    @cached_property
    def input_rows(self) -> np.ndarray:
        """First-layer row of each input link, in ``input_links`` order."""
        return np.array(
            [self.nodes[link.target].l for link in self.input_links], dtype=int
        )

    @cached_property
    def output_rows(self) -> np.ndarray:
        return np.array(
            [self.nodes[link.source].l for link in self.output_links], dtype=int
        )

    def all_links(self) -> list[Link]:
        links = list(self.input_links)
        for pair in self.inter_links:
            links.extend(pair)
        links.extend(self.output_links)
        return links


def _connect(nodes: list[TileNode], link: Link) -> Link:
    if link.source is not None:
        source = nodes[link.source]
        link.source_slot = len(source.outgoing)
        source.outgoing.append(link)
    if link.target is not None:
        target = nodes[link.target]
        link.target_slot = len(target.incoming)
        target.incoming.append(link)
    return link


def _candidate_links(scenario: Scenario, tiles: list[list[Tile]]):
    """LOS links between tile centers, Tx and Rx, before pruning."""
    walls = scenario.walls
    tx = scenario.transmitter.position
    rx = scenario.receiver.position
    inputs = [
        (None, (0, l))
        for l, tile in enumerate(tiles[0])
        if tile.faces(tx) and los_visible(tx, tile.center, walls)
    ]
    inter = []
    for k in range(len(tiles) - 1):
        pairs = []
        for l, source in enumerate(tiles[k]):
            for m, target in enumerate(tiles[k + 1]):
                if source.center == target.center:
                    continue
                if not (source.faces(target.center) and target.faces(source.center)):
                    continue
                if los_visible(source.center, target.center, walls):
                    pairs.append(((k, l), (k + 1, m)))
        inter.append(pairs)
    last = len(tiles) - 1
    outputs = [
        ((last, l), None)
        for l, tile in enumerate(tiles[last])
        if tile.faces(rx) and los_visible(tile.center, rx, walls)
    ]
    return inputs, inter, outputs


def _prune(
    inputs: list,
    inter: list[list],
    outputs: list,
) -> set[tuple[int, int]]:
    """Drop nodes lacking an incoming or outgoing link until nothing changes."""
    removed: set[tuple[int, int]] = set()
    while True:
        has_in: set = {target for _, target in inputs}
        has_out: set = {source for source, _ in outputs}
        for pairs in inter:
            for source, target in pairs:
                if source not in removed and target not in removed:
                    has_out.add(source)
                    has_in.add(target)
        alive = has_in & has_out
        candidates = (
            {t for _, t in inputs}
            | {s for s, _ in outputs}
            | {s for pairs in inter for s, _ in pairs}
            | {t for pairs in inter for _, t in pairs}
        )
        newly = {n for n in candidates if n not in alive and n not in removed}
        if not newly:
            return removed
        removed |= newly


def build_layered_net(scenario: Scenario) -> LayeredNet:
    tiles = [list(wall.tiles) for wall in scenario.layer_walls]
    inputs, inter, outputs = _candidate_links(scenario, tiles)
    removed = _prune(inputs, inter, outputs)
    all_positions = {(k, l) for k, layer in enumerate(tiles) for l in range(len(layer))}
    kept = sorted(
        all_positions - removed,
        key=lambda kl: (kl[0], kl[1]),
    )
    # Nodes that never got any link at all are dropped too.
    linked = (
        {t for _, t in inputs}
        | {s for s, _ in outputs}
        | {p for pairs in inter for pair in pairs for p in pair}
    )
    kept = [kl for kl in kept if kl in linked]

    layers: list[list[TileNode]] = [[] for _ in tiles]
    position_to_index: dict[tuple[int, int], int] = {}
    flat: list[TileNode] = []
    for k, l_tile in kept:
        node = TileNode(
            k=k, l=len(layers[k]), index=len(flat), tile=tiles[k][l_tile]
        )
        layers[k].append(node)
        flat.append(node)
        position_to_index[(k, l_tile)] = node.index
    for k, layer in enumerate(layers):
        if not layer:
            raise ConstructionError(f"disconnected layer {k + 1}")

    tx = scenario.transmitter.position
    rx = scenario.receiver.position
    input_links = []
    for _, target in inputs:
        if target in position_to_index:
            node = flat[position_to_index[target]]
            direction, distance = unit_dir(tx, node.tile.center)
            input_links.append(
                _connect(flat, Link(None, node.index, direction, distance))
            )
    inter_links = []
    for pairs in inter:
        pair_links = []
        for source, target in pairs:
            if source in position_to_index and target in position_to_index:
                u = flat[position_to_index[source]]
                v = flat[position_to_index[target]]
                direction, distance = unit_dir(u.tile.center, v.tile.center)
                pair_links.append(
                    _connect(flat, Link(u.index, v.index, direction, distance))
                )
        inter_links.append(pair_links)
    output_links = []
    for source, _ in outputs:
        if source in position_to_index:
            node = flat[position_to_index[source]]
            direction, distance = unit_dir(node.tile.center, rx)
            output_links.append(
                _connect(flat, Link(node.index, None, direction, distance))
            )

    net = LayeredNet(layers, input_links, inter_links, output_links)
    if removed:
        logger.info(
            "Pruned %d unreachable tile(s): %s",
            len(removed),
            ", ".join(f"({k + 1},{l + 1})" for k, l in sorted(removed)),
        )
    logger.debug(
        "Built layered net %s with %d links", net.layer_sizes, len(net.all_links())
    )
    return net


def validate_net(net: LayeredNet) -> list[str]:
    """Human-readable violations of the LayeredNet invariants (empty if valid)."""
    violations: list[str] = []
    nodes = [node for layer in net.layers for node in layer]
    layer_of = {node.index: node.k for node in nodes}
    by_index = {node.index: node for node in nodes}

    for k, layer in enumerate(net.layers):
        if not layer:
            violations.append(f"layer {k + 1} is empty")
    for node in nodes:
        if not node.incoming:
            violations.append(f"node ({node.label}) has no incoming link")
        if not node.outgoing:
            violations.append(f"node ({node.label}) has no outgoing link")

    def describe(link: Link) -> str:
        source = "Tx" if link.source is None else f"({by_index[link.source].label})"
        target = "Rx" if link.target is None else f"({by_index[link.target].label})"
        return f"{source}->{target}"

    for link in net.input_links:
        if link.source is not None or layer_of.get(link.target) != 0:
            violations.append(f"input link {describe(link)} must end in layer 1")
    for link in net.output_links:
        if link.target is not None or layer_of.get(link.source) != net.kappa - 1:
            violations.append(
                f"output link {describe(link)} must start in layer {net.kappa}"
            )
    for pairs in net.inter_links:
        for link in pairs:
            if link.source is None or link.target is None:
                violations.append(f"inter-layer link {describe(link)} lacks a node")
                continue
            if layer_of[link.target] - layer_of[link.source] != 1:
                violations.append(f"non-consecutive link {describe(link)}")
    for link in net.all_links():
        if not link.direction.is_unit():
            violations.append(f"link {describe(link)} direction is not a unit vector")
    for node in nodes:
        for link in node.outgoing:
            if link.target is not None and layer_of.get(link.target) != node.k + 1:
                violations.append(f"non-consecutive link {describe(link)}")
    return sorted(set(violations), key=violations.index)
