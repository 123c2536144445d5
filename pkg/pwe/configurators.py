"""Per-tile EM functions: the trained-net interpretation and the two baselines.

An ``EnvironmentConfig`` holds one ``TileConfig`` per coated tile. Routed
functions store explicit (incoming direction -> outgoing directions) pairs, so
the ray tracer never needs the learner state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .exceptions import ContractViolation, RoutingFailure
from .geometry import Vec2, nearest_wall_hit, reflect
from .learner import NetState, TrainingResult
from .netbuild import LayeredNet, TileNode
from .scenario import InactiveFunction, Scenario

if TYPE_CHECKING:
    from .raytracer import Ray

logger = logging.getLogger(__name__)

DEFAULT_ACTIVITY_THRESHOLD = 0.01
DEFAULT_ROUTE_MIN_COSINE = 0.9

TileKey = tuple[int, int]


class TileFunction(str, Enum):
    STEER = "steer"
    COLLIMATE_STEER = "collimate_steer"
    ABSORB = "absorb"
    SPECULAR = "specular"

    @property
    def routed(self) -> bool:
        return self in (TileFunction.STEER, TileFunction.COLLIMATE_STEER)


@dataclass(frozen=True)
class Route:
    incoming: Vec2
    outgoing: tuple[tuple[Vec2, float], ...]

    @property
    def total_fraction(self) -> float:
        return float(sum(fraction for _, fraction in self.outgoing))


@dataclass(frozen=True)
class TileConfig:
    function: TileFunction
    routes: tuple[Route, ...] = ()
    active: bool = False

    def route_for(
        self, direction: Vec2, min_cosine: float = DEFAULT_ROUTE_MIN_COSINE
    ) -> Route | None:
        """The stored route whose incoming direction is nearest ``direction``.

        Returns None when no stored direction lies within ``min_cosine``.
        """
        best: Route | None = None
        best_cosine = min_cosine
        for route in self.routes:
            cosine = route.incoming.dot(direction)
            if cosine >= best_cosine and (best is None or cosine > best_cosine):
                best, best_cosine = route, cosine
        return best


@dataclass
class EnvironmentConfig:
    scheme_name: str
    tiles: dict[TileKey, TileConfig] = field(default_factory=dict)

    def get(self, key: TileKey) -> TileConfig:
        try:
            return self.tiles[key]
        except KeyError:
            raise ContractViolation(
                f"{self.scheme_name} config has no entry for tile {key}"
            ) from None

    def active_count(self, wall_id: int) -> int:
        return sum(
            1
            for (tile_wall, _), tile in self.tiles.items()
            if tile_wall == wall_id and tile.active
        )

    def active_counts(self, scenario: Scenario) -> list[int]:
        """Active tiles per layer, in layer order."""
        return [self.active_count(wall_id) for wall_id in scenario.layer_order]

    def missing_tiles(self, scenario: Scenario) -> list[TileKey]:
        return [
            tile.key for tile in scenario.coated_tiles if tile.key not in self.tiles
        ]


def _inactive(function: InactiveFunction) -> TileConfig:
    return TileConfig(TileFunction(InactiveFunction(function).value), active=False)


def _check_state(net: LayeredNet, result: TrainingResult, state: NetState) -> None:
    if not state.evaluated:
        raise ContractViolation("state holds no feed-forward powers")
    if len(state.omegas) != net.node_count or len(state.weights) != net.node_count:
        raise ContractViolation(
            f"state covers {len(state.omegas)} nodes, net has {net.node_count}"
        )
    if not np.array_equal(result.final_omegas, state.omegas):
        raise ContractViolation("state was not evaluated at the trained angles")
    for node in net.nodes:
        if state.weights[node.index].shape != (len(node.incoming), len(node.outgoing)):
            raise ContractViolation(f"state weights do not match node ({node.label})")


def _weight_routes(node: TileNode, state: NetState) -> tuple[Route, ...]:
    powers = state.node_in_power[node.index]
    weights = state.weights[node.index]
    routes = []
    for i, link in enumerate(node.incoming):
        if powers[i] <= 0.0:
            continue
        outgoing = tuple(
            (out_link.direction, float(weights[i, j]))
            for j, out_link in enumerate(node.outgoing)
            if weights[i, j] > 0.0
        )
        if outgoing:
            routes.append(Route(link.direction, outgoing))
    return tuple(routes)


def interpret_trained_net(
    net: LayeredNet,
    result: TrainingResult,
    state: NetState,
    activity_threshold: float = DEFAULT_ACTIVITY_THRESHOLD,
    inactive_function: InactiveFunction = InactiveFunction.ABSORB,
    scenario: Scenario | None = None,
) -> EnvironmentConfig:
    """Deploy a collimating steer function on every tile the trained net powers.

    A node is active when its impinging power reaches ``activity_threshold``
    of the total input; its routes are the trained link weights for each
    powered incoming direction. Other nodes, and with ``scenario`` given every
    coated tile outside the net, get ``inactive_function``.
    """
    _check_state(net, result, state)
    minimum = activity_threshold * state.total_input
    config = EnvironmentConfig("nnconfig")
    if scenario is not None:
        for tile in scenario.coated_tiles:
            config.tiles[tile.key] = _inactive(inactive_function)
    for node in net.nodes:
        impinging = float(np.sum(state.node_in_power[node.index]))
        if impinging >= minimum:
            config.tiles[node.tile.key] = TileConfig(
                TileFunction.COLLIMATE_STEER, _weight_routes(node, state), active=True
            )
        else:
            config.tiles[node.tile.key] = _inactive(inactive_function)
    logger.info(
        "Interpreted trained net: %d active tile(s) per layer %s",
        sum(tile.active for tile in config.tiles.values()),
        [sum(config.tiles[n.tile.key].active for n in layer) for layer in net.layers],
    )
    return config


def regular_config(scenario: Scenario) -> EnvironmentConfig:
    return EnvironmentConfig(
        "regular",
        {tile.key: TileConfig(TileFunction.SPECULAR) for tile in scenario.coated_tiles},
    )


@dataclass
class KpRouting:
    config: EnvironmentConfig
    paths: dict[int, list[TileKey]]
    stranded: list[int]
    reasons: dict[int, str]
    routed_fraction: float

    @property
    def complete(self) -> bool:
        return not self.stranded


def _route_ray(
    net: LayeredNet, scenario: Scenario, ray: "Ray", used: set[int]
) -> tuple[list[TileNode], list[Vec2], list[Vec2]] | str:
    """Tile path for one ray, or the reason it cannot be routed."""
    hit = nearest_wall_hit(ray.origin, ray.direction, scenario.walls)
    if hit is None:
        return "escapes the floorplan"
    tile = hit.wall.tile_at(hit.point)
    node = None if tile is None else net.node_for_tile(tile.key)
    if node is None or node.k != 0:
        return "does not hit a first-layer tile"
    if node.index in used:
        return f"first-layer tile ({node.label}) already in use"

    path, incoming, outgoing = [node], [ray.direction], []
    direction = ray.direction
    for k in range(1, net.kappa):
        desired = reflect(direction, node.tile.base_normal)
        free = [
            link
            for link in node.outgoing
            if link.target is not None and link.target not in used
        ]
        if not free:
            return f"no free tile left on layer {k + 1}"
        link = min(
            free,
            key=lambda link: (-desired.dot(link.direction), net.nodes[link.target].l),
        )
        outgoing.append(link.direction)
        node = net.nodes[link.target]
        direction = link.direction
        path.append(node)
        incoming.append(direction)
    to_rx = [link for link in node.outgoing if link.target is None]
    if not to_rx:
        return f"last-layer tile ({node.label}) has no link to the receiver"
    outgoing.append(to_rx[0].direction)
    return path, incoming, outgoing


def kp_route(scenario: Scenario, net: LayeredNet, rays: Iterable["Ray"]) -> KpRouting:
    """Simplified greedy ray router with one function per tile.

    Rays are taken in emission order. Each one claims the first-layer tile it
    hits, then the free next-layer tile nearest in angle to its specular
    reflection, down to the last layer which steers to the receiver. A path is
    only committed once it is complete.
    """
    rays = list(rays)
    used: set[int] = set()
    config = EnvironmentConfig("kpconfig")
    paths: dict[int, list[TileKey]] = {}
    reasons: dict[int, str] = {}
    routed_power = 0.0
    for ray_id, ray in enumerate(rays):
        outcome = _route_ray(net, scenario, ray, used)
        if isinstance(outcome, str):
            reasons[ray_id] = outcome
            continue
        path, incoming, outgoing = outcome
        for node, d, o in zip(path, incoming, outgoing):
            used.add(node.index)
            config.tiles[node.tile.key] = TileConfig(
                TileFunction.STEER, (Route(d, ((o, 1.0),)),), active=True
            )
        paths[ray_id] = [node.tile.key for node in path]
        routed_power += ray.power_w

    for tile in scenario.coated_tiles:
        config.tiles.setdefault(tile.key, TileConfig(TileFunction.ABSORB))
    total_power = sum(ray.power_w for ray in rays)
    stranded = sorted(reasons)
    if stranded:
        logger.warning("Ray router stranded %d of %d ray(s)", len(stranded), len(rays))
    return KpRouting(
        config=config,
        paths=paths,
        stranded=stranded,
        reasons=reasons,
        routed_fraction=routed_power / total_power if total_power > 0 else 0.0,
    )


def kp_config(
    scenario: Scenario, net: LayeredNet, rays: Iterable["Ray"] | None = None
) -> EnvironmentConfig:
    if rays is None:
        from .raytracer import emit_rays

        rays = emit_rays(
            scenario.transmitter, scenario.physics.ray_count, scenario.tx_power_w
        )
    routing = kp_route(scenario, net, rays)
    if not routing.complete:
        raise RoutingFailure(routing.stranded, routing.reasons)
    for ray_id, keys in routing.paths.items():
        logger.debug(
            "Ray %d routed over %s", ray_id, " -> ".join(str(key) for key in keys)
        )
    return routing.config
