"""Independent ray-traced verification of an EnvironmentConfig.

Rays leave the transmitter along its antenna lobe and bounce off walls until
they are received, absorbed, run out of bounces or leave the floorplan. Coated
tiles act according to their configured function; uncoated surfaces absorb.
Powers add incoherently.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from enum import Enum

from shapely.geometry import LineString, Point

from .configurators import DEFAULT_ROUTE_MIN_COSINE, EnvironmentConfig, TileFunction
from .exceptions import PweDomainError
from .geometry import User, Vec2, nearest_wall_hit, reflect
from .scenario import Scenario

logger = logging.getLogger(__name__)

DEFAULT_MAX_LIVE_RAYS = 64
LEDGER_TOLERANCE = 1e-9
NO_SIGNAL = "no signal"


class TerminationReason(str, Enum):
    RECEIVED = "received"
    ABSORBED = "absorbed"
    BOUNCE_LIMIT = "bounce_limit"
    ESCAPED = "escaped"


@dataclass(frozen=True)
class Ray:
    origin: Vec2
    direction: Vec2
    power_w: float
    collimated: bool = False
    path_len_m: float = 0.0
    bounces: int = 0
    ray_id: str = "0"


@dataclass(frozen=True)
class TraceSegment:
    ray_id: str
    start: Vec2
    end: Vec2
    power_w: float


@dataclass
class TraceResult:
    """Traced segments plus the energy ledger of one trace.

    ``intercepted_w`` is the power arriving at the receiver aperture before the
    spreading loss, ``received_w`` the power after it. The ledger closes as
    emitted = intercepted + absorbed + bounce loss + truncated + escaped.
    """

    segments: list[TraceSegment] = field(default_factory=list)
    emitted_w: float = 0.0
    intercepted_w: float = 0.0
    received_w: float = 0.0
    absorbed_w: float = 0.0
    bounce_loss_w: float = 0.0
    truncated_w: float = 0.0
    escaped_w: float = 0.0
    terminations: Counter = field(default_factory=Counter)

    @property
    def received_dbm(self) -> float | None:
        return watts_to_dbm(self.received_w)

    @property
    def absorbed_fraction(self) -> float:
        return self.absorbed_w / self.emitted_w if self.emitted_w > 0 else 0.0

    @property
    def intercepted_fraction(self) -> float:
        return self.intercepted_w / self.emitted_w if self.emitted_w > 0 else 0.0

    @property
    def ledger_residual(self) -> float:
        accounted = (
            self.intercepted_w
            + self.absorbed_w
            + self.bounce_loss_w
            + self.truncated_w
            + self.escaped_w
        )
        return self.emitted_w - accounted

    def ledger_closes(self, tolerance: float = LEDGER_TOLERANCE) -> bool:
        return abs(self.ledger_residual) <= tolerance * max(self.emitted_w, 1e-300)

    def merge(self, other: "TraceResult") -> None:
        self.segments.extend(other.segments)
        self.emitted_w += other.emitted_w
        self.intercepted_w += other.intercepted_w
        self.received_w += other.received_w
        self.absorbed_w += other.absorbed_w
        self.bounce_loss_w += other.bounce_loss_w
        self.truncated_w += other.truncated_w
        self.escaped_w += other.escaped_w
        self.terminations.update(other.terminations)


def watts_to_dbm(power_w: float) -> float | None:
    """10 log10(P / 1 mW); None stands for no signal."""
    if power_w <= 0.0:
        return None
    return 10.0 * math.log10(power_w * 1000.0)


def format_dbm(power_dbm: float | None) -> str:
    return NO_SIGNAL if power_dbm is None else f"{power_dbm:.2f}"


def received_power_dbm(result: TraceResult) -> float | None:
    return watts_to_dbm(result.received_w)


def emit_rays(tx: User, n: int, p_total: float) -> list[Ray]:
    """``n`` rays spread evenly over the lobe, weighted by a sinusoidal pattern.

    Offsets from boresight sit at the centers of ``n`` equal slices of the
    lobe; ray power follows cos(pi * offset / lobe width), normalized so the
    rays carry ``p_total`` together.
    """
    if n < 1:
        raise PweDomainError(f"ray count must be at least 1, got {n}")
    alpha = tx.lobe_width_deg
    offsets = [-alpha / 2.0 + (i + 0.5) * alpha / n for i in range(n)]
    gains = [math.cos(math.pi * psi / alpha) for psi in offsets]
    total_gain = sum(gains)
    return [
        Ray(
            origin=tx.position,
            direction=Vec2.from_angle(math.radians(tx.boresight_deg + psi)),
            power_w=p_total * gain / total_gain,
            ray_id=str(i),
        )
        for i, (psi, gain) in enumerate(zip(offsets, gains))
    ]


def _spreading_factor(ray: Ray, path_len_m: float) -> float:
    if ray.collimated:
        return 1.0
    return (1.0 / max(path_len_m, 1.0)) ** 2


class _SourceTrace:
    """Traces one emitted ray and all of its descendants."""

    def __init__(
        self,
        scenario: Scenario,
        config: EnvironmentConfig,
        max_live_rays: int,
        min_route_cosine: float,
    ):
        self.scenario = scenario
        self.config = config
        self.max_live_rays = max_live_rays
        self.min_route_cosine = min_route_cosine
        self.receiver = scenario.receiver
        self.rx_point = Point(self.receiver.position.as_tuple())
        self.rx_radius = scenario.physics.rx_aperture_width_m / 2.0
        self.loss = scenario.physics.bounce_loss_fraction
        self.max_bounces = scenario.physics.max_bounces

    def run(self, ray: Ray) -> TraceResult:
        result = TraceResult(emitted_w=ray.power_w)
        live = deque([ray])
        while live:
            current = live.popleft()
            children = self._advance(current, result)
            live.extend(children)
            if len(live) > self.max_live_rays:
                self._prune(live, result)
        return result

    def _prune(self, live: deque, result: TraceResult) -> None:
        ordered = sorted(live, key=lambda r: (r.power_w, r.ray_id))
        excess = ordered[: len(live) - self.max_live_rays]
        dropped = {r.ray_id for r in excess}
        power = sum(r.power_w for r in excess)
        result.truncated_w += power
        result.terminations[TerminationReason.BOUNCE_LIMIT] += len(excess)
        kept = [r for r in live if r.ray_id not in dropped]
        live.clear()
        live.extend(kept)
        logger.warning(
            "Pruned %d ray(s) carrying %.3e W above the %d live-ray cap",
            len(excess),
            power,
            self.max_live_rays,
        )

    def _intercept(self, ray: Ray, end: Vec2) -> float | None:
        """Distance along the segment at which the receiver picks the ray up."""
        segment = LineString([ray.origin.as_tuple(), end.as_tuple()])
        if segment.distance(self.rx_point) > self.rx_radius:
            return None
        if self.scenario.physics.rx_lobe_gate and not self.receiver.in_lobe(
            -ray.direction
        ):
            return None
        return segment.project(self.rx_point)

    def _advance(self, ray: Ray, result: TraceResult) -> list[Ray]:
        if ray.power_w <= 0.0:
            return []
        hit = nearest_wall_hit(ray.origin, ray.direction, self.scenario.walls)
        if hit is None:
            # Follow escaping rays far enough to pass the receiver
            end = ray.origin + ray.direction * 1e6
        else:
            end = hit.point

        along = self._intercept(ray, end)
        if along is not None:
            end = ray.origin + ray.direction * along
        result.segments.append(TraceSegment(ray.ray_id, ray.origin, end, ray.power_w))

        if along is not None:
            result.intercepted_w += ray.power_w
            result.received_w += ray.power_w * _spreading_factor(
                ray, ray.path_len_m + along
            )
            result.terminations[TerminationReason.RECEIVED] += 1
            return []

        if hit is None:
            result.escaped_w += ray.power_w
            result.terminations[TerminationReason.ESCAPED] += 1
            return []

        tile = hit.wall.tile_at(hit.point)
        tile_config = None if tile is None else self.config.get(tile.key)
        if tile_config is None or tile_config.function == TileFunction.ABSORB:
            return self._absorb(ray.power_w, result)
        if ray.bounces >= self.max_bounces:
            result.truncated_w += ray.power_w
            result.terminations[TerminationReason.BOUNCE_LIMIT] += 1
            return []

        route = None
        if tile_config.function.routed:
            route = tile_config.route_for(ray.direction, self.min_route_cosine)
            if route is None:
                return self._absorb(ray.power_w, result)

        kept = ray.power_w * (1.0 - self.loss)
        result.bounce_loss_w += ray.power_w - kept
        path_len = ray.path_len_m + hit.t
        if route is None:
            return [
                replace(
                    ray,
                    origin=hit.point,
                    direction=reflect(ray.direction, tile.base_normal),
                    power_w=kept,
                    path_len_m=path_len,
                    bounces=ray.bounces + 1,
                    ray_id=f"{ray.ray_id}.0",
                )
            ]

        children = []
        for j, (direction, fraction) in enumerate(route.outgoing):
            children.append(
                Ray(
                    origin=tile.center,
                    direction=direction,
                    power_w=kept * fraction,
                    collimated=True,
                    path_len_m=path_len,
                    bounces=ray.bounces + 1,
                    ray_id=f"{ray.ray_id}.{j}",
                )
            )
        deficit = kept - sum(child.power_w for child in children)
        if deficit > 0.0:
            result.absorbed_w += deficit
        elif deficit < 0.0:
            # Fractions summing a hair above 1
            result.bounce_loss_w += deficit
        return children

    def _absorb(self, power: float, result: TraceResult) -> list[Ray]:
        result.absorbed_w += power
        result.terminations[TerminationReason.ABSORBED] += 1
        return []


def trace(
    scenario: Scenario,
    config: EnvironmentConfig,
    rays: list[Ray],
    max_live_rays: int = DEFAULT_MAX_LIVE_RAYS,
    min_route_cosine: float = DEFAULT_ROUTE_MIN_COSINE,
) -> TraceResult:
    """Propagate ``rays`` through the floorplan configured by ``config``."""
    tracer = _SourceTrace(scenario, config, max_live_rays, min_route_cosine)
    result = TraceResult()
    for ray in rays:
        result.merge(tracer.run(ray))
    logger.info(
        "Traced %d ray(s) under %s: received %s dBm, %.1f%% intercepted, "
        "%.1f%% absorbed",
        len(rays),
        config.scheme_name,
        format_dbm(result.received_dbm),
        100.0 * result.intercepted_fraction,
        100.0 * result.absorbed_fraction,
    )
    return result
