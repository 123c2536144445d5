"""2D vector math, the reflection law, line-of-sight tests and floorplan primitives.

Positions are in meters. Directions are unit vectors; the operations that need
unit input check it and raise ``ContractViolation`` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, NamedTuple

from shapely.geometry import LineString

from .exceptions import ContractViolation, PweDomainError

UNIT_TOLERANCE = 1e-9
COLLINEAR_EPS = 1e-12
# Minimum ray parameter for a hit; excludes the surface a ray starts on.
HIT_EPS = 1e-9


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    @classmethod
    def from_angle(cls, theta: float) -> "Vec2":
        return cls(math.cos(theta), math.sin(theta))

    @classmethod
    def from_sequence(cls, values: Iterable[float]) -> "Vec2":
        coords = [float(v) for v in values]
        return cls(coords[0], coords[1])

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, scale: float) -> "Vec2":
        return Vec2(self.x * scale, self.y * scale)

    __rmul__ = __mul__

    def __neg__(self) -> "Vec2":
        return Vec2(-self.x, -self.y)

    def dot(self, other: "Vec2") -> float:
        return self.x * other.x + self.y * other.y

    def cross(self, other: "Vec2") -> float:
        return self.x * other.y - self.y * other.x

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def perp(self) -> "Vec2":
        # Counterclockwise perpendicular
        return Vec2(-self.y, self.x)

    def angle(self) -> float:
        return math.atan2(self.y, self.x)

    def rotated(self, angle: float) -> "Vec2":
        c, s = math.cos(angle), math.sin(angle)
        return Vec2(c * self.x - s * self.y, s * self.x + c * self.y)

    def is_unit(self, tolerance: float = UNIT_TOLERANCE) -> bool:
        return abs(self.norm() - 1.0) < tolerance

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


def _require_unit(v: Vec2, name: str) -> None:
    if not v.is_unit():
        raise ContractViolation(f"{name} must be a unit vector, got |{name}|={v.norm()}")


def reflect(d: Vec2, n: Vec2) -> Vec2:
    """Mirror direction ``d`` about the surface normal ``n``: r = d - 2(d.n)n."""
    _require_unit(d, "d")
    _require_unit(n, "n")
    k = 2.0 * d.dot(n)
    return Vec2(d.x - k * n.x, d.y - k * n.y)


def normal_from_angle(base_normal: Vec2, omega: float) -> Vec2:
    """The virtual tile normal: ``base_normal`` rotated counterclockwise by omega."""
    if not -math.pi / 2 < omega < math.pi / 2:
        raise PweDomainError(
            f"omega={omega} rad outside (-pi/2, pi/2); the normal would not face the room"
        )
    if omega == 0.0:
        return base_normal
    return base_normal.rotated(omega)


def unit_dir(start: Vec2, end: Vec2) -> tuple[Vec2, float]:
    delta = end - start
    distance = delta.norm()
    if distance == 0.0:
        raise PweDomainError(f"Coincident points {start.as_tuple()}")
    return Vec2(delta.x / distance, delta.y / distance), distance


def _orientation(a: Vec2, b: Vec2, c: Vec2) -> int:
    value = (b - a).cross(c - a)
    if abs(value) <= COLLINEAR_EPS:
        return 0
    return 1 if value > 0 else -1


def _collinear_overlap(p: Vec2, q: Vec2, a: Vec2, b: Vec2) -> bool:
    """Collinear case: does the open segment (p, q) share a stretch with [a, b]?"""
    direction = q - p
    length_sq = direction.dot(direction)
    ta = (a - p).dot(direction) / length_sq
    tb = (b - p).dot(direction) / length_sq
    low, high = max(0.0, min(ta, tb)), min(1.0, max(ta, tb))
    return high - low > COLLINEAR_EPS


def segment_blocks(p: Vec2, q: Vec2, a: Vec2, b: Vec2) -> bool:
    """True if wall [a, b] blocks the open segment (p, q).

    An endpoint of (p, q) lying on the wall does not block.
    """
    o1 = _orientation(a, b, p)
    o2 = _orientation(a, b, q)
    if o1 == 0 and o2 == 0:
        return _collinear_overlap(p, q, a, b)
    if o1 * o2 > 0:
        return False
    o3 = _orientation(p, q, a)
    o4 = _orientation(p, q, b)
    if o3 * o4 > 0:
        return False
    if o1 == 0 or o2 == 0:
        return False
    return True


def los_visible(p: Vec2, q: Vec2, walls: Iterable["WallSegment"]) -> bool:
    if p == q:
        raise ContractViolation("los_visible needs two distinct points")
    return not any(segment_blocks(p, q, wall.a, wall.b) for wall in walls)


class WallHit(NamedTuple):
    t: float
    point: Vec2
    wall: "WallSegment"


def ray_segment_parameter(
    origin: Vec2, direction: Vec2, a: Vec2, b: Vec2
) -> float | None:
    """Distance along a ray (unit ``direction``) to segment [a, b], or None."""
    edge = b - a
    denom = direction.cross(edge)
    if abs(denom) <= COLLINEAR_EPS:
        return None
    offset = a - origin
    t = offset.cross(edge) / denom
    s = offset.cross(direction) / denom
    if t <= HIT_EPS or s < 0.0 or s > 1.0:
        return None
    return t


def nearest_wall_hit(
    origin: Vec2, direction: Vec2, walls: Iterable["WallSegment"]
) -> WallHit | None:
    best: WallHit | None = None
    for wall in walls:
        t = ray_segment_parameter(origin, direction, wall.a, wall.b)
        if t is None:
            continue
        if best is None or t < best.t:
            best = WallHit(t, origin + direction * t, wall)
    return best


class UserRole(str, Enum):
    TRANSMITTER = "transmitter"
    RECEIVER = "receiver"


@dataclass(frozen=True)
class Tile:
    center: Vec2
    width: float
    wall_id: int
    index_in_wall: int
    base_normal: Vec2

    @property
    def key(self) -> tuple[int, int]:
        return (self.wall_id, self.index_in_wall)

    def faces(self, point: Vec2) -> bool:
        """True if ``point`` lies strictly on the front side of the tile."""
        return (point - self.center).dot(self.base_normal) > COLLINEAR_EPS


@dataclass(frozen=True)
class WallSegment:
    id: int
    a: Vec2
    b: Vec2
    base_normal: Vec2
    coated: bool = True
    tile_count: int = 1

    def __post_init__(self):
        if self.a == self.b:
            raise PweDomainError(f"Wall {self.id}: endpoints coincide")
        if not self.base_normal.is_unit():
            raise PweDomainError(f"Wall {self.id}: base normal is not a unit vector")
        direction, _ = unit_dir(self.a, self.b)
        if abs(direction.dot(self.base_normal)) > UNIT_TOLERANCE:
            raise PweDomainError(f"Wall {self.id}: base normal not perpendicular")
        if self.tile_count < 1:
            raise PweDomainError(f"Wall {self.id}: tile_count must be positive")

    @classmethod
    def from_side(
        cls,
        wall_id: int,
        a: Vec2,
        b: Vec2,
        normal_side: str = "left",
        coated: bool = True,
        tile_count: int = 1,
    ) -> "WallSegment":
        """Build a wall whose normal points to the left or right of a->b."""
        direction, _ = unit_dir(a, b)
        normal = direction.perp() if normal_side == "left" else -direction.perp()
        return cls(wall_id, a, b, normal, coated, tile_count)

    @property
    def length(self) -> float:
        return (self.b - self.a).norm()

    @property
    def tile_width(self) -> float:
        return self.length / self.tile_count

    @cached_property
    def line(self) -> LineString:
        return LineString([self.a.as_tuple(), self.b.as_tuple()])

    @cached_property
    def tiles(self) -> tuple[Tile, ...]:
        if not self.coated:
            return ()
        direction, length = unit_dir(self.a, self.b)
        width = length / self.tile_count
        return tuple(
            Tile(
                center=self.a + direction * (width * (i + 0.5)),
                width=width,
                wall_id=self.id,
                index_in_wall=i,
                base_normal=self.base_normal,
            )
            for i in range(self.tile_count)
        )

    def tile_at(self, point: Vec2) -> Tile | None:
        """The tile covering a point on this wall (None for uncoated walls)."""
        if not self.coated:
            return None
        direction, length = unit_dir(self.a, self.b)
        s = (point - self.a).dot(direction) / length
        index = min(max(int(math.floor(s * self.tile_count)), 0), self.tile_count - 1)
        return self.tiles[index]


@dataclass(frozen=True)
class User:
    position: Vec2
    lobe_width_deg: float
    boresight_deg: float
    role: UserRole
    tx_power_dbm: float | None = None

    def __post_init__(self):
        if not 0.0 < self.lobe_width_deg <= 180.0:
            raise PweDomainError(
                f"Lobe width {self.lobe_width_deg} deg outside (0, 180]"
            )

    @property
    def boresight(self) -> Vec2:
        return Vec2.from_angle(math.radians(self.boresight_deg))

    def in_lobe(self, direction: Vec2) -> bool:
        """True if ``direction`` (pointing away from the user) is inside the lobe."""
        cosine = max(-1.0, min(1.0, direction.dot(self.boresight)))
        return math.degrees(math.acos(cosine)) <= self.lobe_width_deg / 2.0 + 1e-9
