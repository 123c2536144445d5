from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .exceptions import ConfigurationError
from .geometry import User, UserRole, WallSegment

FRACTION_TOLERANCE = 1e-9


class UpdateMode(str, Enum):
    BATCH = "batch"
    SEQUENTIAL_REVERSE = "sequential_reverse"


class InactiveFunction(str, Enum):
    ABSORB = "absorb"
    SPECULAR = "specular"


@dataclass(frozen=True)
class PhysicsParams:
    frequency_hz: float = 2.4e9
    tx_power_dbm: float = -30.0
    max_bounces: int = 5
    bounce_loss_fraction: float = 0.01
    rx_aperture_width_m: float = 1.0
    ray_count: int = 5
    rx_lobe_gate: bool = False

    def violations(self, kappa: int) -> list[str]:
        problems = []
        if self.frequency_hz <= 0:
            problems.append("physics.frequency_hz must be positive")
        if self.max_bounces < kappa:
            problems.append(
                f"physics.max_bounces={self.max_bounces} is below the layer count {kappa}"
            )
        if not 0.0 <= self.bounce_loss_fraction < 1.0:
            problems.append("physics.bounce_loss must lie in [0, 1)")
        if self.rx_aperture_width_m <= 0:
            problems.append("physics.rx_aperture_m must be positive")
        if self.ray_count < 1:
            problems.append("physics.ray_count must be at least 1")
        return problems


@dataclass(frozen=True)
class TrainParams:
    eta: float = 0.95
    rmse_target: float = 1e-3
    max_cycles: int = 5000
    init_omega_range_deg: tuple[float, float] = (-90.0, 90.0)
    seed: int = 42
    virtual_input_fractions: tuple[float, ...] = ()
    ideal_output_fractions: tuple[float, ...] = ()
    update_mode: UpdateMode = UpdateMode.BATCH
    activity_threshold: float = 0.01
    inactive_function: InactiveFunction = InactiveFunction.ABSORB

    @property
    def init_omega_range_rad(self) -> tuple[float, float]:
        low, high = self.init_omega_range_deg
        return (math.radians(low), math.radians(high))

    def violations(self) -> list[str]:
        problems = []
        if not 0.0 < self.eta <= 1.0:
            problems.append(f"train.eta={self.eta} must lie in (0, 1]")
        if self.rmse_target <= 0:
            problems.append("train.rmse_target must be positive")
        if self.max_cycles < 0:
            problems.append("train.max_cycles must not be negative")
        low, high = self.init_omega_range_deg
        if not -90.0 <= low <= high <= 90.0:
            problems.append("train.init_range_deg must satisfy -90 <= low <= high <= 90")
        if not 0.0 <= self.activity_threshold <= 1.0:
            problems.append("train.activity_threshold must lie in [0, 1]")
        for name, fractions in (
            ("virtual_input_fractions", self.virtual_input_fractions),
            ("ideal_output_fractions", self.ideal_output_fractions),
        ):
            if not fractions:
                problems.append(f"train.{name} must not be empty")
                continue
            if any(f < 0 for f in fractions):
                problems.append(f"train.{name} must not contain negative entries")
            if abs(sum(fractions) - 1.0) > FRACTION_TOLERANCE:
                problems.append(f"train.{name} must sum to 1 (got {sum(fractions):.6g})")
        return problems

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ConfigurationError("; ".join(problems), problems)


@dataclass(frozen=True)
class Scenario:
    walls: tuple[WallSegment, ...]
    layer_order: tuple[int, ...]
    users: tuple[User, ...]
    physics: PhysicsParams = field(default_factory=PhysicsParams)
    train: TrainParams = field(default_factory=TrainParams)
    name: str = "scenario"

    @property
    def kappa(self) -> int:
        return len(self.layer_order)

    def wall(self, wall_id: int) -> WallSegment:
        for wall in self.walls:
            if wall.id == wall_id:
                return wall
        raise KeyError(wall_id)

    @property
    def layer_walls(self) -> list[WallSegment]:
        return [self.wall(wall_id) for wall_id in self.layer_order]

    @property
    def coated_tiles(self) -> list:
        return [tile for wall in self.walls for tile in wall.tiles]

    def _users_with_role(self, role: UserRole) -> list[User]:
        return [user for user in self.users if user.role == role]

    @property
    def transmitter(self) -> User:
        return self._users_with_role(UserRole.TRANSMITTER)[0]

    @property
    def receiver(self) -> User:
        return self._users_with_role(UserRole.RECEIVER)[0]

    @property
    def tx_power_dbm(self) -> float:
        tx_power = self.transmitter.tx_power_dbm
        return self.physics.tx_power_dbm if tx_power is None else tx_power

    @property
    def tx_power_w(self) -> float:
        return 10 ** (self.tx_power_dbm / 10.0) / 1000.0

    def violations(self) -> list[str]:
        problems = []
        wall_ids = [wall.id for wall in self.walls]
        if len(set(wall_ids)) != len(wall_ids):
            problems.append("walls: duplicate wall ids")
        if not self.layer_order:
            problems.append("layer_order must name at least one wall")
        if len(set(self.layer_order)) != len(self.layer_order):
            problems.append("layer_order contains duplicates")
        for wall_id in self.layer_order:
            if wall_id not in wall_ids:
                problems.append(f"layer_order: unknown wall {wall_id}")
            elif not self.wall(wall_id).coated:
                problems.append(f"layer_order: wall {wall_id} is not coated")
        for role in UserRole:
            count = len(self._users_with_role(role))
            if count != 1:
                problems.append(f"users: expected exactly one {role.value}, got {count}")
        problems.extend(self.physics.violations(len(self.layer_order)))
        problems.extend(self.train.violations())
        if not problems:
            first = self.wall(self.layer_order[0]).tile_count
            last = self.wall(self.layer_order[-1]).tile_count
            if len(self.train.virtual_input_fractions) != first:
                problems.append(
                    "train.virtual_input_fractions needs one entry per first-layer "
                    f"tile ({first})"
                )
            if len(self.train.ideal_output_fractions) != last:
                problems.append(
                    "train.ideal_output_fractions needs one entry per last-layer "
                    f"tile ({last})"
                )
        return problems

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ConfigurationError("; ".join(problems), problems)
