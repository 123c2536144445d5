import json
from pathlib import Path

from rest_framework import serializers
from rest_framework.fields import empty

from .configurators import EnvironmentConfig, Route, TileConfig, TileFunction
from .exceptions import ConfigurationError
from .geometry import User, UserRole, Vec2, WallSegment
from .scenario import (
    FRACTION_TOLERANCE,
    InactiveFunction,
    PhysicsParams,
    Scenario,
    TrainParams,
    UpdateMode,
)


class Vec2Field(serializers.ListField):
    """``[x, y]`` as a Vec2; positions may carry a trailing z, which is dropped."""

    child = serializers.FloatField()

    def __init__(self, allow_z: bool = False, **kwargs):
        kwargs.setdefault("min_length", 2)
        kwargs.setdefault("max_length", 3 if allow_z else 2)
        super().__init__(**kwargs)

    def run_validation(self, data=empty) -> Vec2:
        return Vec2.from_sequence(super().run_validation(data)[:2])

    def to_representation(self, value: Vec2) -> list[float]:
        return [value.x, value.y]


class WallSerializer(serializers.Serializer):
    a = Vec2Field()
    b = Vec2Field()
    normal_side = serializers.ChoiceField(choices=["left", "right"], default="left")
    coated = serializers.BooleanField(default=True)
    tiles = serializers.IntegerField(min_value=1, default=1)

    def validate(self, attrs):
        if attrs["a"] == attrs["b"]:
            raise serializers.ValidationError("wall endpoints coincide")
        return attrs


class UserSerializer(serializers.Serializer):
    position = Vec2Field(allow_z=True)
    role = serializers.ChoiceField(choices=[role.value for role in UserRole])
    lobe_deg = serializers.FloatField(default=40.0, max_value=180.0)
    boresight_deg = serializers.FloatField(default=0.0)
    tx_power_dbm = serializers.FloatField(required=False, allow_null=True, default=None)

    def validate_lobe_deg(self, value):
        if value <= 0:
            raise serializers.ValidationError("lobe width must be positive")
        return value


class PhysicsSerializer(serializers.Serializer):
    frequency_hz = serializers.FloatField(default=2.4e9)
    tx_power_dbm = serializers.FloatField(default=-30.0)
    max_bounces = serializers.IntegerField(min_value=0, default=5)
    bounce_loss = serializers.FloatField(default=0.01)
    ray_count = serializers.IntegerField(default=5)
    rx_aperture_m = serializers.FloatField(default=1.0)
    rx_lobe_gate = serializers.BooleanField(default=False)


class TrainSerializer(serializers.Serializer):
    eta = serializers.FloatField(default=0.95)
    rmse_target = serializers.FloatField(default=1e-3)
    max_cycles = serializers.IntegerField(default=5000)
    seed = serializers.IntegerField(default=42)
    init_range_deg = serializers.ListField(
        child=serializers.FloatField(),
        min_length=2,
        max_length=2,
        default=[-90.0, 90.0],
    )
    input_fractions = serializers.ListField(
        child=serializers.FloatField(), required=False
    )
    ideal_fractions = serializers.ListField(
        child=serializers.FloatField(), required=False
    )
    update_mode = serializers.ChoiceField(
        choices=[mode.value for mode in UpdateMode], default=UpdateMode.BATCH.value
    )
    activity_threshold = serializers.FloatField(default=0.01)
    inactive_function = serializers.ChoiceField(
        choices=[function.value for function in InactiveFunction],
        default=InactiveFunction.ABSORB.value,
    )


def _uniform(count: int) -> tuple[float, ...]:
    return tuple([1.0 / count] * count) if count > 0 else ()


class ScenarioSerializer(serializers.Serializer):
    name = serializers.CharField(default="scenario")
    walls = WallSerializer(many=True)
    layer_order = serializers.ListField(
        child=serializers.IntegerField(min_value=0), min_length=1
    )
    users = UserSerializer(many=True)
    physics = PhysicsSerializer(required=False)
    train = TrainSerializer(required=False)

    def validate(self, attrs):
        for name, serializer_class in (
            ("physics", PhysicsSerializer),
            ("train", TrainSerializer),
        ):
            if name not in attrs:
                nested = serializer_class(data={})
                nested.is_valid(raise_exception=True)
                attrs[name] = nested.validated_data
        return attrs

    def create(self, validated_data) -> Scenario:
        walls = tuple(
            WallSegment.from_side(
                wall_id,
                wall["a"],
                wall["b"],
                normal_side=wall["normal_side"],
                coated=wall["coated"],
                tile_count=wall["tiles"],
            )
            for wall_id, wall in enumerate(validated_data["walls"])
        )
        users = tuple(
            User(
                position=user["position"],
                lobe_width_deg=user["lobe_deg"],
                boresight_deg=user["boresight_deg"],
                role=UserRole(user["role"]),
                tx_power_dbm=user.get("tx_power_dbm"),
            )
            for user in validated_data["users"]
        )
        physics = validated_data["physics"]
        train = validated_data["train"]
        layer_order = tuple(validated_data["layer_order"])

        def tile_count(position: int) -> int:
            wall_id = layer_order[position]
            return walls[wall_id].tile_count if wall_id < len(walls) else 0

        input_fractions = train.get("input_fractions")
        ideal_fractions = train.get("ideal_fractions")
        return Scenario(
            walls=walls,
            layer_order=layer_order,
            users=users,
            physics=PhysicsParams(
                frequency_hz=physics["frequency_hz"],
                tx_power_dbm=physics["tx_power_dbm"],
                max_bounces=physics["max_bounces"],
                bounce_loss_fraction=physics["bounce_loss"],
                rx_aperture_width_m=physics["rx_aperture_m"],
                ray_count=physics["ray_count"],
                rx_lobe_gate=physics["rx_lobe_gate"],
            ),
            train=TrainParams(
                eta=train["eta"],
                rmse_target=train["rmse_target"],
                max_cycles=train["max_cycles"],
                init_omega_range_deg=tuple(train["init_range_deg"]),
                seed=train["seed"],
                virtual_input_fractions=(
                    tuple(input_fractions)
                    if input_fractions is not None
                    else _uniform(tile_count(0))
                ),
                ideal_output_fractions=(
                    tuple(ideal_fractions)
                    if ideal_fractions is not None
                    else _uniform(tile_count(-1))
                ),
                update_mode=UpdateMode(train["update_mode"]),
                activity_threshold=train["activity_threshold"],
                inactive_function=InactiveFunction(train["inactive_function"]),
            ),
            name=validated_data["name"],
        )


class OutgoingSerializer(serializers.Serializer):
    direction = Vec2Field()
    fraction = serializers.FloatField(min_value=0.0, max_value=1.0)


class RouteSerializer(serializers.Serializer):
    incoming = Vec2Field()
    outgoing = OutgoingSerializer(many=True)

    def validate(self, attrs):
        total = sum(item["fraction"] for item in attrs["outgoing"])
        if total > 1.0 + FRACTION_TOLERANCE:
            raise serializers.ValidationError(
                f"route fractions sum to {total:.6g}, above 1"
            )
        return attrs

    def to_representation(self, route: Route) -> dict:
        return {
            "incoming": [route.incoming.x, route.incoming.y],
            "outgoing": [
                {"direction": [direction.x, direction.y], "fraction": fraction}
                for direction, fraction in route.outgoing
            ],
        }


class TileConfigSerializer(serializers.Serializer):
    wall = serializers.IntegerField(min_value=0)
    index = serializers.IntegerField(min_value=0)
    function = serializers.ChoiceField(choices=[f.value for f in TileFunction])
    active = serializers.BooleanField(default=False)
    routes = RouteSerializer(many=True, required=False)

    def validate(self, attrs):
        if attrs.get("routes") and not TileFunction(attrs["function"]).routed:
            raise serializers.ValidationError(
                f"{attrs['function']} tiles take no routes"
            )
        return attrs


class EnvironmentConfigSerializer(serializers.Serializer):
    scheme = serializers.CharField()
    tiles = TileConfigSerializer(many=True)

    def validate_tiles(self, value):
        keys = [(tile["wall"], tile["index"]) for tile in value]
        if len(set(keys)) != len(keys):
            raise serializers.ValidationError("duplicate tile entries")
        return value

    def create(self, validated_data) -> EnvironmentConfig:
        config = EnvironmentConfig(validated_data["scheme"])
        for tile in validated_data["tiles"]:
            routes = tuple(
                Route(
                    route["incoming"],
                    tuple(
                        (item["direction"], item["fraction"])
                        for item in route["outgoing"]
                    ),
                )
                for route in tile.get("routes", [])
            )
            config.tiles[(tile["wall"], tile["index"])] = TileConfig(
                TileFunction(tile["function"]), routes, tile["active"]
            )
        return config

    def to_representation(self, config: EnvironmentConfig) -> dict:
        return {
            "scheme": config.scheme_name,
            "tiles": [
                {
                    "wall": wall_id,
                    "index": index,
                    "function": tile.function.value,
                    "active": tile.active,
                    "routes": [RouteSerializer(route).data for route in tile.routes],
                }
                for (wall_id, index), tile in sorted(config.tiles.items())
            ],
        }


def flatten_errors(errors, prefix: str = "") -> list[str]:
    """DRF's nested error structure as ``path: message`` lines."""
    if isinstance(errors, dict):
        messages = []
        for key, value in errors.items():
            if key == "non_field_errors":
                path = prefix
            elif isinstance(key, int):
                path = f"{prefix}[{key}]"
            else:
                path = f"{prefix}.{key}" if prefix else str(key)
            messages.extend(flatten_errors(value, path))
        return messages
    if isinstance(errors, list):
        if all(isinstance(item, str) for item in errors):
            return [f"{prefix}: {item}" if prefix else str(item) for item in errors]
        messages = []
        for index, item in enumerate(errors):
            messages.extend(flatten_errors(item, f"{prefix}[{index}]"))
        return messages
    return [f"{prefix}: {errors}" if prefix else str(errors)]


def read_json(path: Path | str, what: str = "scenario"):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"{what} not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(
            f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}"
        ) from e


def _deserialize(serializer_class, data, what: str):
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        problems = flatten_errors(serializer.errors)
        raise ConfigurationError(f"invalid {what}: " + "; ".join(problems), problems)
    return serializer.save()


def parse_scenario(data) -> Scenario:
    """Scenario from its JSON document; cross-field checks are left to ``validate``."""
    return _deserialize(ScenarioSerializer, data, "scenario")


def load_scenario(path: Path | str) -> Scenario:
    return parse_scenario(read_json(path, "scenario"))


def parse_environment_config(data) -> EnvironmentConfig:
    return _deserialize(EnvironmentConfigSerializer, data, "environment config")


def load_environment_config(path: Path | str) -> EnvironmentConfig:
    return parse_environment_config(read_json(path, "environment config"))


def dump_environment_config(config: EnvironmentConfig) -> dict:
    return EnvironmentConfigSerializer(config).data
