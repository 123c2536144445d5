import json
import math
import os
import tempfile
import time
import unittest
from dataclasses import replace
from io import StringIO
from pathlib import Path
from unittest.mock import patch

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from pwe.configurators import (
    EnvironmentConfig,
    Route,
    TileConfig,
    TileFunction,
    interpret_trained_net,
    kp_config,
    kp_route,
    regular_config,
)
from pwe.exceptions import (
    ConfigurationError,
    ConstructionError,
    ContractViolation,
    PweDomainError,
    RoutingFailure,
)
from pwe.geometry import (
    User,
    UserRole,
    Vec2,
    WallSegment,
    los_visible,
    normal_from_angle,
    reflect,
    segment_blocks,
    unit_dir,
)
from pwe.learner import (
    OMEGA_LIMIT,
    NetState,
    apply_updates,
    backprop_gradients,
    central_difference,
    clamp_omegas,
    fd_gradient,
    feed_forward,
    link_weights,
    random_omegas,
    revive_dead_tiles,
    significance,
    train,
)
from pwe.netbuild import Link, build_layered_net, validate_net
from pwe.pipeline import run_comparison, scenario_rays
from pwe.raytracer import (
    TerminationReason,
    emit_rays,
    format_dbm,
    received_power_dbm,
    trace,
    watts_to_dbm,
)
from pwe.scenario import PhysicsParams, Scenario, TrainParams, UpdateMode
from pwe.serializers import (
    dump_environment_config,
    load_scenario,
    parse_environment_config,
    parse_scenario,
    read_json,
)

SQRT_HALF = math.sqrt(0.5)


def default_scenario() -> Scenario:
    return load_scenario(settings.PWE_DEFAULT_SCENARIO)


def default_document() -> dict:
    return json.loads(Path(settings.PWE_DEFAULT_SCENARIO).read_text())


def transmitter(x, y, boresight=0.0, lobe=40.0) -> User:
    return User(Vec2(x, y), lobe, boresight, UserRole.TRANSMITTER)


def receiver(x, y, boresight=180.0, lobe=40.0) -> User:
    return User(Vec2(x, y), lobe, boresight, UserRole.RECEIVER)


def make_scenario(walls, layer_order, tx, rx, physics=None, **train) -> Scenario:
    walls = tuple(walls)
    by_id = {wall.id: wall for wall in walls}
    first = by_id[layer_order[0]].tile_count
    last = by_id[layer_order[-1]].tile_count
    train.setdefault("virtual_input_fractions", tuple([1.0 / first] * first))
    train.setdefault("ideal_output_fractions", tuple([1.0 / last] * last))
    return Scenario(
        walls=walls,
        layer_order=tuple(layer_order),
        users=(tx, rx),
        physics=physics or PhysicsParams(),
        train=TrainParams(**train),
    )


def perfect_scenario(**train) -> Scenario:
    """One tile whose physical normal already mirrors the Tx onto the Rx."""
    tile = WallSegment.from_side(0, Vec2(-0.5, 0.0), Vec2(0.5, 0.0))
    train.setdefault("init_omega_range_deg", (0.0, 0.0))
    return make_scenario([tile], [0], transmitter(-1, 1), receiver(1, 1), **train)


def splitter_scenario(**train) -> Scenario:
    """One tile feeding two tiles on the opposite wall, which both see the Rx."""
    walls = [
        WallSegment.from_side(0, Vec2(-0.5, 0.0), Vec2(0.5, 0.0)),
        WallSegment.from_side(
            1, Vec2(-2.0, 4.0), Vec2(2.0, 4.0), normal_side="right", tile_count=2
        ),
    ]
    train.setdefault("init_omega_range_deg", (-10.0, 10.0))
    return make_scenario(walls, [0, 1], transmitter(0, 2), receiver(0, 3), **train)


def corridor_scenario(tile_counts, height=4.0, spacing=2.0, **train) -> Scenario:
    """Layers alternate between the floor and the ceiling of a corridor."""
    walls = []
    x = 0.0
    for k, count in enumerate(tile_counts):
        half = count / 2.0
        if k % 2 == 0:
            a, b = Vec2(x - half, 0.0), Vec2(x + half, 0.0)
        else:
            a, b = Vec2(x + half, height), Vec2(x - half, height)
        walls.append(WallSegment.from_side(k, a, b, tile_count=count))
        x += spacing
    return make_scenario(
        walls,
        list(range(len(tile_counts))),
        transmitter(-spacing, height / 2.0),
        receiver(x, height / 2.0),
        **train,
    )


def random_net_state(rng):
    kappa = int(rng.integers(1, 4))
    counts = [int(c) for c in rng.integers(1, 4, size=kappa)]
    scenario = corridor_scenario(
        counts,
        height=float(rng.uniform(2.0, 5.0)),
        spacing=float(rng.uniform(2.0, 3.0)),
    )
    net = build_layered_net(scenario)
    state = NetState.initial(
        net,
        rng.dirichlet(np.ones(len(net.input_links))),
        rng.dirichlet(np.ones(len(net.output_links))),
        rng.uniform(-1.0, 1.0, size=net.node_count),
    )
    return net, state


def splitter_gradient(omega: float) -> float:
    # E = tan(2w)^2 / 64 for the splitter
    return math.tan(2 * omega) / math.cos(2 * omega) ** 2 / 16.0


class GeometryTest(SimpleTestCase):
    def assertVecAlmostEqual(self, v, expected, places=12):
        self.assertAlmostEqual(v.x, expected[0], places=places)
        self.assertAlmostEqual(v.y, expected[1], places=places)

    def test_reflect_normal_incidence_mirrors_back(self):
        self.assertVecAlmostEqual(reflect(Vec2(0, -1), Vec2(0, 1)), (0, 1))

    def test_reflect_grazing_leaves_direction_unchanged(self):
        self.assertVecAlmostEqual(reflect(Vec2(1, 0), Vec2(0, 1)), (1, 0))

    def test_reflect_45_degrees(self):
        r = reflect(Vec2(SQRT_HALF, -SQRT_HALF), Vec2(0, 1))
        self.assertVecAlmostEqual(r, (SQRT_HALF, SQRT_HALF))
        self.assertTrue(r.is_unit())

    def test_reflect_rejects_non_unit_input(self):
        with self.assertRaises(ContractViolation):
            reflect(Vec2(2, 0), Vec2(0, 1))

    def test_normal_from_angle_zero_returns_base(self):
        base = Vec2(0, 1)
        self.assertEqual(normal_from_angle(base, 0.0), base)

    def test_normal_from_angle_rotates_counterclockwise(self):
        n = normal_from_angle(Vec2(0, 1), math.pi / 4)
        self.assertVecAlmostEqual(n, (-SQRT_HALF, SQRT_HALF))

    def test_normal_from_angle_rejects_quarter_turn(self):
        for omega in (math.pi / 2, -math.pi / 2, 2.0):
            with self.assertRaises(PweDomainError):
                normal_from_angle(Vec2(0, 1), omega)

    def test_unit_dir_coincident_points(self):
        with self.assertRaises(PweDomainError):
            unit_dir(Vec2(1, 1), Vec2(1, 1))

    def test_segment_blocks_crossing(self):
        wall = (Vec2(-1, 0), Vec2(1, 0))
        self.assertTrue(segment_blocks(Vec2(0, -1), Vec2(0, 1), *wall))

    def test_segment_blocks_endpoint_on_wall_does_not_block(self):
        wall = (Vec2(-1, 0), Vec2(1, 0))
        self.assertFalse(segment_blocks(Vec2(0, 0), Vec2(0, 1), *wall))

    def test_segment_blocks_collinear_overlap(self):
        wall = (Vec2(-1, 0), Vec2(1, 0))
        self.assertTrue(segment_blocks(Vec2(-2, 0), Vec2(2, 0), *wall))

    def test_segment_blocks_disjoint(self):
        wall = (Vec2(-1, 0), Vec2(1, 0))
        self.assertFalse(segment_blocks(Vec2(3, -1), Vec2(3, 1), *wall))

    def test_los_visible(self):
        wall = WallSegment.from_side(0, Vec2(-1, 0), Vec2(1, 0), coated=False)
        self.assertFalse(los_visible(Vec2(0, -1), Vec2(0, 1), [wall]))
        self.assertTrue(los_visible(Vec2(2, -1), Vec2(2, 1), [wall]))
        with self.assertRaises(ContractViolation):
            los_visible(Vec2(0, 1), Vec2(0, 1), [wall])

    def test_tiles_partition_wall(self):
        wall = WallSegment.from_side(3, Vec2(0, 0), Vec2(5, 0), tile_count=5)
        centers = [tile.center.x for tile in wall.tiles]
        self.assertEqual(len(wall.tiles), 5)
        for expected, center in zip([0.5, 1.5, 2.5, 3.5, 4.5], centers):
            self.assertAlmostEqual(center, expected)
        self.assertTrue(all(tile.width == 1.0 for tile in wall.tiles))
        self.assertEqual(wall.tile_at(Vec2(3.2, 0)).index_in_wall, 3)
        self.assertEqual(wall.tile_at(Vec2(5.0, 0)).index_in_wall, 4)

    def test_uncoated_wall_has_no_tiles(self):
        wall = WallSegment.from_side(0, Vec2(0, 0), Vec2(5, 0), coated=False)
        self.assertEqual(wall.tiles, ())
        self.assertIsNone(wall.tile_at(Vec2(1, 0)))

    def test_wall_normal_must_be_perpendicular(self):
        with self.assertRaises(PweDomainError):
            WallSegment(0, Vec2(0, 0), Vec2(1, 0), Vec2(SQRT_HALF, SQRT_HALF))

    def test_user_lobe_width_range(self):
        with self.assertRaises(PweDomainError):
            User(Vec2(0, 0), 0.0, 0.0, UserRole.TRANSMITTER)
        with self.assertRaises(PweDomainError):
            User(Vec2(0, 0), 181.0, 0.0, UserRole.TRANSMITTER)

    def test_user_in_lobe(self):
        user = User(Vec2(0, 0), 40.0, 180.0, UserRole.RECEIVER)
        self.assertTrue(user.in_lobe(Vec2(-1, 0)))
        self.assertFalse(user.in_lobe(Vec2(1, 0)))


class NetBuildTest(SimpleTestCase):
    def test_default_scenario_net(self):
        net = build_layered_net(default_scenario())
        self.assertEqual(net.layer_sizes, [5, 5, 5])
        self.assertEqual(len(net.input_links), 5)
        self.assertEqual([len(pairs) for pairs in net.inter_links], [25, 25])
        self.assertEqual(len(net.output_links), 5)
        self.assertEqual(validate_net(net), [])

    def test_single_tile_net(self):
        net = build_layered_net(perfect_scenario())
        self.assertEqual(net.layer_sizes, [1])
        self.assertEqual(len(net.input_links), 1)
        self.assertEqual(len(net.output_links), 1)
        self.assertEqual(validate_net(net), [])

    def test_occluded_middle_wall(self):
        scenario = splitter_scenario()
        blocker = WallSegment.from_side(2, Vec2(-5, 2.5), Vec2(5, 2.5), coated=False)
        occluded = replace(
            scenario,
            walls=scenario.walls + (blocker,),
            users=(transmitter(0, 1), receiver(0, 3)),
        )
        with self.assertRaisesMessage(ConstructionError, "disconnected layer"):
            build_layered_net(occluded)

    def test_build_is_deterministic(self):
        first = build_layered_net(default_scenario())
        second = build_layered_net(default_scenario())
        self.assertEqual(
            [(l.source, l.target, l.direction) for l in first.all_links()],
            [(l.source, l.target, l.direction) for l in second.all_links()],
        )

    def test_link_directions_are_reciprocal(self):
        net = build_layered_net(default_scenario())
        for link in net.inter_links[0]:
            source = net.nodes[link.source].tile.center
            target = net.nodes[link.target].tile.center
            back, _ = unit_dir(target, source)
            self.assertAlmostEqual(back.x, -link.direction.x)
            self.assertAlmostEqual(back.y, -link.direction.y)

    def test_validate_net_reports_missing_outgoing_link(self):
        net = build_layered_net(perfect_scenario())
        net.node(0, 0).outgoing.clear()
        self.assertEqual(validate_net(net), ["node (1,1) has no outgoing link"])

    def test_validate_net_reports_skip_link(self):
        net = build_layered_net(default_scenario())
        source, target = net.node(0, 0), net.node(2, 0)
        direction, distance = unit_dir(source.tile.center, target.tile.center)
        skip = Link(source.index, target.index, direction, distance)
        source.outgoing.append(skip)
        net.inter_links[0].append(skip)
        self.assertEqual(validate_net(net), ["non-consecutive link (1,1)->(3,1)"])


class LinkWeightsTest(SimpleTestCase):
    def test_single_positive_projection(self):
        net = build_layered_net(perfect_scenario())
        weights = link_weights(net.node(0, 0), 0.0, Vec2(SQRT_HALF, -SQRT_HALF))
        self.assertEqual(list(weights), [1.0])

    def test_symmetric_links_split_evenly(self):
        net = build_layered_net(splitter_scenario())
        weights = link_weights(net.node(0, 0), 0.0, Vec2(0, -1))
        np.testing.assert_allclose(weights, [0.5, 0.5], rtol=0, atol=1e-15)

    def test_reflection_facing_away_absorbs(self):
        net = build_layered_net(perfect_scenario())
        weights = link_weights(net.node(0, 0), 0.0, Vec2(-SQRT_HALF, SQRT_HALF))
        self.assertEqual(list(weights), [0.0])

    def test_node_without_outgoing_links(self):
        net = build_layered_net(perfect_scenario())
        node = net.node(0, 0)
        node.outgoing.clear()
        with self.assertRaises(ContractViolation):
            link_weights(node, 0.0, Vec2(SQRT_HALF, -SQRT_HALF))


class FeedForwardTest(SimpleTestCase):
    def test_perfect_tile_delivers_everything(self):
        net = build_layered_net(perfect_scenario())
        state = feed_forward(net, NetState.initial(net, [1.0], [1.0], [0.0]))
        self.assertEqual(list(state.outputs), [1.0])
        self.assertEqual(state.deviation, 0.0)

    def test_three_node_chain_passes_input_through(self):
        net = build_layered_net(corridor_scenario([1, 1, 1]))
        self.assertEqual(net.layer_sizes, [1, 1, 1])
        state = feed_forward(net, NetState.initial(net, [1.0], [1.0], [0.0] * 3))
        self.assertEqual(list(state.outputs), [1.0])
        self.assertEqual(state.rmse, 0.0)

    def test_splitter_outputs(self):
        net = build_layered_net(splitter_scenario())
        state = feed_forward(net, NetState.initial(net, [1.0], [0.5, 0.5], [0.1, 0, 0]))
        shift = math.tan(0.2) / 8.0
        self.assertAlmostEqual(float(np.sum(state.outputs)), 1.0, places=12)
        self.assertAlmostEqual(abs(state.outputs[0] - state.outputs[1]), 2 * shift)
        self.assertAlmostEqual(state.deviation, shift**2, places=12)

    def test_feed_forward_does_not_touch_input_state(self):
        net = build_layered_net(splitter_scenario())
        state = NetState.initial(net, [1.0], [0.5, 0.5], [0.1, 0, 0])
        feed_forward(net, state)
        self.assertFalse(state.evaluated)

    def test_uninitialized_inputs(self):
        net = build_layered_net(perfect_scenario())
        with self.assertRaises(ContractViolation):
            feed_forward(net, NetState.initial(net, None, [1.0]))

    def test_fraction_length_mismatch(self):
        net = build_layered_net(splitter_scenario())
        with self.assertRaises(ConfigurationError):
            NetState.initial(net, [0.5, 0.5], [0.5, 0.5])

    def test_conservation_over_random_nets(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            net, state = random_net_state(rng)
            for _ in range(5):
                state = replace(
                    state, omegas=rng.uniform(-1.5, 1.5, size=net.node_count)
                )
                evaluated = feed_forward(net, state)
                self.assertLessEqual(
                    float(np.sum(evaluated.outputs)), state.total_input + 1e-12
                )
                for weights in evaluated.weights:
                    for row in weights.sum(axis=1):
                        self.assertTrue(row == 0.0 or abs(row - 1.0) <= 1e-9)
                for node in net.nodes:
                    self.assertLessEqual(
                        float(np.sum(evaluated.node_out_power[node.index])),
                        float(np.sum(evaluated.node_in_power[node.index])) + 1e-12,
                    )

    def test_layer_weights_match_link_weights(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            net, state = random_net_state(rng)
            evaluated = feed_forward(net, state)
            for node in net.nodes:
                weights = evaluated.weights[node.index]
                self.assertEqual(
                    weights.shape, (len(node.incoming), len(node.outgoing))
                )
                for row, link in zip(weights, node.incoming):
                    np.testing.assert_allclose(
                        row,
                        link_weights(node, state.omegas[node.index], link.direction),
                        rtol=0,
                        atol=1e-15,
                    )


class GradientTest(SimpleTestCase):
    def evaluated_splitter(self, omega=0.1):
        net = build_layered_net(splitter_scenario())
        state = NetState.initial(net, [1.0], [0.5, 0.5], [omega, 0.0, 0.0])
        return net, backprop_gradients(net, feed_forward(net, state))

    def test_splitter_gradient_closed_form(self):
        _, state = self.evaluated_splitter(0.1)
        self.assertAlmostEqual(state.grad[0], splitter_gradient(0.1), places=12)
        self.assertEqual(list(state.grad[1:]), [0.0, 0.0])

    def test_significance(self):
        net, state = self.evaluated_splitter(0.1)
        self.assertEqual(significance(net, state, 0, 0), 1.0)
        for l in range(2):
            node = net.node(1, l)
            position = net.output_positions[(node.index, 0)]
            self.assertEqual(significance(net, state, 1, l), state.delta[position])

    def test_significance_needs_feed_forward(self):
        net = build_layered_net(splitter_scenario())
        state = NetState.initial(net, [1.0], [0.5, 0.5], [0.1, 0.0, 0.0])
        with self.assertRaises(ContractViolation):
            significance(net, state, 0, 0)
        with self.assertRaises(ContractViolation):
            backprop_gradients(net, state)

    def test_central_difference(self):
        self.assertAlmostEqual(central_difference(math.sin, 0.3, 1e-6), math.cos(0.3))
        with self.assertRaises(PweDomainError):
            central_difference(math.sin, 0.3, 0.0)

    def test_fd_gradient_outside_range(self):
        net = build_layered_net(perfect_scenario())
        state = NetState.initial(net, [1.0], [1.0], [OMEGA_LIMIT])
        with self.assertRaises(PweDomainError):
            fd_gradient(net, state, 0, 0, h=1e-3)

    def test_gradients_match_finite_differences_on_random_nets(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            net, state = random_net_state(rng)
            state = backprop_gradients(net, feed_forward(net, state))
            for node in net.nodes:
                fd = fd_gradient(net, state, node.k, node.l)
                self.assertLessEqual(
                    abs(state.grad[node.index] - fd),
                    1e-5 * abs(fd) + 1e-8,
                    f"node ({node.label}) of {net.layer_sizes}",
                )

    def test_step_against_gradient_reduces_deviation(self):
        net, state = self.evaluated_splitter(0.2)
        omegas = state.omegas - 1e-3 * state.grad
        stepped = feed_forward(net, replace(state, omegas=omegas))
        self.assertLess(stepped.deviation, state.deviation)

    def test_small_update_never_increases_deviation(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            net, state = random_net_state(rng)
            state = backprop_gradients(net, feed_forward(net, state))
            omegas = apply_updates(net, state, 1e-3)
            stepped = feed_forward(net, replace(state, omegas=omegas))
            self.assertLessEqual(
                stepped.deviation,
                state.deviation + 1e-12,
                f"{net.layer_sizes} at {state.omegas}",
            )


class UpdateTest(SimpleTestCase):
    def evaluated_splitter(self):
        net = build_layered_net(splitter_scenario())
        state = NetState.initial(net, [1.0], [0.5, 0.5], [0.1, 0.0, 0.0])
        return net, backprop_gradients(net, feed_forward(net, state))

    def test_batch_update(self):
        net, state = self.evaluated_splitter()
        omegas = apply_updates(net, state, 0.95)
        self.assertAlmostEqual(omegas[0], 0.1 - 0.95 * splitter_gradient(0.1))
        self.assertEqual(list(omegas[1:]), [0.0, 0.0])
        self.assertEqual(net.node(0, 0).omega, omegas[0])

    def test_sequential_reverse_update(self):
        net, state = self.evaluated_splitter()
        batch = apply_updates(net, state, 0.95, UpdateMode.BATCH)
        sequential = apply_updates(net, state, 0.95, UpdateMode.SEQUENTIAL_REVERSE)
        np.testing.assert_allclose(sequential, batch, rtol=0, atol=1e-15)

    def test_update_needs_gradients(self):
        net = build_layered_net(splitter_scenario())
        state = feed_forward(
            net, NetState.initial(net, [1.0], [0.5, 0.5], [0.1, 0.0, 0.0])
        )
        with self.assertRaises(ContractViolation):
            apply_updates(net, state, 0.95)

    def test_clamp(self):
        clamped = clamp_omegas(np.array([2.0, -2.0, 0.5]))
        self.assertEqual(list(clamped), [OMEGA_LIMIT, -OMEGA_LIMIT, 0.5])


class RevivalTest(SimpleTestCase):
    def evaluated_splitter(self, omega):
        net = build_layered_net(splitter_scenario())
        state = NetState.initial(net, [1.0], [0.5, 0.5], [omega, 0.0, 0.0])
        return net, feed_forward(net, state)

    def test_dead_tile_is_reaimed_into_its_fan(self):
        net, state = self.evaluated_splitter(1.2)
        self.assertEqual(float(np.sum(state.outputs)), 0.0)
        omegas = state.omegas.copy()
        # the unpowered second layer is left alone
        self.assertEqual(revive_dead_tiles(net, state, omegas), [0])
        self.assertAlmostEqual(omegas[0], 0.0, places=12)
        self.assertEqual(list(omegas[1:]), [0.0, 0.0])
        self.assertEqual(net.node(0, 0).omega, omegas[0])
        revived = feed_forward(net, replace(state, omegas=omegas))
        self.assertAlmostEqual(float(np.sum(revived.outputs)), 1.0)

    def test_live_tiles_are_untouched(self):
        net, state = self.evaluated_splitter(0.1)
        omegas = state.omegas.copy()
        self.assertEqual(revive_dead_tiles(net, state, omegas), [])
        np.testing.assert_array_equal(omegas, state.omegas)

    def test_revival_needs_feed_forward(self):
        net = build_layered_net(splitter_scenario())
        state = NetState.initial(net, [1.0], [0.5, 0.5], [1.2, 0.0, 0.0])
        with self.assertRaises(ContractViolation):
            revive_dead_tiles(net, state, state.omegas.copy())


class TrainTest(SimpleTestCase):
    def test_perfect_configuration_converges_immediately(self):
        scenario = perfect_scenario()
        result = train(build_layered_net(scenario), scenario.train)
        self.assertTrue(result.converged)
        self.assertEqual(result.cycles_run, 1)
        self.assertEqual(result.rmse_curve, [0.0])

    def test_zero_cycles(self):
        scenario = splitter_scenario(max_cycles=0)
        result = train(build_layered_net(scenario), scenario.train)
        self.assertFalse(result.converged)
        self.assertEqual(result.cycles_run, 0)
        self.assertEqual(result.rmse_curve, [])
        self.assertTrue(result.final_state.evaluated)

    def test_splitter_converges(self):
        for mode in UpdateMode:
            scenario = splitter_scenario(max_cycles=500, seed=3, update_mode=mode)
            result = train(build_layered_net(scenario), scenario.train)
            self.assertTrue(result.converged, mode)
            self.assertLess(result.rmse_final, 1e-3)
            self.assertEqual(len(result.rmse_curve), result.cycles_run)
            self.assertLess(abs(result.final_omegas[0]), 0.01)

    def test_training_is_deterministic(self):
        scenario = splitter_scenario(max_cycles=50, seed=11)
        first = train(build_layered_net(scenario), scenario.train)
        second = train(build_layered_net(scenario), scenario.train)
        self.assertEqual(first.rmse_curve, second.rmse_curve)
        self.assertEqual(list(first.final_omegas), list(second.final_omegas))

    def test_initial_omegas_are_the_starting_angles(self):
        scenario = splitter_scenario(max_cycles=5, seed=11, rmse_target=1e-9)
        net = build_layered_net(scenario)
        result = train(net, scenario.train)
        self.assertEqual(result.cycles_run, 5)
        np.testing.assert_array_equal(
            result.initial_omegas, random_omegas(net, scenario.train)
        )
        self.assertNotEqual(result.initial_omegas[0], result.final_omegas[0])

    def test_cycle_cap_stops_on_evaluated_state(self):
        scenario = splitter_scenario(max_cycles=5, seed=11, rmse_target=1e-9)
        net = build_layered_net(scenario)
        with patch("pwe.learner.feed_forward", wraps=feed_forward) as forward:
            result = train(net, scenario.train)
        self.assertFalse(result.converged)
        self.assertEqual(forward.call_count, 5)
        self.assertEqual(result.final_state.rmse, result.rmse_curve[-1])
        np.testing.assert_array_equal(result.final_state.omegas, result.final_omegas)
        np.testing.assert_array_equal(net.omegas(), result.final_omegas)

    def test_rmse_and_deviation_agree(self):
        scenario = default_scenario()
        params = replace(scenario.train, max_cycles=20)
        result = train(build_layered_net(scenario), params)
        for rmse, deviation in zip(result.rmse_curve, result.deviation_curve):
            self.assertAlmostEqual(deviation, 0.5 * 5 * rmse**2, places=12)

    def test_explicit_initial_omegas(self):
        scenario = perfect_scenario(init_omega_range_deg=(-90.0, 90.0))
        result = train(build_layered_net(scenario), scenario.train, [0.0])
        self.assertEqual(result.cycles_run, 1)
        self.assertEqual(list(result.initial_omegas), [0.0])

    def test_invalid_params(self):
        scenario = splitter_scenario(eta=1.5)
        with self.assertRaises(ConfigurationError):
            train(build_layered_net(scenario), scenario.train)


class ConfiguratorsTest(SimpleTestCase):
    def untrained_default(self):
        scenario = default_scenario()
        net = build_layered_net(scenario)
        params = replace(scenario.train, max_cycles=0)
        result = train(net, params, np.zeros(net.node_count))
        return scenario, net, result

    def test_regular_config(self):
        scenario = default_scenario()
        config = regular_config(scenario)
        self.assertEqual(config.scheme_name, "regular")
        self.assertEqual(len(config.tiles), 15)
        self.assertTrue(
            all(
                tile.function == TileFunction.SPECULAR
                for tile in config.tiles.values()
            )
        )
        self.assertEqual(config.active_counts(scenario), [0, 0, 0])

    def test_regular_config_without_coated_walls(self):
        absorber = WallSegment.from_side(0, Vec2(0, 0), Vec2(5, 0), coated=False)
        scenario = Scenario(
            walls=(absorber,), layer_order=(), users=(transmitter(0, 1), receiver(2, 1))
        )
        self.assertEqual(regular_config(scenario).tiles, {})

    def test_interpret_untrained_net_activates_every_middle_tile(self):
        scenario, net, result = self.untrained_default()
        config = interpret_trained_net(
            net, result, result.final_state, 0.01, scenario=scenario
        )
        self.assertEqual(config.active_counts(scenario)[1], 5)
        self.assertEqual(len(config.tiles), 15)

    def test_interpret_threshold_zero_activates_everything(self):
        scenario, net, result = self.untrained_default()
        config = interpret_trained_net(net, result, result.final_state, 0.0)
        self.assertEqual(config.active_counts(scenario), [5, 5, 5])

    def test_active_count_monotonic_in_threshold(self):
        scenario, net, result = self.untrained_default()
        counts = [
            sum(
                interpret_trained_net(
                    net, result, result.final_state, threshold
                ).active_counts(scenario)
            )
            for threshold in (0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0)
        ]
        self.assertEqual(counts, sorted(counts, reverse=True))

    def test_routes_equal_link_weights(self):
        scenario, net, result = self.untrained_default()
        config = interpret_trained_net(net, result, result.final_state, 0.0)
        for node in net.nodes:
            routes = config.get(node.tile.key).routes
            for route in routes:
                weights = link_weights(node, 0.0, route.incoming)
                expected = [w for w in weights if w > 0.0]
                np.testing.assert_allclose(
                    [fraction for _, fraction in route.outgoing],
                    expected,
                    rtol=0,
                    atol=1e-15,
                )

    def test_interpret_rejects_foreign_state(self):
        scenario, net, result = self.untrained_default()
        splitter = splitter_scenario(max_cycles=0)
        other = train(build_layered_net(splitter), splitter.train)
        with self.assertRaises(ContractViolation):
            interpret_trained_net(net, result, other.final_state)

    def test_inactive_tiles_can_stay_specular(self):
        scenario, net, result = self.untrained_default()
        config = interpret_trained_net(
            net, result, result.final_state, 1.0, "specular", scenario=scenario
        )
        self.assertTrue(
            all(
                tile.function == TileFunction.SPECULAR
                for tile in config.tiles.values()
            )
        )

    def test_kp_uses_every_middle_tile(self):
        scenario = default_scenario()
        net = build_layered_net(scenario)
        routing = kp_route(scenario, net, scenario_rays(scenario))
        self.assertTrue(routing.complete)
        self.assertAlmostEqual(routing.routed_fraction, 1.0)
        self.assertEqual(routing.config.active_counts(scenario), [5, 5, 5])
        for tile in routing.config.tiles.values():
            self.assertLessEqual(len(tile.routes), 1)
            self.assertEqual(len(tile.routes), 1 if tile.active else 0)

    def test_kp_single_ray_uses_one_tile_per_layer(self):
        scenario = default_scenario()
        rays = emit_rays(scenario.transmitter, 1, scenario.tx_power_w)
        routing = kp_route(scenario, build_layered_net(scenario), rays)
        self.assertEqual(routing.config.active_counts(scenario), [1, 1, 1])
        self.assertEqual(routing.paths, {0: [(0, 2), (1, 0), (2, 3)]})

    def test_kp_paths_pair_tiles_greedily(self):
        scenario = default_scenario()
        routing = kp_route(scenario, build_layered_net(scenario), scenario_rays(scenario))
        self.assertEqual(
            routing.paths,
            {
                0: [(0, 0), (1, 0), (2, 4)],
                1: [(0, 1), (1, 1), (2, 1)],
                2: [(0, 2), (1, 2), (2, 0)],
                3: [(0, 3), (1, 3), (2, 2)],
                4: [(0, 4), (1, 4), (2, 3)],
            },
        )
        with self.assertLogs("pwe.configurators", "DEBUG") as logs:
            kp_config(scenario, build_layered_net(scenario), scenario_rays(scenario))
        self.assertIn(
            "DEBUG:pwe.configurators:Ray 0 routed over (0, 0) -> (1, 0) -> (2, 4)",
            logs.output,
        )

    def test_kp_more_rays_than_tiles(self):
        scenario = default_scenario()
        rays = emit_rays(scenario.transmitter, 6, scenario.tx_power_w)
        with self.assertRaises(RoutingFailure) as ctx:
            kp_config(scenario, build_layered_net(scenario), rays)
        self.assertTrue(ctx.exception.stranded)
        self.assertIn("Routing failure", str(ctx.exception))

    def test_kp_one_route_per_tile_on_corridors(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            counts = [int(c) for c in rng.integers(1, 4, size=int(rng.integers(1, 4)))]
            scenario = corridor_scenario(counts)
            tx = replace(
                scenario.transmitter, boresight_deg=-45.0, lobe_width_deg=60.0
            )
            scenario = replace(scenario, users=(tx, scenario.receiver))
            rays = emit_rays(tx, int(rng.integers(1, 5)), 1.0)
            routing = kp_route(scenario, build_layered_net(scenario), rays)
            for tile in routing.config.tiles.values():
                self.assertLessEqual(len(tile.routes), 1)

    def test_route_for_picks_nearest_direction(self):
        left = Route(Vec2(-1, 0), ((Vec2(0, 1), 1.0),))
        right = Route(Vec2(1, 0), ((Vec2(0, -1), 1.0),))
        tile = TileConfig(TileFunction.STEER, (left, right), active=True)
        self.assertIs(tile.route_for(Vec2(0.96, 0.28)), right)
        self.assertIsNone(tile.route_for(Vec2(0, 1)))

    def test_config_gap(self):
        with self.assertRaises(ContractViolation):
            EnvironmentConfig("empty").get((0, 0))


class RayTracerTest(SimpleTestCase):
    def test_emit_single_ray(self):
        rays = emit_rays(transmitter(0, 0), 1, 1e-6)
        self.assertEqual(len(rays), 1)
        self.assertEqual(rays[0].power_w, 1e-6)
        self.assertAlmostEqual(rays[0].direction.angle(), 0.0)

    def test_emit_five_rays(self):
        rays = emit_rays(transmitter(0, 0, lobe=40.0), 5, 1e-6)
        angles = [math.degrees(ray.direction.angle()) for ray in rays]
        for angle, expected in zip(angles, [-16, -8, 0, 8, 16]):
            self.assertAlmostEqual(angle, expected)
        self.assertAlmostEqual(rays[0].power_w, rays[4].power_w, places=20)
        self.assertAlmostEqual(rays[1].power_w, rays[3].power_w, places=20)
        self.assertAlmostEqual(sum(ray.power_w for ray in rays), 1e-6, places=18)
        self.assertFalse(any(ray.collimated for ray in rays))

    def test_emit_needs_a_ray(self):
        with self.assertRaises(PweDomainError):
            emit_rays(transmitter(0, 0), 0, 1e-6)

    def test_transmit_power(self):
        self.assertAlmostEqual(default_scenario().tx_power_w, 1e-6, places=18)

    def test_dbm(self):
        self.assertAlmostEqual(watts_to_dbm(1e-6), -30.0)
        self.assertIsNone(watts_to_dbm(0.0))
        self.assertEqual(format_dbm(None), "no signal")

    def test_all_absorb(self):
        scenario = default_scenario()
        config = EnvironmentConfig(
            "absorb",
            {t.key: TileConfig(TileFunction.ABSORB) for t in scenario.coated_tiles},
        )
        result = trace(scenario, config, scenario_rays(scenario))
        self.assertEqual(result.received_w, 0.0)
        self.assertAlmostEqual(result.absorbed_fraction, 1.0)
        self.assertIsNone(received_power_dbm(result))

    def test_baffle_blocks_direct_path(self):
        scenario = default_scenario()
        tx, rx = scenario.transmitter.position, scenario.receiver.position
        self.assertFalse(los_visible(tx, rx, scenario.walls))
        self.assertTrue(los_visible(tx, rx, scenario.walls[:-1]))
        for tile in scenario.wall(0).tiles:
            self.assertTrue(los_visible(tx, tile.center, scenario.walls))

    def test_collimated_chain(self):
        scenario = default_scenario()
        ray = scenario_rays(scenario)[0]
        config = kp_config(scenario, build_layered_net(scenario), [ray])
        result = trace(scenario, config, [ray])
        self.assertAlmostEqual(result.received_w / ray.power_w, 0.99**3, places=12)
        self.assertEqual(result.terminations[TerminationReason.RECEIVED], 1)

    def test_regular_propagation(self):
        scenario = default_scenario()
        rays = scenario_rays(scenario)
        result = trace(scenario, regular_config(scenario), rays)
        emitted = sum(ray.power_w for ray in rays)
        # only the boresight ray reaches the receiver, after one bounce
        self.assertAlmostEqual(
            result.intercepted_fraction, 0.99 * rays[2].power_w / emitted
        )
        self.assertLessEqual(result.intercepted_fraction, 0.4)
        self.assertGreaterEqual(result.absorbed_fraction, 0.6)
        self.assertEqual(result.terminations[TerminationReason.RECEIVED], 1)
        self.assertAlmostEqual(result.received_dbm, -59.67, delta=0.05)
        self.assertTrue(result.ledger_closes())

    def test_kp_beats_regular(self):
        scenario = default_scenario()
        rays = scenario_rays(scenario)
        net = build_layered_net(scenario)
        kp = trace(scenario, kp_config(scenario, net, rays), rays)
        regular = trace(scenario, regular_config(scenario), rays)
        expected = sum(ray.power_w for ray in rays) * 0.99**3
        self.assertAlmostEqual(kp.received_w / expected, 1.0, places=9)
        self.assertAlmostEqual(kp.received_dbm, -30.13, delta=0.01)
        self.assertGreaterEqual(kp.received_dbm - regular.received_dbm, 10.0)

    def test_split_children_share_parent_power(self):
        scenario = default_scenario()
        ray = scenario_rays(scenario)[0]
        tile = scenario.wall(0).tiles[0]
        to_a, _ = unit_dir(tile.center, scenario.wall(1).tiles[0].center)
        to_b, _ = unit_dir(tile.center, scenario.wall(1).tiles[2].center)
        config = EnvironmentConfig(
            "split",
            {t.key: TileConfig(TileFunction.ABSORB) for t in scenario.coated_tiles},
        )
        config.tiles[tile.key] = TileConfig(
            TileFunction.STEER,
            (Route(ray.direction, ((to_a, 0.3), (to_b, 0.5))),),
            True,
        )
        result = trace(scenario, config, [ray])
        powers = {s.ray_id: s.power_w for s in result.segments}
        self.assertAlmostEqual(powers["0.0"], ray.power_w * 0.99 * 0.3, places=20)
        self.assertAlmostEqual(powers["0.1"], ray.power_w * 0.99 * 0.5, places=20)
        self.assertTrue(result.ledger_closes())

    def test_live_ray_cap_prunes_weakest(self):
        scenario = default_scenario()
        ray = scenario_rays(scenario)[0]
        tile = scenario.wall(0).tiles[0]
        to_a, _ = unit_dir(tile.center, scenario.wall(1).tiles[0].center)
        to_b, _ = unit_dir(tile.center, scenario.wall(1).tiles[2].center)
        config = regular_config(scenario)
        config.tiles[tile.key] = TileConfig(
            TileFunction.STEER,
            (Route(ray.direction, ((to_a, 0.3), (to_b, 0.7))),),
            True,
        )
        with self.assertLogs("pwe.raytracer", "WARNING"):
            result = trace(scenario, config, [ray], max_live_rays=1)
        self.assertAlmostEqual(result.truncated_w, ray.power_w * 0.99 * 0.3, places=20)
        self.assertTrue(result.ledger_closes())

    def test_config_gap_on_hit_tile(self):
        scenario = default_scenario()
        config = regular_config(scenario)
        del config.tiles[scenario.wall(0).tiles[0].key]
        with self.assertRaises(ContractViolation):
            trace(scenario, config, [scenario_rays(scenario)[0]])

    def test_rx_lobe_gate(self):
        scenario = default_scenario()
        gated = replace(
            scenario, physics=replace(scenario.physics, rx_lobe_gate=True)
        )
        rays = scenario_rays(scenario)
        boresight = rays[2]
        # the specular bounce arrives from behind the receiver's lobe
        open_result = trace(scenario, regular_config(scenario), [boresight])
        self.assertAlmostEqual(
            open_result.received_w / boresight.power_w, 0.0034933, places=6
        )
        gated_result = trace(gated, regular_config(gated), [boresight])
        self.assertEqual(gated_result.received_w, 0.0)
        config = kp_config(gated, build_layered_net(gated), [rays[0]])
        chained = trace(gated, config, [rays[0]])
        self.assertAlmostEqual(chained.received_w / rays[0].power_w, 0.99**3)

    def test_lossless_specular_conserves_power(self):
        scenario = default_scenario()
        lossless = replace(
            scenario, physics=replace(scenario.physics, bounce_loss_fraction=0.0)
        )
        result = trace(lossless, regular_config(lossless), scenario_rays(lossless))
        self.assertEqual(result.bounce_loss_w, 0.0)
        self.assertTrue(result.ledger_closes())

    def test_trace_is_deterministic(self):
        scenario = default_scenario()
        rays = scenario_rays(scenario)
        config = kp_config(scenario, build_layered_net(scenario), rays)
        self.assertEqual(
            trace(scenario, config, rays).segments,
            trace(scenario, config, rays).segments,
        )

    def test_ledger_closes_on_random_configs(self):
        scenario = default_scenario()
        rays = scenario_rays(scenario)
        rng = np.random.default_rng(17)

        def random_direction():
            return Vec2.from_angle(float(rng.uniform(-math.pi, math.pi)))

        for _ in range(1000):
            config = EnvironmentConfig("random")
            for tile in scenario.coated_tiles:
                choice = int(rng.integers(3))
                if choice == 0:
                    config.tiles[tile.key] = TileConfig(TileFunction.SPECULAR)
                elif choice == 1:
                    config.tiles[tile.key] = TileConfig(TileFunction.ABSORB)
                else:
                    fractions = rng.dirichlet(np.ones(3))[:2]
                    outgoing = tuple(
                        (random_direction(), float(f)) for f in fractions
                    )
                    route = Route(random_direction(), outgoing)
                    config.tiles[tile.key] = TileConfig(
                        TileFunction.STEER, (route,), True
                    )
            result = trace(scenario, config, rays, min_route_cosine=-1.0)
            self.assertTrue(result.ledger_closes(), result.ledger_residual)
            self.assertLessEqual(
                result.intercepted_w + result.absorbed_w + result.truncated_w,
                result.emitted_w * (1 + 1e-9),
            )


class SerializersTest(SimpleTestCase):
    def test_default_scenario(self):
        scenario = default_scenario()
        self.assertEqual(len(scenario.walls), 9)
        self.assertEqual(scenario.layer_order, (0, 1, 2))
        self.assertEqual(scenario.train.virtual_input_fractions, (0.2,) * 5)
        self.assertEqual(scenario.transmitter.position, Vec2(4.0, 8.5))
        self.assertEqual(scenario.violations(), [])

    def test_defaults(self):
        scenario = parse_scenario(
            {
                "walls": [{"a": [-0.5, 0], "b": [0.5, 0], "tiles": 2}],
                "layer_order": [0],
                "users": [
                    {"position": [-1, 1], "role": "transmitter"},
                    {"position": [1, 1, 1.5], "role": "receiver"},
                ],
            }
        )
        self.assertEqual(scenario.physics, PhysicsParams())
        self.assertEqual(scenario.train.eta, 0.95)
        self.assertEqual(scenario.train.virtual_input_fractions, (0.5, 0.5))
        self.assertEqual(scenario.train.ideal_output_fractions, (0.5, 0.5))
        self.assertEqual(scenario.receiver.position, Vec2(1, 1))
        self.assertEqual(scenario.walls[0].base_normal, Vec2(0, 1))

    def test_field_errors_are_flattened(self):
        document = default_document()
        document["walls"][1]["a"] = [1.0]
        with self.assertRaises(ConfigurationError) as ctx:
            parse_scenario(document)
        self.assertTrue(
            any(v.startswith("walls[1].a:") for v in ctx.exception.violations)
        )

    def test_fractions_must_sum_to_one(self):
        document = default_document()
        document["train"]["input_fractions"] = [0.2, 0.2, 0.2, 0.2, 0.1]
        problems = parse_scenario(document).violations()
        self.assertTrue(
            any("virtual_input_fractions must sum to 1" in p for p in problems)
        )

    def test_read_json_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaisesMessage(ConfigurationError, "scenario not found"):
                read_json(Path(tmp) / "missing.json")
            broken = Path(tmp) / "broken.json"
            broken.write_text('{"walls": [}')
            with self.assertRaisesMessage(ConfigurationError, "line 1, column"):
                read_json(broken)

    def test_environment_config_document(self):
        scenario = default_scenario()
        rays = scenario_rays(scenario)
        config = kp_config(scenario, build_layered_net(scenario), rays)
        restored = parse_environment_config(
            json.loads(json.dumps(dump_environment_config(config)))
        )
        self.assertEqual(restored.scheme_name, "kpconfig")
        self.assertEqual(restored.tiles, config.tiles)

    def test_environment_config_validation(self):
        document = {
            "scheme": "bad",
            "tiles": [
                {
                    "wall": 0,
                    "index": 0,
                    "function": "steer",
                    "routes": [
                        {
                            "incoming": [1, 0],
                            "outgoing": [
                                {"direction": [0, 1], "fraction": 0.7},
                                {"direction": [0, -1], "fraction": 0.7},
                            ],
                        }
                    ],
                },
                {
                    "wall": 0,
                    "index": 1,
                    "function": "specular",
                    "routes": [{"incoming": [1, 0], "outgoing": []}],
                },
            ],
        }
        with self.assertRaises(ConfigurationError) as ctx:
            parse_environment_config(document)
        self.assertEqual(len(ctx.exception.violations), 2)


class CommandsTest(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def write_document(self, name: str, document: dict) -> str:
        path = self.tmp / name
        path.write_text(json.dumps(document))
        return str(path)

    def test_validate_default(self):
        out = StringIO()
        call_command("pwe_validate", stdout=out)
        self.assertIn("valid, layers [5, 5, 5]", out.getvalue())

    def test_validate_missing_file(self):
        out = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command("pwe_validate", str(self.tmp / "nope.json"), stdout=out)
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("scenario not found", out.getvalue())

    def test_validate_occluded_layer(self):
        document = {
            "walls": [
                {"a": [-0.5, 0], "b": [0.5, 0]},
                {"a": [-2, 4], "b": [2, 4], "normal_side": "right", "tiles": 2},
                {"a": [-5, 2.5], "b": [5, 2.5], "coated": False},
            ],
            "layer_order": [0, 1],
            "users": [
                {"position": [0, 1], "role": "transmitter"},
                {"position": [0, 3], "role": "receiver"},
            ],
        }
        out = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command(
                "pwe_validate",
                self.write_document("occluded.json", document),
                stdout=out,
            )
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("disconnected layer", out.getvalue())

    def test_validate_fraction_sum(self):
        document = default_document()
        document["train"]["input_fractions"] = [0.2, 0.2, 0.2, 0.2, 0.1]
        out = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command(
                "pwe_validate", self.write_document("sum.json", document), stdout=out
            )
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("virtual_input_fractions must sum to 1", out.getvalue())

    def test_train_without_cycles_exits_with_status_2(self):
        document = default_document()
        document["train"]["max_cycles"] = 0
        out_dir = self.tmp / "train"
        with self.assertRaises(CommandError) as ctx:
            call_command(
                "pwe_train",
                self.write_document("zero.json", document),
                out=str(out_dir),
                stdout=StringIO(),
            )
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertEqual((out_dir / "rmse.csv").read_text(), "cycle,rmse,deviation\n")
        self.assertTrue((out_dir / "omegas.json").exists())
        self.assertTrue((out_dir / "network.svg").exists())

    def test_train_converged(self):
        document = {
            "walls": [{"a": [-0.5, 0], "b": [0.5, 0]}],
            "layer_order": [0],
            "users": [
                {"position": [-1, 1], "role": "transmitter"},
                {"position": [1, 1], "role": "receiver"},
            ],
            "train": {"init_range_deg": [0, 0]},
        }
        out = StringIO()
        call_command(
            "pwe_train",
            self.write_document("perfect.json", document),
            out=str(self.tmp / "perfect"),
            seed=5,
            stdout=out,
        )
        self.assertIn("Converged, seed 5: 1 cycle(s)", out.getvalue())
        omegas = json.loads((self.tmp / "perfect" / "omegas.json").read_text())
        self.assertEqual(omegas["omegas"]["1,1"]["omega_rad"], 0.0)

    def test_compare_is_deterministic(self):
        document = default_document()
        document["train"]["max_cycles"] = 5
        path = self.write_document("short.json", document)
        for name in ("first", "second"):
            call_command(
                "pwe_compare",
                path,
                out=str(self.tmp / name),
                seeds=2,
                stdout=StringIO(),
            )
        for artifact in (
            "results.csv",
            "seeds.csv",
            "rmse.csv",
            "omegas.json",
            "config_regular.json",
            "config_kpconfig.json",
            "config_nnconfig.json",
            "segments_kpconfig.csv",
        ):
            self.assertEqual(
                (self.tmp / "first" / artifact).read_bytes(),
                (self.tmp / "second" / artifact).read_bytes(),
                artifact,
            )
        rows = (self.tmp / "first" / "results.csv").read_text().splitlines()
        schemes = [row.split(",")[0] for row in rows[1:]]
        self.assertEqual(schemes, ["regular", "kpconfig", "nnconfig"])

    def test_trace_all_absorbers(self):
        config = {
            "scheme": "absorb",
            "tiles": [
                {"wall": wall, "index": index, "function": "absorb"}
                for wall in range(3)
                for index in range(5)
            ],
        }
        out = StringIO()
        call_command(
            "pwe_trace",
            config=self.write_document("absorb.json", config),
            out=str(self.tmp / "dark"),
            stdout=out,
        )
        self.assertIn("absorb: received no signal (dBm)", out.getvalue())
        self.assertIn("absorbed 100.0%", out.getvalue())
        self.assertTrue((self.tmp / "dark" / "segments_absorb.csv").exists())

    @patch("pwe.management.commands.pwe_compare.run_comparison")
    def test_compare_reports_construction_error(self, run_comparison_mock):
        run_comparison_mock.side_effect = ConstructionError("disconnected layer 2")
        with self.assertRaises(CommandError) as ctx:
            call_command("pwe_compare", out=str(self.tmp / "x"), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("disconnected layer 2", str(ctx.exception))

    def test_trace_stored_config(self):
        document = default_document()
        document["train"]["max_cycles"] = 2
        path = self.write_document("short.json", document)
        call_command("pwe_compare", path, out=str(self.tmp / "cmp"), stdout=StringIO())
        out = StringIO()
        call_command(
            "pwe_trace",
            path,
            config=str(self.tmp / "cmp" / "config_kpconfig.json"),
            out=str(self.tmp / "trace"),
            stdout=out,
        )
        self.assertIn("kpconfig: received -30.13 (dBm)", out.getvalue())
        self.assertTrue((self.tmp / "trace" / "segments_config_kpconfig.csv").exists())


@unittest.skipUnless(
    os.environ.get("PWE_ACCEPTANCE") == "1", "set PWE_ACCEPTANCE=1 for the long suite"
)
class AcceptanceTest(SimpleTestCase):
    """Statistical reproduction on the bundled floorplan."""

    def test_convergence_within_cycle_cap(self):
        scenario = default_scenario()
        middle = []
        start = time.perf_counter()
        for seed in range(100):
            params = replace(scenario.train, seed=seed)
            net = build_layered_net(scenario)
            result = train(net, params)
            if result.converged:
                config = interpret_trained_net(
                    net, result, result.final_state, scenario=scenario
                )
                middle.append(config.active_counts(scenario)[1])
        elapsed = time.perf_counter() - start
        self.assertGreaterEqual(len(middle), 80)
        self.assertLess(elapsed, 60.0)
        self.assertTrue(all(1 <= count <= 5 for count in middle), middle)

    def test_comparison_ordering(self):
        comparison = run_comparison(default_scenario())
        regular = comparison.report("regular")
        kp = comparison.report("kpconfig")
        nn = comparison.report("nnconfig")
        self.assertTrue(nn.converged)
        self.assertLessEqual(abs(nn.received_dbm - kp.received_dbm), 0.5)
        self.assertGreaterEqual(kp.received_dbm - regular.received_dbm, 10.0)
        self.assertGreaterEqual(nn.received_dbm - regular.received_dbm, 10.0)
        self.assertLessEqual(nn.active_tiles[1], kp.active_tiles[1])
