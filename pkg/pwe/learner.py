"""Feed-forward / back-propagation over the layered tile network.

Power fractions flow from the Tx input links through every wall-layer to the
Rx output links. Each tile reflects every impinging direction about its virtual
normal and splits the power over its outgoing links in proportion to the
clamped projections of the reflected direction (the link weights). Training
tunes one angle per tile with the delta rule, scaled by the tile's significance.

Every pass works on one wall-layer at a time over the dense arrays of
``LayeredNet.layer_arrays``; per-node views are cut from them on demand.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np

from .exceptions import ConfigurationError, ContractViolation, PweDomainError
from .geometry import Vec2
from .netbuild import LayerArrays, LayeredNet, TileNode
from .scenario import TrainParams, UpdateMode

logger = logging.getLogger(__name__)

WEIGHT_EPS = 1e-12
DEAD_POWER_EPS = 1e-12
OMEGA_MARGIN = 1e-6
OMEGA_LIMIT = math.pi / 2 - OMEGA_MARGIN


@dataclass
class NetState:
    """Everything one feed-forward/back-propagation cycle reads or writes.

    The ``layer_*`` lists hold one dense array per wall-layer, laid out like
    the matching ``LayerArrays``. The per-node properties index by the node's
    flat index; their inner arrays follow the order of the node's incoming
    (``node_in_power``, ``sensitivity``) or outgoing (``node_out_power``,
    ``a_vec``) links.
    """

    omegas: np.ndarray
    input_powers: np.ndarray | None
    ideal_outputs: np.ndarray
    layout: list[LayerArrays] = field(default_factory=list, repr=False)
    layer_in_power: list[np.ndarray] = field(default_factory=list, repr=False)
    layer_out_power: list[np.ndarray] = field(default_factory=list, repr=False)
    layer_weights: list[np.ndarray] = field(default_factory=list, repr=False)
    layer_slopes: list[np.ndarray] = field(default_factory=list, repr=False)
    outputs: np.ndarray | None = None
    delta: np.ndarray | None = None
    deviation: float | None = None
    layer_a: list[np.ndarray] = field(default_factory=list, repr=False)
    layer_sensitivity: list[np.ndarray] = field(default_factory=list, repr=False)
    grad: np.ndarray | None = None

    @classmethod
    def initial(
        cls,
        net: LayeredNet,
        input_powers,
        ideal_outputs,
        omegas=None,
    ) -> "NetState":
        inputs = None if input_powers is None else np.asarray(input_powers, float)
        ideals = np.asarray(ideal_outputs, dtype=float)
        if inputs is not None and len(inputs) != len(net.input_links):
            raise ConfigurationError(
                f"virtual_input_fractions needs one entry per first-layer node "
                f"({len(net.input_links)}), got {len(inputs)}"
            )
        if len(ideals) != len(net.output_links):
            raise ConfigurationError(
                f"ideal_output_fractions needs one entry per last-layer node "
                f"({len(net.output_links)}), got {len(ideals)}"
            )
        start = net.omegas() if omegas is None else np.asarray(omegas, dtype=float)
        return cls(omegas=start.copy(), input_powers=inputs, ideal_outputs=ideals)

    @property
    def evaluated(self) -> bool:
        return self.deviation is not None

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(self.delta**2)))

    @property
    def total_input(self) -> float:
        return float(np.sum(self.input_powers))

    def _per_node(
        self,
        layered: list[np.ndarray],
        view: Callable[[LayerArrays, np.ndarray, int], np.ndarray],
    ) -> list[np.ndarray]:
        if not layered:
            return []
        views = [np.zeros(0)] * sum(len(arrays.indices) for arrays in self.layout)
        for arrays, values in zip(self.layout, layered):
            for row, index in enumerate(arrays.indices):
                views[index] = view(arrays, values, row)
        return views

    @cached_property
    def node_in_power(self) -> list[np.ndarray]:
        return self._per_node(self.layer_in_power, LayerArrays.in_view)

    @cached_property
    def node_out_power(self) -> list[np.ndarray]:
        return self._per_node(self.layer_out_power, LayerArrays.out_view)

    @cached_property
    def weights(self) -> list[np.ndarray]:
        return self._per_node(self.layer_weights, LayerArrays.link_view)

    @cached_property
    def weight_slopes(self) -> list[np.ndarray]:
        return self._per_node(self.layer_slopes, LayerArrays.link_view)

    @cached_property
    def a_vec(self) -> list[np.ndarray]:
        return self._per_node(self.layer_a, LayerArrays.out_view)

    @cached_property
    def sensitivity(self) -> list[np.ndarray]:
        return self._per_node(self.layer_sensitivity, LayerArrays.in_view)


@dataclass
class TrainingResult:
    final_omegas: np.ndarray
    rmse_curve: list[float]
    deviation_curve: list[float]
    cycles_run: int
    converged: bool
    final_state: NetState
    seed: int | None = None
    initial_omegas: np.ndarray | None = None
    revivals: int = 0

    @property
    def rmse_final(self) -> float | None:
        return self.rmse_curve[-1] if self.rmse_curve else None


def _normals(base_normals: np.ndarray, omegas: np.ndarray) -> tuple:
    """Virtual normals, each base normal rotated counterclockwise by omega."""
    c, s = np.cos(omegas), np.sin(omegas)
    bx, by = base_normals[..., 0], base_normals[..., 1]
    return c * bx - s * by, s * bx + c * by


def _weights_and_slopes(
    nx: np.ndarray,
    ny: np.ndarray,
    in_dirs: np.ndarray,
    out_dirs: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Link weights w[l, i, j] and their derivatives dw[l, i, j]/d(omega_l).

    ``nx``/``ny`` have shape (L, 1), ``in_dirs`` (L, S, 2) and ``out_dirs``
    (L, T, 2). Row i belongs to impinging direction i, column j to outgoing
    direction j; zero directions never receive power.
    """
    # dn/domega is the counterclockwise perpendicular of n
    px, py = -ny, nx
    dx, dy = in_dirs[..., 0], in_dirs[..., 1]
    d_n = dx * nx + dy * ny
    d_p = dx * px + dy * py
    rx = dx - 2.0 * d_n * nx
    ry = dy - 2.0 * d_n * ny
    drx = -2.0 * (d_p * nx + d_n * px)
    dry = -2.0 * (d_p * ny + d_n * py)

    ox, oy = out_dirs[:, None, :, 0], out_dirs[:, None, :, 1]
    projections = rx[..., None] * ox + ry[..., None] * oy
    slopes = drx[..., None] * ox + dry[..., None] * oy
    active = projections > 0.0
    u = np.where(active, projections, 0.0)
    du = np.where(active, slopes, 0.0)
    total = u.sum(axis=-1, keepdims=True)
    dtotal = du.sum(axis=-1, keepdims=True)

    alive = total > WEIGHT_EPS
    t = np.where(alive, total, 1.0)
    weights = np.where(alive, u / t, 0.0)
    weight_slopes = np.where(alive, (du * t - u * dtotal) / (t * t), 0.0)
    return weights, weight_slopes


def _layer_weights(
    arrays: LayerArrays, omegas: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    nx, ny = _normals(arrays.base_normals, omegas[arrays.indices])
    return _weights_and_slopes(
        nx[:, None], ny[:, None], arrays.in_dirs, arrays.out_dirs
    )


def link_weights(node: TileNode, omega: float, d: Vec2) -> np.ndarray:
    """Power fraction sent over each outgoing link for impinging direction ``d``.

    The fractions sum to 1, or are all zero when the reflected direction faces
    away from every outgoing link (the tile absorbs that direction).
    """
    if not node.outgoing:
        raise ContractViolation(f"node ({node.label}) has no outgoing link")
    nx, ny = _normals(
        np.array([node.tile.base_normal.as_tuple()]), np.array([float(omega)])
    )
    weights, _ = _weights_and_slopes(
        nx[:, None], ny[:, None], np.array([[[d.x, d.y]]]), node.out_dirs[None]
    )
    return weights[0, 0]


def _require_evaluated(state: NetState) -> None:
    if not state.evaluated:
        raise ContractViolation("feed_forward has not run for this state")


def feed_forward(net: LayeredNet, state: NetState) -> NetState:
    if state.input_powers is None:
        raise ContractViolation("input link powers are not initialized")
    layout = net.layer_arrays
    in_power, out_power, weights, weight_slopes = [], [], [], []

    power = np.zeros(layout[0].in_mask.shape)
    power[net.input_rows, 0] = state.input_powers
    for arrays in layout:
        w, dw = _layer_weights(arrays, state.omegas)
        rho = np.einsum("ls,lst->lt", power, w)
        in_power.append(power)
        out_power.append(rho)
        weights.append(w)
        weight_slopes.append(dw)
        # Column m of rho is what node m of the next layer receives
        power = rho.T.copy()

    outputs = out_power[-1][net.output_rows, 0]
    delta = state.ideal_outputs - outputs
    return replace(
        state,
        layout=layout,
        layer_in_power=in_power,
        layer_out_power=out_power,
        layer_weights=weights,
        layer_slopes=weight_slopes,
        outputs=outputs,
        delta=delta,
        deviation=float(0.5 * np.sum(delta**2)),
        layer_a=[],
        layer_sensitivity=[],
        grad=None,
    )


def _layer_significance(net: LayeredNet, state: NetState, k: int) -> np.ndarray:
    if k == net.kappa - 1:
        scale = np.zeros(len(net.layers[k]))
        np.add.at(scale, net.output_rows, state.delta)
        return scale
    return state.layer_in_power[k].sum(axis=1)


def significance(net: LayeredNet, state: NetState, k: int, l: int) -> float:
    """Delta-rule scale: output error on the last layer, impinging power elsewhere."""
    _require_evaluated(state)
    return float(_layer_significance(net, state, k)[l])


def backprop_gradients(net: LayeredNet, state: NetState) -> NetState:
    """dE/domega for every node.

    Walking the layers in reverse, each node's helping vector ``a`` holds, per
    outgoing link, the error-weighted sensitivity of the outputs to power sent
    over that link: the output error delta on Rx links, and the receiving
    neighbor's weight-averaged ``a`` for the impinging direction on inter-layer
    links. With e_j = d(rho_j)/d(omega), the gradient is -(e . a); the minus
    comes from delta = ideal - achieved.
    """
    _require_evaluated(state)
    layout = state.layout
    a_layers: list[np.ndarray] = [np.zeros(0)] * net.kappa
    sensitivity: list[np.ndarray] = [np.zeros(0)] * net.kappa
    grad = np.zeros(net.node_count)

    a = np.zeros(layout[-1].out_mask.shape)
    a[net.output_rows, 0] = state.delta
    for k in reversed(range(net.kappa)):
        if k < net.kappa - 1:
            a = sensitivity[k + 1].T.copy()
        e = np.einsum("ls,lst->lt", state.layer_in_power[k], state.layer_slopes[k])
        grad[layout[k].indices] = -np.sum(e * a, axis=1)
        a_layers[k] = a
        sensitivity[k] = np.einsum("lst,lt->ls", state.layer_weights[k], a)

    return replace(state, layer_a=a_layers, layer_sensitivity=sensitivity, grad=grad)


def central_difference(func: Callable[[float], float], x: float, h: float) -> float:
    if h <= 0:
        raise PweDomainError(f"step h={h} must be positive")
    return (func(x + h) - func(x - h)) / (2.0 * h)


def fd_gradient(
    net: LayeredNet, state: NetState, k: int, l: int, h: float = 1e-6
) -> float:
    """Central finite difference of the deviation w.r.t. one node's angle.

    ``state`` supplies the angle vector and the input/ideal powers; every
    evaluation reruns the full feed-forward pass.
    """
    index = net.node(k, l).index
    omega = float(state.omegas[index])
    if not (-math.pi / 2 < omega - h and omega + h < math.pi / 2):
        raise PweDomainError(f"omega={omega} +/- {h} leaves (-pi/2, pi/2)")

    def deviation_at(value: float) -> float:
        omegas = state.omegas.copy()
        omegas[index] = value
        return feed_forward(net, replace(state, omegas=omegas)).deviation

    return central_difference(deviation_at, omega, h)


def clamp_omegas(omegas: np.ndarray) -> np.ndarray:
    return np.clip(omegas, -OMEGA_LIMIT, OMEGA_LIMIT)


def _layer_step(
    net: LayeredNet, state: NetState, omegas: np.ndarray, k: int, eta: float
) -> None:
    index = net.layer_arrays[k].indices
    step = eta * state.grad[index] * _layer_significance(net, state, k)
    omegas[index] = clamp_omegas(state.omegas[index] - step)


def apply_updates(
    net: LayeredNet,
    state: NetState,
    eta: float,
    mode: UpdateMode = UpdateMode.BATCH,
) -> np.ndarray:
    """Delta-rule step omega* = omega - eta * dE/domega * S, clamped into range.

    Batch mode updates all tiles from the same pre-update state. Sequential
    mode updates the last layer first and re-evaluates the network before each
    earlier layer.
    """
    if state.grad is None:
        raise ContractViolation("backprop_gradients has not run for this state")
    omegas = state.omegas.copy()
    if UpdateMode(mode) == UpdateMode.BATCH:
        for k in range(net.kappa):
            _layer_step(net, state, omegas, k, eta)
    else:
        current = state
        for k in reversed(range(net.kappa)):
            _layer_step(net, current, omegas, k, eta)
            if k > 0:
                current = backprop_gradients(
                    net, feed_forward(net, replace(current, omegas=omegas.copy()))
                )
    net.set_omegas(omegas)
    return omegas


def _unit_rows(vectors: np.ndarray) -> np.ndarray:
    lengths = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return vectors / np.where(lengths > WEIGHT_EPS, lengths, 1.0)


def revive_dead_tiles(
    net: LayeredNet, state: NetState, omegas: np.ndarray
) -> list[int]:
    """Re-aim every tile that absorbs power it receives.

    A tile is dead when a powered impinging direction reflects away from all
    of its outgoing links: its weights and their slopes are zero there, so the
    delta rule can never bring it back. Such a tile is turned to reflect its
    power-weighted mean impinging direction onto the mean of its outgoing
    directions, which lies inside its fan. ``omegas`` is updated in place;
    the flat indices of the revived tiles are returned.
    """
    _require_evaluated(state)
    revived: list[int] = []
    for arrays, power, weights in zip(
        state.layout, state.layer_in_power, state.layer_weights
    ):
        powered = arrays.in_mask & (power > DEAD_POWER_EPS)
        dead = powered & (weights.sum(axis=2) < 0.5)
        rows = np.flatnonzero(dead.any(axis=1))
        if rows.size == 0:
            continue
        incoming = _unit_rows(
            np.einsum("ls,lsc->lc", power[rows], arrays.in_dirs[rows])
        )
        outgoing = _unit_rows(arrays.out_dirs[rows].sum(axis=1))
        normals = outgoing - incoming
        base = arrays.base_normals[rows]
        cross = base[:, 0] * normals[:, 1] - base[:, 1] * normals[:, 0]
        dot = base[:, 0] * normals[:, 0] + base[:, 1] * normals[:, 1]
        usable = np.linalg.norm(normals, axis=1) > WEIGHT_EPS
        index = arrays.indices[rows[usable]]
        omegas[index] = clamp_omegas(np.arctan2(cross[usable], dot[usable]))
        revived.extend(int(i) for i in index)
    if revived:
        net.set_omegas(omegas)
    return revived


def _per_link(fractions, links, tile_of, what: str) -> np.ndarray:
    values = []
    for link in links:
        index = tile_of(link).index_in_wall
        if index >= len(fractions):
            raise ConfigurationError(
                f"{what} has {len(fractions)} entries but the net uses tile "
                f"{index + 1} of its wall"
            )
        values.append(fractions[index])
    return np.array(values, dtype=float)


def link_fractions(
    net: LayeredNet, params: TrainParams
) -> tuple[np.ndarray, np.ndarray]:
    """Per-tile input and ideal fractions mapped onto the input and output links."""
    inputs = _per_link(
        params.virtual_input_fractions,
        net.input_links,
        lambda link: net.nodes[link.target].tile,
        "virtual_input_fractions",
    )
    ideals = _per_link(
        params.ideal_output_fractions,
        net.output_links,
        lambda link: net.nodes[link.source].tile,
        "ideal_output_fractions",
    )
    return inputs, ideals


def random_omegas(net: LayeredNet, params: TrainParams) -> np.ndarray:
    low, high = params.init_omega_range_rad
    rng = np.random.default_rng(params.seed)
    return clamp_omegas(rng.uniform(low, high, size=net.node_count))


def train(
    net: LayeredNet,
    params: TrainParams,
    initial_omegas: np.ndarray | None = None,
) -> TrainingResult:
    """Feed forward, back-propagate and update until the RMSE target or cycle cap.

    Every cycle evaluates the net first; the loop stops on an evaluated state,
    so ``final_state`` and ``rmse_curve[-1]`` describe ``final_omegas``. Tiles
    left dead by an update are re-aimed before the next cycle.
    """
    params.validate()
    if initial_omegas is None:
        start = random_omegas(net, params)
    else:
        start = clamp_omegas(np.asarray(initial_omegas, dtype=float))
    net.set_omegas(start)
    inputs, ideals = link_fractions(net, params)
    state = NetState.initial(net, inputs, ideals, start)
    logger.info(
        "Training %s net: eta=%s, target RMSE=%s, max %d cycles, seed %s",
        net.layer_sizes,
        params.eta,
        params.rmse_target,
        params.max_cycles,
        params.seed,
    )

    rmse_curve: list[float] = []
    deviation_curve: list[float] = []
    converged = False
    revivals = 0
    for cycle in range(1, params.max_cycles + 1):
        state = feed_forward(net, state)
        rmse = state.rmse
        rmse_curve.append(rmse)
        deviation_curve.append(state.deviation)
        if rmse < params.rmse_target:
            converged = True
            break
        if cycle == params.max_cycles:
            break
        state = backprop_gradients(net, state)
        omegas = apply_updates(net, state, params.eta, params.update_mode)
        revived = revive_dead_tiles(net, state, omegas)
        if revived:
            revivals += len(revived)
            logger.debug("cycle %d: re-aimed dead tile(s) %s", cycle, revived)
        state = replace(state, omegas=omegas.copy())
        if cycle % 100 == 0:
            logger.debug("cycle %d: RMSE=%.3e", cycle, rmse)

    if not state.evaluated:
        state = feed_forward(net, state)
    logger.info(
        "Training %s after %d cycle(s), RMSE=%s, %d revival(s)",
        "converged" if converged else "stopped",
        len(rmse_curve),
        f"{rmse_curve[-1]:.3e}" if rmse_curve else "n/a",
        revivals,
    )
    return TrainingResult(
        final_omegas=state.omegas.copy(),
        rmse_curve=rmse_curve,
        deviation_curve=deviation_curve,
        cycles_run=len(rmse_curve),
        converged=converged,
        final_state=state,
        seed=params.seed,
        initial_omegas=start.copy(),
        revivals=revivals,
    )
