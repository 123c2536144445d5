"""Run artifacts: curves, angles, configs, traced segments, tables and SVGs.

Everything written here is a pure function of its inputs, so repeated runs with
the same scenario and seed give byte-identical files. Wall-clock timings only
appear in the aligned-text table.
"""

import csv
import json
import math
from pathlib import Path

from shapely.geometry import LineString, Point

from .configurators import EnvironmentConfig, TileFunction
from .learner import NetState, TrainingResult
from .netbuild import LayeredNet, Link
from .pipeline import NNConfigRun, RunReport
from .raytracer import TraceResult, format_dbm
from .scenario import Scenario
from .serializers import dump_environment_config

FUNCTION_COLORS = {
    TileFunction.STEER: "#1f77b4",
    TileFunction.COLLIMATE_STEER: "#2ca02c",
    TileFunction.ABSORB: "#7f7f7f",
    TileFunction.SPECULAR: "#ff7f0e",
}
ABSORBER_COLOR = "#333333"
RAY_COLOR = "#d62728"
MARGIN_M = 0.5


def _write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=False)
        f.write("\n")
    return path


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def write_rmse_csv(path: Path, result: TrainingResult) -> Path:
    rows = (
        (cycle, repr(rmse), repr(deviation))
        for cycle, (rmse, deviation) in enumerate(
            zip(result.rmse_curve, result.deviation_curve), start=1
        )
    )
    return _write_csv(path, ["cycle", "rmse", "deviation"], rows)


def write_omegas_json(path: Path, net: LayeredNet, result: TrainingResult) -> Path:
    data = {
        "seed": result.seed,
        "converged": result.converged,
        "cycles_run": result.cycles_run,
        "rmse_final": result.rmse_final,
        "omegas": {
            node.label: {
                "wall": node.tile.wall_id,
                "tile": node.tile.index_in_wall,
                "omega_rad": float(result.final_omegas[node.index]),
                "omega_deg": math.degrees(float(result.final_omegas[node.index])),
            }
            for node in net.nodes
        },
    }
    return _write_json(path, data)


def write_config_json(path: Path, config: EnvironmentConfig) -> Path:
    return _write_json(path, dump_environment_config(config))


def write_segments_csv(path: Path, result: TraceResult) -> Path:
    rows = (
        (
            segment.ray_id,
            repr(segment.start.x),
            repr(segment.start.y),
            repr(segment.end.x),
            repr(segment.end.y),
            repr(segment.power_w),
        )
        for segment in result.segments
    )
    return _write_csv(path, ["ray_id", "x1", "y1", "x2", "y2", "power_w"], rows)


def _active_tiles(report: RunReport) -> str:
    return "/".join(str(count) for count in report.active_tiles)


def _optional(value, fmt: str = "{}") -> str:
    return "" if value is None else fmt.format(value)


def write_results_csv(path: Path, reports: list[RunReport]) -> Path:
    rows = (
        (
            report.scheme_name,
            format_dbm(report.received_dbm),
            repr(report.received_w),
            repr(report.intercepted_fraction),
            _active_tiles(report),
            _optional(report.cycles_run),
            _optional(report.rmse_final, "{!r}"),
            _optional(report.converged),
            report.error or "",
        )
        for report in reports
    )
    header = [
        "scheme",
        "received_dbm",
        "received_w",
        "intercepted_fraction",
        "active_tiles",
        "cycles_run",
        "rmse_final",
        "converged",
        "error",
    ]
    return _write_csv(path, header, rows)


def results_table(reports: list[RunReport]) -> str:
    """Aligned plain-text version of the results, with timings."""
    header = ("scheme", "received", "active tiles", "cycles", "rmse", "ms")
    rows = [header]
    for report in reports:
        received = format_dbm(report.received_dbm)
        if received != "no signal":
            received += " dBm"
        if report.error:
            received = "routing failure"
        rows.append(
            (
                report.scheme_name,
                received,
                _active_tiles(report) or "-",
                _optional(report.cycles_run) or "-",
                _optional(report.rmse_final, "{:.2e}") or "-",
                f"{report.wall_clock_ms:.0f}",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = [
        "  ".join(cell.ljust(width) for cell, width in zip(row, widths))
        for row in rows
    ]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def write_results_table(path: Path, reports: list[RunReport]) -> Path:
    return _write_text(path, results_table(reports))


def write_seeds_csv(path: Path, scenario: Scenario, runs: list[NNConfigRun]) -> Path:
    middle = scenario.kappa // 2
    rows = (
        (
            run.seed,
            run.converged,
            run.result.cycles_run,
            _optional(run.result.rmse_final, "{!r}"),
            run.config.active_counts(scenario)[middle],
        )
        for run in runs
    )
    header = ["seed", "converged", "cycles", "rmse", "middle_active_tiles"]
    return _write_csv(path, header, rows)


def _svg_document(min_x, min_y, width, height, body: list[str], flip: bool) -> str:
    view_y = -(min_y + height) if flip else min_y
    group = '<g transform="scale(1,-1)">' if flip else "<g>"
    return (
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{min_x:.3f} {view_y:.3f} {width:.3f} {height:.3f}" '
        'width="600" height="600">\n'
        f"{group}\n" + "\n".join(body) + "\n</g>\n</svg>\n"
    )


def floorplan_svg(
    scenario: Scenario, config: EnvironmentConfig, result: TraceResult | None = None
) -> str:
    """Floorplan, tile functions and traced rays (opacity follows ray power)."""
    body = []
    for wall in scenario.walls:
        if not wall.coated:
            body.append(wall.line.svg(0.05, ABSORBER_COLOR))
            continue
        for tile in wall.tiles:
            half = wall.tile_width / 2.0
            direction = (wall.b - wall.a) * (1.0 / wall.length)
            line = LineString(
                [
                    (tile.center - direction * half).as_tuple(),
                    (tile.center + direction * half).as_tuple(),
                ]
            )
            tile_config = config.tiles.get(tile.key)
            color = (
                FUNCTION_COLORS[tile_config.function] if tile_config else "#000000"
            )
            opacity = 1.0 if tile_config and tile_config.active else 0.6
            body.append(line.svg(0.08, color, opacity))
    if result is not None and result.segments:
        strongest = max(segment.power_w for segment in result.segments)
        for segment in result.segments:
            opacity = segment.power_w / strongest if strongest > 0 else 0.0
            line = LineString([segment.start.as_tuple(), segment.end.as_tuple()])
            body.append(line.svg(0.02, RAY_COLOR, round(max(opacity, 0.05), 4)))
    body.append(Point(scenario.transmitter.position.as_tuple()).svg(0.06, "#1f77b4"))
    body.append(Point(scenario.receiver.position.as_tuple()).svg(0.06, "#2ca02c"))

    lines = [wall.line for wall in scenario.walls] + [
        Point(user.position.as_tuple()) for user in scenario.users
    ]
    min_x = min(geometry.bounds[0] for geometry in lines) - MARGIN_M
    min_y = min(geometry.bounds[1] for geometry in lines) - MARGIN_M
    max_x = max(geometry.bounds[2] for geometry in lines) + MARGIN_M
    max_y = max(geometry.bounds[3] for geometry in lines) + MARGIN_M
    return _svg_document(min_x, min_y, max_x - min_x, max_y - min_y, body, flip=True)


def _link_powers(net: LayeredNet, state: NetState) -> list[tuple[Link, float]]:
    powers = [
        (link, float(power)) for link, power in zip(net.input_links, state.input_powers)
    ]
    for pairs in net.inter_links:
        for link in pairs:
            power = state.node_out_power[link.source][link.source_slot]
            powers.append((link, float(power)))
    powers.extend(
        (link, float(power)) for link, power in zip(net.output_links, state.outputs)
    )
    return powers


def _network_panel(net: LayeredNet, state: NetState, offset_x: float, title: str):
    """Layered drawing: Tx at the left, one column per layer, Rx at the right."""
    column = 3.0
    row = 1.5
    tallest = max(net.layer_sizes)

    def position(endpoint: int | None, is_source: bool) -> tuple[float, float]:
        if endpoint is None:
            x = offset_x if is_source else offset_x + column * (net.kappa + 1)
            return (x, row * (tallest - 1) / 2.0)
        node = net.nodes[endpoint]
        shift = (tallest - len(net.layers[node.k])) / 2.0
        return (offset_x + column * (node.k + 1), row * (node.l + shift))

    body = [f'<text x="{offset_x:.2f}" y="-1.0" font-size="0.6">{title}</text>']
    total = state.total_input or 1.0
    for link, power in _link_powers(net, state):
        if power <= 0.0:
            continue
        line = LineString([position(link.source, True), position(link.target, False)])
        body.append(line.svg(round(0.25 * power / total, 5), "#1f77b4", 0.8))
    for node in net.nodes:
        x, y = position(node.index, False)
        body.append(Point(x, y).svg(0.08, "#ff7f0e"))
        degrees = math.degrees(float(state.omegas[node.index]))
        body.append(
            f'<text x="{x + 0.3:.2f}" y="{y - 0.3:.2f}" font-size="0.35">'
            f"{node.label}: {degrees:.1f}&#176;</text>"
        )
    for x, label in ((offset_x, "Tx"), (offset_x + column * (net.kappa + 1), "Rx")):
        y = row * (tallest - 1) / 2.0
        body.append(Point(x, y).svg(0.1, "#2ca02c"))
        body.append(
            f'<text x="{x - 0.3:.2f}" y="{y + 0.9:.2f}" font-size="0.5">{label}</text>'
        )
    return body


def network_svg(net: LayeredNet, untrained: NetState, trained: NetState) -> str:
    """Untrained and trained networks side by side; stroke width follows link power."""
    width = 3.0 * (net.kappa + 1)
    gap = 2.0
    body = _network_panel(net, untrained, 0.0, "untrained")
    body += _network_panel(net, trained, width + gap, "trained")
    height = 1.5 * max(net.layer_sizes) + 2.0
    return _svg_document(
        -1.0, -2.0, 2 * width + gap + 2.0, height + 1.0, body, flip=False
    )


def write_floorplan_svg(
    path: Path,
    scenario: Scenario,
    config: EnvironmentConfig,
    result: TraceResult | None = None,
) -> Path:
    return _write_text(path, floorplan_svg(scenario, config, result))


def write_network_svg(path: Path, run: NNConfigRun) -> Path:
    return _write_text(path, network_svg(run.net, run.untrained, run.trained))


def write_training_artifacts(out_dir: Path, run: NNConfigRun) -> list[Path]:
    return [
        write_rmse_csv(out_dir / "rmse.csv", run.result),
        write_omegas_json(out_dir / "omegas.json", run.net, run.result),
        write_network_svg(out_dir / "network.svg", run),
    ]
