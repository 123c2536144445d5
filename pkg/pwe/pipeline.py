"""End-to-end scheme runs: train, configure, trace and report."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .configurators import (
    DEFAULT_ROUTE_MIN_COSINE,
    EnvironmentConfig,
    interpret_trained_net,
    kp_config,
    regular_config,
)
from .exceptions import RoutingFailure
from .learner import NetState, TrainingResult, feed_forward, link_fractions, train
from .netbuild import LayeredNet, build_layered_net
from .raytracer import DEFAULT_MAX_LIVE_RAYS, Ray, TraceResult, emit_rays, trace
from .scenario import Scenario

logger = logging.getLogger(__name__)

REGULAR = "regular"
KPCONFIG = "kpconfig"
NNCONFIG = "nnconfig"
SCHEMES = (REGULAR, KPCONFIG, NNCONFIG)


@dataclass
class TracerOptions:
    max_live_rays: int = DEFAULT_MAX_LIVE_RAYS
    min_route_cosine: float = DEFAULT_ROUTE_MIN_COSINE


@dataclass
class NNConfigRun:
    """One training run: the net, its state before and after, and its config."""

    seed: int
    net: LayeredNet
    untrained: NetState
    result: TrainingResult
    config: EnvironmentConfig
    train_ms: float = 0.0

    @property
    def converged(self) -> bool:
        return self.result.converged

    @property
    def trained(self) -> NetState:
        return self.result.final_state


@dataclass
class RunReport:
    scheme_name: str
    received_w: float = 0.0
    received_dbm: float | None = None
    intercepted_fraction: float = 0.0
    active_tiles: list[int] = field(default_factory=list)
    cycles_run: int | None = None
    rmse_final: float | None = None
    converged: bool | None = None
    wall_clock_ms: float = 0.0
    error: str | None = None
    config: EnvironmentConfig | None = field(default=None, repr=False)
    trace: TraceResult | None = field(default=None, repr=False)


@dataclass
class Comparison:
    reports: list[RunReport]
    runs: list[NNConfigRun]
    chosen: NNConfigRun
    rays: list[Ray]

    def report(self, scheme_name: str) -> RunReport:
        for report in self.reports:
            if report.scheme_name == scheme_name:
                return report
        raise KeyError(scheme_name)


def scenario_rays(scenario: Scenario) -> list[Ray]:
    return emit_rays(
        scenario.transmitter, scenario.physics.ray_count, scenario.tx_power_w
    )


def train_nnconfig(scenario: Scenario, seed: int | None = None) -> NNConfigRun:
    """Train a fresh net for ``scenario`` and interpret the outcome."""
    params = scenario.train if seed is None else replace(scenario.train, seed=seed)
    start = time.perf_counter()
    net = build_layered_net(scenario)
    result = train(net, params)
    train_ms = (time.perf_counter() - start) * 1000.0
    inputs, ideals = link_fractions(net, params)
    untrained = feed_forward(
        net, NetState.initial(net, inputs, ideals, result.initial_omegas)
    )
    config = interpret_trained_net(
        net,
        result,
        result.final_state,
        activity_threshold=params.activity_threshold,
        inactive_function=params.inactive_function,
        scenario=scenario,
    )
    return NNConfigRun(params.seed, net, untrained, result, config, train_ms)


def pick_run(runs: list[NNConfigRun]) -> NNConfigRun:
    """First converged run, else the one with the lowest final RMSE."""
    for run in runs:
        if run.converged:
            return run
    return min(
        runs,
        key=lambda run: (
            float("inf") if run.result.rmse_final is None else run.result.rmse_final
        ),
    )


def _trace_report(
    report: RunReport,
    scenario: Scenario,
    config: EnvironmentConfig,
    rays: list[Ray],
    options: TracerOptions,
) -> RunReport:
    result = trace(
        scenario,
        config,
        rays,
        max_live_rays=options.max_live_rays,
        min_route_cosine=options.min_route_cosine,
    )
    report.config = config
    report.trace = result
    report.received_w = result.received_w
    report.received_dbm = result.received_dbm
    report.intercepted_fraction = result.intercepted_fraction
    report.active_tiles = config.active_counts(scenario)
    return report


def run_scheme(
    scheme_name: str,
    scenario: Scenario,
    rays: list[Ray],
    nnconfig: NNConfigRun | None = None,
    options: TracerOptions | None = None,
) -> RunReport:
    options = options or TracerOptions()
    start = time.perf_counter()
    report = RunReport(scheme_name)
    if scheme_name == REGULAR:
        _trace_report(report, scenario, regular_config(scenario), rays, options)
    elif scheme_name == KPCONFIG:
        try:
            config = kp_config(scenario, build_layered_net(scenario), rays)
        except RoutingFailure as e:
            logger.warning("%s: %s", scheme_name, e)
            report.error = str(e)
        else:
            _trace_report(report, scenario, config, rays, options)
    elif scheme_name == NNCONFIG:
        if nnconfig is None:
            nnconfig = train_nnconfig(scenario)
        report.cycles_run = nnconfig.result.cycles_run
        report.rmse_final = nnconfig.result.rmse_final
        report.converged = nnconfig.converged
        start -= nnconfig.train_ms / 1000.0
        _trace_report(report, scenario, nnconfig.config, rays, options)
    else:
        raise ValueError(f"Unknown scheme {scheme_name!r}")
    report.wall_clock_ms = (time.perf_counter() - start) * 1000.0
    return report


def run_comparison(
    scenario: Scenario,
    seeds: int = 1,
    parallel: bool = False,
    options: TracerOptions | None = None,
) -> Comparison:
    """All three schemes on identical emitted rays.

    NNConfig trains ``seeds`` consecutive seeds starting at the scenario's own
    and reports the run picked by ``pick_run``. Reports keep the fixed scheme
    order whether or not they ran concurrently.
    """
    rays = scenario_rays(scenario)
    seed_list = [scenario.train.seed + offset for offset in range(max(seeds, 1))]
    if parallel:
        with ThreadPoolExecutor() as pool:
            runs = list(pool.map(lambda s: train_nnconfig(scenario, s), seed_list))
    else:
        runs = [train_nnconfig(scenario, seed) for seed in seed_list]
    chosen = pick_run(runs)
    logger.info(
        "NNConfig: %d/%d seed(s) converged, using seed %d",
        sum(run.converged for run in runs),
        len(runs),
        chosen.seed,
    )

    def run(scheme_name: str) -> RunReport:
        return run_scheme(scheme_name, scenario, rays, chosen, options)

    if parallel:
        with ThreadPoolExecutor(max_workers=len(SCHEMES)) as pool:
            reports = list(pool.map(run, SCHEMES))
    else:
        reports = [run(scheme_name) for scheme_name in SCHEMES]
    return Comparison(reports=reports, runs=runs, chosen=chosen, rays=rays)
