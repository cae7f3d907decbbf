"""Desk-scale scenario construction, the end-to-end pipeline and Monte Carlo campaigns."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .constants import BOLTZMANN, REFERENCE_TEMPERATURE_K, SPEED_OF_LIGHT
from .crlb import SingularGeometryError, UnobservableError, crlb, scene_efim
from .estimation import CfarConfig, Detection, detect_station
from .fusion import (DbscanConfig, EmptyFieldError, GridMap, GridSpec, LocalizedTarget, fuse_station,
                     localize)
from .mds.recognition import helicopter_rotor, quadcopter_rotor, recognition_probability, rotor_echo
from .mds.svm import SvmModel
from .scene import (BsPose, PropagationPath, Reflector, Scene, UavState, direct_snr, enumerate_paths,
                    sample_reflectors)
from .waveform import EchoCube, WaveformConfig, complex_noise, rotor_modulation, synthesize_if_cube

log = logging.getLogger(__name__)

# stations are switched on in this order so small subsets stay spread around the area
ACTIVATION_ORDER = (0, 4, 2, 6, 1, 5, 3, 7)


@dataclass(frozen=True)
class SceneTemplate:
    area_m: float = 90.0
    station_spacing_m: float = 30.0
    uav_margin_m: float = 15.0
    reflector_intensity: float = 3.0
    reflector_count: Optional[int] = None  # fixed count instead of a Poisson draw
    reflector_rcs: float = 50.0
    target_count: int = 1
    include_unintentional: bool = True
    max_speed_mps: float = 2.0
    uav_rcs: float = 0.1

    def __post_init__(self):
        if self.area_m <= 2 * self.uav_margin_m:
            raise ValueError("uav_margin_m leaves no room for UAVs")
        if self.target_count < 0 or self.reflector_intensity < 0 or (self.reflector_count or 0) < 0:
            raise ValueError("counts must be >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    waveform: WaveformConfig = field(default_factory=WaveformConfig)
    cfar: CfarConfig = field(default_factory=CfarConfig)
    dbscan: DbscanConfig = field(default_factory=lambda: DbscanConfig(eps=1.0, min_pts=1))
    cell_size: float = 0.25
    threshold_fraction: float = 0.5
    noise_figure_db: float = 10.0
    rotor_fraction: float = 0.05
    snr_floor_db: float = -10.0
    match_gate_m: float = 5.0
    fusion_prior: Optional[float] = None

    @property
    def noise_power(self) -> float:
        """kT * fs * NF over the IF bandwidth."""
        return (BOLTZMANN * REFERENCE_TEMPERATURE_K * self.waveform.sample_rate
                * 10.0 ** (self.noise_figure_db / 10.0))


@dataclass(frozen=True)
class CampaignConfig:
    runs: int = 200
    master_seed: int = 0
    template: SceneTemplate = field(default_factory=SceneTemplate)
    bs_counts: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    record_timing: bool = False

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not self.bs_counts or any(not 1 <= n <= len(ACTIVATION_ORDER) for n in self.bs_counts):
            raise ValueError(f"bs_counts must lie in [1, {len(ACTIVATION_ORDER)}]")


@dataclass
class RunResult:
    run_id: int
    bs_count: int
    uav_ids: list[int]
    per_uav_error_m: list[float]  # nan where the truth found no cluster within the gate
    ghost_cluster_count: int
    crlb_m2: float
    wall_time_s: float = 0.0
    false_clusters: int = 0

    @property
    def matched(self) -> list[bool]:
        return [not math.isnan(e) for e in self.per_uav_error_m]


# -- scenes ------------------------------------------------------------------------

def perimeter_stations(area_m: float, spacing_m: float) -> tuple[BsPose, ...]:
    """Stations along the square's edges at ``spacing_m``, corners excluded, facing inward.

    Numbered counter-clockwise from the bottom edge.
    """
    n = int(math.floor(area_m / spacing_m + 1e-9))
    ticks = [k * spacing_m for k in range(1, n) if k * spacing_m < area_m - 1e-9]
    poses = [((t, 0.0), math.pi / 2) for t in ticks]
    poses += [((area_m, t), math.pi) for t in ticks]
    poses += [((area_m - t, area_m), -math.pi / 2) for t in ticks]
    poses += [((0.0, area_m - t), 0.0) for t in ticks]
    return tuple(BsPose(i, p, rot) for i, (p, rot) in enumerate(poses))


def default_scene(seed: int, template: SceneTemplate = SceneTemplate()) -> Scene:
    """8 inward-facing perimeter stations, seeded UAVs and Poisson reflectors.

    UAVs are drawn inside the margin so every direct path stays within the
    unambiguous range of the default waveform.
    """
    rng = np.random.default_rng(seed)
    a, m = template.area_m, template.uav_margin_m
    stations = perimeter_stations(a, template.station_spacing_m)

    def draw(uid: int, rotor, is_target: bool) -> UavState:
        pos = rng.uniform(m, a - m, 2)
        speed = rng.uniform(0.0, template.max_speed_mps)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        return UavState(uid, (float(pos[0]), float(pos[1])),
                        (float(speed * math.cos(heading)), float(speed * math.sin(heading))),
                        template.uav_rcs, rotor, is_target)

    uavs = [draw(i, quadcopter_rotor(rng), True) for i in range(template.target_count)]
    if template.include_unintentional:
        uavs.append(draw(len(uavs), helicopter_rotor(rng), False))
    if template.reflector_count is None:
        reflectors = sample_reflectors(template.reflector_intensity, (0.0, 0.0, a, a),
                                       int(rng.integers(2**31)), template.reflector_rcs)
    else:
        xy = rng.uniform(0.0, a, (template.reflector_count, 2))
        reflectors = [Reflector(i, (float(x), float(y)), template.reflector_rcs) for i, (x, y) in enumerate(xy)]
    return Scene(stations, tuple(uavs), tuple(reflectors), (0.0, 0.0, a, a))


def active_subset(scene: Scene, bs_count: int) -> Scene:
    ids = [scene.stations[i].id for i in ACTIVATION_ORDER[:bs_count] if i < len(scene.stations)]
    return scene.with_stations(ids)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# -- per-station measurement ----------------------------------------------------------

@dataclass
class StationObservation:
    bs: BsPose
    detections: list[Detection]
    paths: list[PropagationPath]


def associate(det: Detection, paths: Sequence[PropagationPath], range_gate: float,
              angle_gate: float = 0.1) -> Optional[PropagationPath]:
    """Nearest path in normalized (range, angle) distance inside the gates."""
    best, best_d = None, math.inf
    for p in paths:
        dr = abs(det.range_m - p.apparent_range)
        da = abs(det.angle_rad - p.apparent_angle)
        if dr > range_gate or da > angle_gate:
            continue
        d = math.hypot(dr / range_gate, da / angle_gate)
        if d < best_d:
            best, best_d = p, d
    return best


def recognition_table(scene: Scene, model: SvmModel, pipeline: PipelineConfig, seed: int) -> dict:
    """P_r per UAV id plus a ``None`` entry for echoes no path explains.

    Each UAV gets one micro-Doppler echo at its mean direct-path SNR over all
    stations; recognition runs once per UAV rather than per station.
    """
    wf = pipeline.waveform
    n0 = pipeline.noise_power
    table = {}
    for uav in scene.uavs:
        if uav.rotor.rotor_count < 1:
            table[uav.id] = 0.0
            continue
        snrs = [direct_snr(bs, uav.rcs, math.dist(bs.position, uav.position), wf.wavelength, n0)
                for bs in scene.stations]
        echo = rotor_echo(uav.rotor, float(np.mean(snrs)), wf, derive_seed(seed, 1, uav.id))
        table[uav.id] = recognition_probability(echo, model)
    noise = complex_noise((wf.pulse_count * wf.samples_per_pulse,), 1.0, derive_seed(seed, 2))
    table[None] = recognition_probability(noise, model)
    return table


def station_paths(scene: Scene, bs: BsPose, pipeline: PipelineConfig) -> list[PropagationPath]:
    wf = pipeline.waveform
    return enumerate_paths(scene, bs, pipeline.noise_power, wf.wavelength, pipeline.snr_floor_db,
                           max_range=wf.max_range)


def rotor_envelopes(scene: Scene, pipeline: PipelineConfig) -> dict:
    return {u.id: rotor_modulation(u.rotor, pipeline.waveform, pipeline.rotor_fraction) for u in scene.uavs}


def station_cube(paths: Sequence[PropagationPath], bs: BsPose, pipeline: PipelineConfig, seed: int,
                 modulation: dict) -> EchoCube:
    """Noisy IF cube; the noise stream depends only on (seed, station id)."""
    return synthesize_if_cube(paths, pipeline.waveform, bs, pipeline.noise_power,
                              derive_seed(seed, 3, bs.id), modulation=modulation)


def measure_station(cube: EchoCube, bs: BsPose, paths: Sequence[PropagationPath], pipeline: PipelineConfig,
                    pr_table: dict) -> list[Detection]:
    """Detect, then give each detection the P_r of the UAV whose path explains it."""
    wf = pipeline.waveform
    dets = detect_station(cube, pipeline.cfar, bs, wf)
    for d in dets:
        p = associate(d, paths, 2.0 * wf.range_bin_m)
        d.pr = pr_table[p.uav_id if p is not None else None]
    return dets


def observe_scene(scene: Scene, pipeline: PipelineConfig, model: SvmModel, seed: int,
                  station_ids: Optional[Iterable[int]] = None) -> list[StationObservation]:
    """Measure the stations of ``scene`` (all, or just ``station_ids``).

    A station's measurement does not depend on which others are measured.
    """
    pr_table = recognition_table(scene, model, pipeline, seed)
    modulation = rotor_envelopes(scene, pipeline)
    keep = None if station_ids is None else set(station_ids)
    out = []
    for bs in scene.stations:
        if keep is not None and bs.id not in keep:
            continue
        paths = station_paths(scene, bs, pipeline)
        cube = station_cube(paths, bs, pipeline, seed, modulation)
        out.append(StationObservation(bs, measure_station(cube, bs, paths, pipeline, pr_table), paths))
    return out


# -- fusion and scoring --------------------------------------------------------------

def fuse_observations(observations: Iterable[StationObservation], spec: GridSpec,
                      pipeline: PipelineConfig) -> GridMap:
    grid = GridMap.empty(spec)
    for ob in observations:
        grid = fuse_station(grid, ob.detections, ob.bs, pipeline.waveform, pipeline.cfar.p_fa,
                            prior=pipeline.fusion_prior)
    return grid


def ghost_positions(observations: Iterable[StationObservation]) -> list[tuple[float, float]]:
    """World points where each station would place its ghost paths."""
    out = []
    for ob in observations:
        for p in ob.paths:
            if p.is_ghost:
                a = ob.bs.rotation + p.apparent_angle
                out.append((ob.bs.position[0] + p.apparent_range * math.cos(a),
                            ob.bs.position[1] + p.apparent_range * math.sin(a)))
    return out


def match_targets(truths: Sequence[Sequence[float]], estimates: Sequence[Sequence[float]],
                  gate: float) -> tuple[list[float], list[int]]:
    """Greedy nearest-pair matching; returns per-truth error (nan = miss) and unmatched estimate indices."""
    errors = [math.nan] * len(truths)
    free_t, free_e = set(range(len(truths))), set(range(len(estimates)))
    pairs = sorted((math.dist(t, e), i, j) for i, t in enumerate(truths) for j, e in enumerate(estimates))
    for d, i, j in pairs:
        if d > gate:
            break
        if i in free_t and j in free_e:
            errors[i] = d
            free_t.discard(i)
            free_e.discard(j)
    return errors, sorted(free_e)


def count_ghost_clusters(targets: Sequence[LocalizedTarget], uav_positions: Sequence[Sequence[float]],
                         ghosts: Sequence[Sequence[float]], resolution_m: float = 0.0) -> int:
    """Clusters nearer to some ghost apparent position than to any UAV.

    Ghost positions within ``resolution_m`` of a UAV are indistinguishable
    from it and are left out of the comparison.
    """
    ghosts = [g for g in ghosts if all(math.dist(g, u) >= resolution_m for u in uav_positions)]
    n = 0
    for t in targets:
        d_truth = min((math.dist(t.position, u) for u in uav_positions), default=math.inf)
        d_ghost = min((math.dist(t.position, g) for g in ghosts), default=math.inf)
        if d_ghost < d_truth:
            n += 1
    return n


def target_crlb(scene: Scene, uav: UavState, pipeline: PipelineConfig) -> float:
    try:
        return crlb(scene_efim(scene, uav.position, pipeline.waveform, pipeline.noise_power, uav.rcs))
    except (SingularGeometryError, UnobservableError):
        return math.nan


def score(scene: Scene, observations: Sequence[StationObservation], pipeline: PipelineConfig,
          run_id: int = 0, with_crlb: bool = True) -> RunResult:
    """Fuse, localize and compare with the target UAVs of ``scene``."""
    spec = GridSpec.covering(scene.bounds, pipeline.cell_size)
    grid = fuse_observations(observations, spec, pipeline)
    try:
        found = localize(grid, pipeline.dbscan, pipeline.threshold_fraction)
    except EmptyFieldError:
        found = []
    targets = [u for u in scene.uavs if u.is_target]
    errors, extra = match_targets([u.position for u in targets], [t.position for t in found],
                                  pipeline.match_gate_m)
    ghosts = count_ghost_clusters(found, [u.position for u in scene.uavs], ghost_positions(observations),
                                  SPEED_OF_LIGHT / (2.0 * pipeline.waveform.bandwidth_hz))
    bound = target_crlb(scene, targets[0], pipeline) if targets and with_crlb else math.nan
    return RunResult(run_id, len(scene.stations), [u.id for u in targets], errors, ghosts, bound,
                     false_clusters=len(extra))


class PipelineEnvironment:
    """Station-selection environment over one scene.

    Every station is measured once per noise seed up front; the MSE of a
    subset is then the mean squared error of fusing just those stations,
    averaged over the seeds. A missed target costs the squared match gate.
    Station index i refers to ``scene.stations[i]``.
    """

    def __init__(self, scene: Scene, pipeline: PipelineConfig, model: SvmModel, seeds: Sequence[int]):
        self.scene = scene
        self.pipeline = pipeline
        self.n_stations = len(scene.stations)
        self.n_targets = sum(u.is_target for u in scene.uavs)
        self._obs = [observe_scene(scene, pipeline, model, s) for s in seeds]
        self._cache: dict[int, np.ndarray] = {}

    def mse(self, state) -> np.ndarray:
        key = state.mask
        if key not in self._cache:
            gate2 = self.pipeline.match_gate_m ** 2
            if state.count == 0:
                self._cache[key] = np.full(self.n_targets, gate2)
            else:
                ids = [self.scene.stations[i].id for i in state.ids]
                sub_scene = self.scene.with_stations(ids)
                sq = []
                for obs in self._obs:
                    sub = [obs[i] for i in state.ids]
                    e = np.array(score(sub_scene, sub, self.pipeline, with_crlb=False).per_uav_error_m)
                    sq.append(np.where(np.isnan(e), gate2, e * e))
                self._cache[key] = np.mean(sq, axis=0)
        return self._cache[key]


# -- campaigns -------------------------------------------------------------------------

def run_campaign(cfg: CampaignConfig, model: SvmModel) -> tuple[list[RunResult], list[tuple[int, str]]]:
    """Monte Carlo runs over the bs_counts sweep.

    Every bs_count of a run shares one scene and one set of station
    measurements, so the sweep isolates the effect of the station count.
    Failed runs are logged and returned as (run_id, message).
    """
    results, failures = [], []
    for run in range(cfg.runs):
        seed = cfg.master_seed + run
        try:
            scene = default_scene(seed, cfg.template)
            t0 = time.perf_counter()
            needed = [bs.id for bs in active_subset(scene, max(cfg.bs_counts)).stations]
            obs = observe_scene(scene, cfg.pipeline, model, seed, needed)
            t_obs = time.perf_counter() - t0
            by_id = {ob.bs.id: ob for ob in obs}
            for n in cfg.bs_counts:
                t1 = time.perf_counter()
                sub = active_subset(scene, n)
                r = score(sub, [by_id[bs.id] for bs in sub.stations], cfg.pipeline, run)
                if cfg.record_timing:
                    r.wall_time_s = t_obs * n / len(needed) + time.perf_counter() - t1
                results.append(r)
        except Exception as exc:  # noqa: BLE001 - one bad run must not stop the campaign
            log.warning("run %d failed: %s", run, exc)
            failures.append((run, f"{type(exc).__name__}: {exc}"))
    return results, failures


RESULT_COLUMNS = ["run_id", "bs_count", "uav_id", "error_m", "matched", "ghost_clusters", "crlb_m2",
                  "wall_time_s"]


def _g(x: float) -> str:
    return f"{x:.9g}"


def write_results_csv(results: Iterable[RunResult], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            for uid, e in zip(r.uav_ids, r.per_uav_error_m):
                w.writerow([r.run_id, r.bs_count, uid, _g(e), int(not math.isnan(e)), r.ghost_cluster_count,
                            _g(r.crlb_m2), _g(r.wall_time_s)])


def read_results_csv(path: Path) -> list[RunResult]:
    rows: dict[tuple[int, int], RunResult] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["run_id"]), int(row["bs_count"]))
            r = rows.setdefault(key, RunResult(key[0], key[1], [], [], int(row["ghost_clusters"]),
                                               float(row["crlb_m2"]), float(row["wall_time_s"])))
            r.uav_ids.append(int(row["uav_id"]))
            r.per_uav_error_m.append(float(row["error_m"]))
    return list(rows.values())


@dataclass
class Summary:
    bs_count: int
    runs: int
    mean_error_m: float
    median_error_m: float
    rmse_m: float
    mse_m2: float
    miss_rate: float
    mean_crlb_m2: float
    sqrt_crlb_m: float
    ghost_free_rate: float
    mean_ghost_clusters: float


SUMMARY_COLUMNS = ["bs_count", "runs", "mean_error_m", "median_error_m", "rmse_m", "mse_m2", "miss_rate",
                   "mean_crlb_m2", "sqrt_crlb_m", "ghost_free_rate", "mean_ghost_clusters"]


def aggregate(results: Sequence[RunResult]) -> tuple[list[Summary], list[tuple[int, float, float]]]:
    """Per-bs_count summary rows and error CDF samples (bs_count, error_m, cdf).

    Errors are over matched truths; misses enter the miss rate only.
    """
    if not results:
        raise ValueError("no results to aggregate")
    summaries, cdf = [], []
    for n in sorted({r.bs_count for r in results}):
        group = [r for r in results if r.bs_count == n]
        errs = np.array([e for r in group for e in r.per_uav_error_m])
        hit = errs[~np.isnan(errs)]
        crlbs = np.array([r.crlb_m2 for r in group])
        crlbs = crlbs[np.isfinite(crlbs)]
        nan = math.nan
        summaries.append(Summary(
            bs_count=n, runs=len(group),
            mean_error_m=float(hit.mean()) if hit.size else nan,
            median_error_m=float(np.median(hit)) if hit.size else nan,
            rmse_m=float(np.sqrt(np.mean(hit**2))) if hit.size else nan,
            mse_m2=float(np.mean(hit**2)) if hit.size else nan,
            miss_rate=float(np.mean(np.isnan(errs))) if errs.size else nan,
            mean_crlb_m2=float(crlbs.mean()) if crlbs.size else nan,
            sqrt_crlb_m=float(np.sqrt(crlbs.mean())) if crlbs.size else nan,
            ghost_free_rate=float(np.mean([r.ghost_cluster_count == 0 for r in group])),
            mean_ghost_clusters=float(np.mean([r.ghost_cluster_count for r in group])),
        ))
        srt = np.sort(hit)
        cdf += [(n, float(e), (i + 1) / len(srt)) for i, e in enumerate(srt)]
    return summaries, cdf


def write_summary_csv(summaries: Iterable[Summary], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            w.writerow([s.bs_count, s.runs] + [_g(getattr(s, c)) for c in SUMMARY_COLUMNS[2:]])


def write_cdf_csv(cdf: Iterable[tuple[int, float, float]], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bs_count", "error_m", "cdf"])
        for n, e, c in cdf:
            w.writerow([n, _g(e), _g(c)])
