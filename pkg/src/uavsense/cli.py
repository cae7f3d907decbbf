"""Command-line frontend: one subcommand per pipeline stage, file-based outputs.

Exit status: 0 on success, 1 on bad input (arguments, config, missing or
malformed files), 2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as config_mod
from .config import ConfigError, RootConfig
from .crlb import crlb_map, write_crlb_csv
from .estimation import read_detections_csv, write_detections_csv
from .fusion import (EmptyFieldError, GridMap, GridSpec, fuse_station, localize, normalize_and_threshold,
                     write_clusters_csv, write_grid_pgm)
from .harness import (PipelineEnvironment, aggregate, default_scene, derive_seed, measure_station,
                      recognition_table, rotor_envelopes, run_campaign, station_cube, station_paths,
                      write_cdf_csv, write_results_csv, write_summary_csv)
from .mds.recognition import build_corpus, write_feature_csv
from .mds.svm import SvmModel, train_svm
from .scene import Scene, scene_from_dict, scene_to_dict
from .selection import (InfeasibleError, Objective, QPolicy, SelectionState, fcm_states,
                        select, select_p3, train, write_training_csv)
from .waveform import read_cube, write_cube

log = logging.getLogger("uavsense")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2


class InputError(Exception):
    """Bad command-line input; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which is reserved for runtime failures
        raise InputError(f"{self.prog}: {message}")


# -- shared helpers -------------------------------------------------------------------------

def _out_dir(args) -> Path:
    d = Path(args.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _need_seed(args) -> int:
    if args.seed is None:
        raise InputError(f"{args.command}: --seed is required")
    return args.seed


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _load_scene(path: Path) -> Scene:
    try:
        return scene_from_dict(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed scene ({exc})") from None


def _scene_for(args, cfg: RootConfig) -> Scene:
    """--scene file if given, else the seeded default scene."""
    if getattr(args, "scene", None):
        return _load_scene(args.scene)
    return default_scene(_need_seed(args), cfg.campaign.template)


def _recognizer(args, cfg: RootConfig, out: Optional[Path] = None) -> SvmModel:
    """--model file if given, else train one from the config's corpus settings."""
    if getattr(args, "model", None):
        try:
            return SvmModel.from_dict(_read_json(args.model))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{args.model}: malformed model ({exc})") from None
    rc = cfg.recognizer
    pos, neg = build_corpus(rc.signals_per_class, rc.seed, cfg.waveform)
    if out is not None:
        write_feature_csv(pos, neg, out / "features.csv")
    return train_svm(pos, neg, c=rc.regularization_c, rng_seed=rc.seed)


def _bs_counts(text: Optional[str]) -> Optional[tuple[int, ...]]:
    if text is None:
        return None
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise InputError(f"--bs-count: expected a comma-separated list of integers, got {text!r}") from None


# -- subcommands -----------------------------------------------------------------------------

def cmd_scene(args, cfg: RootConfig) -> None:
    out = _out_dir(args)
    _write_json(scene_to_dict(default_scene(_need_seed(args), cfg.campaign.template)), out / "scene.json")


def cmd_simulate(args, cfg: RootConfig) -> None:
    """IF cubes for every station plus the scene and the seed that produced them."""
    seed = _need_seed(args)
    out = _out_dir(args)
    scene = _scene_for(args, cfg)
    pipeline = cfg.pipeline()
    _write_json(scene_to_dict(scene), out / "scene.json")
    modulation = rotor_envelopes(scene, pipeline)
    cubes = []
    for bs in scene.stations:
        paths = station_paths(scene, bs, pipeline)
        name = f"cube_bs{bs.id}.iq"
        write_cube(station_cube(paths, bs, pipeline, seed, modulation), out / name)
        cubes.append(name)
    _write_json({"seed": seed, "scene": "scene.json", "cubes": cubes}, out / "simulation.json")


def cmd_detect(args, cfg: RootConfig) -> None:
    """CA-CFAR + MUSIC on simulated cubes; P_r from the recognizer when --model is given."""
    src = Path(args.input_dir)
    out = _out_dir(args)
    manifest = _read_json(src / "simulation.json")
    scene = _load_scene(src / manifest["scene"])
    pipeline = cfg.pipeline()
    seed = manifest["seed"] if args.seed is None else args.seed
    if args.model:
        pr_table = recognition_table(scene, _recognizer(args, cfg), pipeline, seed)
    else:
        pr_table = None
    detections = []
    for name in manifest["cubes"]:
        try:
            cube = read_cube(src / name)
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"{src / name}: {exc}") from None
        bs = scene.station(cube.bs_id)
        paths = station_paths(scene, bs, pipeline)
        table = pr_table if pr_table is not None else _flat_pr(scene)
        detections += measure_station(cube, bs, paths, pipeline, table)
    write_detections_csv(detections, out / "detections.csv")


def _flat_pr(scene: Scene) -> dict:
    """Uninformative recognition: every detection keeps P_r = 0.5."""
    return {**{u.id: 0.5 for u in scene.uavs}, None: 0.5}


def cmd_fuse(args, cfg: RootConfig) -> None:
    """Grid fusion of a detections CSV; writes the probability map and cluster estimates."""
    src = Path(args.input_dir)
    out = _out_dir(args)
    scene = _load_scene(Path(args.scene) if args.scene else src / "scene.json")
    try:
        detections = read_detections_csv(src / "detections.csv")
    except OSError as exc:
        raise InputError(f"{src / 'detections.csv'}: {exc.strerror}") from None
    except (KeyError, ValueError) as exc:
        raise InputError(f"{src / 'detections.csv'}: malformed ({exc})") from None
    pipeline = cfg.pipeline()
    spec = GridSpec.covering(scene.bounds, pipeline.cell_size)
    grid = GridMap.empty(spec)
    for bs in scene.stations:
        mine = [d for d in detections if d.bs_id == bs.id]
        grid = fuse_station(grid, mine, bs, pipeline.waveform, pipeline.cfar.p_fa, prior=pipeline.fusion_prior)
    try:
        field = normalize_and_threshold(grid, pipeline.threshold_fraction)
        targets = localize(grid, pipeline.dbscan, pipeline.threshold_fraction)
    except EmptyFieldError:
        field, targets = np.zeros(spec.shape), []
    write_grid_pgm(field, spec, out / "grid.pgm")
    write_clusters_csv(targets, out / "clusters.csv")


def cmd_crlb(args, cfg: RootConfig) -> None:
    out = _out_dir(args)
    scene = _scene_for(args, cfg)
    if not args.grid_step > 0:
        raise InputError("--grid-step must be positive")
    pipeline = cfg.pipeline()
    rcs = cfg.campaign.template.uav_rcs
    write_crlb_csv(crlb_map(scene, cfg.waveform, pipeline.noise_power, args.grid_step, rcs), out / "crlb.csv")


def cmd_train(args, cfg: RootConfig) -> None:
    """Recognizer, then a station-selection policy on one scene."""
    seed = _need_seed(args)
    out = _out_dir(args)
    model = _recognizer(args, cfg, out)
    model.save(out / "recognizer.json")
    scene = _scene_for(args, cfg)
    pipeline = cfg.pipeline()
    tc = cfg.training
    env = PipelineEnvironment(scene, pipeline, model, [derive_seed(seed, 10, k) for k in range(tc.eval_seeds)])
    n = env.n_stations
    baseline = env.mse(SelectionState.all_on(n))
    objective = Objective(args.objective.upper()) if args.objective else cfg.reward.objective
    cap = cfg.reward.mse_cap
    if objective is Objective.P3 and cap is None:
        cap = 1.2 * float(np.max(baseline))  # default cap: 1.2x the all-station MSE
    rcfg = replace(cfg.reward, objective=objective, mse_cap=cap)
    if objective is Objective.P3:
        rng = np.random.default_rng(derive_seed(seed, 11))
        masks = sorted({int(m) for m in rng.integers(1, 2**n, size=64)})
        rmse = [math.sqrt(float(np.max(env.mse(SelectionState.from_mask(m, n))))) for m in masks]
        states = fcm_states(rmse, tc.fcm_states, tc.fcm_fuzzifier)
        policy = train(env, rcfg, tc.episodes, seed, policy=QPolicy.initial(n, "fcm_rs", states))
        chosen = select_p3(policy, env, rcfg)
    else:
        policy = train(env, rcfg, tc.episodes, seed)
        chosen = select(policy, env)
    policy.save(out / "policy.json")
    write_training_csv(policy, out / "training_curve.csv")
    _write_json({
        "objective": rcfg.objective.value,
        "mse_cap": rcfg.mse_cap,
        "selected_station_ids": [scene.stations[i].id for i in chosen.ids],
        "selected_mse_m2": [float(v) for v in env.mse(chosen)],
        "all_stations_mse_m2": [float(v) for v in baseline],
    }, out / "selection.json")


def cmd_campaign(args, cfg: RootConfig) -> None:
    seed = _need_seed(args)
    out = _out_dir(args)
    if args.runs is not None and args.runs < 1:
        raise InputError("--runs must be >= 1")
    try:
        ccfg = cfg.campaign_config(seed, args.runs, _bs_counts(args.bs_count))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.record_timing:
        ccfg = replace(ccfg, record_timing=True)
    results, failures = run_campaign(ccfg, _recognizer(args, cfg))
    write_results_csv(results, out / "results.csv")
    with open(out / "failures.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "error"])
        w.writerows(failures)
    if results:
        summaries, cdf = aggregate(results)
        write_summary_csv(summaries, out / "summary.csv")
        write_cdf_csv(cdf, out / "cdf.csv")


def cmd_report(args, cfg: RootConfig) -> None:
    from .plotting import render_report

    src = Path(args.input_dir)
    if not src.is_dir():
        raise InputError(f"{src}: not a directory")
    made = render_report(src, Path(args.output_dir) if args.output_dir else src)
    if not made:
        raise InputError(f"{src}: nothing to plot (no summary/cdf/crlb/training_curve CSV or grid.pgm)")
    for p in made:
        print(p)


COMMANDS = {
    "scene": cmd_scene, "simulate": cmd_simulate, "detect": cmd_detect, "fuse": cmd_fuse,
    "crlb": cmd_crlb, "train": cmd_train, "campaign": cmd_campaign, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uavsense", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_, seed=True, input_dir=False, output_default="."):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", type=Path, help="JSON config (defaults are the standard radar parameters)")
        if seed:
            s.add_argument("--seed", type=int, help="master seed")
        if input_dir:
            s.add_argument("--input-dir", type=Path, default=Path("."))
        s.add_argument("--output-dir", default=output_default)
        return s

    add("scene", "write a seeded default scene as scene.json")
    s = add("simulate", "synthesize IF cubes for every station")
    s.add_argument("--scene", type=Path, help="scene JSON instead of the seeded default")
    s = add("detect", "CA-CFAR/MUSIC detections from simulated cubes", input_dir=True)
    s.add_argument("--model", type=Path, help="recognizer JSON; without it P_r stays 0.5")
    s = add("fuse", "grid fusion and clustering of detections.csv", seed=False, input_dir=True)
    s.add_argument("--scene", type=Path, help="scene JSON (default: input dir's scene.json)")
    s = add("crlb", "CRLB map over the scene area")
    s.add_argument("--scene", type=Path)
    s.add_argument("--grid-step", type=float, default=1.0)
    s = add("train", "train the recognizer and a station-selection policy")
    s.add_argument("--scene", type=Path)
    s.add_argument("--model", type=Path, help="reuse a trained recognizer")
    s.add_argument("--objective", choices=["p1", "p2", "p3", "P1", "P2", "P3"])
    s = add("campaign", "Monte Carlo localization campaign")
    s.add_argument("--runs", type=int)
    s.add_argument("--bs-count", help="comma-separated station counts, e.g. 1,4,8")
    s.add_argument("--model", type=Path, help="reuse a trained recognizer")
    s.add_argument("--record-timing", action="store_true", help="fill wall_time_s (breaks byte determinism)")
    add("report", "render PNG figures next to the CSVs in --input-dir", seed=False, input_dir=True,
        output_default=None)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = config_mod.load(args.config)
        COMMANDS[args.command](args, cfg)
    except (InputError, ConfigError, InfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - anything else is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
