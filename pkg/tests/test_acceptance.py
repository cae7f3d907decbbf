"""Acceptance criteria 1-9; each test prints one PASS/FAIL line."""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from uavsense.crlb import default_weights, efim, integrated_snr, numerical_fim
from uavsense.estimation import CfarConfig, ca_cfar, detection_probability, range_profile, velocity_profile
from uavsense.fusion import GridSpec
from uavsense.harness import (
    CampaignConfig,
    PipelineConfig,
    PipelineEnvironment,
    SceneTemplate,
    aggregate,
    default_scene,
    derive_seed,
    fuse_observations,
    observe_scene,
    run_campaign,
)
from uavsense.mds.emd import emd
from uavsense.mds.recognition import DEFAULT_SEGMENTS, corpus_echo, segment_features
from uavsense.selection import (
    Objective,
    QPolicy,
    RewardConfig,
    SelectionState,
    fcm_states,
    select,
    select_p3,
    train,
)
from uavsense.waveform import WaveformConfig, complex_noise

pytestmark = pytest.mark.slow

WF = WaveformConfig()
PIPE = PipelineConfig()


# 1 -------------------------------------------------------------------------------------

def test_criterion_1_cfar_false_alarm_rate(criterion):
    # single-channel L x M range-velocity maps of processed receiver noise
    cfg = CfarConfig()
    t0 = time.perf_counter()
    hits = cells = 0
    seed = 0
    while cells < 1_000_000:
        cube = complex_noise((1, WF.pulse_count, WF.samples_per_pulse), 1.0, derive_seed(1, seed))
        rv = velocity_profile(range_profile(cube), WF)
        hits += len(ca_cfar(rv, cfg, group=False))
        cells += rv.power.size
        seed += 1
    dt = time.perf_counter() - t0
    rate = hits / cells
    ok = 5e-4 <= rate <= 2e-3 and dt < 30
    criterion(1, ok, f"P_FA {rate:.3e} over {cells} cells in {dt:.1f} s")
    assert ok


# 2 -------------------------------------------------------------------------------------

def _lattice():
    rows = np.arange(6, 122, 12)
    cols = np.arange(0, 60, 12)
    return np.meshgrid(rows, cols, indexing="ij")


def test_criterion_2_detection_probability(criterion):
    cfg = CfarConfig()
    anchor = detection_probability(0.0, cfg)
    rr, cc = _lattice()
    per_map = rr.size
    rng = np.random.default_rng(2)
    lines, ok = [], anchor == pytest.approx(cfg.p_fa, rel=1e-12)
    for gamma_db in (0.0, 3.0, 10.0):
        gamma = 10 ** (gamma_db / 10)
        trials = hits = 0
        while trials < 100_000:
            power = rng.exponential(1.0, (WF.samples_per_pulse, WF.pulse_count))
            power[rr, cc] = rng.exponential(1.0 + gamma, rr.shape)
            found = {(l, m) for l, m, _ in ca_cfar(power, cfg, group=False)}
            hits += sum((int(l), int(m)) in found for l, m in zip(rr.ravel(), cc.ravel()))
            trials += per_map
        mc = hits / trials
        pd = detection_probability(gamma, cfg)
        ok &= abs(mc - pd) <= 0.02
        lines.append(f"{gamma_db:g} dB MC {mc:.4f} vs {pd:.4f}")
    criterion(2, ok, f"anchor P_d(0) = {anchor:.6g}; " + "; ".join(lines))
    assert ok


# 3 -------------------------------------------------------------------------------------

def test_criterion_3_efim_oracle(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        scene = default_scene(seed)
        p = np.random.default_rng(seed).uniform(5.0, 85.0, 2)
        w = {bs.id: default_weights(integrated_snr(bs, 0.1, p, WF, PIPE.noise_power), bs, WF)
             for bs in scene.stations}
        a = efim(p, scene.stations, w).matrix
        n = numerical_fim(p, scene.stations, w)
        worst = max(worst, float(np.max(np.abs(n - a)) / np.max(np.abs(a))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 10
    criterion(3, ok, f"max relative deviation {worst:.2e} over 100 scenes in {dt:.1f} s")
    assert ok


# 4, 5 ----------------------------------------------------------------------------------

def test_criterion_4_multi_station_gain(criterion, recognizer):
    t0 = time.perf_counter()
    results, failures = run_campaign(CampaignConfig(runs=200, master_seed=0, bs_counts=(1, 8)), recognizer)
    dt = time.perf_counter() - t0
    s1, s8 = aggregate(results)[0]
    ratio = s8.mean_error_m / s1.mean_error_m
    slack = 1.5 * s8.sqrt_crlb_m + PIPE.cell_size
    ok = ratio <= 0.6 and s8.mean_error_m <= slack and dt < 600 and not failures
    criterion(4, ok, f"mean error 1 BS {s1.mean_error_m:.3f} m, 8 BS {s8.mean_error_m:.3f} m, ratio {ratio:.2f}; "
                     f"sqrt(CRLB) {s8.sqrt_crlb_m:.2e} m, bound {slack:.3f} m; misses {s1.miss_rate:.3f}/"
                     f"{s8.miss_rate:.3f}; {dt:.0f} s")
    assert ok


def test_criterion_5_ghost_suppression(criterion, recognizer):
    template = SceneTemplate(include_unintentional=False, reflector_count=1)
    results, failures = run_campaign(CampaignConfig(runs=200, master_seed=0, template=template, bs_counts=(3,)),
                                     recognizer)
    s = aggregate(results)[0][0]
    ok = s.ghost_free_rate >= 0.9 and not failures
    criterion(5, ok, f"ghost-free {s.ghost_free_rate:.3f} of {s.runs} runs with 3 stations, miss rate {s.miss_rate:.3f}")
    assert ok


# 6, 9 ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def heldout():
    """100 rotor and 100 static echoes from a stream disjoint from the training corpus."""
    rng = np.random.default_rng(derive_seed(6, 2024))
    return {kind: [corpus_echo(kind, rng, WF) for _ in range(100)] for kind in ("rotor", "static")}


def test_criterion_6_recognition(criterion, recognizer, heldout):
    correct = total = 0
    pr = {}
    for kind, echoes in heldout.items():
        label = 1 if kind == "rotor" else -1
        pr[kind] = []
        for e in echoes:
            pred = recognizer.predict(segment_features(e))
            correct += int(np.sum(pred == label))
            total += len(pred)
            pr[kind].append(float(np.mean(pred == 1)))
    acc = correct / total
    rotor_ok = float(np.mean(np.array(pr["rotor"]) >= 0.8))
    static_ok = float(np.mean(np.array(pr["static"]) <= 0.27))
    ok = acc >= 0.9 and rotor_ok >= 0.9 and static_ok >= 0.9
    criterion(6, ok, f"segment accuracy {acc:.3f} over {total} segments of 200 signals; "
                     f"rotor P_r >= 0.8 in {rotor_ok:.2f}, static P_r <= 0.27 in {static_ok:.2f}")
    assert ok


def test_criterion_9_structural_invariants(criterion, heldout, recognizer):
    worst = 0.0
    count = 0
    for echoes in heldout.values():
        for e in echoes:
            x = np.abs(e)
            seg = len(x) // DEFAULT_SEGMENTS
            for s in range(DEFAULT_SEGMENTS):
                part = x[s * seg:(s + 1) * seg]
                rec = emd(part, max_imfs=4).reconstruct()
                worst = max(worst, float(np.linalg.norm(rec - part) / np.linalg.norm(part)))
                count += 1
    scene = default_scene(9)
    obs = observe_scene(scene, PIPE, recognizer, 9)
    spec = GridSpec.covering(scene.bounds, PIPE.cell_size)
    ref = fuse_observations(obs, spec, PIPE).log_odds
    rng = np.random.default_rng(9)
    diff = 0.0
    for _ in range(20):
        perm = rng.permutation(len(obs))
        lo = fuse_observations([obs[i] for i in perm], spec, PIPE).log_odds
        diff = max(diff, float(np.max(np.abs(lo - ref))))
    ok = worst <= 1e-10 and diff <= 1e-12
    criterion(9, ok, f"EMD relative residual {worst:.1e} over {count} segments; "
                     f"fusion order max |dl| {diff:.1e} over 20 permutations")
    assert ok


# 7 -------------------------------------------------------------------------------------

def _trained_vs_baseline(scene, objective, recognizer, seed):
    train_env = PipelineEnvironment(scene, PIPE, recognizer, [derive_seed(seed, 10, k) for k in range(10)])
    cfg = RewardConfig(objective=objective)
    chosen = select(train(train_env, cfg, 2000, seed), train_env)
    eval_env = PipelineEnvironment(scene, PIPE, recognizer, [derive_seed(seed, 20, k) for k in range(200)])
    return chosen, float(np.sum(eval_env.mse(chosen))), float(np.sum(eval_env.mse(SelectionState.all_on(8))))


def test_criterion_7_selection(criterion, recognizer):
    parts, ok = [], True
    # P1 on the default scene; P2 on a two-target variant so the weighted sum has two terms
    for objective, template in ((Objective.P1, SceneTemplate()), (Objective.P2, SceneTemplate(target_count=2))):
        chosen, sel, base = _trained_vs_baseline(default_scene(0, template), objective, recognizer, 0)
        ok &= sel <= base
        parts.append(f"{objective.value} {chosen.ids} total MSE {sel:.4f} vs all-on {base:.4f}")

    p3 = []
    for seed in range(10):
        scene = default_scene(seed)
        env = PipelineEnvironment(scene, PIPE, recognizer, [derive_seed(seed, 30, k) for k in range(5)])
        cap = 1.2 * float(np.max(env.mse(SelectionState.all_on(8))))
        rng = np.random.default_rng(derive_seed(seed, 11))
        masks = sorted({int(m) for m in rng.integers(1, 256, size=64)})
        states = fcm_states([math.sqrt(float(np.max(env.mse(SelectionState.from_mask(m, 8))))) for m in masks])
        cfg = RewardConfig(tau_r=1.0, objective="P3", mse_cap=cap)
        s = select_p3(train(env, cfg, 2000, seed, policy=QPolicy.initial(8, "fcm_rs", states)), env, cfg)
        feasible = [m for m in range(1, 256) if np.all(env.mse(SelectionState.from_mask(m, 8)) < cap)]
        oracle = min(bin(m).count("1") for m in feasible)
        meets = bool(np.all(env.mse(s) < cap))
        ok &= meets and s.count < 8
        p3.append(f"{s.count}/{oracle}")
    parts.append("P3 Rs/oracle " + " ".join(p3))
    criterion(7, ok, "; ".join(parts))
    assert ok


# 8 -------------------------------------------------------------------------------------

SMALL_CONFIG = ('{"recognizer": {"signals_per_class": 20}, "training": {"episodes": 200, "eval_seeds": 2},'
                ' "campaign": {"runs": 2, "bs_counts": [1, 8]}}')


def _cli_chain(out, config):
    def run(*args):
        subprocess.run([sys.executable, "-m", "uavsense.cli", *args, "--config", str(config),
                        "--output-dir", str(out)], check=True, capture_output=True)
    run("train", "--seed", "8")
    run("scene", "--seed", "8")
    run("simulate", "--seed", "8")
    run("detect", "--seed", "8", "--input-dir", str(out), "--model", str(out / "recognizer.json"))
    run("fuse", "--input-dir", str(out))
    run("crlb", "--seed", "8", "--grid-step", "5")
    run("campaign", "--seed", "8", "--model", str(out / "recognizer.json"))
    run("report", "--input-dir", str(out))
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_criterion_8_cli_determinism(criterion, tmp_path):
    config = tmp_path / "small.json"
    config.write_text(SMALL_CONFIG)
    runs = []
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        runs.append(_cli_chain(tmp_path / name, config))
    a, b = runs
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and len(a) > 0
    criterion(8, ok, f"{len(a)} files over 8 subcommands, differing: {differing or 'none'}")
    assert ok
