import math

import numpy as np
import pytest

from uavsense.harness import (
    CampaignConfig,
    PipelineConfig,
    RunResult,
    SceneTemplate,
    active_subset,
    aggregate,
    default_scene,
    match_targets,
    observe_scene,
    perimeter_stations,
    read_results_csv,
    run_campaign,
    score,
    write_cdf_csv,
    write_results_csv,
    write_summary_csv,
)
from uavsense.scene import scene_to_dict


@pytest.mark.parametrize("seed", [0, 1, 17, 2**31 - 1])
def test_default_scene_layout(seed):
    scene = default_scene(seed)
    assert len(scene.stations) == 8
    assert scene.bounds == (0.0, 0.0, 90.0, 90.0)
    assert sum(u.is_target for u in scene.uavs) == 1
    assert len(scene.uavs) == 2
    for u in scene.uavs:
        assert 15.0 <= u.position[0] <= 75.0 and 15.0 <= u.position[1] <= 75.0


def test_perimeter_spacing_and_orientation():
    st = perimeter_stations(90.0, 30.0)
    pos = [bs.position for bs in st]
    assert pos[:2] == [(30.0, 0.0), (60.0, 0.0)]
    for bs in st:
        # boresight points at the area center
        assert abs(bs.local_angle((45.0, 45.0))) < math.pi / 4 + 1e-9


def test_default_scene_is_deterministic():
    assert scene_to_dict(default_scene(5)) == scene_to_dict(default_scene(5))
    assert scene_to_dict(default_scene(5)) != scene_to_dict(default_scene(6))


def test_fixed_reflector_count():
    t = SceneTemplate(include_unintentional=False, reflector_count=1)
    scene = default_scene(3, t)
    assert len(scene.reflectors) == 1 and len(scene.uavs) == 1


def test_fine_grid_resolution_is_configurable():
    assert PipelineConfig(cell_size=0.1).cell_size <= 0.1


def test_active_subset_sizes():
    scene = default_scene(0)
    for n in range(1, 9):
        assert len(active_subset(scene, n).stations) == n


def test_match_targets_gate():
    errors, extra = match_targets([(0.0, 0.0), (50.0, 50.0)], [(0.3, 0.4), (10.0, 0.0)], 5.0)
    assert errors[0] == pytest.approx(0.5)
    assert math.isnan(errors[1])
    assert len(extra) == 1


def test_high_snr_scene_localizes_within_two_cells(recognizer):
    t = SceneTemplate(include_unintentional=False, reflector_count=0, uav_rcs=1.0)
    pipe = PipelineConfig()
    scene = default_scene(4, t)
    obs = observe_scene(scene, pipe, recognizer, 4)
    r = score(scene, obs, pipe)
    assert r.per_uav_error_m[0] < 2 * pipe.cell_size


def test_campaign_is_deterministic_and_round_trips(recognizer, tmp_path):
    cfg = CampaignConfig(runs=2, master_seed=9, bs_counts=(1, 8))
    a, fa = run_campaign(cfg, recognizer)
    b, fb = run_campaign(cfg, recognizer)
    write_results_csv(a, tmp_path / "a.csv")
    write_results_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert fa == fb == []
    back = read_results_csv(tmp_path / "a.csv")
    assert [(r.run_id, r.bs_count) for r in back] == [(r.run_id, r.bs_count) for r in a]
    assert all(r.wall_time_s == 0.0 for r in a)


def _fake(bs_count, errs, ghosts=0, crlb=0.01):
    return RunResult(0, bs_count, list(range(len(errs))), list(errs), ghosts, crlb)


def test_aggregate_identical_results_have_zero_spread():
    s, _ = aggregate([_fake(3, [0.2])] * 10)
    assert s[0].mean_error_m == pytest.approx(0.2)
    assert s[0].median_error_m == pytest.approx(0.2)
    assert s[0].rmse_m == pytest.approx(0.2)
    assert s[0].miss_rate == 0.0 and s[0].ghost_free_rate == 1.0


def test_aggregate_cdf_and_misses(tmp_path):
    rng = np.random.default_rng(0)
    res = [_fake(n, [rng.uniform(0, 1)], ghosts=int(rng.integers(2))) for n in (1, 2) for _ in range(20)]
    res.append(_fake(1, [math.nan]))
    summaries, cdf = aggregate(res)
    assert summaries[0].miss_rate == pytest.approx(1 / 21)
    for n in (1, 2):
        pts = [(e, c) for k, e, c in cdf if k == n]
        assert all(np.diff([e for e, _ in pts]) >= 0)
        assert all(np.diff([c for _, c in pts]) > 0)
        assert pts[-1][1] == 1.0
    write_summary_csv(summaries, tmp_path / "s.csv")
    write_cdf_csv(cdf, tmp_path / "c.csv")
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 3
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 41


def test_aggregate_rejects_empty():
    with pytest.raises(ValueError):
        aggregate([])


def test_campaign_config_validation():
    with pytest.raises(ValueError):
        CampaignConfig(runs=0)
    with pytest.raises(ValueError):
        CampaignConfig(bs_counts=(0,))
    with pytest.raises(ValueError):
        CampaignConfig(bs_counts=(9,))
