import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavsense.estimation import Detection
from uavsense.fusion import (
    DbscanConfig,
    EmptyFieldError,
    GridMap,
    GridSpec,
    calibrate,
    dbscan,
    dbscan_points,
    detection_region_size,
    fuse_station,
    localize,
    max_cell_size,
    mmse_position,
    normalize_and_threshold,
    occupancy_increment,
    read_grid_pgm,
    write_clusters_csv,
    write_grid_pgm,
    LocalizedTarget,
)
from uavsense.scene import BsPose
from uavsense.waveform import WaveformConfig

WF = WaveformConfig()
P_FA = 1e-3


def det(r, theta=0.0, pd=1.0, pr=0.8, bs_id=0):
    return Detection(bs_id, r, 0.0, theta, pd, pr)


# -- geometry ------------------------------------------------------------------------

def test_region_range_branch_at_45_degrees():
    bs = BsPose(0, (0.0, 0.0), beamwidth_3db=0.1)
    h = detection_region_size(bs, det(50.0), WF, angle=math.pi / 4)
    assert h == pytest.approx(1.49896229 / math.cos(math.pi / 4), rel=1e-6)
    assert h == pytest.approx(2.120, abs=1e-3)


def test_region_broadside_uses_beam_only():
    bs = BsPose(0, (0.0, 0.0), beamwidth_3db=0.1)
    assert detection_region_size(bs, det(50.0), WF, angle=math.pi / 2) == pytest.approx(5.0)


def test_region_shrinks_with_bandwidth():
    bs = BsPose(0, (0.0, 0.0))
    sizes = [detection_region_size(bs, det(50.0), WaveformConfig(bandwidth_hz=b), angle=math.pi / 4)
             for b in (1e8, 1e9, 1e10)]
    assert sizes[0] > sizes[1] > sizes[2]
    assert sizes[2] < 0.03


def test_region_rejects_zero_range():
    with pytest.raises(ValueError):
        detection_region_size(BsPose(0, (0.0, 0.0)), det(0.0), WF)


def test_max_cell_size_bounds_every_region():
    stations = [BsPose(i, (30.0 * i, 0.0)) for i in range(3)]
    h = max_cell_size(stations, WF)
    for bs in stations:
        for r in (1.0, 10.0, 80.0):
            for a in np.linspace(-1.5, 1.5, 13):
                assert h <= detection_region_size(bs, det(r, a), WF) + 1e-12


@pytest.mark.parametrize("pos,rot,r,th,expected", [
    ((0.0, 0.0), 0.0, 10.0, 0.0, (10.0, 0.0)),
    ((5.0, 5.0), math.pi / 2, 10.0, 0.0, (5.0, 15.0)),
])
def test_calibrate_examples(pos, rot, r, th, expected):
    assert calibrate(BsPose(0, pos, rotation=rot), det(r, th)) == pytest.approx(expected, abs=1e-12)


def test_calibrated_ghost_lands_off_truth():
    # station at origin, UAV at (10, 0), reflector at (0, 10): the ghost returns along the
    # reflector bearing with apparent range 17.071 m
    bs = BsPose(0, (0.0, 0.0), rotation=math.pi / 4)
    ghost = calibrate(bs, det(17.071, math.pi / 4))
    assert ghost == pytest.approx((0.0, 17.071), abs=1e-9)
    assert math.dist(ghost, (10.0, 0.0)) > 10.0


# -- increments and fusion ------------------------------------------------------------

def test_increment_zero_at_false_alarm_level():
    assert occupancy_increment(P_FA, P_FA) == pytest.approx(0.0, abs=1e-15)


def test_increment_ln_800():
    assert occupancy_increment(0.8, P_FA) == pytest.approx(math.log(800.0), rel=1e-12)
    assert math.log(800.0) == pytest.approx(6.6846, abs=1e-4)


def test_increment_is_clipped():
    assert math.isfinite(occupancy_increment(0.0, P_FA))
    assert math.isfinite(occupancy_increment(1.0, P_FA))


def test_fuse_leaves_uncovered_cells_untouched():
    spec = GridSpec((0.0, 0.0), 0.25, 80, 80)
    bs = BsPose(0, (0.0, 10.0))
    g = fuse_station(GridMap.empty(spec), [det(10.0, 0.3)], bs, WF, P_FA)
    assert g.iteration == 1
    changed = g.log_odds != 0
    px, py = calibrate(bs, det(10.0, 0.3))
    centers = spec.cell_centers(np.flatnonzero(changed.ravel()))
    h = detection_region_size(bs, det(10.0, 0.3), WF)
    assert np.all(np.hypot(centers[:, 0] - px, centers[:, 1] - py) <= h / 2 + spec.cell_size)
    assert np.allclose(g.log_odds[changed], math.log(0.8 / P_FA))


def test_fuse_skips_off_grid_detection():
    spec = GridSpec((0.0, 0.0), 0.5, 20, 20)
    g = fuse_station(GridMap.empty(spec), [det(100.0)], BsPose(0, (0.0, 5.0)), WF, P_FA)
    assert len(g.skipped) == 1
    assert not g.log_odds.any()


def test_fuse_rejects_extra_station():
    spec = GridSpec((0.0, 0.0), 0.5, 20, 20)
    g = GridMap(spec, np.zeros(spec.shape), iteration=3)
    with pytest.raises(ValueError):
        fuse_station(g, [], BsPose(0, (0.0, 0.0)), WF, P_FA, n_stations=3)


def _three_station_scene():
    truth = (20.0, 20.0)
    stations = [BsPose(0, (0.0, 20.0)), BsPose(1, (20.0, 0.0), rotation=math.pi / 2),
                BsPose(2, (40.0, 40.0), rotation=-3 * math.pi / 4)]
    dets = []
    for bs in stations:
        r = math.dist(bs.position, truth)
        dets.append([det(r, bs.local_angle(truth), pr=0.9, bs_id=bs.id)])
    ghost = (26.0, 12.0)
    dets[0].append(det(math.dist(stations[0].position, ghost), stations[0].local_angle(ghost), pr=0.9))
    return truth, ghost, stations, dets


def test_three_stations_outweigh_single_ghost():
    truth, ghost, stations, dets = _three_station_scene()
    spec = GridSpec((0.0, 0.0), 0.25, 160, 160)
    g = GridMap.empty(spec)
    for bs, d in zip(stations, dets):
        g = fuse_station(g, d, bs, WF, P_FA)
    cell = lambda p: (int(p[1] // 0.25), int(p[0] // 0.25))
    assert g.log_odds[cell(truth)] >= 3 * g.log_odds[cell(ghost)] > 0
    targets = localize(g, DbscanConfig(1.0, 1))
    assert len(targets) == 1
    assert math.dist(targets[0].position, truth) < 0.5


def test_fusion_order_invariance():
    _, _, stations, dets = _three_station_scene()
    spec = GridSpec((0.0, 0.0), 0.25, 160, 160)
    ref = None
    for perm in ([0, 1, 2], [2, 0, 1], [1, 2, 0]):
        g = GridMap.empty(spec)
        for i in perm:
            g = fuse_station(g, dets[i], stations[i], WF, P_FA)
        if ref is None:
            ref = g.log_odds
        assert np.array_equal(g.log_odds, ref)


# -- normalization ------------------------------------------------------------------

def test_single_positive_cell_gets_unit_probability():
    lo = np.zeros((5, 5))
    lo[2, 3] = 4.0
    pf = normalize_and_threshold(lo)
    assert pf[2, 3] == 1.0 and pf.sum() == 1.0


def test_weak_peak_removed():
    lo = np.zeros((3, 3))
    lo[0, 0] = 5.0
    lo[2, 2] = 5.0 + math.log(0.4)
    pf = normalize_and_threshold(lo, 0.5)
    assert pf[0, 0] > 0 and pf[2, 2] == 0


def test_uniform_field_survives():
    pf = normalize_and_threshold(np.full((4, 6), 2.0))
    assert np.allclose(pf, 1 / 24)


def test_empty_field_error():
    with pytest.raises(EmptyFieldError):
        normalize_and_threshold(np.zeros((3, 3)))


# -- DBSCAN -------------------------------------------------------------------------

def brute_dbscan(pts, eps, min_pts):
    n = len(pts)
    d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    nb = [np.flatnonzero(d[i] <= eps) for i in range(n)]
    core = [len(x) >= min_pts for x in nb]
    labels = [-1] * n
    c = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        stack, labels[i] = [i], c
        while stack:
            j = stack.pop()
            if not core[j]:
                continue
            for k in nb[j]:
                if labels[k] == -1:
                    labels[k] = c
                    stack.append(k)
        c += 1
    return np.array(labels)


def same_partition(a, b):
    pairs = {}
    for x, y in zip(a, b):
        if (x == -1) != (y == -1):
            return False
        if x != -1 and pairs.setdefault(x, y) != y:
            return False
    return len(set(pairs.values())) == len(pairs)


def test_dbscan_tight_group_is_one_cluster():
    pts = np.array([[0, 0], [0.1, 0], [0, 0.1], [0.1, 0.1], [0.2, 0.2]])
    assert set(dbscan_points(pts, DbscanConfig(1.0, 3))) == {0}


def test_dbscan_isolated_point_is_noise():
    assert dbscan_points(np.array([[0.0, 0.0]]), DbscanConfig(1.0, 3))[0] == -1


def test_dbscan_two_blobs_against_brute_force():
    rng = np.random.default_rng(3)
    pts = np.vstack([rng.normal(0, 0.2, (20, 2)), rng.normal(10, 0.2, (20, 2))])
    labels = dbscan_points(pts, DbscanConfig(1.0, 3))
    assert labels.max() == 1
    assert same_partition(labels, brute_dbscan(pts, 1.0, 3))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.floats(0.3, 2.0))
def test_dbscan_core_partition_matches_brute_force(seed, min_pts, eps):
    pts = np.random.default_rng(seed).uniform(0, 8, (40, 2))
    a = dbscan_points(pts, DbscanConfig(eps, min_pts))
    b = brute_dbscan(pts, eps, min_pts)
    # border points reachable from two clusters may go either way; compare core points and noise
    d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    core = (d <= eps).sum(axis=1) >= min_pts
    assert np.array_equal(a == -1, b == -1)
    assert same_partition(a[core], b[core])


def test_dbscan_grid_labels_follow_row_major_order():
    spec = GridSpec((0.0, 0.0), 1.0, 10, 10)
    pf = np.zeros(spec.shape)
    pf[8, 1] = pf[1, 8] = 1.0
    clusters = dbscan(pf, spec, DbscanConfig(1.0, 1))
    assert [c.tolist() for c in clusters] == [[18], [81]]


# -- MMSE ---------------------------------------------------------------------------

def test_mmse_single_cell_is_center():
    spec = GridSpec((0.0, 0.0), 0.5, 4, 4)
    pf = np.zeros(spec.shape)
    pf[1, 2] = 1.0
    t = mmse_position(pf, spec, np.array([6]))
    assert t.position == pytest.approx((1.25, 0.75))


def test_mmse_two_equal_cells_is_midpoint():
    spec = GridSpec((0.0, 0.0), 1.0, 4, 4)
    pf = np.zeros(spec.shape)
    pf[0, 0] = pf[0, 2] = 0.5
    assert mmse_position(pf, spec, np.array([0, 2])).position == pytest.approx((1.5, 0.5))


def test_mmse_gaussian_blob():
    spec = GridSpec((0.0, 0.0), 0.25, 240, 240)
    x, y = np.meshgrid(spec.x_centers(), spec.y_centers())
    pf = np.exp(-((x - 30.1) ** 2 + (y - 39.9) ** 2) / 2.0)
    t = mmse_position(pf, spec, np.flatnonzero(pf.ravel() > 1e-12))
    assert math.dist(t.position, (30.1, 39.9)) < 0.25


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_mmse_point_symmetric_field(seed):
    rng = np.random.default_rng(seed)
    half = rng.uniform(0.1, 1.0, (5, 10))
    pf = np.vstack([half, half[::-1, ::-1]])
    spec = GridSpec((2.0, -3.0), 0.5, 10, 10)
    t = mmse_position(pf, spec, np.arange(100))
    assert t.position[0] == pytest.approx(2.0 + 2.5, abs=1e-9)
    assert t.position[1] == pytest.approx(-3.0 + 2.5, abs=1e-9)


def test_mmse_zero_mass_rejected():
    spec = GridSpec((0.0, 0.0), 1.0, 2, 2)
    with pytest.raises(ValueError):
        mmse_position(np.zeros(spec.shape), spec, np.array([0]))


# -- outputs ------------------------------------------------------------------------

def test_pgm_round_trip(tmp_path):
    spec = GridSpec((-1.0, 2.0), 0.5, 7, 4)
    pf = np.random.default_rng(0).uniform(0, 1, spec.shape)
    pf /= pf.sum()
    write_grid_pgm(pf, spec, tmp_path / "g.pgm")
    back, spec2 = read_grid_pgm(tmp_path / "g.pgm")
    assert spec2 == spec
    assert np.allclose(back, pf, atol=pf.max() / 65535)
    lines = (tmp_path / "g.pgm").read_text().splitlines()
    assert lines[:3] == ["P2", "7 4", "65535"]


def test_clusters_csv(tmp_path):
    write_clusters_csv([LocalizedTarget((1.0, 2.0), 0, 0.5, 3)], tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == "cluster_id,x_m,y_m,mass,member_cells\n0,1,2,0.5,3\n"
