import math
from collections import defaultdict

import numpy as np
import pytest
from scipy import ndimage

from helpers import make_vote, random_vote_space
from votedetect.aggregation import (DetectionConfig, Pose, detect, estimate_pose, flood_cells,
                                    flood_gather, gather_local, unique_filter)
from votedetect.cascade import CascadeConfig
from votedetect.config import RunConfig
from votedetect.pipeline import build_votes, run_process
from votedetect.synthetic import (DEFAULT_PATTERNS, PlantedInstance, SceneSpec, default_suite,
                                  generate)
from votedetect.vote_image import (Proposition, find_propositions, point_in_convex_polygon,
                                   rasterize)
from votedetect.votespace import PatternMeta, VoteSpace

META = PatternMeta("P", 256, 192)


def prop_at(x, y, bin_size=4):
    c, r = int(x // bin_size), int(y // bin_size)
    return Proposition((c, r), ((c + 0.5) * bin_size, (r + 0.5) * bin_size), 10.0)


class TestGatherLocal:
    def test_nothing_in_range(self):
        vs = VoteSpace("P", [make_vote(0, cx=100, cy=100)], (200, 200))
        assert gather_local(vs, prop_at(10, 10), 5.0) == []

    def test_everything_at_position(self):
        votes = [make_vote(i, cx=10.0, cy=10.0) for i in range(5)]
        vs = VoteSpace("P", votes, (200, 200))
        p = Proposition((2, 2), (10.0, 10.0), 5.0)
        assert gather_local(vs, p, 1.0) == votes

    def test_bad_radius(self):
        vs = VoteSpace("P", [], (10, 10))
        with pytest.raises(ValueError):
            gather_local(vs, prop_at(1, 1), 0.0)

    def test_skips_dead_votes(self, rng):
        vs = random_vote_space(rng, 100, dims=(50, 50))
        vs.remove(range(0, 100, 2))
        got = gather_local(vs, prop_at(25, 25), 1e3)
        assert [v.vote_id for v in got] == list(range(1, 100, 2))


class TestUniqueFilter:
    def test_keeps_strongest(self):
        a = make_vote(0, adjacency=0.9, pattern_feature_id=3)
        b = make_vote(1, adjacency=0.5, pattern_feature_id=3)
        assert unique_filter([b, a]) == [a]

    def test_distinct_ids_unchanged(self, rng):
        votes = [make_vote(i, adjacency=float(rng.uniform()), pattern_feature_id=i)
                 for i in range(12)]
        out = unique_filter(votes)
        assert sorted(v.vote_id for v in out) == list(range(12))
        assert [v.adjacency for v in out] == sorted((v.adjacency for v in votes), reverse=True)

    def test_tie_goes_to_lower_scene_id(self):
        a = make_vote(0, adjacency=0.7, pattern_feature_id=1, scene_feature_id=9)
        b = make_vote(1, adjacency=0.7, pattern_feature_id=1, scene_feature_id=4)
        assert unique_filter([a, b]) == [b]

    def test_idempotent(self, rng):
        vs = random_vote_space(rng, 200, n_pattern=15)
        once = unique_filter(vs.votes)
        assert unique_filter(once) == once


class TestEstimatePose:
    def test_single_vote(self):
        v = make_vote(cx=40, cy=50, rel_scale=1.3, rel_rotation=0.7)
        pose = estimate_pose([v], META)
        assert pose.center == (40.0, 50.0)
        assert pose.scale == 1.3
        assert pose.rotation == pytest.approx(0.7)

    def test_symmetric_group(self):
        votes = [make_vote(i, cx=100 + dx, cy=80 + dy, rel_scale=0.9, rel_rotation=2.0)
                 for i, (dx, dy) in enumerate([(5, 0), (-5, 0), (0, 7), (0, -7)])]
        pose = estimate_pose(votes, META)
        assert pose.center == pytest.approx((100.0, 80.0))
        assert pose.scale == pytest.approx(0.9)
        assert pose.rotation == pytest.approx(2.0)

    def test_wraparound_mean(self):
        votes = [make_vote(0, rel_rotation=math.radians(350)),
                 make_vote(1, rel_rotation=math.radians(10))]
        rot = estimate_pose(votes, META).rotation
        assert min(rot, 2 * math.pi - rot) == pytest.approx(0.0, abs=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            estimate_pose([], META)

    def test_quad_geometry(self):
        pose = Pose.from_similarity((0.0, 0.0), 2.0, math.pi / 2, 100, 50)
        q = np.array(pose.quad)
        # pattern rectangle corners TL, TR, BR, BL rotated a quarter turn
        assert q == pytest.approx(np.array([[50, -100], [50, 100], [-50, 100], [-50, -100]]))
        area = 0.5 * sum(q[i, 0] * q[(i + 1) % 4, 1] - q[(i + 1) % 4, 0] * q[i, 1]
                         for i in range(4))
        assert area == pytest.approx(100 * 50 * 4)

    def test_shrunk_quad(self):
        pose = Pose.from_similarity((10.0, 20.0), 1.0, 0.0, 10, 10)
        assert pose.shrunk_quad(0.5)[0] == pytest.approx((7.5, 17.5))


def blob_votes(cells, bin_size=4, per_cell=2, start=0):
    votes = []
    for c, r in cells:
        for k in range(per_cell):
            votes.append(make_vote(start + len(votes), cx=(c + 0.25 + 0.5 * k) * bin_size,
                                   cy=(r + 0.5) * bin_size, adjacency=0.5,
                                   pattern_feature_id=len(votes)))
    return votes


def component_oracle(grid, bin_size, seed, bound):
    """Connected component (8-connectivity) of the masked grid holding seed."""
    rows, cols = grid.shape
    rr, cc = np.mgrid[0:rows, 0:cols]
    inside = point_in_convex_polygon((cc + 0.5) * bin_size, (rr + 0.5) * bin_size, bound)
    mask = (grid > 0) & inside
    labels, _ = ndimage.label(mask, structure=np.ones((3, 3)))
    col, row = seed
    if not mask[row, col]:
        return set()
    return {(int(c), int(r)) for r, c in zip(*np.nonzero(labels == labels[row, col]))}


class TestFloodGather:
    big = Pose.from_similarity((100.0, 100.0), 1.0, 0.0, 400, 400)

    def test_single_blob(self):
        votes = blob_votes([(10, 10), (11, 10), (11, 11), (12, 12)])
        vs = VoteSpace("P", votes, (200, 200))
        vi = rasterize(vs, 4)
        got = flood_gather(vs, vi, Proposition((10, 10), (42.0, 42.0), 1.0), self.big, 0.8)
        assert got == votes

    def test_gap_separates_blobs(self):
        a = blob_votes([(10, 10), (11, 10)])
        b = blob_votes([(13, 10), (14, 10)], start=len(a))
        vs = VoteSpace("P", a + b, (200, 200))
        vi = rasterize(vs, 4)
        got = flood_gather(vs, vi, Proposition((10, 10), (42.0, 42.0), 1.0), self.big, 0.8)
        assert got == a

    def test_bound_clips_blob(self):
        cells = [(c, 10) for c in range(5, 30)]
        vs = VoteSpace("P", blob_votes(cells), (200, 200))
        vi = rasterize(vs, 4)
        bound = Pose.from_similarity((60.0, 42.0), 1.0, 0.0, 50, 50)  # shrunk: x in [40, 80]
        got = flood_gather(vs, vi, Proposition((15, 10), (62.0, 42.0), 1.0), bound, 0.8)
        got_cells = sorted({int(v.cx // 4) for v in got})
        assert got_cells == list(range(10, 20))

    def test_zero_seed_cell(self):
        vs = VoteSpace("P", blob_votes([(3, 3)]), (200, 200))
        vi = rasterize(vs, 4)
        assert flood_gather(vs, vi, Proposition((20, 20), (82.0, 82.0), 1.0), self.big) == []

    def test_bad_shrink(self):
        vs = VoteSpace("P", [], (10, 10))
        with pytest.raises(ValueError):
            flood_gather(vs, rasterize(vs, 4), prop_at(1, 1), self.big, 0.0)

    def test_matches_masked_components(self, rng):
        for _ in range(100):
            vs = random_vote_space(rng, int(rng.integers(50, 400)), dims=(160, 120))
            vi = rasterize(vs, 4)
            live = vs.live_ids()
            seed_vote = vs.votes[int(rng.choice(live))]
            seed = (int(seed_vote.cx // 4), int(seed_vote.cy // 4))
            pose = Pose.from_similarity((float(rng.uniform(40, 120)), float(rng.uniform(30, 90))),
                                        float(rng.uniform(0.3, 0.8)),
                                        float(rng.uniform(0, 2 * math.pi)), 256, 192)
            bound = pose.shrunk_quad(0.8)
            expected = component_oracle(vi.grid, 4, seed, bound)
            assert set(flood_cells(vi, seed, bound)) == expected
            prop = Proposition(seed, vi.cell_center(*seed), 1.0)
            got = {v.vote_id for v in flood_gather(vs, vi, prop, pose, 0.8)}
            want = {i for c, r in expected for i in vi.cell_votes(c, r)}
            assert got == want


def single_instance_scene(seed=3, noise=0, scale=1.1, rotation=0.6):
    spec = SceneSpec(scene_id=f"one{seed}", width=1024, height=768,
                     patterns=[DEFAULT_PATTERNS[0]],
                     instances=[PlantedInstance("A", (500.0, 380.0), scale, rotation, 30)],
                     noise_votes=noise, seed=seed)
    return generate(spec)


class TestDetect:
    def test_no_propositions(self, rng):
        vs = random_vote_space(rng, 50)
        vi = rasterize(vs, 4)
        assert detect(vs, vi, [], META) == []
        assert vs.live_count == 50

    def test_single_instance_pose(self):
        for seed in range(1, 6):
            scene = single_instance_scene(seed, rotation=0.3 * seed)
            pat = scene.patterns["A"]
            res = run_process(pat.features, scene.features, RunConfig(), pat.image.pixels,
                              scene.image.pixels)
            assert len(res.occurrences) == 1
            occ, truth = res.occurrences[0], scene.truth[0]
            assert math.dist(occ.pose.center, truth.center) <= 2 * 4
            assert abs(occ.pose.scale / truth.scale - 1) <= 0.10
            d = abs(occ.pose.rotation - truth.rotation) % (2 * math.pi)
            assert math.degrees(min(d, 2 * math.pi - d)) <= 5
            assert occ.vote_count == len(occ.votes) >= 6
            assert all(r.accepted for rep in occ.filter_report for r in rep.results)

    def test_rejection_erases_nothing(self):
        scene = single_instance_scene(4)
        pat = scene.patterns["A"]
        cfg = RunConfig()
        vs, vi = build_votes(pat.features, scene.features, pat.meta, cfg)
        props = find_propositions(vi, cfg.t_min, cfg.nms_radius, cfg.max_props)
        strict = DetectionConfig(cascade=CascadeConfig(min_votes=1000, use_ncc=False))
        grid = vi.grid.copy()
        assert detect(vs, vi, props, pat.meta, strict) == []
        assert vs.live_count == len(vs)
        assert np.array_equal(vi.grid, grid)

    def test_consumption_and_disjointness(self):
        spec = default_suite(n_scenes=1, base_seed=5)[0]
        scene = generate(spec)
        pat = scene.patterns["A"]
        cfg = RunConfig()
        vs, vi = build_votes(pat.features, scene.features, pat.meta, cfg)
        props = find_propositions(vi, cfg.t_min, cfg.nms_radius, cfg.max_props)
        occs = []
        live = vs.live_count
        for p in props:
            new = detect(vs, vi, [p], pat.meta, cfg.detection_config(), scene.image.pixels,
                         pat.image.pixels)
            now = vs.live_count
            assert now <= live
            assert (now < live) == bool(new)
            live = now
            occs += new
        assert len(occs) == 5
        seen = set()
        for occ in occs:
            ids = {v.vote_id for v in occ.votes}
            assert not ids & seen
            seen |= ids
            grown = Pose.from_similarity(occ.pose.center, occ.pose.scale, occ.pose.rotation,
                                         pat.meta.width + 2 * 4 * math.sqrt(2) / occ.pose.scale,
                                         pat.meta.height + 2 * 4 * math.sqrt(2) / occ.pose.scale)
            inside = point_in_convex_polygon([v.cx for v in occ.votes],
                                             [v.cy for v in occ.votes], grown.quad)
            assert inside.all()

    def test_order_independent_when_separated(self):
        spec = default_suite(n_scenes=1, base_seed=9)[0]
        scene = generate(spec)
        pat = scene.patterns["A"]
        cfg = RunConfig()
        groups = []
        for order in (1, -1):
            vs, vi = build_votes(pat.features, scene.features, pat.meta, cfg)
            props = find_propositions(vi, cfg.t_min, cfg.nms_radius, cfg.max_props)
            occs = detect(vs, vi, props[::order], pat.meta, cfg.detection_config(),
                          scene.image.pixels, pat.image.pixels)
            groups.append({frozenset(v.vote_id for v in o.votes) for o in occs})
        assert groups[0] == groups[1]
        assert len(groups[0]) == 5

    def test_stale_propositions_skipped(self):
        scene = single_instance_scene(6)
        pat = scene.patterns["A"]
        cfg = RunConfig()
        vs, vi = build_votes(pat.features, scene.features, pat.meta, cfg)
        props = find_propositions(vi, cfg.t_min, 0, cfg.max_props)  # no NMS: many duplicates
        trace = []
        occs = detect(vs, vi, props, pat.meta, cfg.detection_config(), scene.image.pixels,
                      pat.image.pixels, trace)
        assert len(occs) == 1
        stages = defaultdict(int)
        for t in trace:
            stages[t["stage"]] += 1
        assert stages["accepted"] == 1
        assert stages["stale"] > 0
