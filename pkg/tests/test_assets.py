import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dexkit.assets import (ALL_CATEGORIES, TASK_CATEGORIES, SplitManifest, default_split, functional_part_labels,
                           generate_object, generate_split, get_template, grasp_point_reachable)
from dexkit.robot import ROBOT
from dexkit.shapes import sample_surface, signed_distance_local, sphere_proxies

seeds = st.integers(0, 2**31 - 2)


@pytest.mark.parametrize("category,counts", [("faucet", (18, 11, 7)), ("bucket", (19, 11, 8)),
                                             ("laptop", (17, 11, 6)), ("toilet", (28, 17, 11))])
def test_default_split_counts(category, counts):
    m = default_split(category)
    assert (m.counts["all"], m.counts["seen"], m.counts["unseen"]) == counts
    assert not set(m.ids("seen")) & set(m.ids("unseen"))
    assert len(set(m.ids())) == counts[0]


def test_generate_split_validation():
    t = get_template("laptop")
    with pytest.raises(ValueError):
        generate_split(t, 5, 3, 1, 0)
    m = generate_split(t, 4, 4, 0, 0)
    assert m.counts == {"all": 4, "seen": 4, "unseen": 0} and m.ids("unseen") == []


def test_manifest_roundtrip(tmp_path):
    m = default_split("faucet", seed=3)
    path = m.save(tmp_path / "m.json")
    body = json.loads(path.read_text())
    assert set(body) >= {"category", "objects"}
    assert {"id", "seed", "split", "params"} <= set(body["objects"][0])
    back = SplitManifest.load(path)
    assert back.objects == m.objects and back.category == "faucet"
    with pytest.raises(FileNotFoundError):
        SplitManifest.load(tmp_path / "missing.json")


def test_subset_keeps_unseen_and_prefix_of_seen():
    m = default_split("laptop")
    half = m.subset(0.5)
    assert half.counts["seen"] == round(0.5 * 11) and half.ids("unseen") == m.ids("unseen")
    assert set(half.ids("seen")) < set(m.ids("seen"))
    assert half.ids("seen") == m.ids("seen")[:half.counts["seen"]]


@given(st.sampled_from(ALL_CATEGORIES), seeds, st.sampled_from(["seen", "unseen"]))
def test_generation_deterministic(category, seed, split):
    t = get_template(category)
    a, b = generate_object(t, seed, split), generate_object(t, seed, split)
    assert a.params == b.params
    assert all(x == y for x, y in zip(a.shapes, b.shapes))
    np.testing.assert_array_equal(a.grasp_local, b.grasp_local)


def test_faucet_handle_length_in_range():
    t = get_template("faucet")
    for split in ("seen", "unseen"):
        ranges = t.split_ranges(split)
        lo = ranges["lever_length"][0] * ranges["scale"][0]
        hi = ranges["lever_length"][1] * ranges["scale"][1]
        for seed in range(500):
            inst = generate_object(t, seed, split)
            lever = [s for s in inst.shapes if s.link == 0 and s.kind == "capsule"][0]
            length = 2 * lever.dims[1]
            assert lo - 1e-12 <= length <= hi + 1e-12
            for k, (a, b) in ranges.items():
                assert a <= inst.params[k] <= b


def test_unseen_ranges_widened():
    t = get_template("laptop")
    seen, unseen = t.split_ranges("seen"), t.split_ranges("unseen")
    lo, hi = seen["base_depth"]
    assert unseen["base_depth"] == pytest.approx((lo - 0.075 * (hi - lo), hi + 0.075 * (hi - lo)))
    assert unseen["init_angle"] == seen["init_angle"]


def test_laptop_closed_lid_coplanar():
    inst = generate_object(get_template("laptop"), 11)
    poses = inst.link_poses(inst.chain.root, np.zeros(1))
    base = [s for s in inst.shapes if s.link == -1][0]
    lid = [s for s in inst.shapes if s.link == 0][0]
    base_top = poses[-1].apply(base.pose.translation[None])[0, 2] + base.dims[2]
    lid_bottom = poses[0].apply(lid.pose.translation[None])[0, 2] - lid.dims[2]
    assert abs(base_top - lid_bottom) < 1e-6


def test_functional_labels():
    faucet = generate_object(get_template("faucet"), 0)
    assert functional_part_labels(faucet) == {-1: "rest", 0: "functional"}
    laptop = generate_object(get_template("laptop"), 0)
    assert functional_part_labels(laptop)[0] == "functional"
    for category in ALL_CATEGORIES:
        t = get_template(category)
        for seed in range(0, 1000, 4):
            labels = set(functional_part_labels(generate_object(t, seed)).values())
            assert labels == {"functional", "rest"}


@pytest.mark.parametrize("category", TASK_CATEGORIES)
def test_instances_valid(category):
    t = get_template(category)
    kinds = None
    for seed, split in [(s, sp) for s in range(40) for sp in ("seen", "unseen")]:
        inst = generate_object(t, seed, split)
        assert grasp_point_reachable(inst)
        topo = tuple(j.kind for j in inst.chain.joints), tuple(inst.chain.parents)
        kinds = kinds or topo
        assert topo == kinds
        # grasp point on the surface of a shape belonging to the grasp link
        dist = min(abs(signed_distance_local(s.kind, s.dims, s.pose.inverse().apply(inst.grasp_local[None]))[0])
                   for s in inst.shapes if s.link == inst.grasp_link)
        assert dist < 1e-6
        assert inst.grasp_link in inst.functional_links


@pytest.mark.parametrize("category", ALL_CATEGORIES)
def test_proxy_centres_inside_shapes(category):
    inst = generate_object(get_template(category), 5)
    rng = np.random.default_rng(0)
    for s in inst.shapes:
        c, r = sphere_proxies(s, inst.proxy_spacing)
        local = s.pose.inverse().apply(c)
        assert np.all(signed_distance_local(s.kind, s.dims, local) <= 1e-9)
        # every surface point is covered by some proxy sphere
        surf = sample_surface(s, 200, rng)
        gap = np.linalg.norm(surf[:, None] - c[None], axis=-1) - r[None]
        assert np.all(gap.min(axis=1) <= inst.proxy_spacing)


def test_robot_proxy_spacing():
    centers, _, links = ROBOT.proxies
    finger_width = 2 * 0.01
    for link in np.unique(links):
        c = centers[links == link]
        if len(c) < 2:
            continue
        d = np.linalg.norm(c[:, None] - c[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        assert d.min(axis=1).max() <= 0.5 * finger_width + 1e-9
