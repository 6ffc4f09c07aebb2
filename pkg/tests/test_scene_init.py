import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occseg import scene_init, synth
from occseg.scene_init import (
    BRIGHTER_IS_NEARER,
    DARKER_IS_NEARER,
    InitConfig,
    analyse_image,
    choose_k,
    depth_order,
    histogram_kmeans,
    seed_regions,
)


def two_level(a=0.2, b=0.8):
    u = np.full((10, 10), a)
    u[5:] = b
    return u


def test_config_validation():
    with pytest.raises(ValueError):
        InitConfig(k=0)
    with pytest.raises(ValueError):
        InitConfig(kmeans_restarts=0)
    with pytest.raises(ValueError):
        InitConfig(depth_rule="sideways")
    assert InitConfig(k="auto").k == "auto"


def test_two_point_masses():
    km = histogram_kmeans(two_level(), 2)
    assert np.allclose(km.centers, [0.2, 0.8], atol=1e-15)
    assert np.array_equal(km.masses, [50, 50]) and km.sse == pytest.approx(0.0, abs=1e-20)


def test_constant_image_single_cluster():
    km = histogram_kmeans(np.full((4, 4), 0.37), 1)
    assert km.centers[0] == pytest.approx(0.37, abs=1e-15)


def test_k_equal_levels_recovers_levels():
    levels = [0.1, 0.35, 0.6, 0.9]
    u = np.repeat(np.array(levels), 7).reshape(4, 7)
    km = histogram_kmeans(u, 4)
    assert np.allclose(km.centers, levels, atol=1e-15)


def test_k_above_levels_is_rejected():
    with pytest.raises(ValueError):
        histogram_kmeans(two_level(), 3)


@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
@settings(max_examples=25, deadline=None)
def test_sse_never_increases_and_centres_sorted(seed, k):
    rng = np.random.default_rng(seed)
    u = np.clip(rng.choice([0.1, 0.4, 0.6, 0.9], size=(12, 12)) + rng.normal(0, 0.05, (12, 12)), 0, 1)
    km = histogram_kmeans(u, k, restarts=4, seed=seed)
    assert np.all(np.diff(km.history) <= 1e-12)
    assert np.all(np.diff(km.centers) > 0)


def test_restart_winner_minimises_sse_over_its_own_restarts():
    rng = np.random.default_rng(0)
    u = np.clip(rng.random((20, 20)), 0, 1)
    best = histogram_kmeans(u, 4, restarts=6, seed=3)
    one = histogram_kmeans(u, 4, restarts=1, seed=3)
    # the first restart of the same stream is one of the candidates
    assert best.sse <= one.sse


def test_kmeans_deterministic():
    u = np.random.default_rng(1).random((16, 16))
    a, b = histogram_kmeans(u, 3, seed=5), histogram_kmeans(u, 3, seed=5)
    assert np.array_equal(a.centers, b.centers) and a.sse == b.sse


def test_depth_order_examples():
    objects, bg = depth_order([0.1, 0.5, 0.9], BRIGHTER_IS_NEARER)
    assert list(objects) == [0.9, 0.5] and bg == 0.1
    objects, bg = depth_order([0.1, 0.5, 0.9], DARKER_IS_NEARER)
    assert list(objects) == [0.5, 0.9] and bg == 0.1
    objects, bg = depth_order([0.3, 0.7])
    assert list(objects) == [0.7] and bg == 0.3


def test_depth_order_background_by_mass_and_override():
    objects, bg = depth_order([0.1, 0.5, 0.9], masses=[5, 10, 40])
    assert bg == 0.9 and list(objects) == [0.5, 0.1]
    objects, bg = depth_order([0.1, 0.5, 0.9], background=1)
    assert bg == 0.5 and list(objects) == [0.9, 0.1]
    with pytest.raises(ValueError):
        depth_order([0.4])


@given(st.lists(st.floats(0, 1), min_size=2, max_size=6, unique=True),
       st.sampled_from([BRIGHTER_IS_NEARER, DARKER_IS_NEARER]))
def test_depth_order_is_permutation(values, rule):
    objects, bg = depth_order(values, rule)
    assert len(objects) + 1 == len(values)
    assert sorted(list(objects) + [bg]) == sorted(values)


def scene_image():
    u = np.full((20, 20), 0.1)
    u[3:12, 3:12] = 0.6
    u[8:16, 8:16] = 0.9
    return u


def test_seeds_lie_inside_objects_and_are_disjoint():
    u = scene_image()
    seeds = seed_regions(u, [0.9, 0.6, 0.1], InitConfig(seed_region_size=9))
    assert seeds.shape == (2, 20, 20)
    assert (u[seeds[0] > 0] == 0.9).all() and (u[seeds[1] > 0] == 0.6).all()
    assert all(0 < s.sum() <= 9 for s in seeds)
    assert not (seeds[0] & seeds[1]).any()


def test_seed_missing_region_is_an_error():
    with pytest.raises(ValueError, match="region"):
        seed_regions(two_level(0.1, 0.9), [0.9, 0.5, 0.1], InitConfig())


def test_seeds_deterministic_and_disjoint_on_noisy_scenes():
    ds = synth.toy_shapes(["square", "cross"], (16, 16), 20, seed=0)
    for seed in range(5):
        sc = synth.synthesize(ds, 2, 28, 28, 0.05, seed)
        a = analyse_image(sc.image, 2, InitConfig())
        b = analyse_image(sc.image, 2, InitConfig())
        assert np.array_equal(a[1], b[1]) and np.array_equal(a[0], b[0])
        assert not (a[1][0] & a[1][1]).any()


def test_analyse_noiseless_scene_recovers_intensities():
    ints, seeds, km = analyse_image(scene_image(), 2, InitConfig())
    assert np.allclose(ints, [0.9, 0.6, 0.1], atol=1e-15)
    assert seeds.shape == (2, 20, 20)
    with pytest.raises(ValueError):
        analyse_image(scene_image(), 0, InitConfig())


def test_auto_k_on_well_separated_levels():
    assert choose_k(scene_image(), InitConfig(k="auto")) == 3
    ints, _, _ = analyse_image(scene_image(), None, InitConfig(k="auto"))
    assert len(ints) == 3


def test_nearest_labels():
    lab = scene_init.nearest_labels(np.array([[0.0, 0.55, 1.0]]), [0.9, 0.5, 0.1])
    assert lab.tolist() == [[2, 1, 0]]


def test_noise_sigma_estimate():
    rng = np.random.default_rng(0)
    u = np.clip(scene_image() + rng.normal(0, 0.05, (20, 20)), 0, 1)
    assert abs(scene_init.noise_sigma(u) - 0.05) < 0.015
    assert scene_init.noise_sigma(scene_image()) == 0.0


def test_auto_k_on_noisy_synthetic_scenes():
    ds = synth.toy_shapes(["square", "cross"], (16, 16), 20, seed=0)
    hits = [choose_k(synth.synthesize(ds, 2, 28, 28, 0.05, s).image, InitConfig(k="auto"))
            for s in range(10)]
    assert hits.count(3) >= 9
