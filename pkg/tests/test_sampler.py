import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from queryis import numkit as nk
from queryis import sampler
from queryis.sampler import SamplerConfig

from oracles import fps_bruteforce


def test_one_hot_map_selects_voxel():
    O = np.random.default_rng(0).normal(size=(5, 3))
    Z = np.zeros((2, 5))
    Z[0, 3] = 1.0
    Z[1, 0] = 1.0
    rep = sampler.rpg(O, Z=Z)
    np.testing.assert_array_equal(rep.S.data[0], O[3])
    np.testing.assert_array_equal(rep.S.data[1], O[0])


def test_zero_map_gives_zero_vector():
    O = np.random.default_rng(0).normal(size=(5, 3))
    rep = sampler.rpg(O, Z=np.zeros((1, 5)))
    np.testing.assert_array_equal(rep.S.data, np.zeros((1, 3)))


def test_rpg_shapes_and_range():
    rng = np.random.default_rng(1)
    p = nk.constants(sampler.init_params(SamplerConfig(J=7), 4, rng))
    rep = sampler.rpg(rng.normal(size=(11, 4)), p)
    assert rep.S.shape == (7, 4)
    assert rep.Z.shape == (7, 11)
    assert np.all((rep.Z.data > 0) & (rep.Z.data < 1))


def test_rpg_normalized_variant_is_convex_mixture():
    rng = np.random.default_rng(2)
    p = nk.constants(sampler.init_params(SamplerConfig(J=3), 4, rng))
    O = rng.normal(size=(6, 4))
    rep = sampler.rpg(O, p, normalize=True)
    w = rep.Z.data / rep.Z.data.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(rep.S.data, w @ O)


def test_rpg_gradient_wrt_activation_network():
    rng = np.random.default_rng(3)
    params = sampler.init_params(SamplerConfig(J=5), 4, rng)
    params = {k: v for k, v in params.items() if k.startswith("sampler.E")}
    O = rng.normal(size=(9, 4))
    rep = nk.grad_check(lambda p: nk.total(sampler.rpg(O, p).S), params, tol=1e-4)
    assert rep.passed, rep


def test_rpg_gradient_reaches_every_voxel():
    rng = np.random.default_rng(4)
    p = nk.constants(sampler.init_params(SamplerConfig(J=5), 4, rng))
    tape = nk.Tape()
    O = tape.watch(rng.normal(size=(9, 4)))
    rep = sampler.rpg(O, p)
    tape.backward(nk.total(rep.S))
    g = tape.grad(O)
    assert np.all(np.abs(g).sum(axis=1) > 0)


# --- fps ------------------------------------------------------------------------


def test_fps_collinear():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [10.0, 0, 0]])
    assert sampler.fps_indices(pts, 2).tolist() == [0, 2]


def test_fps_all_points_in_selection_order():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(6, 3))
    O = rng.normal(size=(6, 2))
    rep = sampler.fps(pts, O, 6)
    assert sorted(rep.indices.tolist()) == list(range(6))
    np.testing.assert_array_equal(rep.S.data, O[rep.indices])


def test_fps_matches_bruteforce():
    pts = np.random.default_rng(6).uniform(size=(50, 3))
    assert sampler.fps_indices(pts, 8).tolist() == fps_bruteforce(pts, 8)


def test_fps_too_many():
    with pytest.raises(ValueError):
        sampler.fps_indices(np.zeros((3, 3)), 4)


def test_fps_duplicates_never_repeat():
    pts = np.zeros((4, 3))
    assert sampler.fps_indices(pts, 4).tolist() == [0, 1, 2, 3]


@given(st.integers(0, 10_000), st.integers(2, 10))
@settings(max_examples=40, deadline=None)
def test_fps_greedy_optimal_each_step(seed, J):
    pts = np.random.default_rng(seed).uniform(size=(20, 3))
    idx = sampler.fps_indices(pts, J).tolist()
    for step in range(1, J):
        prev = idx[:step]

        def gap(i):
            return min(np.linalg.norm(pts[i] - pts[j]) for j in prev)

        chosen = gap(idx[step])
        # no single swap of this step's pick with another unselected point does better
        assert all(gap(i) <= chosen + 1e-12 for i in range(20) if i not in prev)


# --- random ---------------------------------------------------------------------


def test_random_repeatable():
    O = np.arange(30.0).reshape(10, 3)
    a = sampler.random_sample(O, 4, 9)
    b = sampler.random_sample(O, 4, 9)
    assert a.indices.tolist() == b.indices.tolist()
    assert len(set(a.indices.tolist())) == 4


def test_random_full_is_permutation():
    O = np.arange(30.0).reshape(10, 3)
    rep = sampler.random_sample(O, 10, 1)
    assert sorted(rep.indices.tolist()) == list(range(10))
    np.testing.assert_array_equal(np.sort(rep.S.data, axis=0), O)


def test_random_too_many():
    with pytest.raises(ValueError):
        sampler.random_sample(np.zeros((3, 2)), 4, 0)


def test_random_inclusion_frequency():
    m, J, trials = 20, 5, 100_000
    counts = np.zeros(m)
    for seed in range(trials):
        counts[sampler.random_indices(m, J, seed)] += 1
    p = J / m
    sigma = np.sqrt(p * (1 - p) / trials)
    assert np.all(np.abs(counts / trials - p) < 3 * sigma)


# --- common contract ------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["rpg", "random", "fps"])
def test_variants_emit_J_rows(variant):
    rng = np.random.default_rng(7)
    cfg = SamplerConfig(J=6, variant=variant)
    p = nk.constants(sampler.init_params(cfg, 4, rng))
    O = rng.normal(size=(15, 4))
    rep = sampler.sample(O, rng.uniform(size=(15, 3)), cfg, p, seed=3)
    assert rep.S.shape == (6, 4)
    assert rep.source == variant


def test_variant_none_uses_all_voxels():
    rng = np.random.default_rng(8)
    O = rng.normal(size=(15, 4))
    rep = sampler.sample(O, rng.uniform(size=(15, 3)), SamplerConfig(variant="none"), {})
    np.testing.assert_array_equal(rep.S.data, O)


def test_bad_variant():
    with pytest.raises(ValueError):
        SamplerConfig(variant="kmeans").validate()


def test_positional_projection_flag():
    rng = np.random.default_rng(9)
    on = SamplerConfig(positional=True)
    off = SamplerConfig(positional=False)
    p = nk.constants(sampler.init_params(on, 4, rng))
    O = rng.normal(size=(5, 4))
    c = rng.uniform(size=(5, 3))
    a = sampler.voxel_embeddings(O, c, on, p).data
    b = sampler.voxel_embeddings(O, c, off, p).data
    np.testing.assert_allclose(a - b, c @ p["sampler.pos.weight"].data + p["sampler.pos.bias"].data)
    assert "sampler.pos.weight" not in sampler.init_params(off, 4, rng)
