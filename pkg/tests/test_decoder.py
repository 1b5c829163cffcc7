import numpy as np
import pytest

from queryis import decoder
from queryis import numkit as nk
from queryis.decoder import DecoderConfig
from queryis.sampler import fps_indices

from oracles import fps_bruteforce


def _setup(K=3, J=4, C=8, H=2, L=2, seed=0, **kw):
    cfg = DecoderConfig(L=L, H=H, K=K, C=C, **kw)
    rng = np.random.default_rng(seed)
    params = decoder.init_params(cfg, rng)
    for k in params:
        if k.endswith("bias") or k.endswith("beta"):
            params[k] = rng.normal(0, 0.1, params[k].shape)
    return cfg, params, rng.normal(size=(K, C)), rng.normal(size=(J, C))


def test_single_representative_collapses_cross_attention():
    cfg, params, Q0, S = _setup(J=1)
    p = nk.constants(params)
    out, w = decoder.multihead_attention(Q0, S, p, "decoder.layer1.cross", cfg.H)
    np.testing.assert_array_equal(w, np.ones((cfg.H, 3, 1)))
    v = S @ params["decoder.layer1.cross.v.weight"] + params["decoder.layer1.cross.v.bias"]
    expected = v @ params["decoder.layer1.cross.o.weight"] + params["decoder.layer1.cross.o.bias"]
    np.testing.assert_allclose(out.data, np.tile(expected, (3, 1)), rtol=0, atol=1e-14)


def test_duplicate_key_matches_closed_form_mixture():
    cfg, params, Q0, _ = _setup(H=1, C=4, J=2)
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=4), rng.normal(size=4)
    pre = "decoder.layer1.cross"
    W = {n: (params[f"{pre}.{n}.weight"], params[f"{pre}.{n}.bias"]) for n in "qkvo"}
    q = Q0 @ W["q"][0] + W["q"][1]
    ka, kb = a @ W["k"][0] + W["k"][1], b @ W["k"][0] + W["k"][1]
    va, vb = a @ W["v"][0] + W["v"][1], b @ W["v"][0] + W["v"][1]
    for mult in (1, 2):
        S = np.stack([a] * mult + [b])
        out, _ = decoder.multihead_attention(Q0, S, nk.constants(params), pre, 1)
        for k in range(len(Q0)):
            ea = mult * np.exp(q[k] @ ka / 2.0)  # sqrt(C/H) = 2
            eb = np.exp(q[k] @ kb / 2.0)
            mix = (ea * va + eb * vb) / (ea + eb)
            np.testing.assert_allclose(out.data[k], mix @ W["o"][0] + W["o"][1], rtol=1e-12, atol=1e-12)


def test_gradient_wrt_queries_representatives_and_params():
    cfg, params, Q0, S = _setup(K=3, J=4, C=8, H=2, L=2)
    params = {**params, "Q0": Q0, "S": S}
    w = np.random.default_rng(11).normal(size=(3, 8))

    def f(p):
        qs = decoder.decode(p["Q0"], p["S"], cfg, p)
        return nk.total(nk.mul(qs.QL, w))

    rep = nk.grad_check(f, params, tol=1e-4)
    assert rep.passed, rep


def test_attention_rows_sum_to_one():
    cfg, params, Q0, S = _setup(J=7)
    qs = decoder.decode(Q0, S, cfg, nk.constants(params))
    assert len(qs.attention) == cfg.L
    for w in qs.attention:
        assert w.shape == (cfg.H, cfg.K, 7)
        np.testing.assert_allclose(w.sum(axis=2), 1.0, atol=1e-9)


def test_permuting_representatives_leaves_output():
    cfg, params, Q0, S = _setup(J=9)
    p = nk.constants(params)
    base = decoder.decode(Q0, S, cfg, p).QL.data
    perm = np.random.default_rng(2).permutation(9)
    np.testing.assert_allclose(decoder.decode(Q0, S[perm], cfg, p).QL.data, base, rtol=0, atol=1e-9)


def test_permuting_queries_permutes_output():
    cfg, params, Q0, S = _setup(K=5)
    p = nk.constants(params)
    base = decoder.decode(Q0, S, cfg, p).QL.data
    perm = np.array([3, 0, 4, 1, 2])
    np.testing.assert_allclose(decoder.decode(Q0[perm], S, cfg, p).QL.data, base[perm], rtol=0, atol=1e-9)


def test_zero_layers_is_identity():
    cfg, params, Q0, S = _setup(L=0)
    assert decoder.decode(Q0, S, cfg, nk.constants(params)).QL.data.tobytes() == Q0.tobytes()


def test_self_attention_flag_removes_parameters():
    cfg = DecoderConfig(L=1, H=2, K=3, C=8, self_attention=False)
    params = decoder.init_params(cfg, np.random.default_rng(0))
    assert not any(".self." in k for k in params)
    rng = np.random.default_rng(1)
    out = decoder.decode(rng.normal(size=(3, 8)), rng.normal(size=(4, 8)), cfg, nk.constants(params))
    assert out.QL.shape == (3, 8)


def test_checkpoint_names():
    cfg = DecoderConfig(L=2, H=2, K=3, C=8)
    names = decoder.init_params(cfg, np.random.default_rng(0))
    assert "decoder.layer1.cross.q.weight" in names
    assert "decoder.layer2.ffn.0.weight" in names
    assert "decoder.query" in names


def test_heads_must_divide_channels():
    with pytest.raises(ValueError):
        DecoderConfig(C=10, H=4).validate()


# --- initial queries --------------------------------------------------------------------


def test_learned_queries_are_the_parameter_block():
    cfg, params, _, _ = _setup()
    p = nk.constants(params)
    a = decoder.init_queries(cfg, None, None, p)
    b = decoder.init_queries(cfg, None, None, p)
    assert a.data.tobytes() == b.data.tobytes() == params["decoder.query"].tobytes()


def test_nonparam_queries_with_N_equal_K():
    cfg = DecoderConfig(K=5, C=4, H=2, query_mode="nonparam_fps")
    rng = np.random.default_rng(3)
    F = rng.normal(size=(5, 4))
    xyz = rng.uniform(size=(5, 3))
    Q = decoder.init_queries(cfg, F, xyz, {})
    order = fps_indices(xyz, 5)
    np.testing.assert_array_equal(Q.data, F[order])


def test_nonparam_queries_match_fps_oracle():
    cfg = DecoderConfig(K=6, C=4, H=2, query_mode="nonparam_fps")
    rng = np.random.default_rng(4)
    F = rng.normal(size=(40, 4))
    xyz = rng.uniform(size=(40, 3))
    Q = decoder.init_queries(cfg, F, xyz, {})
    np.testing.assert_array_equal(Q.data, F[fps_bruteforce(xyz, 6)])


def test_nonparam_needs_enough_points():
    cfg = DecoderConfig(K=6, C=4, H=2, query_mode="nonparam_fps")
    with pytest.raises(ValueError):
        decoder.init_queries(cfg, np.zeros((5, 4)), np.zeros((5, 3)), {})
