import os

import numpy as np
import pytest

from helpers import random_mlp
from rewc.errors import AlignmentError, CapacityError, DimensionError
from rewc.fim import (
    estimate_diag_fim,
    estimate_full_fim_layer,
    ewc_penalty,
    load_fim,
    make_anchor,
    save_fim,
)
from rewc.layers import Dense
from rewc.linalg import jacobi_eigh
from rewc.network import Network, build_network, forward, grow_head
from rewc.util import rng_for


def bernoulli_net():
    # logits (z, 0) with z = W[0,0] * x; at W = 0 the softmax is (1/2, 1/2)
    return Network([Dense(np.zeros((2, 1)), None)], 2, 0, (1,))


def test_expected_mode_matches_bernoulli_fisher():
    net = bernoulli_net()
    fim = estimate_diag_fim(net, np.array([[1.0]]), sample_budget=1, mode="expected")
    # closed form: p(1-p) at p = 1/2
    assert fim.values["0.W"][0, 0] == pytest.approx(0.25, abs=1e-12)
    assert fim.values["0.W"][1, 0] == pytest.approx(0.25, abs=1e-12)


def test_entries_nonnegative_everywhere():
    rng = np.random.default_rng(0)
    net = random_mlp(rng)
    x = rng.normal(size=(30, net.input_shape[0]))
    for mode in ("sampled", "expected"):
        fim = estimate_diag_fim(net, x, sample_budget=20, mode=mode, rng=np.random.default_rng(1))
        for v in fim.values.values():
            assert np.all(v >= 0.0)


def test_sampled_converges_to_expected():
    rng = np.random.default_rng(2)
    net = build_network("mlp-custom", input_shape=(2,), hidden=[3], seed=5)
    x0 = np.array([[0.7, -0.3]])
    expected = estimate_diag_fim(net, x0, sample_budget=1, mode="expected")
    tiled = np.repeat(x0, 10_000, axis=0)
    sampled = estimate_diag_fim(net, tiled, sample_budget=10_000, mode="sampled",
                                rng=np.random.default_rng(3))
    floor = 0.01 * max(v.max() for v in expected.values.values())
    for key, ev in expected.values.items():
        sv = sampled.values[key]
        mask = ev > floor
        if np.any(mask):
            rel = np.abs(sv[mask] - ev[mask]) / ev[mask]
            assert np.max(rel) < 0.05, key


def test_budget_exceeds_dataset():
    net = bernoulli_net()
    with pytest.raises(DimensionError):
        estimate_diag_fim(net, np.ones((3, 1)), sample_budget=4)
    with pytest.raises(DimensionError):
        estimate_diag_fim(net, np.ones((0, 1)), sample_budget=1)


def test_full_block_diag_consistency():
    rng = np.random.default_rng(4)
    net = random_mlp(rng)
    x = rng.normal(size=(25, net.input_shape[0]))
    layer_idx = net.trainable_keys()[0][1]
    diag = estimate_diag_fim(net, x, sample_budget=15, rng=rng_for(9, "t"))
    block = estimate_full_fim_layer(net, x, layer_idx, sample_budget=15, rng=rng_for(9, "t"))
    assert np.max(np.abs(np.diag(block.matrix) - diag.values[f"{layer_idx}.W"].ravel())) < 1e-12


def test_single_sample_block_rank():
    net = build_network("mlp-custom", input_shape=(3,), hidden=[4, 3], seed=1)
    x = np.random.default_rng(5).normal(size=(1, 3))
    block = estimate_full_fim_layer(net, x, 2, sample_budget=1, mode="expected")
    assert np.linalg.matrix_rank(block.matrix, tol=1e-12) <= 3
    sampled = estimate_full_fim_layer(net, x, 2, sample_budget=1, mode="sampled",
                                      rng=np.random.default_rng(0))
    assert np.linalg.matrix_rank(sampled.matrix, tol=1e-12) <= 1


def test_block_is_psd_under_eigensolver():
    rng = np.random.default_rng(6)
    net = random_mlp(rng)
    x = rng.normal(size=(20, net.input_shape[0]))
    layer_idx = net.trainable_keys()[0][1]
    block = estimate_full_fim_layer(net, x, layer_idx, sample_budget=10, rng=rng)
    e = jacobi_eigh(block.matrix)
    assert np.all(e.S >= -1e-8)


def test_capacity_guard():
    net = build_network("mlp-custom", input_shape=(100,), hidden=[50, 3], seed=0)
    with pytest.raises(CapacityError):
        estimate_full_fim_layer(net, np.zeros((5, 100)), 0, sample_budget=2)


def test_penalty_zero_at_anchor():
    rng = np.random.default_rng(7)
    net = random_mlp(rng)
    x = rng.normal(size=(12, net.input_shape[0]))
    fim = estimate_diag_fim(net, x, sample_budget=8, rng=rng)
    anchor = make_anchor(net, fim, 100.0)
    pen, grads = ewc_penalty(net, anchor)
    assert pen == 0.0
    for g in grads.values():
        assert np.all(g == 0.0)


def test_penalty_direct_substitution():
    net = Network([Dense(np.array([[0.0]]), None)], 1, 0, (1,))
    from rewc.fim import FimDiagonal
    from rewc.network import layout_signature

    fim = FimDiagonal(values={"0.W": np.array([[0.01]])}, layout_hash=layout_signature(net))
    anchor = make_anchor(net, fim, 100.0)
    net.set_param("0.W", np.array([[0.5]]))
    pen, grads = ewc_penalty(net, anchor)
    assert pen == pytest.approx(0.125, abs=1e-15)
    assert grads["0.W"][0, 0] == pytest.approx(0.5, abs=1e-15)


def test_penalty_gradient_finite_differences():
    rng = np.random.default_rng(8)
    net = random_mlp(rng)
    x = rng.normal(size=(10, net.input_shape[0]))
    fim = estimate_diag_fim(net, x, sample_budget=10, rng=rng)
    anchor = make_anchor(net, fim, 37.0)
    for key, _, _ in net.trainable_keys():
        p = net.get_param(key)
        p += rng.normal(0, 0.1, p.shape)
    _, grads = ewc_penalty(net, anchor)
    h = 1e-5
    for key, _, _ in net.trainable_keys():
        p = net.get_param(key)
        flat = p.ravel()
        idx = int(rng.integers(flat.size))
        orig = flat[idx]
        flat[idx] = orig + h
        up, _ = ewc_penalty(net, anchor)
        flat[idx] = orig - h
        dn, _ = ewc_penalty(net, anchor)
        flat[idx] = orig
        fd = (up - dn) / (2 * h)
        g = grads[key].ravel()[idx]
        denom = max(abs(fd), abs(g), 1e-12)
        assert abs(g - fd) / denom < 1e-8, key


def test_lambda_fim_rescaling_invariance():
    rng = np.random.default_rng(9)
    net = random_mlp(rng)
    x = rng.normal(size=(10, net.input_shape[0]))
    fim = estimate_diag_fim(net, x, sample_budget=10, rng=rng)
    a1 = make_anchor(net, fim, 50.0)
    from rewc.fim import FimDiagonal

    scaled = FimDiagonal(values={k: v / 4.0 for k, v in fim.values.items()},
                         layout_hash=fim.layout_hash)
    a2 = make_anchor(net, scaled, 200.0)
    for key, _, _ in net.trainable_keys():
        p = net.get_param(key)
        p += rng.normal(0, 0.2, p.shape)
    p1, _ = ewc_penalty(net, a1)
    p2, _ = ewc_penalty(net, a2)
    assert p1 == pytest.approx(p2, rel=1e-12)


def test_lambda_zero_means_no_penalty():
    rng = np.random.default_rng(10)
    net = random_mlp(rng)
    x = rng.normal(size=(10, net.input_shape[0]))
    fim = estimate_diag_fim(net, x, sample_budget=10, rng=rng)
    anchor = make_anchor(net, fim, 0.0)
    net.get_param(net.trainable_keys()[0][0])[:] += 1.0
    pen, grads = ewc_penalty(net, anchor)
    assert pen == 0.0 and grads == {}


def test_alignment_error_on_foreign_network():
    rng = np.random.default_rng(11)
    net = random_mlp(rng)
    other = build_network("mlp-custom", input_shape=(4,), hidden=[3, 2], seed=0)
    x = rng.normal(size=(10, net.input_shape[0]))
    fim = estimate_diag_fim(net, x, sample_budget=10, rng=rng)
    anchor = make_anchor(net, fim, 10.0)
    with pytest.raises(AlignmentError):
        ewc_penalty(other, anchor)


def test_grown_head_rows_carry_no_penalty():
    net = build_network("mlp-custom", input_shape=(6,), hidden=[8, 4], seed=2)
    x = np.random.default_rng(12).normal(size=(15, 6))
    fim = estimate_diag_fim(net, x, sample_budget=10, rng=np.random.default_rng(1))
    anchor = make_anchor(net, fim, 25.0)
    grow_head(net, 3)
    head_key = f"{net.head_index}.W"
    net.get_param(head_key)[:] += 0.3  # move everything, incl. new rows
    pen, grads = ewc_penalty(net, anchor)
    assert pen > 0.0
    assert grads[head_key].shape == net.get_param(head_key).shape
    assert np.all(grads[head_key][4:] == 0.0)
    assert np.all(grads[f"{net.head_index}.b"][4:] == 0.0)


def test_fim_snapshot_roundtrip(tmp_path):
    rng = np.random.default_rng(13)
    net = random_mlp(rng)
    x = rng.normal(size=(10, net.input_shape[0]))
    fim = estimate_diag_fim(net, x, sample_budget=10, rng=rng)
    path = os.path.join(tmp_path, "snap.rfim")
    save_fim(fim, path)
    back = load_fim(path)
    assert back.layout_hash == fim.layout_hash
    assert set(back.values) == set(fim.values)
    for k in fim.values:
        assert np.array_equal(back.values[k], fim.values[k])
