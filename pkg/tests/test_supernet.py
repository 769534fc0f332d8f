import math

import numpy as np
import pytest

from discretenas.autodiff import ContractError, ShapeError, Tape, finite_difference_check
from discretenas.ops import NormContext, OpKind
from discretenas.supernet import (ArchParams, MixingWeights, NetworkConfig, SuperNetwork, cell_edges, cell_forward,
                                  fixed_weights, init_arch_params, mixed_edge_forward, node_edge_range, node_forward)
from gradcases import LOSS_CASES

SKIP = OpKind.SKIP_CONNECT.index


def _skip_arch(cell_types=("normal",)):
    alpha, beta = {}, {}
    for t in cell_types:
        a = np.full((14, 7), -np.inf)
        a[:, SKIP] = 0.0
        alpha[t], beta[t] = a, np.zeros(14)
    return ArchParams(alpha, beta)


def test_edge_layout():
    edges = cell_edges(6)
    assert len(edges) == 14
    assert edges[:5] == [(0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]
    assert [len(node_edge_range(j)) for j in range(2, 6)] == [2, 3, 4, 5]
    assert all(edges[e][1] == j for j in range(2, 6) for e in node_edge_range(j))


def test_init_is_near_uniform_and_seeded():
    arch = init_arch_params()
    for t in arch.cell_types:
        w = arch.op_weights(t)
        assert np.abs(w - 1 / 7).max() <= 0.02
        h = -(w * np.log(w)).sum(axis=1)
        assert np.abs(h - math.log(7)).max() < 0.01
    again = init_arch_params()
    for t in arch.cell_types:
        np.testing.assert_array_equal(arch.alpha[t], again.alpha[t])
        np.testing.assert_array_equal(arch.beta[t], again.beta[t])


def test_beta_offset_shifts_logits_only():
    a, b = init_arch_params(seed=2), init_arch_params(seed=2, beta_offset=1.0)
    np.testing.assert_allclose(b.beta["normal"] - a.beta["normal"], 1.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(b.edge_weights("normal"), a.edge_weights("normal"), atol=1e-15)


def test_softmax_views_sum_to_one():
    rng = np.random.default_rng(0)
    arch = ArchParams({"normal": rng.normal(0, 5, (14, 7))}, {"normal": rng.normal(0, 5, 14)})
    np.testing.assert_allclose(arch.op_weights("normal").sum(axis=1), 1.0, atol=1e-12)
    ew = arch.edge_weights("normal")
    for j in range(2, 6):
        r = node_edge_range(j)
        assert abs(ew[r.start:r.stop].sum() - 1.0) <= 1e-12


def test_arch_shape_validation():
    with pytest.raises(ShapeError):
        ArchParams({"normal": np.zeros((13, 7))}, {"normal": np.zeros(13)})
    with pytest.raises(ContractError):
        ArchParams({"other": np.zeros((14, 7))}, {"other": np.zeros(14)})


def _edge_ops(channels=2, seed=0):
    net = SuperNetwork(NetworkConfig(3, channels, 1, 6, 2), seed=seed)
    return net, net.cells[0].ops[0]


def _edge_out(net, ops, weights, z):
    tape = Tape()
    return mixed_edge_forward(weights, tape.leaf(z), ops, tape.bind(net.params)).data


def test_mixed_edge_one_hot_skip_is_identity():
    net, ops = _edge_ops()
    w = np.zeros(7)
    w[SKIP] = 1.0
    z = np.random.default_rng(1).normal(size=(2, 2, 4, 4))
    np.testing.assert_array_equal(_edge_out(net, ops, w, z), z)


def test_mixed_edge_zero_input():
    net, ops = _edge_ops()
    assert not _edge_out(net, ops, np.full(7, 1 / 7), np.zeros((2, 2, 4, 4))).any()


def test_mixed_edge_weights():
    a = np.array([math.log(2), 0, 0, 0, 0, 0, 0])
    w = np.exp(a) / np.exp(a).sum()
    assert w[0] == pytest.approx(0.25, abs=1e-15)
    net, ops = _edge_ops()
    z = np.random.default_rng(2).normal(size=(2, 2, 4, 4))
    expected = sum(w[o] * _edge_out(net, ops, np.eye(7)[o], z) for o in range(7))
    np.testing.assert_allclose(_edge_out(net, ops, w, z), expected, rtol=1e-12, atol=1e-14)


def test_node_forward_examples():
    tape = Tape()
    f2 = tape.constant(np.random.default_rng(3).normal(size=(1, 2, 3, 3)))
    f1 = tape.constant(2.0 * f2.data)
    np.testing.assert_array_equal(node_forward([1.0], [f2]).data, f2.data)
    np.testing.assert_allclose(node_forward([0.3, 0.7], [f2, f2]).data, f2.data, rtol=1e-15)
    np.testing.assert_allclose(node_forward([0.5, 0.5], [f1, f2]).data, 1.5 * f2.data, rtol=1e-15)
    with pytest.raises(ShapeError):
        node_forward([0.5], [f1, f2])


def test_cell_output_channels():
    net = SuperNetwork(NetworkConfig(3, 8, 1, 6, 4), seed=0)
    assert net.cells[0].out_channels == 32


def test_all_skip_cell_matches_reference_dag():
    net = SuperNetwork(NetworkConfig(3, 3, 1, 6, 2), seed=4)
    cell = net.cells[0]
    rng = np.random.default_rng(5)
    x0, x1 = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 4, 4))
    tape = Tape()
    leaves = tape.bind(net.params)
    out = cell_forward(cell, tape.leaf(x0), tape.leaf(x1), fixed_weights(_skip_arch())["normal"], leaves).data
    states = [cell.preprocess0(tape.leaf(x0), leaves).data, cell.preprocess1(tape.leaf(x1), leaves).data]
    for j in range(2, 6):
        states.append(sum(states[:j]) / j)
    np.testing.assert_allclose(out, np.concatenate(states[2:], axis=1), rtol=1e-12)


def test_zero_inputs_give_zero_cell_output():
    net = SuperNetwork(NetworkConfig(3, 2, 1, 6, 2), seed=0)
    tape = Tape()
    z = tape.leaf(np.zeros((2, 2, 4, 4)))
    out = cell_forward(net.cells[0], z, z, fixed_weights(init_arch_params(("normal",)))["normal"],
                       tape.bind(net.params))
    assert not out.data.any()


def test_toy_network_logit_shape_and_determinism():
    cfg = NetworkConfig(3, 4, 2, 6, 4)
    assert cfg.reduction_cells == ()
    x = np.random.default_rng(0).normal(size=(3, 3, 8, 8))
    w = fixed_weights(init_arch_params(cfg.cell_types))
    a = SuperNetwork(cfg, seed=1).logits(x, w)
    b = SuperNetwork(cfg, seed=1).logits(x, w)
    assert a.shape == (3, 4)
    np.testing.assert_array_equal(a, b)


def test_batch_independence_with_frozen_stats():
    cfg = NetworkConfig(3, 2, 3, 6, 3)
    net = SuperNetwork(cfg, seed=0)
    w = fixed_weights(init_arch_params(cfg.cell_types, std=0.5))
    x = np.random.default_rng(1).normal(size=(4, 3, 8, 8))
    ctx = NormContext("collect")
    net.logits(x, w, ctx)
    frozen = ctx.frozen()
    full = net.logits(x, w, frozen)
    singles = np.concatenate([net.logits(x[n:n + 1], w, frozen) for n in range(4)])
    np.testing.assert_allclose(singles, full, rtol=1e-10)


def test_reduction_layout_and_shared_params():
    cfg = NetworkConfig(3, 2, 6, 6, 3)
    assert cfg.reduction_cells == (2, 4)
    net = SuperNetwork(cfg, seed=0)
    assert [c.reduction for c in net.cells] == [False, False, True, False, True, False]
    assert [c.channels for c in net.cells] == [2, 2, 4, 4, 8, 8]
    arch = init_arch_params(cfg.cell_types, std=0.5)
    x = np.random.default_rng(2).normal(size=(2, 3, 8, 8))
    base = net.logits(x, fixed_weights(arch))
    arch.alpha["reduction"][0] += np.arange(7.0)
    assert not np.allclose(net.logits(x, fixed_weights(arch)), base)
    with pytest.raises(ContractError):
        net.logits(np.zeros((1, 3, 6, 6)), fixed_weights(arch))


def test_strided_edges_only_from_inputs():
    net = SuperNetwork(NetworkConfig(3, 2, 3, 6, 3), seed=0)
    red = net.cells[1]
    edges = cell_edges(6)
    for e, ops in red.ops.items():
        assert all(op.stride == (2 if edges[e][0] < 2 else 1) for op in ops)


def test_alpha_shift_leaves_forward_unchanged():
    cfg = NetworkConfig(3, 2, 1, 6, 3)
    net = SuperNetwork(cfg, seed=0)
    arch = init_arch_params(("normal",), std=0.7)
    x = np.random.default_rng(3).normal(size=(3, 3, 4, 4))
    base = net.logits(x, fixed_weights(arch))
    arch.alpha["normal"][5] += 11.0
    np.testing.assert_allclose(net.logits(x, fixed_weights(arch)), base, rtol=1e-10, atol=1e-12)


def test_dropped_edges_are_skipped():
    arch = _skip_arch()
    w = MixingWeights(arch.op_weights("normal"), np.zeros(14))
    assert w.edge(3) == 0.0


def test_network_gradient_small_config():
    make = dict(LOSS_CASES)["classification_loss"]
    rng = np.random.default_rng(11)
    for _ in range(3):
        fn, point = make(rng)
        assert finite_difference_check(fn, point) < 1e-4
