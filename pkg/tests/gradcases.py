"""Scalar test functions for finite-difference checks of every primitive and loss term.

Each case is ``(name, make)`` where ``make(rng)`` returns ``(fn, point)``;
``fn`` maps a tape tensor to a scalar tape tensor. Non-scalar outputs are
reduced with a fixed random projection so every output entry is exercised.
"""

import numpy as np

from discretenas.autodiff import primitives as P
from discretenas.regularizers import (Schedules, ScheduleSpec, balanced_groups, edge_group_loss, edge_loss_total,
                                      op_entropy_edge, op_entropy_total, total_loss)
from discretenas.supernet import MixingWeights, NetworkConfig, SuperNetwork, init_arch_params, node_edge_range


def _project(y, seed):
    return P.sum(P.multiply(y, np.random.default_rng(seed).normal(size=y.shape)))


def _const(v, value):
    return v.tape.constant(np.asarray(value, dtype=v.data.dtype))


def unary(build, shape, positive=False):
    def make(rng):
        point = rng.uniform(0.2, 2.0, size=shape) if positive else rng.normal(size=shape)
        seed = int(rng.integers(1 << 30))
        return (lambda x: _project(build(x), seed)), point
    return make


def binary(prim, shape_x, shape_other):
    def make(rng):
        other = rng.normal(size=shape_other)
        seed = int(rng.integers(1 << 30))
        return (lambda x: _project(prim(x, _const(x, other)), seed)), rng.normal(size=shape_x)
    return make


def weighted(prim, x_shape, w_shape, **kw):
    """Differentiate w.r.t. the input or the kernel, chosen per instance."""
    def make(rng):
        x = rng.normal(size=x_shape)
        w = 0.5 * rng.normal(size=w_shape)
        seed = int(rng.integers(1 << 30))
        if rng.random() < 0.5:
            return (lambda v: _project(prim(v, _const(v, w), **kw), seed)), x
        return (lambda v: _project(prim(_const(v, x), v, **kw), seed)), w
    return make


def _ce_case(rng):
    labels = rng.integers(0, 4, size=5)
    return (lambda x: P.cross_entropy(x, labels)), rng.normal(size=(5, 4))


def _take_case(rng):
    idx = rng.permutation(6)[:3]
    seed = int(rng.integers(1 << 30))
    return (lambda x: _project(P.take(x, idx), seed)), rng.normal(size=6)


def _concat_case(rng):
    other = rng.normal(size=(2, 3, 2, 2))
    seed = int(rng.integers(1 << 30))
    return (lambda x: _project(P.concat([x, _const(x, other)], axis=1), seed)), rng.normal(size=(2, 2, 2, 2))


def _bn_frozen_case(rng):
    stats = (rng.normal(size=3), rng.uniform(0.5, 2.0, size=3))
    seed = int(rng.integers(1 << 30))
    return (lambda x: _project(P.batch_norm(x, stats)[0], seed)), rng.normal(size=(2, 3, 3, 3))


PRIMITIVE_CASES = [
    ("identity", unary(P.identity, (3, 4))),
    ("add", binary(P.add, (3, 4), (4,))),
    ("multiply", binary(P.multiply, (3, 4), (3, 1))),
    ("scale", unary(lambda x: P.scale(x, -1.7), (5,))),
    ("matmul", binary(P.matmul, (3, 4), (4, 2))),
    ("relu", unary(P.relu, (4, 5))),
    ("square", unary(P.square, (4, 3))),
    ("absolute", unary(P.absolute, (4, 3))),
    ("log", unary(P.log, (4, 3), positive=True)),
    ("sum", unary(lambda x: P.sum(x, axis=1, keepdims=True), (3, 4))),
    ("mean", unary(lambda x: P.mean(x, axis=0), (3, 4))),
    ("take", _take_case),
    ("concat", _concat_case),
    ("softmax", unary(lambda x: P.softmax(x, axis=-1), (3, 5))),
    ("cross_entropy", _ce_case),
    ("conv2d", weighted(P.conv2d, (2, 2, 5, 5), (3, 2, 3, 3))),
    ("conv2d_stride2", weighted(P.conv2d, (2, 2, 5, 5), (3, 2, 3, 3), stride=2)),
    ("conv2d_dilated", weighted(P.conv2d, (2, 2, 5, 5), (3, 2, 3, 3), dilation=2)),
    ("conv2d_1x1", weighted(P.conv2d, (2, 2, 4, 4), (3, 2, 1, 1))),
    ("depthwise_conv2d", weighted(P.depthwise_conv2d, (2, 2, 6, 6), (2, 3, 3))),
    ("depthwise_conv2d_5x5", weighted(P.depthwise_conv2d, (2, 2, 6, 6), (2, 5, 5))),
    ("depthwise_conv2d_dilated_stride2", weighted(P.depthwise_conv2d, (2, 2, 6, 6), (2, 3, 3), stride=2,
                                                  dilation=2)),
    ("max_pool", unary(lambda x: P.max_pool(x, 3, 1), (2, 2, 4, 4))),
    ("max_pool_stride2", unary(lambda x: P.max_pool(x, 3, 2), (2, 2, 4, 4))),
    ("avg_pool", unary(lambda x: P.avg_pool(x, 3, 1), (2, 2, 4, 4))),
    ("avg_pool_2x2_stride2", unary(lambda x: P.avg_pool(x, 2, 2), (2, 2, 4, 4))),
    ("global_avg_pool", unary(P.global_avg_pool, (2, 3, 3, 3))),
    ("batch_norm", unary(lambda x: P.batch_norm(x)[0], (3, 2, 3, 3))),
    ("batch_norm_frozen", _bn_frozen_case),
]


# loss terms

def _node_softmax(b, num_nodes=6):
    parts = [P.softmax(P.take(b, slice(r.start, r.stop)), axis=0)
             for r in (node_edge_range(j) for j in range(2, num_nodes))]
    return P.concat(parts, axis=0)


def _classification_case(rng):
    """Classification loss of a 1-cell, width-2 network on 4x4 inputs.

    Differentiated w.r.t. one alpha row, all of beta, or one small weight tensor.
    """
    cfg = NetworkConfig(3, 2, 1, 6, 3)
    net = SuperNetwork(cfg, seed=int(rng.integers(100)))
    arch = init_arch_params(cfg.cell_types, 6, seed=int(rng.integers(100)), std=0.5)
    x = rng.normal(size=(3, 3, 4, 4))
    y = rng.integers(0, 3, size=3)
    target = ("alpha", "beta", "theta")[int(rng.integers(3))]
    row = int(rng.integers(14))
    small = [k for k, v in net.params.items() if v.size <= 12]
    param = small[int(rng.integers(len(small)))]
    alpha = arch.alpha["normal"]

    def fn(v):
        leaves = {name: v if (target == "theta" and name == param) else _const(v, value)
                  for name, value in net.params.items()}
        a = _const(v, alpha)
        if target == "alpha":
            a = P.concat([_const(v, alpha[:row]), v, _const(v, alpha[row + 1:])], axis=0)
        b = v if target == "beta" else _const(v, arch.beta["normal"])
        weights = {"normal": MixingWeights(P.softmax(a, axis=1), _node_softmax(b))}
        return P.cross_entropy(net.forward(_const(v, x), leaves, weights), y)

    point = {"alpha": alpha[row:row + 1], "beta": arch.beta["normal"], "theta": net.params[param]}[target]
    return fn, point.copy()


def _clear_of_zero(beta):
    beta[np.abs(beta) < 0.05] += 0.2  # keep away from the positive-set boundary
    return beta


def _op_entropy_edge_case(rng):
    return op_entropy_edge, rng.normal(size=7) * rng.uniform(0.1, 3.0)


def _op_entropy_total_case(rng):
    return op_entropy_total, rng.normal(size=(14, 7))


def _edge_group_case(rng):
    n = int(rng.integers(2, 6))
    k = int(rng.integers(1, n + 1))
    return (lambda x: edge_group_loss(x, k)), _clear_of_zero(rng.uniform(-1.5, 1.5, size=n))


def _edge_total_case(rng):
    groups = balanced_groups(6, 2)
    return (lambda x: edge_loss_total({"normal": x}, groups)), _clear_of_zero(rng.uniform(-1.5, 1.5, size=14))


def _total_objective_case(rng):
    """Scheduled objective over a flat (alpha, beta) vector with a linear classifier stand-in for L_C."""
    groups = balanced_groups(6, 2)
    sched = Schedules(ScheduleSpec("linear"), ScheduleSpec("log"), ScheduleSpec("const"))
    epoch = int(rng.integers(1, 10))
    n = 14 * 7 + 14
    w = 0.1 * rng.normal(size=(n, 3))
    label = rng.integers(0, 3, size=1)
    point = np.concatenate([rng.normal(size=98), _clear_of_zero(rng.uniform(-1.5, 1.5, size=14))])

    def fn(v):
        row = P.sum(P.multiply(_const(v, np.eye(n)), v), axis=0, keepdims=True)  # (n,) -> (1, n)
        l_c = P.cross_entropy(P.matmul(row, _const(v, w)), label)
        l_o = op_entropy_total([P.take(v, slice(7 * e, 7 * e + 7)) for e in range(14)])
        l_e = edge_loss_total({"normal": P.take(v, slice(98, n))}, groups)
        return total_loss(l_c, l_o, l_e, sched, epoch, 10)[0]

    return fn, point


LOSS_CASES = [
    ("classification_loss", _classification_case),
    ("op_entropy_edge", _op_entropy_edge_case),
    ("op_entropy_total", _op_entropy_total_case),
    ("edge_group_loss", _edge_group_case),
    ("edge_loss_total", _edge_total_case),
    ("total_objective", _total_objective_case),
]

ALL_CASES = PRIMITIVE_CASES + LOSS_CASES
