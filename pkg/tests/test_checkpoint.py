import zipfile

import numpy as np
import pytest

from discretenas.autodiff import default_dtype, set_default_dtype
from discretenas.checkpoint import CheckpointError, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from discretenas.config import toy_config
from discretenas.data import synth_generate
from discretenas.discretize import derive_genotype, instantiate_subnetwork, subnetwork_weights
from discretenas.optim import OptimState
from discretenas.regularizers import balanced_groups
from discretenas.search import make_optim
from discretenas.supernet import SuperNetwork, fixed_weights, init_arch_params


def _setup(**overrides):
    cfg = toy_config(network__channels=2, task__height=8, task__width=8, **overrides)
    net = SuperNetwork(cfg.network_config(), seed=cfg.seed)
    arch = init_arch_params(cfg.network_config().cell_types, std=0.3, seed=1)
    return cfg, net, arch


def _fill_optim(cfg, net, arch) -> OptimState:
    optim = make_optim(cfg)
    rng = np.random.default_rng(0)
    theta = {k: v for k, v in net.params.items()}
    optim.sgd.step(theta, {k: rng.normal(size=v.shape) for k, v in theta.items()})
    a = {"alpha.normal": arch.alpha["normal"]}
    optim.adam_alpha.step(a, {k: rng.normal(size=v.shape) for k, v in a.items()})
    optim.epoch = 3
    return optim


def test_bitwise_round_trip(tmp_path):
    cfg, net, arch = _setup(seed=5)
    optim = _fill_optim(cfg, net, arch)
    mean, std = np.array([0.1, 0.2, 0.3]), np.array([1.1, 0.9, 1.3])
    path = tmp_path / "ck.npz"
    save_checkpoint(path, net, arch, cfg, mean, std, epoch=3, optim=optim)
    ck = load_checkpoint(path)
    assert ck.config == cfg and ck.seed == 5 and ck.epoch == 3
    for name, value in net.params.items():
        assert ck.net.params[name].tobytes() == value.tobytes()
    for t in arch.cell_types:
        assert ck.arch.alpha[t].tobytes() == arch.alpha[t].tobytes()
        assert ck.arch.beta[t].tobytes() == arch.beta[t].tobytes()
    assert ck.mean.tobytes() == mean.tobytes() and ck.std.tobytes() == std.tobytes()
    for name, v in optim.sgd.velocity.items():
        assert ck.optim.sgd.velocity[name].tobytes() == v.tobytes()
    assert ck.optim.adam_alpha.t == optim.adam_alpha.t
    np.testing.assert_array_equal(ck.optim.adam_alpha.m["alpha.normal"], optim.adam_alpha.m["alpha.normal"])
    assert ck.optim.epoch == 3
    x = np.random.default_rng(1).normal(size=(2, 3, 8, 8))
    np.testing.assert_array_equal(ck.net.logits(x, fixed_weights(ck.arch)), net.logits(x, fixed_weights(arch)))


def test_saving_twice_gives_identical_bytes(tmp_path):
    cfg, net, arch = _setup()
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    for p in (a, b):
        save_checkpoint(p, net, arch, cfg, np.zeros(3), np.ones(3), epoch=0)
    with zipfile.ZipFile(a) as za, zipfile.ZipFile(b) as zb:
        assert za.namelist() == zb.namelist()
        for name in za.namelist():
            assert za.read(name) == zb.read(name)


def test_arrays_are_little_endian(tmp_path):
    cfg, net, arch = _setup()
    path = tmp_path / "ck.npz"
    save_checkpoint(path, net, arch, cfg, np.zeros(3), np.ones(3), epoch=0)
    with np.load(path) as z:
        for name in z.files:
            assert z[name].dtype.byteorder in ("<", "|", "=")
            if z[name].dtype.byteorder == "=":
                assert np.little_endian


def test_float32_round_trip(tmp_path):
    cfg, net, arch = _setup(search__precision="float32")
    previous = default_dtype()
    set_default_dtype("float32")
    try:
        net = SuperNetwork(cfg.network_config(), seed=0)
    finally:
        set_default_dtype(previous)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, net, arch, cfg, np.zeros(3), np.ones(3), epoch=0)
    ck = load_checkpoint(path)
    for name, value in net.params.items():
        assert ck.net.params[name].dtype == np.float32
        assert ck.net.params[name].tobytes() == value.tobytes()


def test_subnetwork_checkpoint(tmp_path):
    cfg, _, arch = _setup()
    g = derive_genotype(arch, balanced_groups())
    sub = instantiate_subnetwork(g, cfg.network_config(), seed=2)
    path = tmp_path / "sub.npz"
    save_checkpoint(path, sub, arch, cfg, np.zeros(3), np.ones(3), epoch=0, genotype=g)
    ck = load_checkpoint(path)
    assert ck.genotype == g
    x = np.random.default_rng(0).normal(size=(2, 3, 8, 8))
    np.testing.assert_array_equal(ck.net.logits(x, subnetwork_weights(ck.net)), sub.logits(x, subnetwork_weights(sub)))


def test_errors(tmp_path):
    with pytest.raises(CheckpointError, match="no such file"):
        load_checkpoint(tmp_path / "missing.npz")
    junk = tmp_path / "junk.npz"
    junk.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError, match="not a readable archive"):
        load_checkpoint(junk)
    ds_path = tmp_path / "ds.npz"
    save_dataset(ds_path, synth_generate(2, 4, 4, 4))
    with pytest.raises(CheckpointError, match="expected format"):
        load_checkpoint(ds_path)
    cfg, net, arch = _setup()
    good = tmp_path / "good.npz"
    save_checkpoint(good, net, arch, cfg, np.zeros(3), np.ones(3), epoch=0)
    with np.load(good) as z:
        arrays = {k: z[k] for k in z.files}
    name = next(k for k in arrays if k.startswith("theta/"))
    arrays[name] = np.zeros(arrays[name].shape + (1,))
    bad = tmp_path / "bad.npz"
    np.savez(bad, **arrays)
    with pytest.raises(CheckpointError, match="has shape"):
        load_checkpoint(bad)
    del arrays[name]
    np.savez(bad, **arrays)
    with pytest.raises(CheckpointError, match="do not match"):
        load_checkpoint(bad)


def test_dataset_archive_round_trip(tmp_path):
    ds = synth_generate(4, 12, 8, 8, seed=3)
    path = tmp_path / "ds.npz"
    save_dataset(path, ds, {"seed": 3})
    back = load_dataset(path)
    assert back.images.tobytes() == ds.images.tobytes()
    assert back.labels.tolist() == ds.labels.tolist()
    assert back.num_classes == 4
