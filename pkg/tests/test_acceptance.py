"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from cifar_bytes import RECORD, two_record_fixture
from conftest import IMBALANCED, SEEDS, paired_config, probe, record_criterion
from discretenas.autodiff import finite_difference_check
from discretenas.config import toy_config
from discretenas.data import FormatError, load_cifar10_binary
from discretenas.discretize import derive_genotype
from discretenas.optim import SGD, Adam, cosine_lr
from discretenas.regularizers import SCHEDULE_KINDS, ScheduleSpec, edge_indices, group_preset, schedule_value
from discretenas.runner import execute_search
from discretenas.search import edge_max_alpha, group_topk_mass, train_subnetwork
from gradcases import ALL_CASES
from test_optim import GRADS, adam_oracle, sgd_oracle


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    worst, worst_name = 0.0, ""
    for name, make in ALL_CASES:
        rng = np.random.default_rng(sum(map(ord, name)))
        for _ in range(20):
            fn, point = make(rng)
            err = finite_difference_check(fn, point)
            if not err <= worst:
                worst, worst_name = err, name
    seconds = time.perf_counter() - start
    ok = worst < 1e-4 and seconds < 120
    assert record_criterion(1, ok, f"{len(ALL_CASES)} cases x 20, worst rel err {worst:.2e} ({worst_name}), "
                                   f"{seconds:.0f}s")


def test_criterion_2_entropy_drive(runs):
    res = runs.entropy()
    seconds = runs.seconds[("entropy", 0)]
    peaks = np.concatenate([np.asarray(v) for v in edge_max_alpha(res.arch).values()])
    share = float(np.mean(peaks >= 0.9))
    ok = share >= 0.9 and seconds < 15 * 60
    assert record_criterion(2, ok, f"{share:.0%} of edges with max softmax(alpha) >= 0.9, {seconds:.0f}s")


def test_criterion_3_cardinality_drive(runs):
    res = runs.entropy()
    masses = [m for v in group_topk_mass(res.arch, res.groups).values() for m in v]
    counts = []
    for t in res.arch.cell_types:
        for group in res.groups:
            beta = res.arch.beta[t][edge_indices(group)]
            counts.append((int(np.sum(np.abs(beta - 1.0) <= 0.1)), group.k))
    ok = min(masses) >= 0.9 and all(n == k for n, k in counts)
    assert record_criterion(3, ok, f"min top-2 mass {min(masses):.3f}, beta near 1 per group "
                                   f"{[n for n, _ in counts]} (K=2)")


def test_criterion_4_gap_reduction(runs):
    rows = []
    for seed in SEEDS:
        base = probe(runs.paired(seed, "imbalanced-4", False), "imbalanced-4").drop
        ours = probe(runs.paired(seed, "imbalanced-4", True), "imbalanced-4").drop
        rows.append((seed, base, ours, base - ours >= 15 and ours <= 5))
    held = sum(r[3] for r in rows)
    detail = ", ".join(f"seed {s}: baseline drop {b:.1f} vs {o:.1f}" for s, b, o, _ in rows)
    assert record_criterion(4, held >= 2, f"held in {held}/3 ({detail})")


def test_criterion_5_imbalanced_configurations(runs):
    counts, means = {}, {}
    for preset in IMBALANCED:
        k = sum(g.k for g in group_preset(preset))
        ours, base = [], []
        for seed in SEEDS:
            res = runs.paired(seed, preset, True)
            counts[(preset, seed)] = (res.genotype.num_kept("normal"), k)
            cfg = paired_config(seed, preset, True)
            ours.append(train_subnetwork(res.genotype, cfg, res.data).accuracy)
            baseline = runs.paired(seed, preset, False)
            base.append(train_subnetwork(derive_genotype(baseline.arch, group_preset(preset)), cfg,
                                         baseline.data).accuracy)
        means[preset] = (float(np.mean(ours)), float(np.mean(base)))
        print(f"{preset}: retrained ours {ours} vs baseline genotype {base}")
    exact = all(n == k for n, k in counts.values())
    ok = exact and all(o >= b for o, b in means.values())
    detail = ", ".join(f"{p}: {o:.1f} vs {b:.1f}" for p, (o, b) in means.items())
    assert record_criterion(5, ok, f"kept counts exact: {exact}; retrain mean ours vs baseline: {detail}")


def _schedule_oracle(kind, epoch, total, activation, k, t0):
    if epoch < activation:
        return 0.0
    span = total - 1 - activation
    t = 1.0 if span <= 0 else (epoch - activation) / span
    return {"const": 1.0, "linear": t, "exp": (math.exp(k * t) - 1) / (math.exp(k) - 1),
            "log": math.log(1 + k * t) / math.log(1 + k), "step": float(t >= t0)}[kind]


def test_criterion_6_schedule_semantics():
    total, failures, checked = 50, [], 0
    for kind in SCHEDULE_KINDS:
        for activation in range(total):
            for k, t0 in ((5.0, 0.5), (1.0, 0.0), (12.0, 1.0)):
                spec = ScheduleSpec(kind, activation, k, t0)
                values = [schedule_value(spec, e, total) for e in range(total)]
                expected = [_schedule_oracle(kind, e, total, activation, k, t0) for e in range(total)]
                checked += total
                if not (np.allclose(values, expected, rtol=0, atol=1e-12)
                        and all(0.0 <= v <= 1.0 for v in values)
                        and all(b >= a for a, b in zip(values, values[1:]))
                        and all(v == 0.0 for v in values[:activation])
                        and abs(values[-1] - 1.0) <= 1e-12):
                    failures.append((kind, activation, k, t0))
    assert record_criterion(6, not failures, f"{checked} grid values, {len(failures)} failing specs")


def test_criterion_7_optimizer_oracles():
    sgd, adam = SGD(lr=0.1, momentum=0.9, weight_decay=3e-4), Adam(3e-4, (0.5, 0.999), 1e-3, 1e-8)
    theta, alpha = {"w": np.array(1.5)}, {"a": np.array(-0.2)}
    got_sgd, got_adam = [], []
    for g in GRADS:
        theta = sgd.step(theta, {"w": np.array(g)})
        alpha = adam.step(alpha, {"a": np.array(g)})
        got_sgd.append(float(theta["w"]))
        got_adam.append(float(alpha["a"]))
    err_sgd = float(np.max(np.abs(np.subtract(got_sgd, sgd_oracle(1.5, GRADS, 0.1, 0.9, 3e-4)))))
    err_adam = float(np.max(np.abs(np.subtract(got_adam, adam_oracle(-0.2, GRADS, 3e-4, 0.5, 0.999, 1e-3, 1e-8)))))
    lr0 = cosine_lr(0, 50)
    ok = err_sgd <= 1e-12 and err_adam <= 1e-12 and lr0 == 0.25
    assert record_criterion(7, ok, f"sgd err {err_sgd:.1e}, adam err {err_adam:.1e}, lr(0) = {lr0}")


def test_criterion_8_determinism(tmp_path):
    cfg = toy_config(task__height=8, task__width=8, search__epochs=3)
    dirs = [tmp_path / "a", tmp_path / "b"]
    for out in dirs:
        execute_search(cfg, out)
    same_genotype = (dirs[0] / "genotype.json").read_bytes() == (dirs[1] / "genotype.json").read_bytes()
    finals = [(d / "metrics.jsonl").read_bytes().splitlines()[-1] for d in dirs]
    summaries = [(d / "summary.json").read_bytes() for d in dirs]
    ok = same_genotype and finals[0] == finals[1] and summaries[0] == summaries[1]
    assert record_criterion(8, ok, f"genotype identical: {same_genotype}, final record identical: "
                                   f"{finals[0] == finals[1]}")


def test_criterion_9_cifar_ingestion(tmp_path):
    raw, expected = two_record_fixture()
    path = tmp_path / "batch.bin"
    path.write_bytes(raw)
    ds = load_cifar10_binary(path)
    pixels = np.rint(ds.images * 255).astype(int)
    round_trip = ds.labels.tolist() == [e[0] for e in expected] and all(
        tuple(pixels[n, :, 0, 0]) == first and tuple(pixels[n, :, 31, 31]) == last
        and tuple(pixels[n, :, 5, 7]) == mid for n, (_, first, last, mid) in enumerate(expected))
    messages = []
    for cut in (1, 10, RECORD - 1):
        path.write_bytes(raw[:-cut])
        with pytest.raises(FormatError) as info:
            load_cifar10_binary(path)
        messages.append(str(info.value))
    positioned = all(f"byte offset {RECORD}" in m for m in messages)
    assert record_criterion(9, round_trip and positioned, f"round trip exact: {round_trip}, "
                                                          f"truncations positioned: {positioned}")
