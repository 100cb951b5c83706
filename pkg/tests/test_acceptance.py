"""End-to-end acceptance checks.

Each ``check_*`` function returns ``(passed, detail)``. Under pytest every
check is one test and a summary line per criterion is printed at the end of
the session (see conftest.py). Running this file directly prints the same
lines without pytest.
"""

import math
import statistics
import sys
import time
import warnings

import numpy as np
import pytest

from sparsgd.bench import bench_codecs
from sparsgd.comm import ClusterConfig, aggregate_gathered, all_gather, all_reduce_sum
from sparsgd.compressors import (
    CompressorConfig,
    block_indices,
    block_start,
    k_for,
    randomk_indices,
    topk_indices,
)
from sparsgd.data import gen_blobs, gen_least_squares, shard, split
from sparsgd.models import MLP, LeastSquaresModel, finite_difference_check
from sparsgd.optimizer import TrainerConfig, epoch_order, lr_at, train
from sparsgd.params import SparsePayload, decompress
from sparsgd.rng import RngStream

RESULTS: dict[str, tuple[bool, str]] = {}

# (kind, seed_mode, scheme) for every valid pairing
SCHEMES = [
    ("topk", "perworker", "allgather"),
    ("randomk", "perworker", "allgather"),
    ("randomk", "shared", "allreduce"),
    ("blockrandomk", "perworker", "allgather"),
    ("blockrandomk", "shared", "allreduce"),
    ("identity", "perworker", "allreduce"),
]
SPARSE = SCHEMES[:-1]


def record(name, passed, detail):
    RESULTS[name] = (passed, detail)
    return passed, detail


# 1. error feedback identity


def check_error_feedback():
    data = gen_blobs(3, 480, 6, seed=0)
    model = MLP([6, 10, 3], "relu")
    tcfg = TrainerConfig(gamma0=0.02, epochs=2, batch_size=8)
    runs = steps = bad = 0
    for world in (1, 2, 4, 8):
        shards = [shard(data, world, w, 0) for w in range(world)]
        for kind, mode, scheme in SCHEMES:
            for scope in ("layerwise", "global"):
                comp = CompressorConfig(kind=kind, fraction=0.05, scope=scope, seed_mode=mode, base_seed=world)

                def on_step(trace):
                    nonlocal steps, bad
                    steps += 1
                    for wt in trace.workers:
                        bad += not (wt.q_local + wt.e_next).equals(wt.p)

                train(model, shards, data, tcfg, comp, ClusterConfig(world), scheme, on_step=on_step)
                runs += 1
    return record("1 error-feedback identity", bad == 0 and runs == 48,
                  f"{runs} runs, {steps} steps, {bad} worker-steps with nonzero deviation")


# 2. degenerate equivalence


def reference_momentum_sgd(model, data, tcfg, init_seed, data_seed, steps):
    x = model.init_params(init_seed)
    xs = list(x.arrays())
    ms = [np.zeros_like(a) for a in xs]
    b = tcfg.batch_size
    per_epoch = -(-data.n // b)
    for t in range(steps):
        epoch, i = divmod(t, per_epoch)
        rows = epoch_order(data.n, data_seed, 0, epoch)[i * b:(i + 1) * b]
        _, cache = model.forward(x, data.features[rows], data.labels[rows])
        grads = model.backward(x, cache)
        lr = lr_at(epoch, tcfg, 1)
        for xa, ma, ga in zip(xs, ms, grads.arrays()):
            ga += tcfg.weight_decay * xa
            ma *= tcfg.momentum
            ma += ga
            xa -= lr * ma
    return x


def check_degenerate_equivalence():
    data = gen_blobs(4, 1000, 8, seed=1)
    model = MLP([8, 16, 16, 4], "relu")
    part = shard(data, 1, 0, 7)
    tcfg = TrainerConfig(gamma0=0.05, epochs=32, batch_size=32, lr_decay_epochs=(20,))
    hist = train(model, [part], data, tcfg, CompressorConfig(kind="identity"), ClusterConfig(1), "allreduce",
                 init_seed=3, data_seed=7)
    steps = len(hist.steps)
    ref = reference_momentum_sgd(model, part, tcfg, 3, 7, steps)
    same = hist.params.equals(ref)
    return record("2 degenerate equivalence", same and steps >= 1000,
                  f"{steps} steps, parameters bit-identical: {same}")


# 3. convex convergence


def converge(world, comp, scheme, max_steps, target):
    data, _, f_star = gen_least_squares(50, 400, 10.0, seed=0)
    model = LeastSquaresModel(50, f_star)
    shards = [shard(data, world, w, 0) for w in range(world)]
    # one full-shard batch per step, so every epoch is one step
    tcfg = TrainerConfig(gamma0=0.02 / world, epochs=max_steps, batch_size=data.n, momentum=0.0, weight_decay=0.0)
    hist = train(model, shards, data, tcfg, comp, ClusterConfig(world), scheme,
                 stop_when=lambda r: r.eval_metric < target)
    return len(hist.steps), hist.epochs[-1].eval_metric


def check_convex_convergence():
    lines, ok = [], True
    for world in (1, 4):
        dense_steps, dense_gap = converge(world, CompressorConfig(kind="identity"), "allreduce", 20000, 1e-6)
        ok &= dense_gap < 1e-6
        budget = 50 * dense_steps
        lines.append(f"W={world} dense {dense_gap:.2e} after {dense_steps} steps (budget {budget})")
        for kind, mode, scheme in SPARSE:
            comp = CompressorConfig(kind=kind, fraction=0.01, seed_mode=mode, base_seed=11)
            steps, gap = converge(world, comp, scheme, budget, 1e-3)
            ok &= gap < 1e-3
            lines.append(f"W={world} {kind}/{scheme} {gap:.2e} after {steps} steps")
    return record("3 convex convergence", ok, "; ".join(lines))


# 4. collective equivalence


def check_collective_equivalence(sets=1000, seed=0):
    gen = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(sets):
        world = int(gen.integers(1, 9))
        dim = int(gen.integers(1, 10_001))
        k = int(gen.integers(1, dim + 1))
        idx = np.sort(gen.choice(dim, size=k, replace=False))
        payloads = [SparsePayload(None, dim, idx, gen.standard_normal(k)) for _ in range(world)]
        reduced = decompress(all_reduce_sum(payloads))
        gathered = all_gather(payloads)
        for view in gathered:
            mismatches += not np.array_equal(reduced, aggregate_gathered(view, dim))
    return record("4 collective equivalence", mismatches == 0, f"{sets} payload sets, {mismatches} mismatches")


# 5. compressor oracles


def brute_force_topk(v, k):
    order = np.lexsort((np.arange(v.size), -np.abs(v)))
    return np.sort(order[:k])


def check_compressor_oracles(vectors=1000, draws=100_000, seed=0):
    gen = np.random.default_rng(seed)
    topk_bad = 0
    for i in range(vectors):
        dim = int(gen.integers(1, 10_001))
        if i % 2:
            # few distinct magnitudes with both signs: heavy ties
            v = gen.integers(-4, 5, size=dim).astype(float)
        else:
            v = gen.standard_normal(dim)
        k = int(gen.integers(1, dim + 1))
        topk_bad += not np.array_equal(topk_indices(v, k), brute_force_topk(v, k))

    counts_r = np.zeros(10)
    counts_b = np.zeros(10)
    for t in range(draws):
        counts_r[randomk_indices(10, 2, RngStream(seed, step=t))] += 1
        stream = RngStream(seed, step=t, ordinal=1)
        counts_b[block_indices(10, 3, block_start(10, stream))] += 1
    dev_r = float(np.max(np.abs(counts_r / draws - 0.2)))
    dev_b = float(np.max(np.abs(counts_b / draws - 0.3)))
    ok = topk_bad == 0 and dev_r <= 0.01 and dev_b <= 0.01
    return record("5 compressor oracles", ok,
                  f"top-k mismatches {topk_bad}/{vectors}; max |freq - k/dim|: random-k {dev_r:.4f}, "
                  f"block-random-k {dev_b:.4f}")


# 6. traffic accounting


def check_traffic():
    data = gen_blobs(10, 400, 100, seed=2)
    model = MLP([100, 200, 100, 10], "relu")
    world = 4
    shards = [shard(data, world, w, 0) for w in range(world)]
    tcfg = TrainerConfig(gamma0=0.01, epochs=1, batch_size=25)
    dense = train(model, shards, data, tcfg, CompressorConfig(kind="identity"), ClusterConfig(world), "allreduce")
    dense_entries = dense.steps[0].entries
    layer_k = sum(k_for(d, 0.01) for _, d in model.structure)
    total_dim = sum(d for _, d in model.structure)
    ok, lines = True, []
    for scope in ("layerwise", "global"):
        expected = layer_k if scope == "layerwise" else k_for(total_dim, 0.01)
        for kind, mode, scheme in SPARSE:
            comp = CompressorConfig(kind=kind, fraction=0.01, scope=scope, seed_mode=mode)
            hist = train(model, shards, data, tcfg, comp, ClusterConfig(world), scheme)
            ratios = {r.entries / dense_entries for r in hist.steps}
            exact = all(r.entries == world * expected for r in hist.steps)
            ok &= exact and all(0.01 <= q <= 0.015 for q in ratios)
            lines.append(f"{scope} {kind}/{scheme} ratio {max(ratios):.5f}{'' if exact else ' (count mismatch)'}")
    return record("6 traffic accounting", ok,
                  f"sum of per-layer k = {layer_k} of {total_dim}; " + "; ".join(lines))


# 7. codec cost ordering


def check_codec_ordering():
    rows = {r.scheme: r for r in bench_codecs(10**7, 0.01, repetitions=20)}
    top, rnd, blk = (rows[s].mean * 1e3 for s in ("topk", "randomk", "blockrandomk"))
    return record("7 codec cost ordering", blk < rnd and blk < top,
                  f"mean ms: top-k {top:.1f}, random-k {rnd:.1f}, block-random-k {blk:.2f}")


# 8. qualitative accuracy direction (alert only)

T_975_DF4 = 2.776  # two-sided 95% Student t quantile for 5 samples


def final_accuracy(kind, seed):
    data = gen_blobs(5, 2000, 20, separation=3.0, seed=seed)
    train_set, eval_set = split(data, 0.2, seed)
    world = 4
    shards = [shard(train_set, world, w, seed) for w in range(world)]
    model = MLP([20, 64, 5], "relu")
    tcfg = TrainerConfig(gamma0=0.01, epochs=30, batch_size=16)
    comp = CompressorConfig(kind=kind, fraction=0.01, base_seed=seed)
    hist = train(model, shards, eval_set, tcfg, comp, ClusterConfig(world), "allgather",
                 init_seed=seed, data_seed=seed)
    return hist.epochs[-1].eval_metric


def mean_ci(values):
    m = statistics.fmean(values)
    half = T_975_DF4 * statistics.stdev(values) / math.sqrt(len(values))
    return m, half


def check_accuracy_direction(seeds=range(5)):
    top = [final_accuracy("topk", s) for s in seeds]
    blk = [final_accuracy("blockrandomk", s) for s in seeds]
    (mt, ht), (mb, hb) = mean_ci(top), mean_ci(blk)
    detail = f"top-k {mt:.4f} ± {ht:.4f}, block-random-k {mb:.4f} ± {hb:.4f} (95% CI, 5 seeds)"
    return record("8 accuracy direction (advisory)", mt >= mb, detail)


# 9. gradient correctness


def check_gradients(instances=20, seed=0):
    gen = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        n = int(gen.integers(3, 20))
        if i % 2 == 0:
            p = int(gen.integers(1, 12))
            model = LeastSquaresModel(p)
            X, y = gen.standard_normal((n, p)), gen.standard_normal(n)
            params = model.init_params()
            params["w"][:] = gen.standard_normal(p)
        else:
            sizes = [int(gen.integers(1, 7)) for _ in range(int(gen.integers(2, 5)))] + [int(gen.integers(2, 5))]
            model = MLP(sizes, "relu" if i % 4 == 1 else "tanh")
            X = gen.standard_normal((n, sizes[0]))
            y = gen.integers(0, sizes[-1], size=n)
            params = model.init_params(int(gen.integers(1 << 30)))
            for a in params.arrays():
                a += 0.1 * gen.standard_normal(a.shape)
        worst = max(worst, finite_difference_check(model, params, X, y))
    return record("9 gradient correctness", worst < 1e-5, f"{instances} instances, max relative error {worst:.2e}")


# pytest entry points


def assert_check(result):
    passed, detail = result
    assert passed, detail


def test_error_feedback_identity():
    assert_check(check_error_feedback())


def test_degenerate_equivalence():
    assert_check(check_degenerate_equivalence())


def test_convex_convergence():
    assert_check(check_convex_convergence())


def test_collective_equivalence():
    assert_check(check_collective_equivalence())


def test_compressor_oracles():
    assert_check(check_compressor_oracles())


def test_traffic_accounting():
    assert_check(check_traffic())


@pytest.mark.slow
def test_codec_cost_ordering():
    assert_check(check_codec_ordering())


@pytest.mark.slow
def test_accuracy_direction_advisory():
    passed, detail = check_accuracy_direction()
    if not passed:
        warnings.warn(f"top-k did not match or beat block-random-k: {detail}")


def test_gradient_correctness():
    assert_check(check_gradients())


CHECKS = [
    check_error_feedback,
    check_degenerate_equivalence,
    check_convex_convergence,
    check_collective_equivalence,
    check_compressor_oracles,
    check_traffic,
    check_codec_ordering,
    check_accuracy_direction,
    check_gradients,
]


def format_line(name):
    passed, detail = RESULTS[name]
    status = "PASS" if passed else ("ALERT" if "advisory" in name else "FAIL")
    return f"{status} {name}: {detail}"


def summary_lines():
    return [format_line(name) for name in sorted(RESULTS)]


if __name__ == "__main__":
    for check in CHECKS:
        t0 = time.perf_counter()
        check()
        print(f"{format_line(list(RESULTS)[-1])} [{time.perf_counter() - t0:.1f} s]", flush=True)
    sys.exit(0 if all(ok or "advisory" in n for n, (ok, _) in RESULTS.items()) else 1)
