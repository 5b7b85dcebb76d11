import math
import struct

import numpy as np
import pytest

from cmreg.kdtree import linear_scan
from cmreg.manifold import split_errors
from cmreg.pose import distance_arrays
from cmreg.projection import (MAGIC, Adam, AdamConfig, MlpArchitecture, ProjectionModel,
                              TrainConfig, TrainingDiverged, TrainingSet, architecture_from_name,
                              fit_projection, init_model, load_model, loss_and_grads,
                              make_training_set, save_model, train)


def toy_model(seed=0, widths=(5,)):
    arch = MlpArchitecture(widths)
    rng = np.random.default_rng(seed)
    m = init_model(arch, seed)
    for b in m.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    return m


# ------------------------------------------------------------ gradients

def finite_difference_check(model, X, Y, h=1e-6):
    _, grads = loss_and_grads(model, X, Y)
    worst = 0.0
    for p, g in zip(model.params, grads):
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp, _ = loss_and_grads(model, X, Y)
            p[idx] = old - h
            lm, _ = loss_and_grads(model, X, Y)
            p[idx] = old
            num[idx] = (lp - lm) / (2 * h)
        denom = np.maximum(np.abs(num) + np.abs(g), 1e-8)
        worst = max(worst, float(np.max(np.abs(num - g) / denom)))
    return worst


def test_gradient_check_two_layer_toy():
    rng = np.random.default_rng(3)
    m = toy_model(3, (5,))
    X, Y = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    assert finite_difference_check(m, X, Y) < 1e-4


def test_adam_three_steps_by_hand():
    # minimise f(p) = (p - 3)^2 from p = 0: g = 2 (p - 3)
    cfg = AdamConfig(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    p = np.array([0.0])
    opt = Adam([p], cfg)
    m = v = 0.0
    ref = 0.0
    for t in range(1, 4):
        g = 2.0 * (p[0] - 3.0)
        opt.step([p], [np.array([g])])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1 - 0.9 ** t)
        vh = v / (1 - 0.999 ** t)
        ref = ref - 0.1 * mh / (math.sqrt(vh) + 1e-8)
        assert abs(p[0] - ref) <= 1e-12
        if t == 1:
            # the bias-corrected first step has magnitude lr whatever the gradient scale
            assert abs(p[0] - 0.1) < 1e-6


def test_normalization_round_trip(rng):
    m = init_model(MlpArchitecture((4,)), 0, in_mean=rng.normal(size=6),
                   in_scale=rng.uniform(0.5, 2, 6), out_mean=rng.normal(size=6),
                   out_scale=rng.uniform(0.5, 2, 6))
    Y = rng.normal(size=(20, 6))
    assert np.max(np.abs(m.denormalize_out(m.normalize_out(Y)) - Y)) < 1e-12


# ------------------------------------------------------------ invariants

def test_architecture_and_model_validation():
    with pytest.raises(ValueError):
        MlpArchitecture(())
    with pytest.raises(ValueError):
        MlpArchitecture((4, 0))
    m = init_model(MlpArchitecture((4,)), 0)
    with pytest.raises(ValueError, match="does not match"):
        ProjectionModel(m.arch, [m.weights[0].T, m.weights[1]], m.biases, m.in_mean,
                        m.in_scale, m.out_mean, m.out_scale)
    with pytest.raises(ValueError, match="strictly positive"):
        ProjectionModel(m.arch, m.weights, m.biases, m.in_mean, np.zeros(6),
                        m.out_mean, m.out_scale)
    assert MlpArchitecture.wide().hidden == (4096,) * 4
    assert architecture_from_name("32,16").hidden == (32, 16)


# ---------------------------------------------------------- training data

def test_training_set_examples(small_manifolds):
    m = small_manifolds["gear"]
    z = make_training_set(m, (0, 0, 0, 0, 0, 0), n=50, seed=1)
    assert np.array_equal(z.inputs, z.targets)
    a = make_training_set(m, n=1000, seed=4)
    b = make_training_set(m, n=1000, seed=4)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.targets, b.targets)
    idx, _ = linear_scan(m.poses, a.inputs)
    assert np.array_equal(m.poses[idx], a.targets)
    assert len(make_training_set(m, n=0)) == 0
    with pytest.raises(ValueError):
        make_training_set(m, (-1, 0, 0, 0, 0, 0), n=5)


def test_training_targets_are_nearest(small_manifolds, rng):
    m = small_manifolds["cross"]
    ts = make_training_set(m, n=200, seed=2)
    d_target = distance_arrays(ts.inputs, ts.targets)
    for k in rng.integers(0, 200, 20):
        assert d_target[k] <= distance_arrays(ts.inputs[k], m.poses).min() + 1e-12


# ------------------------------------------------------------- training

def test_overfit_ten_pairs():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 6))
    ts = TrainingSet(X, X + rng.normal(scale=0.3, size=(10, 6)), np.arange(10))
    m = train(ts, MlpArchitecture((64, 64)), AdamConfig(lr=3e-3), epochs=600, batch=10, seed=0)
    assert m.meta["final_loss"] < 1e-3


def test_zero_epochs_is_initialization():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 6))
    ts = TrainingSet(X, X, np.arange(10))
    m = train(ts, MlpArchitecture((8,)), epochs=0, seed=3)
    ref = init_model(MlpArchitecture((8,)), 3)
    assert all(np.array_equal(a, b) for a, b in zip(m.weights, ref.weights))
    assert np.all(np.isfinite(m.project(X)))


def test_training_is_deterministic(small_manifolds):
    ts = make_training_set(small_manifolds["gear"], n=300, seed=0)
    a = train(ts, MlpArchitecture((16, 16)), epochs=3, seed=9)
    b = train(ts, MlpArchitecture((16, 16)), epochs=3, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a.params, b.params))


def test_divergence_reports_epoch_and_lr():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(32, 6))
    ts = TrainingSet(X, X * 1e3, np.arange(32))
    with pytest.raises(TrainingDiverged, match=r"epoch \d+ \(lr=1e\+30\)"):
        train(ts, MlpArchitecture((8,)), AdamConfig(lr=1e30), epochs=50, seed=0)


def test_empty_training_set_is_rejected():
    with pytest.raises(ValueError):
        train(TrainingSet(np.zeros((0, 6)), np.zeros((0, 6)), np.zeros(0, int)))


@pytest.fixture(scope="module")
def gear_model(small_manifolds):
    return fit_projection(small_manifolds["gear"], TrainConfig(pairs=4000, holdout=300, epochs=25))


def test_projection_beats_do_nothing(gear_model):
    model, ho = gear_model
    pred = distance_arrays(model.project(ho.inputs), ho.targets).mean()
    base = distance_arrays(ho.inputs, ho.targets).mean()
    assert pred < base


def test_training_inputs_within_training_error(gear_model, small_manifolds):
    model, _ = gear_model
    cfg = TrainConfig(pairs=4000, holdout=300, epochs=25)
    data = make_training_set(small_manifolds["gear"], cfg.offset_bounds(small_manifolds["gear"]),
                             cfg.pairs + cfg.holdout, seed=[cfg.seed, 7])
    tr, _ = data.split(cfg.holdout)
    t, r = split_errors(model.project(tr.inputs), tr.targets)
    t0, r0 = split_errors(tr.inputs, tr.targets)
    assert t.mean() < t0.mean() and r.mean() < r0.mean()


def test_batched_projection_equals_elementwise(gear_model, rng):
    model, ho = gear_model
    Q = ho.inputs[:100]
    batch = model.project(Q)
    single = np.array([model.project(q) for q in Q])
    assert np.allclose(batch, single, atol=1e-9, rtol=0)


# ------------------------------------------------------------------ files

def test_model_round_trip(gear_model, tmp_path, rng):
    model, ho = gear_model
    path = tmp_path / "m.mlp"
    save_model(model, path)
    back = load_model(path)
    assert all(np.array_equal(a, b) for a, b in zip(model.params, back.params))
    assert back.residual == model.residual and back.arch == model.arch
    Q = ho.inputs[:100]
    assert np.array_equal(model.project(Q), back.project(Q))


def test_model_load_errors(gear_model, tmp_path):
    model, _ = gear_model
    path = tmp_path / "m.mlp"
    save_model(model, path)
    data = path.read_bytes()
    (tmp_path / "trunc.mlp").write_bytes(data[: len(data) // 2])
    with pytest.raises(ValueError, match="truncated"):
        load_model(tmp_path / "trunc.mlp")
    bad = bytearray(data)
    bad[len(MAGIC):len(MAGIC) + 4] = struct.pack("<I", 99)
    (tmp_path / "ver.mlp").write_bytes(bytes(bad))
    with pytest.raises(ValueError, match="unsupported model version"):
        load_model(tmp_path / "ver.mlp")
    (tmp_path / "junk.mlp").write_bytes(b"not a model at all")
    with pytest.raises(ValueError):
        load_model(tmp_path / "junk.mlp")
    (tmp_path / "tail.mlp").write_bytes(data + b"\x00")
    with pytest.raises(ValueError, match="trailing"):
        load_model(tmp_path / "tail.mlp")
