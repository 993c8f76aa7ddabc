import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairgrad import HAVE_COMPILED
from fairgrad.data import Dataset, SyntheticSpec, gen_synthetic, split_train_val, standardize
from fairgrad.fairness import AP, EODDS, build_constants, direct_fairness, eopp, partition
from fairgrad.model import ModelSpec, NonFiniteLossError, Parameters, predict
from fairgrad.trainer import (EpochRecord, MultiplierState, TrainConfig, constant_baseline,
                              group_weights, select_model, train, update_multipliers,
                              update_multipliers_eps, update_multipliers_exact)

from conftest import make_dataset

needs_compiled = pytest.mark.skipif(not HAVE_COMPILED, reason="extension not built")


def rec(acc, fair, epoch=0):
    z = np.zeros(2)
    return EpochRecord(epoch, None, acc, np.array([fair, -fair]), z, z, z)


def blobs(n_per_cell=100, sep=3.0, seed=0):
    means = np.zeros((2, 2, 2))
    means[0, :, 0], means[1, :, 0] = -sep, sep
    ds = gen_synthetic(SyntheticSpec(means, np.full((2, 2), n_per_cell), 0.5, seed))
    tr, va = split_train_val(ds, seed)
    (tr, va), _ = standardize(tr, [va])
    return tr, va


# multiplier updates

def test_exact_update_example():
    s = update_multipliers_exact(MultiplierState.zeros(2), [0.1, -0.1], 0.01)
    np.testing.assert_allclose(s.lam, [0.001, -0.001], atol=1e-18)


def test_exact_update_accumulates_and_is_fixed_at_zero():
    s = MultiplierState.zeros(2)
    s = update_multipliers_exact(s, [0.1, -0.1], 0.01)
    s = update_multipliers_exact(s, [0.1, -0.1], 0.01)
    np.testing.assert_allclose(s.lam, [0.002, -0.002], atol=1e-18)
    assert update_multipliers_exact(s, [0.0, 0.0], 0.01).lam.tolist() == s.lam.tolist()


def test_eps_update_examples():
    s = MultiplierState(np.array([0.005, 0.0, 0.0]), np.zeros(3), 0.01)
    s = update_multipliers_eps(s, [0.001, -0.1, -0.05], 0.01)
    assert s.lam[0] == pytest.approx(0.00491, abs=1e-15)
    assert s.lam[1] == 0.0
    assert s.delta[2] == pytest.approx(0.0004, abs=1e-15)


def test_mode_mismatch_rejected():
    with pytest.raises(ValueError):
        update_multipliers_exact(MultiplierState.zeros(2, 0.1), [0, 0], 0.01)
    with pytest.raises(ValueError):
        update_multipliers_eps(MultiplierState.zeros(2), [0, 0], 0.01)
    with pytest.raises(ValueError):
        MultiplierState.zeros(2, -0.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(-1, 1), min_size=3, max_size=3), min_size=1, max_size=30),
       st.floats(0, 0.2))
def test_eps_multipliers_stay_nonnegative(Fs, eps):
    s = MultiplierState.zeros(3, eps)
    for F in Fs:
        s = update_multipliers(s, F, 0.05)
        assert np.all(s.lam >= 0) and np.all(s.delta >= 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 1), min_size=1, max_size=30))
def test_eps_zero_matches_exact_when_clamps_idle(Fs):
    # F > 0 throughout: lambda never hits zero and delta stays at zero
    e, x = MultiplierState.zeros(1, 0.0), MultiplierState.zeros(1)
    for F in Fs:
        e = update_multipliers(e, [F], 0.01)
        x = update_multipliers(x, [F], 0.01)
    assert e.delta[0] == 0.0
    assert abs(e.effective[0] - x.effective[0]) <= 1e-15


def test_group_weights_ap_example():
    C = np.array([[-0.4, 0.4], [0.6, -0.6]])
    w = group_weights([0.6, 0.4], C, MultiplierState(np.array([0.01, -0.02]), np.zeros(2)))
    np.testing.assert_allclose(w, [0.584, 0.416], atol=1e-15)
    assert abs(w.sum() - 1.0) <= 1e-15
    np.testing.assert_array_equal(group_weights([0.6, 0.4], C, MultiplierState.zeros(2)), [0.6, 0.4])


def test_group_weights_eps_uses_difference():
    C = np.array([[-0.4, 0.4], [0.6, -0.6]])
    s = MultiplierState(np.array([0.03, 0.0]), np.array([0.02, 0.02]), 0.05)
    np.testing.assert_allclose(group_weights([0.6, 0.4], C, s), [0.584, 0.416], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_ap_weights_sum_to_one(S, seed):
    ds = make_dataset(n=60, S=S, seed=seed % 1000)
    p = partition(ds, AP)
    C = build_constants(p, AP, ds)
    lam = np.random.default_rng(seed).normal(size=p.K) * 10
    assert abs(group_weights(p.priors, C, MultiplierState(lam, np.zeros(p.K))).sum() - 1) <= 1e-9


# selection rule

def test_select_model_window_example():
    assert select_model([rec(.84, .05), rec(.82, .01), rec(.78, .005)], 0.03) == 1


def test_select_model_singleton_and_zero_beta():
    assert select_model([rec(.5, .3)]) == 0
    h = [rec(.80, .01), rec(.90, .20), rec(.90, .10), rec(.89, .0)]
    assert select_model(h, 0.0) == 2


def test_select_model_inclusive_boundary_and_ties():
    # 0.81 sits exactly on the lower edge 0.84 - 0.03 despite rounding
    assert select_model([rec(.84, .05), rec(.81, .01)], 0.03) == 1
    assert select_model([rec(.84, .05), rec(.8099, .01)], 0.03) == 0
    assert select_model([rec(.84, .02), rec(.83, .01), rec(.84, .01)], 0.03) == 1


def test_select_model_empty():
    with pytest.raises(ValueError):
        select_model([])


# constant baseline

def test_constant_baseline_majority():
    y = np.array([1] * 7 + [0] * 3)
    ds = Dataset(np.random.default_rng(0).normal(size=(10, 2)), y, np.arange(10) % 2, 2, 2)
    _, pred = predict(constant_baseline(ds), ds.features * 100)
    np.testing.assert_array_equal(pred, 1)
    assert np.mean(pred == y) == pytest.approx(0.7)


def test_constant_baseline_fairness():
    # label 1 is 7/10 of group 0 and 3/10 of group 1
    y = np.array([1] * 7 + [0] * 3 + [1] * 3 + [0] * 7)
    s = np.repeat([0, 1], 10)
    ds = Dataset(np.zeros((20, 1)), y, s, 2, 2)
    y_major = np.array([1] * 11 + [0] * 9)
    _, pred = predict(constant_baseline(Dataset(np.zeros((20, 1)), y_major, s, 2, 2)), ds.features)
    np.testing.assert_array_equal(direct_fairness(pred, y, s, EODDS), 0.0)
    # AP: errors are the label-0 examples, 0.3 vs 0.7 with overall 0.5
    np.testing.assert_allclose(direct_fairness(pred, y, s, AP), [0.2, -0.2], atol=1e-15)


# training loop

def test_unconstrained_keeps_prior_weights(caplog):
    tr, va = blobs()
    cfg = TrainConfig(epochs=2, mode="unconstrained", epsilon=0.1, batch_size=32)
    with caplog.at_level(logging.WARNING):
        res = train(cfg, tr, va, EODDS, backend="python", record_trace=True)
    assert "ignored" in caplog.text
    np.testing.assert_array_equal(res.trace.weights, np.broadcast_to(res.partition.priors, res.trace.weights.shape))
    np.testing.assert_array_equal(res.trace.lam, 0.0)


def test_history_has_one_record_per_epoch():
    tr, va = blobs()
    res = train(TrainConfig(epochs=3), tr, va, AP, backend="python")
    assert [r.epoch for r in res.history] == [0, 1, 2]
    assert res.params is res.history[res.selected_epoch].params
    assert res.final_params.theta.tobytes() == res.history[-1].params.theta.tobytes()


@pytest.mark.parametrize("backend", ["python", pytest.param("compiled", marks=needs_compiled)])
def test_training_is_deterministic(backend):
    tr, va = blobs()
    cfg = TrainConfig(epochs=3, batch_size=16, seed=5)
    a = train(cfg, tr, va, EODDS, backend=backend)
    b = train(cfg, tr, va, EODDS, backend=backend)
    for ra, rb in zip(a.history, b.history):
        assert ra.params.theta.tobytes() == rb.params.theta.tobytes()
        assert ra.lam.tobytes() == rb.lam.tobytes()


def test_mlp_training_is_deterministic():
    tr, va = blobs(n_per_cell=30)
    cfg = TrainConfig(epochs=2, batch_size=16, hidden_sizes=(6,), dropout_rate=0.3)
    a, b = train(cfg, tr, va, AP), train(cfg, tr, va, AP)
    assert a.backend == "python"
    assert a.final_params.theta.tobytes() == b.final_params.theta.tobytes()


@pytest.mark.parametrize("notion,eps", [(AP, None), (EODDS, None), (eopp(1), 0.02)])
def test_lambda_matches_closed_form(notion, eps):
    tr, va = blobs(n_per_cell=60, sep=0.5)
    res = train(TrainConfig(epochs=3, batch_size=20, epsilon=eps), tr, va, notion,
                backend="python", record_trace=True)
    t = res.trace
    if eps is None:
        np.testing.assert_allclose(t.lam, 0.01 * np.cumsum(t.fairness, axis=0), rtol=0, atol=1e-12)
    else:
        assert np.all(t.lam >= 0) and np.all(t.delta >= 0)
    np.testing.assert_allclose(
        t.weights, res.partition.priors + (t.lam - t.delta) @ res.constants, rtol=0, atol=1e-12)


def test_fair_model_is_a_fixed_point():
    # every point appears once per group, so full-batch group error rates coincide and F = 0
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2))
    y = (X[:, 0] + 0.5 * rng.normal(size=30) > 0).astype(int)
    ds = Dataset(np.vstack([X, X]), np.tile(y, 2), np.repeat([0, 1], 30), 2, 2)
    base = TrainConfig(epochs=4, batch_size=ds.n, seed=2)
    fair = train(base, ds, ds, AP, backend="python", record_trace=True)
    plain = train(TrainConfig(**{**base.to_dict(), "mode": "unconstrained"}), ds, ds, AP, backend="python")
    np.testing.assert_array_equal(fair.trace.fairness, 0.0)
    for a, b in zip(fair.history, plain.history):
        assert a.params.theta.tobytes() == b.params.theta.tobytes()


def test_separable_balanced_data_ends_fair():
    tr, va = blobs(n_per_cell=200)
    res = train(TrainConfig(epochs=20), tr, va, EODDS, backend="python")
    acc, F = res.selected.val_accuracy, res.selected.val_fairness
    assert acc >= 0.99
    assert np.max(np.abs(F)) <= 0.02


def test_single_label_training_rejected():
    means = np.zeros((2, 2, 1))
    ds = gen_synthetic(SyntheticSpec(means, [[5, 5], [0, 0]]))
    with pytest.raises(ValueError, match="two distinct labels"):
        train(TrainConfig(epochs=1), ds, ds, AP)


def test_config_validation():
    for bad in ({"eta_theta": 0}, {"eta_lambda": -1}, {"batch_size": 0}, {"mode": "sgd"},
                {"epsilon": -0.1}, {"clip_norm": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


@needs_compiled
@pytest.mark.parametrize("notion,eps,clip", [(AP, None, False), (EODDS, 0.01, False),
                                             (eopp(1), None, True), (AP, None, None)])
def test_compiled_matches_python(notion, eps, clip):
    tr, va = blobs(n_per_cell=70, sep=0.6)
    mode = "unconstrained" if clip is None else "fairgrad"
    cfg = TrainConfig(epochs=2, batch_size=24, epsilon=eps, mode=mode,
                      clip_weights_nonnegative=bool(clip), eta_lambda=0.5)
    a = train(cfg, tr, va, notion, backend="python", record_trace=True)
    b = train(cfg, tr, va, notion, backend="compiled", record_trace=True)
    assert b.backend == "compiled"
    for ra, rb in zip(a.history, b.history):
        np.testing.assert_allclose(ra.params.theta, rb.params.theta, rtol=0, atol=1e-9)
        np.testing.assert_allclose(ra.lam, rb.lam, rtol=0, atol=1e-12)
        np.testing.assert_allclose(ra.weights, rb.weights, rtol=0, atol=1e-12)
    for x, z in zip((a.trace.weights, a.trace.lam, a.trace.delta, a.trace.fairness),
                    (b.trace.weights, b.trace.lam, b.trace.delta, b.trace.fairness)):
        np.testing.assert_allclose(x, z, rtol=0, atol=1e-12)


@needs_compiled
def test_backends_abort_at_the_same_batch():
    tr, va = blobs(n_per_cell=50)
    huge = Parameters(ModelSpec.linear(2, 2), np.array([1e308, -1e308, -1e308, 1e308, 0.0, 0.0]))
    msgs = []
    for backend in ("python", "compiled"):
        with np.errstate(all="ignore"), pytest.raises(NonFiniteLossError) as info:
            train(TrainConfig(epochs=1), tr, va, AP, init=huge, backend=backend)
        msgs.append(str(info.value).split(":")[0])
    assert msgs[0] == msgs[1]
