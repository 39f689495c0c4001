import numpy as np
import pytest

from slimadam.models import ModelSpec, ParamBlock, LayerType, build_model, census_entries
from slimadam.optim import (DivergenceError, Hyper, ReferenceAdam, Schedule,
                            SharedMomentAdam, clip_grad_norm, lr_at)
from slimadam.rules import RuleSet, baseline_rules
from slimadam.tensors import Axes


def scalar_block(name="w", value=1.0):
    return ParamBlock(name, LayerType.GENERIC, 0, np.array([value]))


def test_schedule_endpoints():
    s = Schedule(peak_lr=1e-3, warmup=100, total=1000)
    assert lr_at(s, 0) == 0.0
    assert lr_at(s, 100) == pytest.approx(1e-3, rel=1e-15)
    assert lr_at(s, 1000) == pytest.approx(1e-4, rel=1e-12)


def test_schedule_warmup_is_linear():
    s = Schedule(peak_lr=2e-3, warmup=200, total=1000)
    assert lr_at(s, 50) == pytest.approx(2e-3 * 50 / 200)


def test_schedule_rejects_out_of_range():
    s = Schedule(peak_lr=1e-3, warmup=10, total=100)
    with pytest.raises(ValueError):
        lr_at(s, 101)
    with pytest.raises(ValueError):
        Schedule(peak_lr=1e-3, warmup=100, total=100)


def test_clip_scales_when_above():
    grads = {"a": np.array([2.0, 0.0]), "b": np.array([0.0, 0.0])}
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == 2.0
    np.testing.assert_allclose(clipped["a"], [1.0, 0.0])


def test_clip_noop_when_below():
    grads = {"a": np.array([0.3, 0.4])}
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == 0.5
    np.testing.assert_array_equal(clipped["a"], grads["a"])


def test_clip_zero_grads():
    grads = {"a": np.zeros(3)}
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == 0.0
    np.testing.assert_array_equal(clipped["a"], np.zeros(3))


def test_clip_rejects_nonfinite():
    with pytest.raises(DivergenceError):
        clip_grad_norm({"a": np.array([np.inf])}, 1.0)


def test_first_step_closed_form():
    # t=1, zero moments, scalar W=1, G=2, lr=0.1: W -> 1 - 0.1*2/(2+eps)
    b = scalar_block()
    opt = SharedMomentAdam([b], RuleSet({"w": Axes.NONE}),
                           Hyper(lr=0.1, weight_decay=0.0, clip_norm=None))
    opt.step({"w": np.array([2.0])})
    expected = 1.0 - 0.1 * (2.0 / (2.0 + 1e-8))
    assert b.weights[0] == pytest.approx(expected, rel=1e-12)


def test_decoupled_decay_with_zero_grad():
    b = scalar_block()
    opt = SharedMomentAdam([b], RuleSet({"w": Axes.NONE}),
                           Hyper(lr=0.1, weight_decay=0.1, clip_norm=None))
    opt.step({"w": np.array([0.0])})
    assert b.weights[0] == pytest.approx(0.99, rel=1e-12)


def test_fan_in_sharing_first_step():
    # G = [[1, 3]]: shared V gets 0.05 * mean(1, 9) = 0.25 for both coords
    b = ParamBlock("w", LayerType.GENERIC, 0, np.zeros((1, 2)))
    opt = SharedMomentAdam([b], RuleSet({"w": Axes.FAN_IN}),
                           Hyper(lr=0.1, beta2=0.95, weight_decay=0.0, clip_norm=None))
    opt.step({"w": np.array([[1.0, 3.0]])})
    np.testing.assert_allclose(opt.state["w"].v, [0.25])


def test_fan_rule_on_vector_rejected():
    b = ParamBlock("v", LayerType.GENERIC, 0, np.zeros(4))
    with pytest.raises(ValueError):
        SharedMomentAdam([b], RuleSet({"v": Axes.FAN_IN}), Hyper())


def test_divergence_identifies_block():
    b = scalar_block()
    opt = SharedMomentAdam([b], RuleSet({"w": Axes.NONE}),
                           Hyper(lr=np.inf, weight_decay=0.0, clip_norm=None))
    with pytest.raises(DivergenceError):
        opt.step({"w": np.array([1.0])})


def _mlp_batches(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(200, 5))
    Y = rng.integers(0, 3, size=200)
    return X, Y


MLP = ModelSpec(kind="MLPClassifier", d_model=16, n_layers=2, in_dim=5, n_classes=3)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_adam_equivalence_bitwise(seed):
    X, Y = _mlp_batches(seed)
    a = build_model(MLP, seed)
    b = build_model(MLP, seed)
    oa = SharedMomentAdam(a.blocks, baseline_rules(census_entries(a), "adam"),
                          Hyper(lr=1e-2))
    ob = ReferenceAdam(b.blocks, Hyper(lr=1e-2))
    for t in range(100):
        i = (t * 16) % 180
        _, ga = a.loss_and_grads(X[i:i + 16], Y[i:i + 16])
        _, gb = b.loss_and_grads(X[i:i + 16], Y[i:i + 16])
        oa.step(ga)
        ob.step(gb)
    for name in a.params():
        np.testing.assert_array_equal(a.params()[name], b.params()[name])


def test_adalayer_limit_bitwise():
    # BOTH sharing matches a hand-rolled one-scalar-V-per-block Adam
    seed = 0
    X, Y = _mlp_batches(seed)
    a = build_model(MLP, seed)
    b = build_model(MLP, seed)
    h = Hyper(lr=1e-2)
    oa = SharedMomentAdam(a.blocks, baseline_rules(census_entries(a), "adalayer"), h)
    m = {n: np.zeros_like(w) for n, w in b.params().items()}
    v = {n: 0.0 for n in b.params()}
    for t in range(1, 51):
        i = ((t - 1) * 16) % 180
        _, ga = a.loss_and_grads(X[i:i + 16], Y[i:i + 16])
        _, gb = b.loss_and_grads(X[i:i + 16], Y[i:i + 16])
        oa.step(ga)
        gb, _ = clip_grad_norm(gb, h.clip_norm)
        for n, w in b.params().items():
            g = gb[n]
            m[n] = h.beta1 * m[n] + (1.0 - h.beta1) * g
            v[n] = h.beta2 * v[n] + (1.0 - h.beta2) * np.mean(g * g)
            mhat = m[n] / (1.0 - h.beta1**t)
            vhat = v[n] / (1.0 - h.beta2**t)
            w -= h.lr * (mhat / (np.sqrt(vhat) + h.eps))
            w -= (h.lr * h.weight_decay) * w
    for name in a.params():
        np.testing.assert_array_equal(a.params()[name], b.params()[name])


def test_constant_gradient_equivalence():
    # gradients constant along k: shared trajectory tracks plain Adam
    rng = np.random.default_rng(0)
    wa = ParamBlock("w", LayerType.GENERIC, 0, rng.normal(size=(4, 6)))
    wb = ParamBlock("w", LayerType.GENERIC, 0, wa.weights.copy())
    h = Hyper(lr=1e-2, weight_decay=0.0, clip_norm=None)
    shared = SharedMomentAdam([wa], RuleSet({"w": Axes.FAN_IN}), h)
    plain = SharedMomentAdam([wb], RuleSet({"w": Axes.NONE}), h)
    for t in range(200):
        col = rng.normal(size=(4, 1))
        g = np.repeat(col, 6, axis=1)  # constant along fan_in
        shared.step({"w": g.copy()})
        plain.step({"w": g.copy()})
    np.testing.assert_allclose(wa.weights, wb.weights, rtol=1e-12)


def test_bias_corrected_v_converges_for_constant_grad():
    b = ParamBlock("w", LayerType.GENERIC, 0, np.zeros((2, 2)))
    h = Hyper(lr=0.0, beta2=0.95, weight_decay=0.0, clip_norm=None)
    opt = SharedMomentAdam([b], RuleSet({"w": Axes.NONE}), h)
    g = np.array([[1.0, 2.0], [3.0, 4.0]])
    for _ in range(200):
        opt.step({"w": g})
    vhat = opt.state["w"].v / (1.0 - h.beta2**opt.t)
    np.testing.assert_allclose(vhat, g * g, rtol=1e-6)
    assert np.all(opt.state["w"].v >= 0)


def test_first_moment_identity_at_t1():
    b = ParamBlock("w", LayerType.GENERIC, 0, np.zeros(3))
    opt = SharedMomentAdam([b], RuleSet({"w": Axes.NONE}),
                           Hyper(lr=0.0, weight_decay=0.0, clip_norm=None))
    g = np.array([1.0, -2.0, 0.5])
    opt.step({"w": g})
    mhat = opt.state["w"].m / (1.0 - opt.hyper.beta1)
    np.testing.assert_allclose(mhat, g, rtol=1e-15)


def test_checkpoint_round_trip_bit_exact():
    seed = 0
    X, Y = _mlp_batches(seed)
    model = build_model(MLP, seed)
    rules = baseline_rules(census_entries(model), "adamini_v2")
    opt = SharedMomentAdam(model.blocks, rules, Hyper(lr=1e-2))
    for t in range(20):
        _, g = model.loss_and_grads(X[:16], Y[:16])
        opt.step(g)
    dump = opt.dump_state()
    other = SharedMomentAdam(build_model(MLP, seed).blocks, rules, Hyper(lr=1e-2))
    other.load_state(dump)
    assert other.t == opt.t
    for name in opt.state:
        np.testing.assert_array_equal(other.state[name].m, opt.state[name].m)
        np.testing.assert_array_equal(other.state[name].v, opt.state[name].v)
    assert other.dump_state() == dump
