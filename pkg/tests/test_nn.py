import math

import numpy as np
import pytest
from gradcheck import check_param_grads, sample_entries

from sglab.analytic import two_mode
from sglab.nn import (
    CFM,
    DSM,
    EPS,
    RF_LOSS,
    VELOCITY,
    AdamState,
    ScoreNet,
    TrainConfig,
    TrainingDiverged,
    ValueGraph,
    adam_update,
    cfm_target,
    draw,
    dsm_loss_from_draws,
    flow_loss_from_draws,
    load_checkpoint,
    save_checkpoint,
    time_embedding,
    train,
)
from sglab.nn.checkpoint import CheckpointError
from sglab.nn.losses import vp_alpha_sigma_array
from sglab.nn.train import read_loss_trace, write_loss_trace
from sglab.schedule import NoiseSchedule, vp_alpha_sigma

VP = NoiseSchedule()
RF = NoiseSchedule(kind="rf")


def _op_check(build, inputs, h=1e-5):
    """Graph gradients of sum(build(...)**2) against central differences.

    Inputs are O(1), so entries are compared relative to at least 1e-3.
    """
    def value():
        g = ValueGraph()
        nodes = [g.param(f"p{i}", v) for i, v in enumerate(inputs)]
        return g, g.sum(g.square(build(g, *nodes)))

    g, loss = value()
    grads = g.backward(loss)
    params = {f"p{i}": v for i, v in enumerate(inputs)}
    entries = [(k, i) for k, v in params.items() for i in range(v.size)]
    return check_param_grads(params, lambda: float(value()[1].value), grads, entries, h, floor=1e-3)


@pytest.mark.parametrize("name,build,shapes", [
    ("add_broadcast", lambda g, a, b: g.add(a, b), [(3, 4), (4,)]),
    ("sub_broadcast", lambda g, a, b: g.sub(a, b), [(3, 1), (3, 4)]),
    ("mul", lambda g, a, b: g.mul(a, b), [(3, 4), (3, 4)]),
    ("matmul", lambda g, a, b: g.matmul(a, b), [(3, 5), (5, 2)]),
    ("silu", lambda g, a: g.silu(a), [(4, 3)]),
    ("square", lambda g, a: g.square(a), [(6,)]),
    ("mean", lambda g, a: g.mul(g.mean(a), a), [(2, 3)]),
    ("rows_repeated", lambda g, a: g.rows(a, [0, 2, 2, 1, 0]), [(3, 4)]),
    ("operators", lambda g, a, b: (a @ b) * (a @ b) - a @ b + 1.0, [(2, 3), (3, 2)]),
])
def test_op_gradients(name, build, shapes):
    rng = np.random.default_rng(sum(map(ord, name)))
    inputs = [rng.normal(size=s) for s in shapes]
    assert _op_check(build, inputs) < 1e-6


def test_backward_needs_scalar_and_same_graph():
    g = ValueGraph()
    a = g.param("a", np.ones(3))
    with pytest.raises(ValueError):
        g.backward(a)
    other = ValueGraph()
    with pytest.raises(ValueError):
        other.add(a, 1.0)


def test_unused_param_gets_zero_gradient():
    g = ValueGraph()
    a = g.param("a", np.ones(2))
    g.param("b", np.ones(3))
    grads = g.backward(g.sum(a))
    assert np.array_equal(grads["b"], np.zeros(3))
    assert np.array_equal(grads["a"], np.ones(2))


def test_time_embedding_shape_and_values():
    e = time_embedding(np.array([0.0, 0.5]), 16)
    assert e.shape == (2, 16)
    assert np.allclose(e[0, :8], 0.0) and np.allclose(e[0, 8:], 1.0)
    assert e[1, 0] == pytest.approx(math.sin(0.5))


def test_eps_parameterization_scales_raw_output():
    net = ScoreNet(1, hidden=(8,), parameterization=EPS, schedule=VP).init(np.random.default_rng(1))
    x = np.linspace(-1, 1, 5)[:, None]
    t = 0.3
    _, sigma = vp_alpha_sigma(VP, t)
    assert np.allclose(net(x, t), -net.raw(x, t) / sigma, rtol=1e-12)


def test_condition_rows_and_errors():
    net = ScoreNet(1, hidden=(4,), n_classes=2)
    assert np.array_equal(net.condition_rows(None, 3), [0, 0, 0])
    assert np.array_equal(net.condition_rows(1, 2), [2, 2])
    assert np.array_equal(net.condition_rows(np.array([-1, 0, 1]), 3), [0, 1, 2])
    with pytest.raises(ValueError):
        net.condition_rows(2, 1)


def test_graph_forward_matches_numpy_forward():
    net = ScoreNet(2, hidden=(16, 16), n_classes=3, parameterization=VELOCITY).init(np.random.default_rng(2))
    net.params["cond"] = np.random.default_rng(3).normal(size=net.params["cond"].shape)
    x = np.random.default_rng(4).normal(size=(7, 2))
    t = np.linspace(0.1, 0.9, 7)
    c = np.array([-1, 0, 1, 2, 0, -1, 1])
    node, scale = net.build(ValueGraph(), x, t, c)
    assert scale is None
    assert np.allclose(node.value, net.forward(x, t, c), rtol=1e-13)


def _small_net(param, sched, classes=2, seed=0):
    net = ScoreNet(1, hidden=(24, 24), n_classes=classes, parameterization=param, schedule=sched).init(np.random.default_rng(seed))
    net.params["cond"] = np.random.default_rng(seed + 1).normal(scale=0.3, size=net.params["cond"].shape)
    return net


@pytest.mark.parametrize("loss", ["dsm", "rf", "cfm_vp"])
def test_full_loss_gradients(loss):
    rng = np.random.default_rng(5)
    x0, y = two_mode().sample(64, rng, return_labels=True)
    if loss == "dsm":
        net = _small_net(EPS, VP)
        d = draw(x0, y, VP, rng, 0.3, DSM)
        fn = lambda: dsm_loss_from_draws(net, x0, d, VP)  # noqa: E731
    elif loss == "rf":
        net = _small_net(VELOCITY, RF)
        d = draw(x0, y, RF, rng, 0.3, RF_LOSS)
        fn = lambda: flow_loss_from_draws(net, x0, d, RF, RF_LOSS)  # noqa: E731
    else:
        net = _small_net(VELOCITY, VP)
        d = draw(x0, y, VP, rng, 0.3, CFM)
        fn = lambda: flow_loss_from_draws(net, x0, d, VP, CFM)  # noqa: E731
    _, graph, node = fn()
    grads = graph.backward(node)
    entries = sample_entries(net.params, 200, rng)
    assert check_param_grads(net.params, lambda: fn()[0], grads, entries) <= 1e-4


def test_cfm_target_is_path_derivative():
    rng = np.random.default_rng(6)
    x0 = rng.normal(size=(10, 1))
    eps = rng.normal(size=(10, 1))
    t = rng.uniform(0.05, 0.95, 10)
    # rectified flow: eps - x0 exactly
    z = (1 - t)[:, None] * x0 + t[:, None] * eps
    assert np.allclose(cfm_target(z, eps, t, RF), eps - x0, rtol=1e-12, atol=1e-12)
    # VP: d/dt (alpha x0 + sigma eps) by central differences
    h = 1e-6
    a, s = vp_alpha_sigma_array(VP, t)
    ap, sp = vp_alpha_sigma_array(VP, t + h)
    am, sm = vp_alpha_sigma_array(VP, t - h)
    deriv = ((ap - am) / (2 * h))[:, None] * x0 + ((sp - sm) / (2 * h))[:, None] * eps
    z = a[:, None] * x0 + s[:, None] * eps
    assert np.allclose(cfm_target(z, eps, t, VP), deriv, rtol=1e-6, atol=1e-6)


def test_condition_drop_rate():
    rng = np.random.default_rng(7)
    n, p = 100_000, 0.1
    d = draw(np.zeros((n, 1)), np.ones(n, dtype=int), VP, rng, p)
    frac = np.mean(d.cond == -1)
    assert abs(frac - p) < 3 * math.sqrt(p * (1 - p) / n)
    assert np.all(d.t >= VP.t_eps) and np.all(d.t <= 1)


def test_draw_rejects_empty_batch():
    with pytest.raises(ValueError):
        draw(np.zeros((0, 1)), None, VP, np.random.default_rng(0))


def test_adam_matches_hand_computation():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, -0.25])}
    state = AdamState()
    adam_update(p, g, state, lr=0.1)
    # first step: m_hat = g, v_hat = g^2, so the step is lr * sign(g) (up to eps)
    assert np.allclose(p["w"], [0.9, -1.9], atol=1e-7)
    adam_update(p, g, state, lr=0.1)
    assert state.step == 2
    with pytest.raises(ValueError):
        adam_update(p, {"w": np.zeros(3)}, state)
    with pytest.raises(ValueError):
        adam_update(p, {"v": np.zeros(2)}, state)


def test_adam_minimises_quadratic():
    target = np.array([3.0, -1.0, 0.5])
    p = {"w": np.zeros(3)}
    state = AdamState()
    for _ in range(3000):
        adam_update(p, {"w": 2 * (p["w"] - target)}, state, lr=0.01)
    assert np.allclose(p["w"], target, atol=1e-3)


def test_training_is_deterministic_and_lowers_loss():
    cfg = TrainConfig(loss=DSM, steps=300, batch_size=128, lr=3e-3, log_every=50, seed=11)
    runs = []
    for _ in range(2):
        net = ScoreNet(1, hidden=(32, 32), n_classes=2, parameterization=EPS, schedule=VP).init(np.random.default_rng(0))
        runs.append(train(net, cfg, two_mode(), VP))
    (a, ta), (b, tb) = runs
    assert ta == tb
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert ta[-1][1] < ta[0][1]


def test_training_divergence_names_step():
    net = ScoreNet(1, hidden=(4,), parameterization=VELOCITY).init(np.random.default_rng(0))
    data = np.array([[np.nan], [1.0]])
    with pytest.raises(TrainingDiverged, match="step 0"):
        train(net, TrainConfig(loss=RF_LOSS, steps=5), data, RF)


def test_train_rejects_dimension_mismatch():
    net = ScoreNet(2, hidden=(4,), parameterization=VELOCITY)
    with pytest.raises(ValueError):
        train(net, TrainConfig(loss=RF_LOSS, steps=1), two_mode(), RF)


def test_loss_trace_roundtrip(tmp_path):
    trace = [(100, 0.5), (200, 0.25)]
    write_loss_trace(trace, tmp_path / "loss.csv")
    assert read_loss_trace(tmp_path / "loss.csv") == trace
    assert (tmp_path / "loss.csv").read_text().splitlines()[0] == "step,loss"


def test_checkpoint_roundtrip_and_errors(tmp_path):
    net = _small_net(EPS, VP, classes=2, seed=3)
    path = tmp_path / "m.sglab"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.parameterization == EPS and back.n_classes == 2 and back.hidden == (24, 24)
    assert back.schedule == VP
    x = np.linspace(-1, 1, 4)[:, None]
    assert np.array_equal(back(x, 0.4, 1), net(x, 0.4, 1))
    blob = path.read_bytes()
    (tmp_path / "bad.sglab").write_bytes(b"XXXXXX" + blob[6:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.sglab")
    (tmp_path / "cut.sglab").write_bytes(blob[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.sglab")
