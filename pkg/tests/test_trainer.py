import numpy as np
import pytest

from cals.alm import MultiplierState
from cals.config import build_dataset, parse_config, preset_path
from cals.data import Dataset, SplitDataset, gaussian_mixture, split
from cals.losses import LossSelection, total_loss
from cals.metrics import accuracy
from cals.nn import Layer, Network, forward, init_network
from cals.trainer import (
    TrainConfig,
    TrainingFailure,
    hr_multiplier_update,
    train,
    train_epoch,
    validation_multiplier_update,
    validation_rho_update,
)


def identity_net(k):
    return Network([Layer(np.eye(k), np.zeros(k), "identity")])


def cfg(**kw):
    return TrainConfig(**kw)


@pytest.fixture(scope="module")
def small_data():
    d = gaussian_mixture(3, [40, 40, 40], 4, 3.0, 1.0, seed=0)
    return split(d, (0.6, 0.2, 0.2), seed=1)


def test_defaults():
    c = TrainConfig()
    assert c.loss.kind.value == "cals_alm" and c.margin_m == 10.0
    assert (c.initial_lambda, c.initial_rho, c.gamma, c.improvement_tau, c.rho_update_period) == (1e-6, 1.0, 1.2, 0.9, 10)
    assert (c.safeguard_lo, c.safeguard_hi, c.hr_mu, c.hr_tau) == (1e-6, 1e6, 1.1, 1.1)


def test_config_validation():
    for bad in ({"gamma": 1.0}, {"improvement_tau": 0.0}, {"hr_mu": 1.0}, {"momentum": 1.0},
                {"rho_update_period": 0}, {"safeguard_lo": 1.0, "safeguard_hi": 0.5}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_validation_multiplier_update_examples():
    c = cfg(loss=LossSelection(margin_m=1.0))
    state = MultiplierState(np.ones(2), np.ones(2))
    # logits [1, 0] -> z = [-1, 0]; logits [2, 0] -> z = [-1, 1]
    val = Dataset(np.array([[1.0, 0.0], [2.0, 0.0]]), [0, 0], 2)
    new = validation_multiplier_update(identity_net(2), val, state, c)
    assert new.lambdas.tolist() == [1e-6, 1.5]

    constant = Dataset(np.zeros((3, 2)), [0, 1, 0], 2)
    tiny = MultiplierState(np.full(2, 1e-6), np.ones(2))
    assert validation_multiplier_update(identity_net(2), constant, tiny, cfg()).lambdas.tolist() == [1e-6, 1e-6]

    one = Dataset(np.array([[0.0, 3.0]]), [1], 2)
    new = validation_multiplier_update(identity_net(2), one, state, c)
    assert new.lambdas.tolist() == [3.0, 1e-6]  # z = [2, -1]

    with pytest.raises(ValueError):
        validation_multiplier_update(identity_net(2), Dataset(np.zeros((0, 2)), [], 2), state, c)


def test_validation_rho_update_examples():
    c = cfg(rho_update_period=10)
    state = MultiplierState(np.ones(1), np.ones(1))
    first = validation_rho_update(state, [0.5], 10, c)
    assert first.rhos.tolist() == [1.0] and first.prev_constraints.tolist() == [0.5]
    # off-period epochs do nothing, not even record history
    skipped = validation_rho_update(first, [5.0], 15, c)
    assert skipped.rhos.tolist() == [1.0] and skipped.prev_constraints.tolist() == [0.5]
    grown = validation_rho_update(first, [0.46], 20, c)
    assert grown.rhos[0] == pytest.approx(1.2)
    kept = validation_rho_update(first, [0.44], 20, c)
    assert kept.rhos.tolist() == [1.0]
    neg = MultiplierState(np.ones(1), np.ones(1), prev_constraints=[-0.2])
    assert validation_rho_update(neg, [-0.05], 20, c).rhos.tolist() == [1.0]
    assert validation_rho_update(state, [0.5], 0, c).prev_constraints is None


def test_hr_update_examples():
    c = cfg()
    state = MultiplierState(np.full(3, 2.0), np.ones(3))
    new = hr_multiplier_update(state, [1.0, 2.0, 1.0], [1.0, 1.0, 2.0], c)
    assert new.lambdas == pytest.approx([2.0, 2.2, 2.0 / 1.1])
    low = MultiplierState(np.full(1, 1e-6), np.ones(1))
    assert hr_multiplier_update(low, [1.0], [2.0], c).lambdas.tolist() == [1e-6]


def test_zero_step_size_leaves_parameters(small_data):
    c = cfg(loss=LossSelection("ce"), step_size=0.0)
    net = init_network(4, (5,), 3, seed=0)
    before = [l.weight.copy() for l in net.layers]
    _, loss = train_epoch(net, small_data.train, c, epoch=1)
    assert np.isfinite(loss) and loss > 0
    assert all(np.array_equal(b, l.weight) for b, l in zip(before, net.layers))


def test_train_epoch_checks_state(small_data):
    net = init_network(4, (5,), 3, seed=0)
    with pytest.raises(ValueError):
        train_epoch(net, small_data.train, cfg())
    with pytest.raises(ValueError):
        train_epoch(net, small_data.train, cfg(loss=LossSelection("ce")), MultiplierState(np.ones(3), np.ones(3)))


def test_one_epoch_reduces_loss_on_separable_data():
    d = gaussian_mixture(2, [50, 50], 2, 4.0, 0.5, seed=2)
    data = SplitDataset(d, d.subset([0, 99]), d.subset([1, 98]))
    c = cfg(loss=LossSelection("ce"), step_size=0.05, batch_size=10)
    net = init_network(2, (8,), 2, seed=1)
    init_loss = total_loss(c.loss, forward(net, d.features)[0], d.labels)[0]
    train_epoch(net, data.train, c, epoch=1)
    after = total_loss(c.loss, forward(net, d.features)[0], d.labels)[0]
    assert after < init_loss


def test_zero_epochs_returns_initial_network(small_data):
    res = train(cfg(epochs=0), small_data, hidden_sizes=(5,))
    init = init_network(4, (5,), 3, seed=0)
    assert res.history == []
    assert all(np.array_equal(a.weight, b.weight) for a, b in zip(res.network.layers, init.layers))


def test_run_invariants(small_data):
    c = cfg(epochs=25, rho_update_period=2, loss=LossSelection(margin_m=2.0))
    res = train(c, small_data, hidden_sizes=(8,))
    assert [r.epoch for r in res.history] == list(range(1, 26))
    for prev, rec in zip(res.history, res.history[1:]):
        assert np.all(rec.per_class_lambda >= c.safeguard_lo) and np.all(rec.per_class_lambda <= c.safeguard_hi)
        assert rec.mean_lambda == pytest.approx(rec.per_class_lambda.mean())
        assert rec.per_class_mean_constraint.shape == (3,)
    assert np.all(res.state.rhos >= 1.0)
    assert res.test.num_samples == len(small_data.test)


def test_hr_run_moves_multipliers(small_data):
    c = cfg(epochs=10, loss=LossSelection("cals_hr", margin_m=1.0), initial_lambda=0.1)
    res = train(c, small_data, hidden_sizes=(8,))
    lam = np.array([r.per_class_lambda for r in res.history])
    assert np.any(lam != 0.1)
    assert np.all(res.state.rhos == 1.0)


def test_baseline_records(small_data):
    res = train(cfg(epochs=2, loss=LossSelection("fl")), small_data, hidden_sizes=(8,))
    assert res.state is None
    assert res.history[-1].mean_lambda == 0.0 and res.history[-1].mean_rho == 0.0


def test_cals_requires_validation(small_data):
    data = SplitDataset(small_data.train, small_data.validation.subset([]), small_data.test)
    with pytest.raises(ValueError):
        train(cfg(epochs=1), data)
    res = train(cfg(epochs=1, loss=LossSelection("ce")), data, hidden_sizes=(4,))
    assert np.isnan(res.history[0].val_accuracy) and res.val is None


def test_determinism(small_data):
    c = cfg(epochs=5)
    a, b = train(c, small_data, (8,)), train(c, small_data, (8,))
    for la, lb in zip(a.network.layers, b.network.layers):
        assert np.array_equal(la.weight, lb.weight) and np.array_equal(la.bias, lb.bias)
    assert [r.train_loss for r in a.history] == [r.train_loss for r in b.history]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_history(small_data):
    # huge inputs make the first update push the weights far enough for the logits to overflow
    scale = lambda d: Dataset(d.features * 1e150, d.labels, d.num_classes)
    data = SplitDataset(scale(small_data.train), scale(small_data.validation), scale(small_data.test))
    c = cfg(epochs=5, loss=LossSelection("ce"), step_size=1.0, batch_size=8)
    with pytest.raises(TrainingFailure) as info:
        train(c, data, (8,))
    assert info.value.epoch >= 1 and info.value.batch is not None
    assert len(info.value.history) == info.value.epoch - 1


def test_translation_robustness_on_one_batch(small_data):
    c = cfg(loss=LossSelection(margin_m=1.0))
    state = MultiplierState(np.linspace(0.1, 2, 3), np.linspace(0.5, 3, 3))
    net = init_network(4, (8,), 3, seed=4)
    logits = forward(net, small_data.train.features[:16])[0]
    y = small_data.train.labels[:16]
    v1, g1 = total_loss(c.loss, logits, y, state)
    v2, g2 = total_loss(c.loss, logits + 9.5, y, state)
    assert abs(v1 - v2) <= 1e-12 and np.max(np.abs(g1 - g2)) <= 1e-12


def test_pinned_multipliers_track_cross_entropy():
    config = parse_config(preset_path("longtail"))
    data = build_dataset(config.dataset)
    base = config.train_config()
    pinned = TrainConfig(**{**base.__dict__, "safeguard_hi": base.safeguard_lo})
    ce = TrainConfig(**{**base.__dict__, "loss": LossSelection("ce")})
    acc_pinned = accuracy(train(pinned, data, config.model.hidden).test)
    acc_ce = accuracy(train(ce, data, config.model.hidden).test)
    assert abs(acc_pinned - acc_ce) <= 0.01
