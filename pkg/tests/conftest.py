import numpy as np
import pytest

from cals.nn import backward, finite_difference_gradients, forward, init_network


def max_relative_error(analytic, numeric, floor=1e-8):
    """Largest |a - n| / max(|a|, |n|) over parameters whose gradient exceeds ``floor``."""
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, n in ((aw, nw), (ab, nb)):
            scale = np.maximum(np.abs(a), np.abs(n))
            mask = scale > floor
            if np.any(mask):
                worst = max(worst, float(np.max(np.abs(a - n)[mask] / scale[mask])))
    return worst


def gradient_check(loss_fn, input_dim, num_classes, batch, seed, hidden=(8,)):
    """Backprop of ``loss_fn(logits) -> (value, dlogits)`` vs central differences on a random net."""
    rng = np.random.default_rng(seed)
    net = init_network(input_dim, hidden, num_classes, seed=seed)
    for layer in net.layers:
        layer.bias += rng.normal(0, 0.1, layer.bias.shape)
    x = rng.standard_normal((batch, input_dim))
    logits, cache = forward(net, x)
    _, dlogits = loss_fn(logits)
    analytic = backward(net, cache, dlogits)
    numeric = finite_difference_gradients(net, lambda n: loss_fn(forward(n, x)[0])[0], 1e-6)
    return max_relative_error(analytic, numeric)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _near_boundary(logits, labels, case, tol=1e-4):
    from cals.nn import softmax
    from cals.losses import logit_distances

    top2 = np.sort(logits, axis=1)[:, -2:]
    if np.any(top2[:, 1] - top2[:, 0] < tol):
        return True  # argmax tie
    d = logit_distances(logits)
    if case.get("margin") is not None and np.any(np.abs(d - case["margin"]) < tol):
        return True  # ReLU kink of MbLS or z = 0 of the CALS penalty
    if case.get("lambdas") is not None:
        z = d / case["margin"] - 1.0
        if np.any(np.abs(case["lambdas"] + case["rhos"] * z) < tol):
            return True  # PHR branch switch
    if case.get("flsd"):
        p = softmax(logits)[np.arange(len(labels)), labels]
        if np.any(np.abs(p - 0.2) < tol):
            return True
    return False


def loss_instances(make_case, count, seed, input_dim=5, hidden=(8,)):
    """Yield ``count`` random (loss_fn, net seed, dims) instances away from kinks and ties."""
    from cals.nn import forward, init_network

    rng = np.random.default_rng(seed)
    produced = 0
    while produced < count:
        k = int(rng.integers(2, 6))
        batch = int(rng.integers(1, 9))
        net_seed = int(rng.integers(1 << 30))
        labels = rng.integers(0, k, batch)
        case = make_case(rng, k)
        # reproduce the logits gradient_check will see
        g = np.random.default_rng(net_seed)
        net = init_network(input_dim, hidden, k, seed=net_seed)
        for layer in net.layers:
            layer.bias += g.normal(0, 0.1, layer.bias.shape)
        logits = forward(net, g.standard_normal((batch, input_dim)))[0]
        if _near_boundary(logits, labels, case):
            continue
        produced += 1
        yield case, labels, k, batch, net_seed


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """``report(number, passed, detail)`` records one acceptance line for the terminal summary."""

    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
