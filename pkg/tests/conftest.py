import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gazesum import ndops as nd

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def numeric_grad(f, t: nd.Tensor, index, eps=1e-5) -> float:
    old = t.data[index]
    t.data[index] = old + eps
    hi = f()
    t.data[index] = old - eps
    lo = f()
    t.data[index] = old
    return (hi - lo) / (2 * eps)


def grad_check(loss_fn, params, probes=20, seed=0, eps=1e-5):
    """Largest relative error between tape gradients and central differences.

    ``loss_fn`` builds a scalar Tensor from ``params``; probes are random
    coordinates spread over every parameter.
    """
    with nd.Tape() as tape:
        loss = loss_fn()
    for p in params:
        p.grad = None
    nd.backward(tape, loss, params)
    grads = [p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    value = lambda: loss_fn().item()
    worst = 0.0
    for k in range(probes):
        i = k % len(params) if k < len(params) else int(rng.integers(len(params)))
        p = params[i]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        num = numeric_grad(value, p, idx, eps)
        ana = grads[i][idx]
        denom = max(abs(num), abs(ana), 1e-6)
        worst = max(worst, abs(num - ana) / denom)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
