"""Adam against hand-worked update arithmetic."""

import numpy as np
import pytest

from ridepool.optim import Adam


def test_two_steps_match_hand_computation():
    params = {"w": np.array([1.0])}
    opt = Adam(params, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    g = {"w": np.array([2.0])}

    opt.step(params, g)
    # t=1: m = 0.2, v = 0.004; mhat = 2.0, vhat = 4.0
    # w = 1 - 0.1 * 2 / (2 + 1e-8)
    expect1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8)
    assert params["w"][0] == pytest.approx(expect1, rel=1e-14)

    opt.step(params, g)
    m = 0.9 * 0.2 + 0.1 * 2.0
    v = 0.999 * 0.004 + 0.001 * 4.0
    mh = m / (1 - 0.9 ** 2)
    vh = v / (1 - 0.999 ** 2)
    expect2 = expect1 - 0.1 * mh / (np.sqrt(vh) + 1e-8)
    assert params["w"][0] == pytest.approx(expect2, rel=1e-14)


def test_state_dict_round_trip():
    params = {"a": np.ones(3), "b": np.zeros((2, 2))}
    opt = Adam(params, lr=0.05)
    rng = np.random.default_rng(0)
    for _ in range(5):
        opt.step(params, {k: rng.normal(size=v.shape) for k, v in params.items()})
    state = opt.state_dict()

    params2 = {k: v.copy() for k, v in params.items()}
    opt2 = Adam.from_state_dict(params2, state)
    g = {k: np.full(v.shape, 0.3) for k, v in params.items()}
    opt.step(params, g)
    opt2.step(params2, g)
    for k in params:
        assert np.array_equal(params[k], params2[k])
    assert opt2.t == opt.t


def test_updates_are_in_place():
    params = {"w": np.zeros(4)}
    ref = params["w"]
    opt = Adam(params, lr=1e-2)
    opt.step(params, {"w": np.ones(4)})
    assert ref is params["w"]
    assert not np.array_equal(ref, np.zeros(4))
