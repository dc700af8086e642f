import numpy as np
import pytest

from difftrain.kernels import available_backends


def _random_case(rng, t_len=23, h_dim=9):
    gx = rng.normal(size=(t_len, 3 * h_dim))
    uz, ur, uc = (0.4 * rng.normal(size=(h_dim, h_dim)) for _ in range(3))
    h0 = 0.2 * rng.normal(size=h_dim)
    dh = rng.normal(size=(t_len, h_dim))
    return gx, uz, ur, uc, h0, dh


def test_backends_agree():
    backends = available_backends()
    if "compiled" not in backends:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(5)
    gx, uz, ur, uc, h0, dh = _random_case(rng)
    results = {}
    for name, mod in backends.items():
        h, z, r, c = mod.gru_forward_scan(gx, uz, ur, uc, h0)
        dg = mod.gru_backward_scan(dh, z, r, c, h, h0, uz, ur, uc)
        results[name] = (h, z, r, c, dg)
    for a, b in zip(results["numpy"], results["compiled"]):
        assert np.allclose(a, b, atol=1e-12, rtol=0)


def test_forward_hidden_state_recursion():
    # one scalar unit: every gate quantity reduces to a hand computation
    backends = available_backends()
    gx = np.array([[0.3, -0.2, 0.5]])
    u = np.array([[0.25]])
    h0 = np.array([0.4])
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    z = sig(0.3 + 0.25 * 0.4)
    r = sig(-0.2 + 0.25 * 0.4)
    c = np.tanh(0.5 + 0.25 * (r * 0.4))
    expected = (1 - z) * 0.4 + z * c
    for mod in backends.values():
        h, *_ = mod.gru_forward_scan(gx, u, u, u, h0)
        assert h[0, 0] == pytest.approx(expected, abs=1e-12)


def test_hidden_states_stay_bounded():
    rng = np.random.default_rng(7)
    for mod in available_backends().values():
        gx = 3.0 * rng.normal(size=(50, 12))
        uz, ur, uc = (2.0 * rng.normal(size=(4, 4)) for _ in range(3))
        h, *_ = mod.gru_forward_scan(gx, uz, ur, uc, np.zeros(4))
        assert np.all(np.abs(h) < 1.0)
