"""Shared test helpers: finite-difference gradient checking and tiny fixtures."""

import numpy as np
import pytest

from bgfg.autodiff import Tensor


def numeric_gradient(fn, arrays, index, eps=1e-5):
    """Central finite differences of a scalar-valued fn at arrays[index]."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    flat = base[index].reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = float(fn(*base))
        flat[i] = keep - eps
        lo = float(fn(*base))
        flat[i] = keep
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(base[index].shape)


def relative_error(analytic, numeric):
    """Max elementwise |a - n| / max(1, |a|, |n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(build_loss, arrays, wrt=None, eps=1e-5, tol=1e-4):
    """Assert analytic gradients of build_loss match finite differences.

    build_loss receives one Tensor per input array and returns a scalar
    Tensor; wrt selects which inputs to differentiate (default: all).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    if wrt is None:
        wrt = range(len(arrays))
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    loss.backward()

    def scalar(*arrs):
        fresh = [Tensor(a.copy()) for a in arrs]
        return build_loss(*fresh).item()

    worst = 0.0
    for index in wrt:
        assert tensors[index].grad is not None, f"input {index} received no gradient"
        numeric = numeric_gradient(scalar, arrays, index, eps=eps)
        err = relative_error(tensors[index].grad, numeric)
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch on input {index}: rel err {err:.3e}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
