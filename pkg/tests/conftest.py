import numpy as np
import pytest

from prbforecast import tensor as T


@pytest.fixture(autouse=True)
def clean_tape():
    T.tape().clear()
    T.seed_all(12345)
    yield
    T.tape().clear()


def central_diff(f, tensors, h=1e-3):
    """Central finite differences of scalar f() w.r.t. each tensor's data.

    Perturbs in place; tensors should hold float64 data so the oracle runs
    at 64-bit precision.
    """
    grads = []
    for p in tensors:
        g = np.zeros_like(p.data, dtype=np.float64)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with T.no_grad():
                fp = f()
            flat[i] = orig - h
            with T.no_grad():
                fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-3, atol=1e-5):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


def f64_tensor(rng, shape, requires_grad=True, scale=1.0):
    return T.Tensor(rng.standard_normal(shape) * scale,
                    requires_grad=requires_grad, dtype=np.float64)
