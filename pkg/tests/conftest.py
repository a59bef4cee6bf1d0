import numpy as np
import pytest

from sagelab import autodiff as ad


def finite_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f at x (x is perturbed in place and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


@pytest.fixture(scope="session")
def fd():
    return finite_difference


@pytest.fixture(scope="session")
def arith_model():
    """The arithmetic-vote model, trained once per session (about 45 s)."""
    from sagelab.synthetic import train_arith

    return train_arith()


@pytest.fixture(scope="session")
def needle_model():
    from sagelab.synthetic import needle_config, train_needle

    return train_needle(needle_config(), steps=300)


def grad_of(fn, *arrays):
    """Gradients of fn(*tensors) w.r.t. each array via the engine."""
    ts = [ad.Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*ts)
    out.backward()
    return [t.grad for t in ts]
