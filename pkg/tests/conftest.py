import os

import numpy as np
import pytest

from kanbench.digits import find_idx_quartet, write_digits_corpus


def central_diff(f, arr, i, h=1e-5):
    flat = arr.reshape(-1)
    old = flat[i]
    flat[i] = old + h
    fp = f()
    flat[i] = old - h
    fm = f()
    flat[i] = old
    return (fp - fm) / (2 * h)


def gradcheck(f, arrays, grads, h=1e-5, rtol=1e-4, floor=1e-6, stride=1):
    """Compare analytic grads to central differences; returns the worst
    relative error (with an absolute floor so ~zero gradients compare sanely)."""
    worst = 0.0
    for arr, g in zip(arrays, grads):
        flat_g = g.reshape(-1)
        for i in range(0, arr.size, stride):
            fd = central_diff(f, arr, i, h)
            err = abs(fd - flat_g[i]) / max(abs(fd), abs(flat_g[i]), floor)
            worst = max(worst, err)
    assert worst < rtol, f"worst gradient error {worst:.3e} >= {rtol}"
    return worst


@pytest.fixture(scope="session")
def digits_dir(tmp_path_factory):
    """Small synthetic digit corpus shared across data/CLI tests."""
    root = tmp_path_factory.mktemp("digits_small")
    write_digits_corpus(str(root), n_train=600, n_test=200, seed=11)
    return str(root)


@pytest.fixture(scope="session")
def vision_dir(tmp_path_factory):
    """Desk-scale vision corpus for the acceptance criteria: real MNIST when
    KANBENCH_DATA_DIR provides it, otherwise the synthetic digit corpus."""
    root = os.environ.get("KANBENCH_DATA_DIR")
    if root and find_idx_quartet(root):
        return root
    root = tmp_path_factory.mktemp("digits_vision")
    write_digits_corpus(str(root), n_train=12000, n_test=2000, seed=77)
    return str(root)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
