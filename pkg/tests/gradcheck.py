"""Central-difference gradient checking shared by the test modules."""

import numpy as np

from wanbench.neural import Tape


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def numeric_grad(f, t, h=1e-6, index=None):
    """d f() / d t.data at every (or the selected flat) index."""
    flat = t.data.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = np.zeros(len(idx))
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        up = f().item()
        flat[i] = old - h
        down = f().item()
        flat[i] = old
        out[k] = (up - down) / (2 * h)
    return out


def analytic_grad(f, tensors):
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        out = f()
    tape.backward(out)
    return [t.grad.copy() for t in tensors]
