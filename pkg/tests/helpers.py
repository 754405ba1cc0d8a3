"""Independent finite-difference oracles shared by the test modules."""
import numpy as np

from dcrnn import net


def weighted_output_loss(p, x, w, state=None):
    out, _ = net.forward(p, x, state)
    return float(np.sum(w * out))


def fd_param_grads(p, x, w, step=1e-6, state=None):
    """Central differences of ``sum(w * outputs)`` for every parameter entry."""
    grads = {}
    for name, arr in p.tensors().items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            base = arr[idx]
            arr[idx] = base + step
            up = weighted_output_loss(p, x, w, state)
            arr[idx] = base - step
            dn = weighted_output_loss(p, x, w, state)
            arr[idx] = base
            g[idx] = (up - dn) / (2 * step)
        grads[name] = g
    return grads


def grads_close(analytic, numeric, rel=1e-6, floor=1e-8):
    """Entrywise ``|a - f| <= rel * |f| + floor``; returns (ok, worst excess ratio)."""
    worst = 0.0
    for name, f in numeric.items():
        a = analytic[name]
        err = np.abs(a - f)
        tol = rel * np.abs(f) + floor
        worst = max(worst, float(np.max(err / tol, initial=0.0)))
    return worst <= 1.0, worst


def random_instance(cell, rng, n_max=4, k_max=3, T_max=8, d_max=3):
    n = int(rng.integers(1, n_max + 1))
    k = int(rng.integers(0, k_max + 1)) if cell == "dcrnn" else 0
    T = int(rng.integers(1, T_max + 1))
    d = int(rng.integers(1, d_max + 1))
    o = int(rng.integers(1, 3))
    p = net.init_params(cell, n, d, o, k, seed=rng)
    # move away from the symmetric initial point so every parameter matters
    for arr in p.tensors().values():
        arr += rng.normal(0, 0.3, size=arr.shape)
    N = int(rng.integers(1, 3))
    x = rng.normal(size=(N, T, d))
    w = rng.normal(size=(N, T, o))
    return p, x, w
