"""Central finite differences over every parameter of a list of nets."""
import numpy as np


def numeric_grads(loss_fn, nets, h=1e-6):
    out = []
    for net in nets:
        for p in net.params:
            g = np.zeros_like(p)
            flat, gflat = p.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = loss_fn()
                flat[i] = old - h
                down = loss_fn()
                flat[i] = old
                gflat[i] = (up - down) / (2 * h)
            out.append(g)
    return out


def max_relative_error(analytic, numeric):
    """Largest absolute mismatch relative to the largest gradient entry.

    Scaling by the whole vector keeps near-zero entries, where finite
    differences carry only rounding noise, from dominating.
    """
    a = np.concatenate([x.ravel() for x in analytic])
    n = np.concatenate([x.ravel() for x in numeric])
    scale = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
    return float(np.abs(a - n).max() / scale)
