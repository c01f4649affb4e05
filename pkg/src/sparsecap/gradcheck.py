"""Central finite-difference gradient checking.

The checker is deliberately independent of the autodiff tape: it re-runs a
user-supplied forward function on perturbed plain arrays and compares the
numerical slopes against analytic gradients. Use float64 inputs; central
differences are unreliable in float32.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def finite_difference_gradient(f, arrays, h: float = 1e-3, coords=None):
    """Central-difference gradients of scalar f(*arrays) w.r.t. each array.

    coords: optional list (one entry per array) of flat index arrays to
    restrict the check to a subset of coordinates; None checks every entry.
    Returns a list of gradient arrays (zeros at unchecked coordinates).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = [np.zeros_like(a) for a in arrays]
    for ai, a in enumerate(arrays):
        flat = a.reshape(-1)
        g = grads[ai].reshape(-1)
        idxs = range(flat.size) if coords is None or coords[ai] is None else coords[ai]
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*arrays))
            flat[i] = orig - h
            fm = float(f(*arrays))
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
    return grads


def max_rel_error(analytic, numeric, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale))


def check_gradients(build, arrays, h: float = 1e-3, subset: int | None = None,
                    rng: np.random.Generator | None = None) -> float:
    """Compare tape gradients of scalar build(*tensors) against central differences.

    build receives one Tensor per input array and must return a scalar Tensor.
    subset limits the finite-difference probe to that many randomly chosen
    coordinates per input (full check when None). Returns the max relative
    error over all checked coordinates.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    if out.size != 1:
        raise ValueError("check_gradients expects a scalar objective")
    out.backward()

    coords = None
    if subset is not None:
        rng = rng or np.random.default_rng(0)
        coords = [rng.choice(a.size, size=min(subset, a.size), replace=False)
                  if a.size > 0 else np.array([], dtype=int) for a in arrays]

    def forward(*raw):
        with_np = [Tensor(r) for r in raw]
        return build(*with_np).item()

    numeric = finite_difference_gradient(forward, arrays, h=h, coords=coords)

    worst = 0.0
    for ai, (t, num) in enumerate(zip(tensors, numeric)):
        a = t.grad.reshape(-1)
        n = num.reshape(-1)
        idxs = coords[ai] if coords is not None else np.arange(a.size)
        if len(idxs) == 0:
            continue
        worst = max(worst, max_rel_error(a[idxs], n[idxs]))
    return worst
