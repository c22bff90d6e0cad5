"""Central finite differences, written independently of the analytic backward passes."""

import numpy as np

EPS = 1e-6
# Entries whose analytic and numeric magnitudes are both below this are
# compared absolutely: with eps=1e-6 the difference quotient carries
# ~1e-10 of round-off, so relative error means nothing for them.
FLOOR = 1e-6
# Through the full model the loss is O(1) and the quotient's round-off grows
# to ~2e-10, so entries near 1e-6 need a larger floor: with 1e-5, entries
# below it must agree to 1e-9 absolute at a 1e-4 relative tolerance.
COMPOSITE_FLOOR = 1e-5


def numerical_grad(f, x, eps=EPS):
    """d f() / d x for scalar-valued ``f`` that reads ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def max_rel_error(analytic, numeric, floor=FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
