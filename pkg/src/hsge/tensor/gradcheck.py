"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, default_dtype


class GradCheckError(Exception):
    pass


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(fn, inputs, eps: float = 1e-5, seed: int = 0, floor: float = 1e-6,
               params=()) -> float:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    ``fn`` takes Tensors (one per array in ``inputs``) and returns a Tensor;
    a non-scalar output is contracted with a fixed random weighting.  Extra
    ``params`` (Parameters already inside ``fn``) are checked as well.
    Runs in 64-bit.  Returns the max relative error over all checked values.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    params = list(params)
    for p in params:
        p.data = p.data.astype(np.float64)
    weight = None

    def scalar(vals, track):
        nonlocal weight
        ts = [Tensor(v, requires_grad=track) for v in vals]
        out = fn(*ts)
        if weight is None:
            weight = rng.normal(size=out.shape) if out.size > 1 else np.ones(out.shape)
        total = (out * weight).sum()
        if not np.isfinite(total.data):
            raise GradCheckError("non-finite value while evaluating the function")
        return total, ts

    with default_dtype(np.float64):
        for p in params:
            p.grad = None
        total, ts = scalar(arrays, True)
        total.backward()
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]
        analytic += [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

        def probe(buf, i, vals):
            old = buf.flat[i]
            buf.flat[i] = old + eps
            fp = scalar(vals, False)[0].item()
            buf.flat[i] = old - eps
            fm = scalar(vals, False)[0].item()
            buf.flat[i] = old
            return (fp - fm) / (2 * eps)

        numeric = []
        for a in arrays:
            n = np.zeros_like(a)
            for i in range(a.size):
                n.flat[i] = probe(a, i, arrays)
            numeric.append(n)
        for p in params:
            n = np.zeros_like(p.data)
            for i in range(p.data.size):
                n.flat[i] = probe(p.data, i, arrays)
            numeric.append(n)
    errs = [relative_error(a, n, floor) for a, n in zip(analytic, numeric)]
    return max(errs) if errs else 0.0
