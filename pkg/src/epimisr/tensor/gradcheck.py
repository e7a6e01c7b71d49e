"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .core import Tensor, backward, no_grad


def finite_diff_check(fn, params, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn(params) re-evaluates the scalar loss from the current parameter values;
    params is a dict or list of f64 leaf tensors perturbed one coordinate
    at a time. Error per coordinate is |fd - grad| / max(1, |fd|, |grad|).
    """
    if isinstance(params, dict):
        plist = [params[k] for k in sorted(params)]
    else:
        plist = list(params)
    for p in plist:
        if p.dtype != np.float64:
            raise ConfigError("finite_diff_check requires f64 parameters")

    for p in plist:
        p.zero_grad()
    loss = fn(params)
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in plist]

    worst = 0.0
    with no_grad():
        for p, g in zip(plist, analytic):
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = float(fn(params).data)
                flat[i] = orig - h
                f_minus = float(fn(params).data)
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                err = abs(fd - gflat[i]) / max(1.0, abs(fd), abs(gflat[i]))
                if err > worst:
                    worst = err
    return worst
