"""Central-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import NumericError

_EPS = np.finfo(np.float64).eps


def finite_diff_check(forward, params, epsilon=1e-5, n_samples=None, rng=None, return_details=False,
                      roundoff_floor=True):
    """Compare analytic gradients of ``forward()`` against central differences.

    ``forward`` takes no arguments and returns a scalar Tensor; it must be
    deterministic. When ``n_samples`` is given, that many coordinates are drawn
    per parameter; otherwise every coordinate is checked.

    Returns the max over checked coordinates of
    ``|analytic - numeric| / max(1e-8, |numeric|)``.

    With ``roundoff_floor`` a coordinate whose discrepancy is below the
    rounding error of the difference quotient itself
    (``16 * eps_machine * max(|f+|, |f-|, 1) / epsilon``) counts as exact.
    Without it, gradients that are structurally zero (for example a
    softmax-invariant score term) report relative errors around 1e-2 that
    only measure rounding noise.
    """
    for p in params:
        p.zero_grad()
    out = forward()
    if not np.isfinite(out.data).all():
        raise NumericError("forward value is not finite")
    ad.backward(out)
    analytic = {id(p): p.grad.copy() for p in params}
    rng = np.random.default_rng(0) if rng is None else rng

    worst = 0.0
    details = []
    for p in params:
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if n_samples is not None and n_samples < flat.size:
            coords = np.sort(rng.choice(flat.size, size=n_samples, replace=False))
        grad = analytic[id(p)].reshape(-1)
        for k in coords:
            orig = flat[k]
            with ad.no_grad():
                flat[k] = orig + epsilon
                up = forward().item()
                flat[k] = orig - epsilon
                down = forward().item()
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite forward value while perturbing {getattr(p, 'name', '?')}[{k}]")
            numeric = (up - down) / (2.0 * epsilon)
            diff = abs(grad[k] - numeric)
            err = diff / max(1e-8, abs(numeric))
            if roundoff_floor and diff <= 16 * _EPS * max(abs(up), abs(down), 1.0) / epsilon:
                err = 0.0
            if return_details:
                details.append((getattr(p, "name", ""), int(k), float(grad[k]), numeric, err))
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    if return_details:
        return worst, details
    return worst
