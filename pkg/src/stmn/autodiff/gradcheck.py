"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .tensor import Tensor


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def _scalar(out: Tensor) -> float:
    if not isinstance(out, Tensor) or out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    return float(out.data.reshape(-1)[0])


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6,
               indices: Sequence[int] | None = None) -> float:
    """Max relative error between backprop and central differences of ``f`` at ``x``.

    ``x`` may be an array (copied to float64) or a leaf Tensor, which is
    promoted to float64 in place and perturbed in place, so model parameters
    can be checked through closures that ignore the argument. ``indices``
    restricts the comparison to a subset of flat coordinates.
    """
    if isinstance(x, Tensor):
        x.data = np.ascontiguousarray(x.data, dtype=np.float64)
        x.requires_grad = True
        t = x
    else:
        t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    t.grad = None
    out = f(t)
    _scalar(out)
    out.backward()
    analytic = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1).astype(np.float64)
    t.grad = None

    flat = t.data.reshape(-1)
    coords = range(t.size) if indices is None else indices
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        plus = _scalar(f(t))
        flat[i] = orig - eps
        minus = _scalar(f(t))
        flat[i] = orig
        numeric = (plus - minus) / (2 * eps)
        worst = max(worst, float(_relative_error(analytic[i], numeric)))
    return worst


def check_parameters(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-6,
                     max_coords: int | None = None, rng: np.random.Generator | None = None,
                     ) -> dict[int, float]:
    """Run ``grad_check`` over each parameter of a zero-argument loss.

    Returns the max relative error per parameter (keyed by position). With
    ``max_coords`` set, each parameter is checked on a random subset of that
    many coordinates.
    """
    rng = rng or np.random.default_rng(0)
    params = list(params)
    for p in params:
        p.data = np.ascontiguousarray(p.data, dtype=np.float64)
    errors = {}
    for k, p in enumerate(params):
        idx = None
        if max_coords is not None and p.size > max_coords:
            idx = rng.choice(p.size, size=max_coords, replace=False)
        for q in params:
            q.grad = None
        errors[k] = grad_check(lambda _: loss_fn(), p, eps=eps, indices=idx)
    return errors
