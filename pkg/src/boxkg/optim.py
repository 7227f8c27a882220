"""Adam with row-sparse parameter updates."""

import numpy as np


def _rows(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], -1) if a.ndim >= 1 else a.reshape(1, 1)


def adam_step(params: dict, grads: dict, m: dict, v: dict, steps: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update for every table named in ``grads``.

    Moments of every row decay each call; only rows with a nonzero gradient
    have their parameters moved. ``steps`` counts calls per table.
    """
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if name not in m:
            m[name] = np.zeros_like(p)
            v[name] = np.zeros_like(p)
        if m[name].shape != p.shape:
            raise ValueError(f"{name}: moment shape {m[name].shape} != parameter shape {p.shape}")
        t = steps.get(name, 0) + 1
        steps[name] = t
        p2, g2, m2, v2 = _rows(p), _rows(g), _rows(m[name]), _rows(v[name])
        m2 *= beta1
        v2 *= beta2
        rows = np.flatnonzero(np.any(g2 != 0, axis=1))
        if len(rows) == 0:
            continue
        gr = g2[rows]
        m2[rows] += (1.0 - beta1) * gr
        v2[rows] += (1.0 - beta2) * gr * gr
        m_hat = m2[rows] / (1.0 - beta1 ** t)
        v_hat = v2[rows] / (1.0 - beta2 ** t)
        p2[rows] -= lr * m_hat / (np.sqrt(v_hat) + eps)
