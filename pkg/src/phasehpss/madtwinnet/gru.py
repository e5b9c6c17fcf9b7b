"""Batched GRU layer with explicit backpropagation through time.

Gate layout follows the common convention::

    r = sigmoid(W_r x + b_xr + U_r h + b_hr)
    z = sigmoid(W_z x + b_xz + U_z h + b_hz)
    n = tanh(W_n x + b_xn + r * (U_n h + b_hn))
    h' = (1 - z) * n + z * h

with ``W = [W_r; W_z; W_n]`` of shape ``(3H, I)``, ``U`` of shape ``(3H, H)``
and biases ``bx``, ``bh`` of length ``3H``. Sequences are ``(B, T, I)``.
"""

from __future__ import annotations

import numpy as np

PARAM_NAMES = ("W", "U", "bx", "bh")


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def param_shapes(n_in: int, n_hidden: int) -> dict:
    return {
        "W": (3 * n_hidden, n_in),
        "U": (3 * n_hidden, n_hidden),
        "bx": (3 * n_hidden,),
        "bh": (3 * n_hidden,),
    }


def init_params(rng: np.random.Generator, n_in: int, n_hidden: int) -> dict:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases use the recurrent fan-in."""
    fan_in = {"W": n_in, "U": n_hidden, "bx": n_hidden, "bh": n_hidden}
    return {name: rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(fan_in[name])
            for name, shape in param_shapes(n_in, n_hidden).items()}


def forward(p: dict, x: np.ndarray, reverse: bool = False):
    """Run the layer over ``x`` (B, T, I); returns states (B, T, H) and a cache.

    With ``reverse`` the recursion runs from the last frame to the first; the
    output stays aligned with the input time axis.
    """
    B, T, _ = x.shape
    H = p["U"].shape[1]
    order = range(T - 1, -1, -1) if reverse else range(T)
    a_all = x @ p["W"].T + p["bx"]
    hs = np.empty((B, T, H))
    hprev_all = np.empty((B, T, H))
    gates = np.empty((B, T, 3, H))  # r, z, n
    cn_all = np.empty((B, T, H))
    h = np.zeros((B, H))
    for t in order:
        a = a_all[:, t]
        c = h @ p["U"].T + p["bh"]
        r = sigmoid(a[:, :H] + c[:, :H])
        z = sigmoid(a[:, H:2 * H] + c[:, H:2 * H])
        cn = c[:, 2 * H:]
        n = np.tanh(a[:, 2 * H:] + r * cn)
        hprev_all[:, t] = h
        h = (1.0 - z) * n + z * h
        hs[:, t] = h
        gates[:, t, 0], gates[:, t, 1], gates[:, t, 2] = r, z, n
        cn_all[:, t] = cn
    cache = {"x": x, "hprev": hprev_all, "gates": gates, "cn": cn_all, "reverse": reverse}
    return hs, cache


def backward(p: dict, cache: dict, dhs: np.ndarray):
    """Gradients w.r.t. parameters and input given dL/dh for every step."""
    x = cache["x"]
    B, T, _ = x.shape
    H = p["U"].shape[1]
    reverse = cache["reverse"]
    order = range(T) if reverse else range(T - 1, -1, -1)
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    da_all = np.empty((B, T, 3 * H))
    dh_next = np.zeros((B, H))
    for t in order:
        r, z, n = cache["gates"][:, t, 0], cache["gates"][:, t, 1], cache["gates"][:, t, 2]
        hprev = cache["hprev"][:, t]
        dh = dhs[:, t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (hprev - n)
        dpre_n = dn * (1.0 - n * n)
        dr = dpre_n * cache["cn"][:, t]
        dpre_r = dr * r * (1.0 - r)
        dpre_z = dz * z * (1.0 - z)
        da = np.concatenate([dpre_r, dpre_z, dpre_n], axis=1)
        dc = np.concatenate([dpre_r, dpre_z, dpre_n * r], axis=1)
        grads["U"] += dc.T @ hprev
        grads["bh"] += dc.sum(axis=0)
        da_all[:, t] = da
        dh_next = dh * z + dc @ p["U"]
    grads["W"] += np.einsum("bth,bti->hi", da_all, x)
    grads["bx"] += da_all.sum(axis=(0, 1))
    dx = da_all @ p["W"]
    return grads, dx
