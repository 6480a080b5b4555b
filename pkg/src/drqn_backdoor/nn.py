"""Minimal neural-network engine for the recurrent Q-network.

Architecture: input dense (ReLU) -> stacked LSTM -> hidden dense (ReLU)
-> linear output head.  Everything is float64 numpy; gradients come from
hand-written backpropagation through time, checked against finite
differences in the test suite.

LSTM gate blocks are stored concatenated in the order [input, forget,
output, candidate] so the three sigmoid gates can be squashed in one call.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NetLayout:
    obs_dim: int
    hidden: int = 64
    lstm_layers: int = 2
    actions: int = 10


class NetworkParams:
    """All weights/biases, keyed by name in a dict of float64 arrays."""

    def __init__(self, layout: NetLayout, arrays: dict):
        self.layout = layout
        self.arrays = arrays

    def keys(self):
        return self.arrays.keys()

    def __getitem__(self, key):
        return self.arrays[key]


def _array_names(layout: NetLayout) -> list[str]:
    names = ["dense_in_W", "dense_in_b"]
    for l in range(layout.lstm_layers):
        names += [f"lstm{l}_Wx", f"lstm{l}_Wh", f"lstm{l}_b"]
    names += ["dense_h_W", "dense_h_b", "dense_out_W", "dense_out_b"]
    return names


def init_params(layout: NetLayout, rng) -> NetworkParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget bias +1."""
    H = layout.hidden

    def uni(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    arrays = {
        "dense_in_W": uni(layout.obs_dim, (layout.obs_dim, H)),
        "dense_in_b": np.zeros(H),
    }
    for l in range(layout.lstm_layers):
        arrays[f"lstm{l}_Wx"] = uni(H, (H, 4 * H))
        arrays[f"lstm{l}_Wh"] = uni(H, (H, 4 * H))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget gate bias
        arrays[f"lstm{l}_b"] = b
    arrays["dense_h_W"] = uni(H, (H, H))
    arrays["dense_h_b"] = np.zeros(H)
    arrays["dense_out_W"] = uni(H, (H, layout.actions))
    arrays["dense_out_b"] = np.zeros(layout.actions)
    return NetworkParams(layout, arrays)


def zero_grads(params: NetworkParams) -> dict:
    return {k: np.zeros_like(v) for k, v in params.arrays.items()}


def copy_params(params: NetworkParams) -> NetworkParams:
    return NetworkParams(params.layout,
                         {k: v.copy() for k, v in params.arrays.items()})


@dataclass
class RecurrentState:
    h: list  # per LSTM layer, shape (H,)
    c: list


def zero_state(layout: NetLayout) -> RecurrentState:
    return RecurrentState(h=[np.zeros(layout.hidden) for _ in range(layout.lstm_layers)],
                          c=[np.zeros(layout.hidden) for _ in range(layout.lstm_layers)])


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def forward(params: NetworkParams, obs_seq: np.ndarray,
            initial_state: RecurrentState | None = None):
    """Q-values for a (T, obs_dim) observation sequence.

    Returns (q_values (T, actions), final RecurrentState, cache for bptt).
    """
    layout = params.layout
    obs_seq = np.asarray(obs_seq, dtype=float)
    if obs_seq.ndim == 1:
        obs_seq = obs_seq[None, :]
    T, obs_dim = obs_seq.shape
    if obs_dim != layout.obs_dim:
        raise ValueError(f"observation dim {obs_dim} != layout {layout.obs_dim}")
    H = layout.hidden
    a = params.arrays
    state = initial_state or zero_state(layout)

    A0 = obs_seq @ a["dense_in_W"] + a["dense_in_b"]
    X1 = np.maximum(A0, 0.0)

    layers = []
    x = X1
    for l in range(layout.lstm_layers):
        Wx, Wh, b = a[f"lstm{l}_Wx"], a[f"lstm{l}_Wh"], a[f"lstm{l}_b"]
        h = state.h[l].copy()
        c = state.c[l].copy()
        Hp = np.empty((T, H)); Cp = np.empty((T, H))
        I = np.empty((T, H)); F = np.empty((T, H)); O = np.empty((T, H))
        G = np.empty((T, H)); C = np.empty((T, H)); TC = np.empty((T, H))
        Hout = np.empty((T, H))
        for t in range(T):
            Hp[t] = h; Cp[t] = c
            z = x[t] @ Wx + h @ Wh + b
            gates = _sigmoid(z[:3 * H])
            i_t, f_t, o_t = gates[:H], gates[H:2 * H], gates[2 * H:]
            g_t = np.tanh(z[3 * H:])
            c = f_t * c + i_t * g_t
            tc = np.tanh(c)
            h = o_t * tc
            I[t] = i_t; F[t] = f_t; O[t] = o_t; G[t] = g_t
            C[t] = c; TC[t] = tc; Hout[t] = h
        layers.append({"X": x, "Hp": Hp, "Cp": Cp, "I": I, "F": F, "O": O,
                       "G": G, "C": C, "TC": TC, "H": Hout})
        x = Hout

    A2 = x @ a["dense_h_W"] + a["dense_h_b"]
    X2 = np.maximum(A2, 0.0)
    Q = X2 @ a["dense_out_W"] + a["dense_out_b"]

    final = RecurrentState(h=[layers[l]["H"][-1].copy() for l in range(layout.lstm_layers)],
                           c=[layers[l]["C"][-1].copy() for l in range(layout.lstm_layers)])
    cache = {"obs": obs_seq, "A0": A0, "X1": X1, "layers": layers,
             "A2": A2, "X2": X2, "Q": Q}
    return Q, final, cache


def bptt(params: NetworkParams, cache: dict, dQ: np.ndarray) -> dict:
    """Gradients for every parameter from dLoss/dQ, truncated at the window
    start (the initial recurrent state is treated as constant)."""
    layout = params.layout
    a = params.arrays
    H = layout.hidden
    dQ = np.asarray(dQ, dtype=float)
    T = dQ.shape[0]
    if dQ.shape != cache["Q"].shape:
        raise ValueError("dQ shape does not match the cached forward pass")

    grads = {}
    X2, A2 = cache["X2"], cache["A2"]
    grads["dense_out_W"] = X2.T @ dQ
    grads["dense_out_b"] = dQ.sum(axis=0)
    dX2 = dQ @ a["dense_out_W"].T
    dA2 = dX2 * (A2 > 0)
    top_X = cache["layers"][-1]["H"]
    grads["dense_h_W"] = top_X.T @ dA2
    grads["dense_h_b"] = dA2.sum(axis=0)
    dH_ext = dA2 @ a["dense_h_W"].T  # (T, H) gradient into the top LSTM output

    n_layers = layout.lstm_layers
    dZ = [np.zeros((T, 4 * H)) for _ in range(n_layers)]
    dext_lower = [np.zeros((T, H)) for _ in range(n_layers)]
    dext_lower[-1] = dH_ext
    dh_next = [np.zeros(H) for _ in range(n_layers)]
    dc_next = [np.zeros(H) for _ in range(n_layers)]

    for t in range(T - 1, -1, -1):
        for l in range(n_layers - 1, -1, -1):
            lay = cache["layers"][l]
            dh = dext_lower[l][t] + dh_next[l]
            dc = dc_next[l]
            o_t, tc, i_t, f_t, g_t = lay["O"][t], lay["TC"][t], lay["I"][t], lay["F"][t], lay["G"][t]
            do = dh * tc
            dc = dc + dh * o_t * (1.0 - tc * tc)
            di = dc * g_t
            df = dc * lay["Cp"][t]
            dg = dc * i_t
            dc_next[l] = dc * f_t
            dz = np.empty(4 * H)
            dz[:H] = di * i_t * (1.0 - i_t)
            dz[H:2 * H] = df * f_t * (1.0 - f_t)
            dz[2 * H:3 * H] = do * o_t * (1.0 - o_t)
            dz[3 * H:] = dg * (1.0 - g_t * g_t)
            dZ[l][t] = dz
            dh_next[l] = dz @ a[f"lstm{l}_Wh"].T
            dx = dz @ a[f"lstm{l}_Wx"].T
            if l > 0:
                dext_lower[l - 1][t] += dx

    dX1 = dZ[0] @ a["lstm0_Wx"].T
    for l in range(n_layers):
        lay = cache["layers"][l]
        grads[f"lstm{l}_Wx"] = lay["X"].T @ dZ[l]
        grads[f"lstm{l}_Wh"] = lay["Hp"].T @ dZ[l]
        grads[f"lstm{l}_b"] = dZ[l].sum(axis=0)

    dA0 = dX1 * (cache["A0"] > 0)
    grads["dense_in_W"] = cache["obs"].T @ dA0
    grads["dense_in_b"] = dA0.sum(axis=0)
    return grads


def mse_loss(q_taken: np.ndarray, targets: np.ndarray):
    """Mean squared error and its gradient w.r.t. the taken-action Q-values."""
    q_taken = np.asarray(q_taken, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if q_taken.shape != targets.shape:
        raise ValueError("prediction/target length mismatch")
    diff = q_taken - targets
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


class AdamState:
    def __init__(self, params: NetworkParams, lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = zero_grads(params)
        self.v = zero_grads(params)


def adam_step(params: NetworkParams, grads: dict, state: AdamState) -> NetworkParams:
    """One Adam update with bias correction; mutates params and state."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; training halted")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params.arrays[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def clip_grads(grads: dict, max_norm: float) -> dict:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return grads


# ---------------------------------------------------------------------------
# checkpoint text format

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: NetworkParams,
                    adam_state: AdamState | None = None) -> None:
    lay = params.layout
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"format {CHECKPOINT_VERSION}\n")
        fh.write(f"layout {lay.obs_dim} {lay.hidden} {lay.lstm_layers} {lay.actions}\n")
        fh.write(f"optimizer {1 if adam_state is not None else 0}\n")
        if adam_state is not None:
            fh.write(f"adam {adam_state.t} {adam_state.lr!r} "
                     f"{adam_state.beta1!r} {adam_state.beta2!r} {adam_state.eps!r}\n")

        def dump(prefix, arrays):
            for name in sorted(arrays):
                arr = arrays[name]
                shape = " ".join(str(s) for s in arr.shape)
                fh.write(f"array {prefix}{name} {shape}\n")
                for row in arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else [arr]:
                    fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

        dump("", params.arrays)
        if adam_state is not None:
            dump("m.", adam_state.m)
            dump("v.", adam_state.v)


def load_checkpoint(path):
    """Returns (params, adam_state or None)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    pos = 0

    def take():
        nonlocal pos
        line = lines[pos]
        pos += 1
        return line

    head = take().split()
    if head[0] != "format" or int(head[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint header: {' '.join(head)}")
    _, obs_dim, hidden, layers, actions = take().split()
    layout = NetLayout(int(obs_dim), int(hidden), int(layers), int(actions))
    has_opt = bool(int(take().split()[1]))
    adam_meta = None
    if has_opt:
        parts = take().split()
        adam_meta = (int(parts[1]), *(float(p) for p in parts[2:]))

    arrays: dict[str, np.ndarray] = {}
    while pos < len(lines):
        header = take().split()
        if header[0] != "array":
            raise ValueError(f"malformed checkpoint near line {pos}")
        name = header[1]
        shape = tuple(int(s) for s in header[2:])
        rows = shape[0] if len(shape) > 1 else 1
        data = [np.array(take().split(), dtype=float) for _ in range(rows)]
        arrays[name] = np.array(data).reshape(shape)

    params = NetworkParams(layout, {k: v for k, v in arrays.items()
                                    if not k.startswith(("m.", "v."))})
    expected = set(_array_names(layout))
    if set(params.arrays) != expected:
        raise ValueError("checkpoint arrays do not match the declared layout")
    adam = None
    if has_opt:
        adam = AdamState(params, lr=adam_meta[1], beta1=adam_meta[2],
                         beta2=adam_meta[3], eps=adam_meta[4])
        adam.t = adam_meta[0]
        adam.m = {k[2:]: v for k, v in arrays.items() if k.startswith("m.")}
        adam.v = {k[2:]: v for k, v in arrays.items() if k.startswith("v.")}
    return params, adam
