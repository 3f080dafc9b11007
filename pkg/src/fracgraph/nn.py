"""Differentiable building blocks with explicit reverse-mode backward passes.

Everything is float64 numpy. Parameters live in one flat insertion-ordered
dict {name: ndarray}; forward functions return (value, cache) and backward
functions consume (upstream grad, cache), writing parameter gradients into a
grads dict keyed like the params. The architecture is static, so explicit
per-block backwards replace a general tape.

Affine weights are stored (out, in) and applied as x @ W.T + b. Initial
weights and biases are uniform in +-sqrt(1/fan_in); layer-norm starts at
scale 1, shift 0.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .jsonio import write_json
from .validation import require

LN_EPS = 1e-5


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------- layer norm

def layer_norm_forward(x, gain, shift):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain + shift, (xhat, inv, gain)


def layer_norm_backward(dy, cache, d_gain, d_shift):
    xhat, inv, gain = cache
    d_gain += (dy * xhat).sum(axis=0)
    d_shift += dy.sum(axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    return inv * (dxhat - m1 - xhat * m2)


# ----------------------------------------------------------------------- MLP

def mlp_sizes(in_size: int, hidden: int, out_size: int, n_layers: int = 3):
    require(n_layers >= 2, "MLP needs at least 2 layers")
    return [in_size] + [hidden] * (n_layers - 1) + [out_size]


def mlp_init(params: dict, rng, prefix: str, in_size: int, hidden: int,
             out_size: int, layer_norm: bool, n_layers: int = 3):
    sizes = mlp_sizes(in_size, hidden, out_size, n_layers)
    for l in range(len(sizes) - 1):
        fan_in = sizes[l]
        params[f"{prefix}.W{l}"] = uniform_init(rng, (sizes[l + 1], sizes[l]), fan_in)
        params[f"{prefix}.b{l}"] = uniform_init(rng, (sizes[l + 1],), fan_in)
    if layer_norm:
        params[f"{prefix}.ln_g"] = np.ones(out_size)
        params[f"{prefix}.ln_b"] = np.zeros(out_size)


def mlp_param_count(in_size, hidden, out_size, layer_norm, n_layers=3) -> int:
    sizes = mlp_sizes(in_size, hidden, out_size, n_layers)
    count = sum(sizes[l] * sizes[l + 1] + sizes[l + 1] for l in range(len(sizes) - 1))
    return count + (2 * out_size if layer_norm else 0)


def mlp_forward(params: dict, prefix: str, x: np.ndarray):
    """Affine layers with relu between them, optional trailing layer norm."""
    n_layers = 0
    while f"{prefix}.W{n_layers}" in params:
        n_layers += 1
    require(n_layers >= 2, f"no MLP parameters under {prefix!r}")
    xs, masks = [x], []
    h = x
    for l in range(n_layers):
        z = h @ params[f"{prefix}.W{l}"].T + params[f"{prefix}.b{l}"]
        if l < n_layers - 1:
            mask = z > 0.0
            h = np.where(mask, z, 0.0)
            masks.append(mask)
            xs.append(h)
        else:
            h = z
    ln_cache = None
    if f"{prefix}.ln_g" in params:
        h, ln_cache = layer_norm_forward(h, params[f"{prefix}.ln_g"],
                                         params[f"{prefix}.ln_b"])
    return h, (xs, masks, ln_cache, n_layers)


def mlp_backward(params: dict, prefix: str, dy: np.ndarray, cache, grads: dict):
    xs, masks, ln_cache, n_layers = cache

    def g(name, shape):
        key = f"{prefix}.{name}"
        if key not in grads:
            grads[key] = np.zeros(shape)
        return grads[key]

    if ln_cache is not None:
        dy = layer_norm_backward(dy, ln_cache,
                                 g("ln_g", params[f"{prefix}.ln_g"].shape),
                                 g("ln_b", params[f"{prefix}.ln_b"].shape))
    for l in range(n_layers - 1, -1, -1):
        w = params[f"{prefix}.W{l}"]
        g(f"W{l}", w.shape)[...] += dy.T @ xs[l]
        g(f"b{l}", (w.shape[0],))[...] += dy.sum(axis=0)
        dx = dy @ w
        if l > 0:
            dx = np.where(masks[l - 1], dx, 0.0)
        dy = dx
    return dy


# ---------------------------------------------------------------- LSTM cell

def lstm_init(params: dict, rng, prefix: str, in_size: int, hidden: int):
    """Gate maps with dual biases (input-side and recurrent-side), gates
    stacked (i, f, g, o) along the first axis."""
    params[f"{prefix}.Wx"] = uniform_init(rng, (4 * hidden, in_size), in_size)
    params[f"{prefix}.bx"] = uniform_init(rng, (4 * hidden,), in_size)
    params[f"{prefix}.Wh"] = uniform_init(rng, (4 * hidden, hidden), hidden)
    params[f"{prefix}.bh"] = uniform_init(rng, (4 * hidden,), hidden)
    # start with the forget gates open: centered biases would halve the cell
    # state every step, starving long sequences of gradient signal early on
    params[f"{prefix}.bx"][hidden:2 * hidden] += 1.0


def lstm_param_count(in_size: int, hidden: int) -> int:
    return 4 * (hidden * in_size + hidden * hidden + 2 * hidden)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward(params: dict, prefix: str, x, h_prev, c_prev):
    hidden = h_prev.shape[1]
    z = (x @ params[f"{prefix}.Wx"].T + params[f"{prefix}.bx"]
         + h_prev @ params[f"{prefix}.Wh"].T + params[f"{prefix}.bh"])
    zi, zf, zg, zo = (z[:, k * hidden:(k + 1) * hidden] for k in range(4))
    gi = _sigmoid(zi)
    gf = _sigmoid(zf)
    gg = np.tanh(zg)
    go = _sigmoid(zo)
    c = gf * c_prev + gi * gg
    tc = np.tanh(c)
    h = go * tc
    return h, c, (x, h_prev, c_prev, gi, gf, gg, go, tc)


def lstm_backward(params: dict, prefix: str, dh, dc, cache, grads: dict):
    """Returns (dx, dh_prev, dc_prev); dh/dc are grads w.r.t. this step's
    outputs (dc from the next step's carry, possibly zero)."""
    x, h_prev, c_prev, gi, gf, gg, go, tc = cache
    dgo = dh * tc
    dc_total = dc + dh * go * (1.0 - tc ** 2)
    dgf = dc_total * c_prev
    dc_prev = dc_total * gf
    dgi = dc_total * gg
    dgg = dc_total * gi
    dz = np.concatenate([
        dgi * gi * (1.0 - gi),
        dgf * gf * (1.0 - gf),
        dgg * (1.0 - gg ** 2),
        dgo * go * (1.0 - go),
    ], axis=1)

    def g(name, shape):
        key = f"{prefix}.{name}"
        if key not in grads:
            grads[key] = np.zeros(shape)
        return grads[key]

    wx = params[f"{prefix}.Wx"]
    wh = params[f"{prefix}.Wh"]
    g("Wx", wx.shape)[...] += dz.T @ x
    g("bx", (wx.shape[0],))[...] += dz.sum(axis=0)
    g("Wh", wh.shape)[...] += dz.T @ h_prev
    g("bh", (wh.shape[0],))[...] += dz.sum(axis=0)
    return dz @ wx, dz @ wh, dc_prev


# ---------------------------------------------------------------------- Adam

class Adam:
    """Adam with coupled weight decay (wd * theta added to the gradient),
    bias correction, and per-epoch exponential learning-rate decay."""

    def __init__(self, params: dict, lr: float, weight_decay: float = 0.0,
                 gamma: float = 1.0, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.gamma = float(gamma)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, theta in params.items():
            grad = grads.get(name)
            if grad is None:
                grad = np.zeros_like(theta)
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError(f"non-finite gradient for {name!r}")
            grad = grad + self.weight_decay * theta
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad ** 2
            theta -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def end_epoch(self):
        self.lr *= self.gamma


# ------------------------------------------------------------ grad checking

def grad_check(loss_fn, params: dict, max_checks: int = 5000, h: float = 1e-6,
               seed: int = 0) -> dict:
    """Central-difference check of loss_fn's analytic gradients.

    loss_fn(params) -> (scalar loss, grads dict). Checks up to max_checks
    randomly chosen coordinates and reports the worst relative error with the
    offending parameter name. The error denominator is floored at 1e-3 of the
    largest analytic gradient magnitude so that near-zero coordinates are
    judged against the model's gradient scale instead of finite-difference
    roundoff; a wrong backward formula still surfaces at that scale.
    """
    _, grads = loss_fn(params)
    g_scale = max((float(np.max(np.abs(g))) for g in grads.values() if g.size),
                  default=0.0)
    floor = max(1e-3 * g_scale, 1e-12)
    coords = [(name, idx) for name, value in params.items()
              for idx in range(value.size)]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    if len(coords) > max_checks:
        chosen = rng.choice(len(coords), size=max_checks, replace=False)
        coords = [coords[int(c)] for c in chosen]
    worst = 0.0
    worst_name = None
    for name, idx in coords:
        flat = params[name].reshape(-1)
        keep = flat[idx]
        flat[idx] = keep + h
        up, _ = loss_fn(params)
        flat[idx] = keep - h
        down, _ = loss_fn(params)
        flat[idx] = keep
        fd = (up - down) / (2.0 * h)
        an = grads[name].reshape(-1)[idx] if name in grads else 0.0
        rel = abs(an - fd) / max(abs(an), abs(fd), floor)
        if rel > worst:
            worst = rel
            worst_name = f"{name}[{idx}]"
    return {"checked": len(coords), "max_rel_err": worst, "worst": worst_name}


# ------------------------------------------------------------- checkpoints

def params_sha256(params: dict) -> str:
    digest = hashlib.sha256()
    for name, value in params.items():
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return digest.hexdigest()


def save_checkpoint(path, params: dict, meta: dict):
    """Write params.bin (ordered little-endian float64 tensors), its JSON
    index, and meta.json carrying hyperparameters plus the payload checksum."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    with open(path / "params.bin", "wb") as fh:
        for name, value in params.items():
            data = np.ascontiguousarray(value, dtype="<f8").tobytes()
            fh.write(data)
            index.append({"name": name, "shape": list(value.shape),
                          "offset": offset})
            offset += len(data)
    write_json(path / "params.index.json", index)
    meta = dict(meta)
    meta["params_sha256"] = params_sha256(params)
    write_json(path / "meta.json", meta)


def load_checkpoint(path):
    """Read a checkpoint directory back into (params, meta); the payload is
    validated against the recorded checksum."""
    path = Path(path)
    with open(path / "params.index.json") as fh:
        index = json.load(fh)
    raw = (path / "params.bin").read_bytes()
    params = {}
    for entry in index:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=start)
        params[entry["name"]] = arr.reshape(shape).astype(float)
    with open(path / "meta.json") as fh:
        meta = json.load(fh)
    expected = meta.get("params_sha256")
    actual = params_sha256(params)
    require(expected == actual,
            f"checkpoint payload checksum mismatch in {path}")
    return params, meta
