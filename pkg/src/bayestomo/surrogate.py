"""Dense + convolutional surrogate network with hand-written backprop and Adam.

The architecture is one fully connected layer reshaped to a 16x16 single
channel, followed by a stack of 3x3 same-padded convolutions with ReLU.
Hidden convolutions carry ``channels`` feature maps; the last convolution
projects back to one channel so the output is always a 16x16 matrix.  By
default no activation is applied after the final convolution (measurement
entries may be negative); ``final_relu=True`` restores the all-ReLU stack.

Everything is double precision numpy.  Forward evaluation is pure and safe
to call concurrently on a shared net; training mutates only its own copy of
the parameters and is deterministic per seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

GRID = 16
_MAGIC = b"BTSN"
_VERSION = 1


class ModelFormatError(ValueError):
    """Malformed or truncated model file."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class SurrogateNet:
    """Network parameters: dense layer plus ``conv_count`` conv layers.

    dense_w : (input_dim, 256), dense_b : (256,)
    conv_w[i] : (out_ch, in_ch, 3, 3), conv_b[i] : (out_ch,)
    Channel counts run 1 -> channels -> ... -> channels -> 1.
    """

    input_dim: int
    channels: int
    conv_count: int
    final_relu: bool
    dense_w: np.ndarray
    dense_b: np.ndarray
    conv_w: list
    conv_b: list


def _channel_plan(channels: int, conv_count: int):
    ins = [1] + [channels] * (conv_count - 1)
    outs = [channels] * (conv_count - 1) + [1]
    if conv_count == 1:
        ins, outs = [1], [1]
    return list(zip(ins, outs))


def init_net(
    input_dim: int,
    channels: int = 16,
    conv_count: int = 4,
    final_relu: bool = False,
    rng: np.random.Generator | None = None,
) -> SurrogateNet:
    """He-normal initialization (std sqrt(2/fan_in)), zero biases."""
    if rng is None:
        rng = np.random.default_rng(0)
    dense_w = rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(input_dim, GRID * GRID))
    dense_b = np.zeros(GRID * GRID)
    conv_w, conv_b = [], []
    for cin, cout in _channel_plan(channels, conv_count):
        fan_in = cin * 9
        conv_w.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, 3, 3)))
        conv_b.append(np.zeros(cout))
    return SurrogateNet(input_dim, channels, conv_count, final_relu, dense_w, dense_b, conv_w, conv_b)


def parameters(net: SurrogateNet) -> list:
    """Flat parameter list in a fixed order (dense first, then conv pairs)."""
    out = [net.dense_w, net.dense_b]
    for w, b in zip(net.conv_w, net.conv_b):
        out.extend((w, b))
    return out


def replace_parameters(net: SurrogateNet, params: list) -> SurrogateNet:
    """New net sharing the architecture with the given parameter list."""
    dense_w, dense_b = params[0], params[1]
    conv_w = [params[2 + 2 * i] for i in range(net.conv_count)]
    conv_b = [params[3 + 2 * i] for i in range(net.conv_count)]
    return SurrogateNet(
        net.input_dim, net.channels, net.conv_count, net.final_relu,
        dense_w, dense_b, conv_w, conv_b,
    )


def _im2col(h: np.ndarray) -> np.ndarray:
    """(B, C, 16, 16) -> (B, C*9, 256) patch matrix with zero padding."""
    B, C, H, W = h.shape
    hp = np.zeros((B, C, H + 2, W + 2), dtype=h.dtype)
    hp[:, :, 1:-1, 1:-1] = h
    cols = np.empty((B, C, 9, H, W), dtype=h.dtype)
    for k in range(9):
        di, dj = divmod(k, 3)
        cols[:, :, k] = hp[:, :, di : di + H, dj : dj + W]
    return cols.reshape(B, C * 9, H * W)


def _col2im(dcols: np.ndarray, C: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patch gradients back."""
    B = dcols.shape[0]
    d = dcols.reshape(B, C, 9, GRID, GRID)
    hp = np.zeros((B, C, GRID + 2, GRID + 2), dtype=dcols.dtype)
    for k in range(9):
        di, dj = divmod(k, 3)
        hp[:, :, di : di + GRID, dj : dj + GRID] += d[:, :, k]
    return hp[:, :, 1:-1, 1:-1]


def _conv2d(h: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded 3x3 cross-correlation; returns (output, patch matrix)."""
    cols = _im2col(h)
    cout = w.shape[0]
    out = np.matmul(w.reshape(cout, -1), cols).reshape(h.shape[0], cout, GRID, GRID)
    return out + b[None, :, None, None], cols


def forward_batch(net: SurrogateNet, x: np.ndarray, keep: bool = False):
    """Batched forward pass; with ``keep`` also returns the activation cache.

    Computation runs in the dtype of the net's parameters (double for the
    nets :func:`init_net` builds; the training loop may use a float32
    shadow copy).
    """
    x = np.atleast_2d(np.asarray(x, dtype=net.dense_w.dtype))
    if x.shape[1] != net.input_dim:
        raise ValueError(f"input length {x.shape[1]} != input_dim {net.input_dim}")
    z0 = x @ net.dense_w + net.dense_b
    h = np.maximum(z0, 0.0).reshape(-1, 1, GRID, GRID)
    cache = {"x": x, "z0": z0, "cols": [], "z": []} if keep else None
    for i, (w, b) in enumerate(zip(net.conv_w, net.conv_b)):
        z, cols = _conv2d(h, w, b)
        if keep:
            cache["cols"].append(cols)
            cache["z"].append(z)
        last = i == net.conv_count - 1
        h = z if (last and not net.final_relu) else np.maximum(z, 0.0)
    out = h[:, 0]
    if keep:
        cache["out"] = out
        return out, cache
    return out


def net_forward(net: SurrogateNet, x: np.ndarray) -> np.ndarray:
    """16x16 output for a single input vector."""
    return forward_batch(net, np.asarray(x, dtype=float)[None, :])[0]


def forward_with_cache(net: SurrogateNet, x: np.ndarray):
    """Single-input forward keeping the activations needed for backprop."""
    out, cache = forward_batch(net, np.asarray(x, dtype=float)[None, :], keep=True)
    return out[0], cache


def backward_batch(net: SurrogateNet, cache: dict, grad_out: np.ndarray) -> list:
    """Exact reverse-mode gradients for every parameter, summed over the batch.

    ``grad_out`` has shape (B, 16, 16) and is the gradient of the scalar
    objective with respect to the network output.
    """
    if cache is None or "z" not in cache or len(cache["z"]) != net.conv_count:
        raise ValueError("missing or stale forward cache")
    dh = np.asarray(grad_out, dtype=net.dense_w.dtype)[:, None, :, :].copy()
    grads_w = [None] * net.conv_count
    grads_b = [None] * net.conv_count
    for i in range(net.conv_count - 1, -1, -1):
        z = cache["z"][i]
        if not (i == net.conv_count - 1 and not net.final_relu):
            dh = dh * (z > 0)
        B = dh.shape[0]
        dz = dh.reshape(B, dh.shape[1], GRID * GRID)
        cols = cache["cols"][i]
        w = net.conv_w[i]
        grads_w[i] = np.einsum("bop,bkp->ok", dz, cols).reshape(w.shape)
        grads_b[i] = dz.sum(axis=(0, 2))
        # input gradient as one flat GEMM: (K, Co) @ (Co, B*P) -> (K, B*P)
        dz_flat = np.ascontiguousarray(dz.transpose(1, 0, 2)).reshape(dz.shape[1], -1)
        dcols_flat = w.reshape(w.shape[0], -1).T @ dz_flat
        dcols = np.ascontiguousarray(
            dcols_flat.reshape(dcols_flat.shape[0], B, GRID * GRID).transpose(1, 0, 2)
        )
        dh = _col2im(dcols, w.shape[1])
    dflat = dh.reshape(dh.shape[0], GRID * GRID) * (cache["z0"] > 0)
    dense_w_grad = cache["x"].T @ dflat
    dense_b_grad = dflat.sum(axis=0)
    out = [dense_w_grad, dense_b_grad]
    for gw, gb in zip(grads_w, grads_b):
        out.extend((gw, gb))
    return out


def net_backward(net: SurrogateNet, cache: dict, grad_out: np.ndarray) -> list:
    """Parameter gradients for a single cached forward pass."""
    return backward_batch(net, cache, np.asarray(grad_out, dtype=float)[None, :, :])


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the parameter shapes."""

    step: int
    m: list
    v: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: list, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(params: list, grads: list, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter/gradient shape mismatch")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        mhat = m / (1 - state.beta1**t)
        vhat = v / (1 - state.beta2**t)
        new_params.append(p - lr * mhat / (np.sqrt(vhat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, new_m, new_v, state.beta1, state.beta2, state.eps)


@dataclass
class TrainConfig:
    """Epoch count, minibatch size and learning-rate schedule.

    ``compute_dtype`` selects the precision of the minibatch forward and
    backward passes; parameters and Adam state stay double either way.
    float32 roughly halves the memory-bound epoch cost on desk hardware.
    """

    epochs: int = 100
    minibatch: int = 128
    lr: float = 1e-3
    lr_drop_factor: float = 1.0
    lr_drop_period: int = 50
    seed: int = 0
    compute_dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1 or self.minibatch < 1 or self.lr <= 0 or self.lr_drop_period < 1:
            raise ValueError("epochs, minibatch, lr and lr_drop_period must be positive")
        if not 0 < self.lr_drop_factor <= 1:
            raise ValueError("lr_drop_factor must lie in (0, 1]")
        if self.compute_dtype not in ("float32", "float64"):
            raise ValueError("compute_dtype must be float32 or float64")


def train(net: SurrogateNet, dataset, cfg: TrainConfig):
    """Minimize mean-squared output error over shuffled minibatches.

    ``dataset`` provides ``inputs`` (n, input_dim) and ``targets``
    (n, 16, 16).  Returns a trained copy of the net and the per-epoch
    history as a list of (epoch, loss, lr) rows; the learning rate is
    multiplied by ``lr_drop_factor`` every ``lr_drop_period`` epochs.
    """
    dtype = np.dtype(cfg.compute_dtype)
    X = np.asarray(dataset.inputs, dtype=dtype)
    T = np.asarray(dataset.targets, dtype=dtype)
    if X.shape[0] == 0:
        raise ValueError("empty training dataset")
    if X.shape[1] != net.input_dim:
        raise ValueError(f"dataset input dim {X.shape[1]} != net input dim {net.input_dim}")
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    params = [p.astype(np.float64) for p in parameters(net)]
    state = init_adam(params)
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr * cfg.lr_drop_factor ** (epoch // cfg.lr_drop_period)
        perm = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.minibatch):
            idx = perm[start : start + cfg.minibatch]
            shadow = replace_parameters(net, [p.astype(dtype, copy=False) for p in params])
            out, cache = forward_batch(shadow, X[idx], keep=True)
            resid = out - T[idx]
            loss = float(np.mean(resid.astype(np.float64) ** 2))
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}, batch starting {start}"
                )
            grads = backward_batch(shadow, cache, (2.0 / resid.size) * resid)
            params, state = adam_step(
                params, [g.astype(np.float64, copy=False) for g in grads], state, lr
            )
            loss_sum += loss * len(idx)
        history.append((epoch + 1, loss_sum / n, lr))
    return replace_parameters(net, params), history


def write_loss_csv(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,lr\n")
        for epoch, loss, lr in history:
            fh.write(f"{epoch},{float(loss)!r},{float(lr)!r}\n")


def save_model(net: SurrogateNet, path) -> None:
    """Versioned binary dump: header ints then parameters as little-endian doubles."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIIB", _VERSION, net.input_dim, net.channels, net.conv_count,
                             int(net.final_relu)))
        for p in parameters(net):
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path) -> SurrogateNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ModelFormatError(f"{path} is not a surrogate model file")
    if len(blob) < 21:
        raise ModelFormatError(f"model file {path} truncated")
    version, input_dim, channels, conv_count, relu_flag = struct.unpack("<IIIIB", blob[4:21])
    if version != _VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    net = init_net(input_dim, channels, conv_count, bool(relu_flag), np.random.default_rng(0))
    offset = 21
    params = []
    for p in parameters(net):
        nbytes = p.size * 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ModelFormatError(f"model file {path} truncated")
        params.append(np.frombuffer(chunk, dtype="<f8").reshape(p.shape).copy())
        offset += nbytes
    if offset != len(blob):
        raise ModelFormatError(f"model file {path} has trailing bytes")
    return replace_parameters(net, params)
