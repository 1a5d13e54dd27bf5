"""Self-contained 1D-CNN engine: forward, reverse-mode gradients, training.

The layer sequence is fixed (two conv blocks with max pooling and batch
norm, one hidden dense layer with dropout, softmax head) but all widths
are configurable so tests can run reduced versions of the same network.
All arithmetic is float64; checkpoints store float32.

Modes: ``train`` (batch statistics, per-element dropout), ``eval``
(running statistics, no dropout), ``eval_dropout`` (running statistics,
caller-supplied frozen dropout mask).
"""

from dataclasses import dataclass, field
import hashlib
import struct

import numpy as np

from . import kernels
from .seeding import spawn_rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LOSS_FLOOR = 1e-12

MODES = ("train", "eval", "eval_dropout")

CHECKPOINT_MAGIC = b"PQN1"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sI8sIIIIIIIIII")


class ShapeError(ValueError):
    """Input does not match the architecture."""


class TrainingDivergence(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class Architecture:
    n_input: int = 640
    conv_channels: tuple = (8, 8, 16, 16)
    kernel: int = 3
    pool: int = 3
    fc_width: int = 64
    n_classes: int = 16

    def lengths(self) -> tuple:
        """Temporal lengths after conv1, conv2, pool1, conv3, conv4, global pool."""
        k, p = self.kernel, self.pool
        l1 = self.n_input - k + 1
        l2 = l1 - k + 1
        l3 = l2 - p + 1
        l4 = l3 - k + 1
        l5 = l4 - k + 1
        if l5 < 1:
            raise ShapeError("input too short for the layer stack")
        return (l1, l2, l3, l4, l5, 1)

    def layout(self) -> list:
        """Ordered (name, shape) pairs of every trainable tensor."""
        c1, c2, c3, c4 = self.conv_channels
        k, fc, m = self.kernel, self.fc_width, self.n_classes
        return [
            ("conv1.w", (c1, 1, k)), ("conv1.b", (c1,)),
            ("conv2.w", (c2, c1, k)), ("conv2.b", (c2,)),
            ("bn1.gamma", (c2,)), ("bn1.beta", (c2,)),
            ("conv3.w", (c3, c2, k)), ("conv3.b", (c3,)),
            ("conv4.w", (c4, c3, k)), ("conv4.b", (c4,)),
            ("bn2.gamma", (c4,)), ("bn2.beta", (c4,)),
            ("fc1.w", (fc, c4)), ("fc1.b", (fc,)),
            ("bn3.gamma", (fc,)), ("bn3.beta", (fc,)),
            ("fc2.w", (m, fc)), ("fc2.b", (m,)),
        ]

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout())

    @property
    def bn_sizes(self) -> tuple:
        return (self.conv_channels[1], self.conv_channels[3], self.fc_width)

    def descriptor(self) -> str:
        return (
            f"in={self.n_input};ch={','.join(map(str, self.conv_channels))};"
            f"k={self.kernel};pool={self.pool};fc={self.fc_width};m={self.n_classes}"
        )

    def arch_hash(self) -> bytes:
        return hashlib.sha256(self.descriptor().encode()).digest()[:8]


DEFAULT_ARCH = Architecture()


class NetworkParams:
    """Flat parameter vector plus per-layer views and BN running stats."""

    def __init__(self, arch: Architecture, theta=None, running=None):
        self.arch = arch
        self._offsets = {}
        offset = 0
        for name, shape in arch.layout():
            size = int(np.prod(shape))
            self._offsets[name] = (offset, shape)
            offset += size
        self.theta = np.zeros(offset, dtype=np.float64) if theta is None else np.asarray(theta, dtype=np.float64)
        if self.theta.shape != (offset,):
            raise ShapeError(f"theta must have {offset} entries")
        if running is None:
            running = {}
            for i, size in enumerate(arch.bn_sizes, start=1):
                running[f"bn{i}.mean"] = np.zeros(size, dtype=np.float64)
                running[f"bn{i}.var"] = np.ones(size, dtype=np.float64)
        self.running = running

    @property
    def param_count(self) -> int:
        return self.theta.size

    def view(self, name: str) -> np.ndarray:
        offset, shape = self._offsets[name]
        return self.theta[offset : offset + int(np.prod(shape))].reshape(shape)

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.arch,
            self.theta.copy(),
            {k: v.copy() for k, v in self.running.items()},
        )

    def running_flat(self) -> np.ndarray:
        parts = []
        for i in range(1, 4):
            parts.extend([self.running[f"bn{i}.mean"], self.running[f"bn{i}.var"]])
        return np.concatenate(parts)

    def set_running_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        offset = 0
        for i, size in enumerate(self.arch.bn_sizes, start=1):
            self.running[f"bn{i}.mean"] = flat[offset : offset + size].copy()
            offset += size
            self.running[f"bn{i}.var"] = flat[offset : offset + size].copy()
            offset += size


def init_params(arch: Architecture, rng) -> NetworkParams:
    """He-normal weights, zero biases, unit BN scale."""
    params = NetworkParams(arch)
    for name, shape in arch.layout():
        v = params.view(name)
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            v[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        elif name.endswith(".gamma"):
            v[...] = 1.0
    return params


@dataclass
class ForwardTrace:
    mode: str
    probs: np.ndarray
    logits: np.ndarray
    conv4_maps: np.ndarray  # post-ReLU feature maps (B, C4, L5)
    cache: dict = field(default_factory=dict)
    new_running: dict = field(default_factory=dict)


def _bn_forward(x, gamma, beta, running_mean, running_var, train: bool, cache_key, cache, new_running, name):
    """Batch norm over all axes except the channel axis (axis 1)."""
    axes = (0,) if x.ndim == 2 else (0, 2)
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_running[f"{name}.mean"] = (1 - BN_MOMENTUM) * running_mean + BN_MOMENTUM * mean
        new_running[f"{name}.var"] = (1 - BN_MOMENTUM) * running_var + BN_MOMENTUM * var
    else:
        mean, var = running_mean, running_var
    istd = 1.0 / np.sqrt(var + BN_EPS)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    xhat = (x - mean.reshape(shape)) * istd.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    if cache is not None:
        cache[cache_key] = (xhat, istd, train)
    return out


def _bn_backward(dout, xhat, istd, gamma, train: bool):
    axes = (0,) if dout.ndim == 2 else (0, 2)
    shape = (1, -1) if dout.ndim == 2 else (1, -1, 1)
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(shape)
    if not train:
        return dxhat * istd.reshape(shape), dgamma, dbeta
    m = dout.shape[0] if dout.ndim == 2 else dout.shape[0] * dout.shape[2]
    sum1 = dxhat.sum(axis=axes).reshape(shape)
    sum2 = (dxhat * xhat).sum(axis=axes).reshape(shape)
    dx = (istd.reshape(shape) / m) * (m * dxhat - sum1 - xhat * sum2)
    return dx, dgamma, dbeta


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(x, n_input):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != n_input:
        raise ShapeError(f"expected input of length {n_input}, got shape {x.shape}")
    return np.ascontiguousarray(x)


def forward(
    params: NetworkParams,
    x,
    mode: str = "eval",
    dropout_p: float = 0.0,
    rng=None,
    dropout_mask=None,
    need_trace: bool = True,
):
    """Run the network; returns a ForwardTrace (or just probs).

    ``dropout_mask`` is a premultiplied keep mask of shape (fc_width,)
    for ``eval_dropout`` mode; ``rng`` draws the per-element mask in
    ``train`` mode.
    """
    if mode not in MODES:
        raise ShapeError(f"unknown mode {mode!r}")
    arch = params.arch
    x2 = _as_batch(x, arch.n_input)
    batch = x2.shape[0]
    train = mode == "train"
    cache = {} if need_trace else None
    new_running = {}

    z = x2[:, None, :]
    a1 = kernels.conv1d_forward(z, params.view("conv1.w"), params.view("conv1.b"))
    np.maximum(a1, 0.0, out=a1)
    a2 = kernels.conv1d_forward(a1, params.view("conv2.w"), params.view("conv2.b"))
    np.maximum(a2, 0.0, out=a2)
    p1, idx1 = kernels.maxpool1d_forward(a2, arch.pool)
    n1 = _bn_forward(
        p1, params.view("bn1.gamma"), params.view("bn1.beta"),
        params.running["bn1.mean"], params.running["bn1.var"],
        train, "bn1", cache, new_running, "bn1",
    )
    n1 = np.ascontiguousarray(n1)
    a3 = kernels.conv1d_forward(n1, params.view("conv3.w"), params.view("conv3.b"))
    np.maximum(a3, 0.0, out=a3)
    a4 = kernels.conv1d_forward(a3, params.view("conv4.w"), params.view("conv4.b"))
    np.maximum(a4, 0.0, out=a4)
    g, idxg = kernels.maxpool1d_forward(a4, a4.shape[2])
    n2 = _bn_forward(
        g, params.view("bn2.gamma"), params.view("bn2.beta"),
        params.running["bn2.mean"], params.running["bn2.var"],
        train, "bn2", cache, new_running, "bn2",
    )
    flat = n2.reshape(batch, -1)
    h_pre = flat @ params.view("fc1.w").T + params.view("fc1.b")
    h1 = np.maximum(h_pre, 0.0)
    if train:
        if dropout_p > 0.0:
            if rng is None:
                raise ShapeError("train-mode dropout needs an rng")
            keep = (rng.random((batch, arch.fc_width)) >= dropout_p) / (1.0 - dropout_p)
        else:
            keep = None
    elif mode == "eval_dropout":
        if dropout_mask is None:
            raise ShapeError("eval_dropout mode needs a frozen dropout_mask")
        keep = np.asarray(dropout_mask, dtype=np.float64).reshape(1, arch.fc_width)
    else:
        keep = None
    hd = h1 if keep is None else h1 * keep
    n3 = _bn_forward(
        hd, params.view("bn3.gamma"), params.view("bn3.beta"),
        params.running["bn3.mean"], params.running["bn3.var"],
        train, "bn3", cache, new_running, "bn3",
    )
    logits = n3 @ params.view("fc2.w").T + params.view("fc2.b")
    probs = softmax(logits)

    if not need_trace:
        return probs
    cache.update(
        x=x2, a1=a1, a2=a2, idx1=idx1, n1=n1, a3=a3, a4=a4, idxg=idxg,
        flat=flat, h1=h1, keep=keep, n3=n3,
    )
    return ForwardTrace(
        mode=mode, probs=probs, logits=logits, conv4_maps=a4,
        cache=cache, new_running=new_running,
    )


def forward_probs(params, x, mode="eval", dropout_mask=None):
    """Probability vectors without trace caching (memory-lean)."""
    return forward(params, x, mode=mode, dropout_mask=dropout_mask, need_trace=False)


def loss(probs, y) -> float:
    """Mean categorical cross-entropy with a 1e-12 probability floor."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    picked = probs[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(picked, LOSS_FLOOR))))


def backward(
    params: NetworkParams,
    trace: ForwardTrace,
    dlogits,
    need_param_grads: bool = True,
    stop_at_conv4: bool = False,
):
    """Reverse pass from a logits cotangent.

    Returns (flat_param_grads or None, conv4_map_grads). When
    ``stop_at_conv4`` is set only the head above conv4 is traversed and
    param grads are not computed.
    """
    arch = params.arch
    c = trace.cache
    train = trace.mode == "train"
    batch = dlogits.shape[0]
    grads = NetworkParams(arch) if need_param_grads else None

    def put(name, val):
        if grads is not None:
            grads.view(name)[...] = val

    # fc2
    put("fc2.w", dlogits.T @ c["n3"])
    put("fc2.b", dlogits.sum(axis=0))
    dn3 = dlogits @ params.view("fc2.w")
    # bn3
    xhat, istd, _ = c["bn3"]
    dhd, dg3, db3 = _bn_backward(dn3, xhat, istd, params.view("bn3.gamma"), train)
    put("bn3.gamma", dg3)
    put("bn3.beta", db3)
    # dropout
    dh1 = dhd if c["keep"] is None else dhd * c["keep"]
    dh1 = dh1 * (c["h1"] > 0)
    # fc1
    put("fc1.w", dh1.T @ c["flat"])
    put("fc1.b", dh1.sum(axis=0))
    dflat = dh1 @ params.view("fc1.w")
    # bn2 (input shape (B, C4, 1))
    dn2 = dflat.reshape(batch, -1, 1)
    xhat, istd, _ = c["bn2"]
    dg, dg2, db2 = _bn_backward(dn2, xhat, istd, params.view("bn2.gamma"), train)
    put("bn2.gamma", dg2)
    put("bn2.beta", db2)
    # global max pool
    l5 = c["a4"].shape[2]
    da4 = kernels.maxpool1d_backward(np.ascontiguousarray(dg), c["idxg"], l5)
    if stop_at_conv4:
        return None, da4
    # conv4
    dc4 = np.ascontiguousarray(da4 * (c["a4"] > 0))
    dw4, db4 = kernels.conv1d_backward_weights(c["a3"], dc4, arch.kernel)
    put("conv4.w", dw4)
    put("conv4.b", db4)
    da3 = kernels.conv1d_backward_input(dc4, params.view("conv4.w"), c["a3"].shape[2])
    # conv3
    dc3 = np.ascontiguousarray(da3 * (c["a3"] > 0))
    dw3, db3c = kernels.conv1d_backward_weights(c["n1"], dc3, arch.kernel)
    put("conv3.w", dw3)
    put("conv3.b", db3c)
    dn1 = kernels.conv1d_backward_input(dc3, params.view("conv3.w"), c["n1"].shape[2])
    # bn1
    xhat, istd, _ = c["bn1"]
    dp1, dg1, db1 = _bn_backward(dn1, xhat, istd, params.view("bn1.gamma"), train)
    put("bn1.gamma", dg1)
    put("bn1.beta", db1)
    # max pool 1
    da2 = kernels.maxpool1d_backward(np.ascontiguousarray(dp1), c["idx1"], c["a2"].shape[2])
    # conv2
    dc2 = np.ascontiguousarray(da2 * (c["a2"] > 0))
    dw2, db2c = kernels.conv1d_backward_weights(c["a1"], dc2, arch.kernel)
    put("conv2.w", dw2)
    put("conv2.b", db2c)
    da1 = kernels.conv1d_backward_input(dc2, params.view("conv2.w"), c["a1"].shape[2])
    # conv1
    dc1 = np.ascontiguousarray(da1 * (c["a1"] > 0))
    dw1, db1c = kernels.conv1d_backward_weights(c["x"][:, None, :], dc1, arch.kernel)
    put("conv1.w", dw1)
    put("conv1.b", db1c)
    return (grads.theta if grads is not None else None), da4


def gradient(params, x_batch, y_batch, mode="train", dropout_p=0.0, rng=None):
    """Flat gradient of the mean cross-entropy loss over a batch."""
    x_batch = _as_batch(x_batch, params.arch.n_input)
    y_batch = np.atleast_1d(np.asarray(y_batch, dtype=np.int64))
    if len(y_batch) == 0:
        raise ShapeError("empty batch")
    trace = forward(params, x_batch, mode=mode, dropout_p=dropout_p, rng=rng)
    onehot = np.zeros_like(trace.probs)
    onehot[np.arange(len(y_batch)), y_batch] = 1.0
    dlogits = (trace.probs - onehot) / len(y_batch)
    flat, _ = backward(params, trace, dlogits)
    return flat, trace


def logit_class_gradient_conv4(params, x, class_id, mode="eval", dropout_mask=None):
    """Gradient of one class logit w.r.t. the conv4 feature maps.

    Returns (trace, grad (B, C4, L5)).
    """
    trace = forward(params, x, mode=mode, dropout_mask=dropout_mask)
    dlogits = np.zeros_like(trace.logits)
    dlogits[:, class_id] = 1.0
    _, da4 = backward(params, trace, dlogits, need_param_grads=False, stop_at_conv4=True)
    return trace, da4


def argmax_class(probs) -> int:
    """Predicted label; exact ties resolve to the lowest class index."""
    return int(np.argmax(probs))


def predict(params, x):
    """(probs, predicted class) in eval mode."""
    probs = forward_probs(params, x)
    p = probs[0] if np.asarray(x).ndim == 1 else probs
    if p.ndim == 1:
        return p, argmax_class(p)
    return p, np.argmax(p, axis=1).astype(np.int64)


def batched_probs(params, xs, mode="eval", dropout_mask=None, chunk=512):
    """Eval probabilities over many inputs in fixed-size chunks."""
    xs = _as_batch(xs, params.arch.n_input)
    out = np.empty((xs.shape[0], params.arch.n_classes), dtype=np.float64)
    for start in range(0, xs.shape[0], chunk):
        out[start : start + chunk] = forward_probs(
            params, xs[start : start + chunk], mode=mode, dropout_mask=dropout_mask
        )
    return out


def accuracy(params, xs, ys, chunk=512) -> float:
    probs = batched_probs(params, xs, chunk=chunk)
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(ys)))


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    weight_decay: float = 0.0
    dropout_p: float = 0.2
    patience: int = 10

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ShapeError("dropout_p must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ShapeError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ShapeError(f"unknown optimizer {self.optimizer!r}")


class _Adam:
    def __init__(self, n, lr):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _SGDMomentum:
    def __init__(self, n, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.v = np.zeros(n)

    def step(self, theta, grad):
        self.v = self.momentum * self.v - self.lr * grad
        theta += self.v


def train(
    train_xy,
    val_xy,
    config: TrainConfig,
    arch: Architecture = DEFAULT_ARCH,
    curve_path=None,
    log=None,
):
    """Train from scratch; deterministic given the config seed.

    ``train_xy``/``val_xy`` are (X, y) pairs; ``val_xy`` may be None (no
    early stopping then). Returns (params, history) where history rows
    are (epoch, train_loss, val_acc).
    """
    x_train, y_train = train_xy
    x_train = _as_batch(x_train, arch.n_input)
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(y_train) == 0:
        raise ShapeError("empty training set")
    params = init_params(arch, spawn_rng(config.seed, "init"))
    shuffle_rng = spawn_rng(config.seed, "shuffle")
    dropout_rng = spawn_rng(config.seed, "dropout")
    opt = (
        _Adam(params.param_count, config.learning_rate)
        if config.optimizer == "adam"
        else _SGDMomentum(params.param_count, config.learning_rate)
    )
    best_acc, best_state, since_best = -1.0, None, 0
    history = []
    n = len(y_train)
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            grad, trace = gradient(
                params, x_train[idx], y_train[idx],
                mode="train", dropout_p=config.dropout_p, rng=dropout_rng,
            )
            batch_loss = loss(trace.probs, y_train[idx])
            if not np.isfinite(batch_loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergence(
                    f"non-finite loss/gradient at epoch {epoch}, batch {n_batches} "
                    f"(loss={batch_loss})"
                )
            if config.weight_decay > 0.0:
                grad = grad + config.weight_decay * params.theta
            opt.step(params.theta, grad)
            for key, val in trace.new_running.items():
                params.running[key] = val
            epoch_loss += batch_loss
            n_batches += 1
        epoch_loss /= max(n_batches, 1)
        val_acc = accuracy(params, *val_xy) if val_xy is not None else float("nan")
        history.append((epoch, epoch_loss, val_acc))
        if log is not None:
            log(f"epoch {epoch:3d}  loss {epoch_loss:.4f}  val_acc {val_acc:.4f}")
        if val_xy is not None:
            if val_acc > best_acc:
                best_acc, best_state, since_best = val_acc, params.copy(), 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
    if best_state is not None:
        params = best_state
    if curve_path is not None:
        with open(curve_path, "w") as fh:
            fh.write("epoch,train_loss,val_acc\n")
            for epoch, train_loss, val_acc in history:
                fh.write(f"{epoch},{train_loss:.10g},{val_acc:.10g}\n")
    return params, history


def save_checkpoint(params: NetworkParams, path) -> None:
    arch = params.arch
    running = params.running_flat()
    with open(path, "wb") as fh:
        fh.write(
            _CKPT_HEADER.pack(
                CHECKPOINT_MAGIC,
                CHECKPOINT_VERSION,
                arch.arch_hash(),
                params.param_count,
                running.size,
                arch.n_input,
                *arch.conv_channels,
                arch.kernel,
                arch.pool,
                arch.fc_width,
                arch.n_classes,
            )
        )
        fh.write(params.theta.astype("<f4").tobytes())
        fh.write(running.astype("<f4").tobytes())


def load_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CKPT_HEADER.size or blob[:4] != CHECKPOINT_MAGIC:
        raise ShapeError(f"{path} is not a checkpoint")
    (_, version, arch_hash, n_params, n_running, n_input, c1, c2, c3, c4,
     kernel, pool, fc_width, n_classes) = _CKPT_HEADER.unpack_from(blob, 0)
    if version != CHECKPOINT_VERSION:
        raise ShapeError(f"{path}: unsupported checkpoint version {version}")
    arch = Architecture(
        n_input=n_input, conv_channels=(c1, c2, c3, c4),
        kernel=kernel, pool=pool, fc_width=fc_width, n_classes=n_classes,
    )
    if arch.arch_hash() != arch_hash:
        raise ShapeError(f"{path}: architecture hash mismatch")
    offset = _CKPT_HEADER.size
    theta = np.frombuffer(blob, dtype="<f4", count=n_params, offset=offset).astype(np.float64)
    offset += 4 * n_params
    running = np.frombuffer(blob, dtype="<f4", count=n_running, offset=offset).astype(np.float64)
    params = NetworkParams(arch, theta)
    params.set_running_flat(running)
    return params
