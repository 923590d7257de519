"""Spatio-temporal graph convolutional forecaster.

Input windows are (batch, history, station, channel). Internally the model
works in (batch, station, time, channel) layout:

    block 1: gated temporal conv -> graph conv -> ReLU -> gated temporal conv
    block 2: same
    head:    gated temporal conv collapsing the remaining time axis to 1,
             then a per-station linear map to a single output channel

Each gated temporal conv is a valid convolution of width f_t whose output is
split in half: linear part times sigmoid gate. Every temporal layer shortens
the time axis by f_t - 1, so a window of P steps must satisfy
P - 4 (f_t - 1) >= 1 before the head sees it.

Training minimizes mean squared residual over the batch on the next-step
target, with Adam and best-validation parameter selection. Multi-step
forecasts at inference iterate the one-step model, writing each prediction
back into the window's predicted channel while exogenous channels hold their
last value.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tz
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ShapeError, TrainingError, ValidationError
from .graph import GraphOperator
from .ingest import WindowedDataset
from .optim import Adam
from .tensor import Tensor

_MODE_TO_OPERATOR = {
    "chebyshev": "scaled_laplacian",
    "first_order": "renormalized_adjacency",
}


@dataclass
class ModelConfig:
    n_nodes: int
    in_channels: int
    history_steps: int
    channels: tuple[int, int, int] = (32, 8, 32)
    time_kernel: int = 3
    graph_kernel: int = 3
    graph_mode: str = "chebyshev"
    dropout: float = 0.3

    def validate(self) -> None:
        if self.n_nodes < 1 or self.in_channels < 1:
            raise ConfigError(
                f"need at least one node and one channel, got "
                f"({self.n_nodes}, {self.in_channels})")
        if len(self.channels) != 3 or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be three positive ints, got {self.channels}")
        if self.time_kernel < 1:
            raise ConfigError(f"time_kernel must be >= 1, got {self.time_kernel}")
        if self.graph_mode not in _MODE_TO_OPERATOR:
            raise ConfigError(
                f"graph_mode must be one of {tuple(_MODE_TO_OPERATOR)}, "
                f"got {self.graph_mode!r}")
        if self.graph_mode == "first_order" and self.graph_kernel != 1:
            raise ConfigError("first_order mode uses graph_kernel=1")
        if self.graph_kernel < 1:
            raise ConfigError(f"graph_kernel must be >= 1, got {self.graph_kernel}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.head_time_steps < 1:
            raise ConfigError(
                f"history_steps={self.history_steps} leaves "
                f"{self.head_time_steps} time steps after four temporal layers "
                f"of width {self.time_kernel}; need at least 1")

    @property
    def head_time_steps(self) -> int:
        return self.history_steps - 4 * (self.time_kernel - 1)

    def operator_kind(self) -> str:
        return _MODE_TO_OPERATOR[self.graph_mode]


def _glorot(rng: np.random.Generator, shape: tuple[int, ...],
            fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class TemporalGatedConv:
    """(..., T, c_in) -> (..., T - f + 1, c_out), GLU-gated."""

    def __init__(self, f: int, c_in: int, c_out: int, rng: np.random.Generator):
        self.f, self.c_in, self.c_out = f, c_in, c_out
        kernel = np.stack([_glorot(rng, (c_in, 2 * c_out), c_in, 2 * c_out)
                           for _ in range(f)])
        self.kernel = Tensor(kernel, requires_grad=True)
        self.bias_lin = Tensor(np.zeros(c_out), requires_grad=True)
        self.bias_gate = Tensor(np.zeros(c_out), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        full = tz.conv1d_time(x, self.kernel)
        lin = tz.add(tz.slice_axis(full, -1, 0, self.c_out), self.bias_lin)
        gate = tz.sigmoid(
            tz.add(tz.slice_axis(full, -1, self.c_out, 2 * self.c_out), self.bias_gate))
        return tz.multiply_elementwise(lin, gate)

    def parameters(self) -> dict[str, Tensor]:
        return {"kernel": self.kernel, "bias_lin": self.bias_lin,
                "bias_gate": self.bias_gate}


class GraphConv:
    """Mix information across stations with a spectral graph filter.

    chebyshev: sum_r Theta_r T_r(M) x with T_0 = I, T_1 = M and
    T_r = 2 M T_{r-1} - T_{r-2}, M the scaled Laplacian.
    first_order: Theta_0 (M x) with M the renormalized adjacency.
    """

    def __init__(self, order: int, c_in: int, c_out: int, mode: str,
                 rng: np.random.Generator):
        self.order, self.c_in, self.c_out, self.mode = order, c_in, c_out, mode
        kernel = np.stack([_glorot(rng, (c_in, c_out), c_in, c_out)
                           for _ in range(order)])
        self.kernel = Tensor(kernel, requires_grad=True)

    def _theta(self, r: int) -> Tensor:
        return tz.reshape(tz.slice_axis(self.kernel, 0, r, r + 1),
                          (self.c_in, self.c_out))

    def forward(self, x: Tensor, op: GraphOperator) -> Tensor:
        expected = _MODE_TO_OPERATOR[self.mode]
        if op.kind != expected:
            raise ValidationError(
                f"graph mode {self.mode!r} needs a {expected} operator, "
                f"got {op.kind!r}")
        m = op.matrix
        if self.mode == "first_order":
            return tz.matmul(tz.left_multiply(m, x, axis=1), self._theta(0))
        acc = tz.matmul(x, self._theta(0))
        if self.order >= 2:
            t_prev, t_cur = x, tz.left_multiply(m, x, axis=1)
            acc = tz.add(acc, tz.matmul(t_cur, self._theta(1)))
            for r in range(2, self.order):
                t_next = tz.sub(
                    tz.multiply_elementwise(tz.left_multiply(m, t_cur, axis=1), 2.0),
                    t_prev)
                acc = tz.add(acc, tz.matmul(t_next, self._theta(r)))
                t_prev, t_cur = t_cur, t_next
        return acc

    def parameters(self) -> dict[str, Tensor]:
        return {"kernel": self.kernel}


class STConvBlock:
    """Temporal -> graph -> ReLU -> temporal. Time shrinks by 2 (f - 1)."""

    def __init__(self, config: ModelConfig, c_in: int, rng: np.random.Generator):
        c1, c2, c3 = config.channels
        self.temporal_in = TemporalGatedConv(config.time_kernel, c_in, c1, rng)
        self.graph = GraphConv(config.graph_kernel, c1, c2, config.graph_mode, rng)
        self.temporal_out = TemporalGatedConv(config.time_kernel, c2, c3, rng)

    def forward(self, x: Tensor, op: GraphOperator) -> Tensor:
        h = self.temporal_in.forward(x)
        h = tz.relu(self.graph.forward(h, op))
        return self.temporal_out.forward(h)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for prefix, layer in (("temporal_in", self.temporal_in),
                              ("graph", self.graph),
                              ("temporal_out", self.temporal_out)):
            for name, p in layer.parameters().items():
                out[f"{prefix}.{name}"] = p
        return out


class StgcnModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c3 = config.channels[2]
        self.block1 = STConvBlock(config, config.in_channels, rng)
        self.block2 = STConvBlock(config, c3, rng)
        self.head_temporal = TemporalGatedConv(config.head_time_steps, c3, c3, rng)
        self.fc_weight = Tensor(_glorot(rng, (c3, 1), c3, 1), requires_grad=True)
        self.fc_bias = Tensor(np.zeros(1), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for prefix, block in (("block1", self.block1), ("block2", self.block2)):
            for name, p in block.parameters().items():
                out[f"{prefix}.{name}"] = p
        for name, p in self.head_temporal.parameters().items():
            out[f"head.temporal.{name}"] = p
        out["head.fc.weight"] = self.fc_weight
        out["head.fc.bias"] = self.fc_bias
        return out

    def _check_operator(self, op: GraphOperator) -> None:
        if op.kind != self.config.operator_kind():
            raise ValidationError(
                f"model in {self.config.graph_mode!r} mode needs a "
                f"{self.config.operator_kind()} operator, got {op.kind!r}")
        n = self.config.n_nodes
        if op.matrix.shape != (n, n):
            raise ShapeError(
                f"graph operator is {op.matrix.shape}, model has {n} nodes")

    def forward(self, windows, op: GraphOperator, training: bool = False,
                rng=None) -> Tensor:
        """(B, P, S, K) windows -> (B, S, 1) next-step predictions."""
        x = windows if isinstance(windows, Tensor) else Tensor(windows)
        cfg = self.config
        if x.ndim != 4 or x.shape[1:] != (cfg.history_steps, cfg.n_nodes,
                                          cfg.in_channels):
            raise ShapeError(
                f"expected windows (B, {cfg.history_steps}, {cfg.n_nodes}, "
                f"{cfg.in_channels}), got {x.shape}")
        self._check_operator(op)
        if training and cfg.dropout > 0.0 and rng is None:
            raise ValidationError("training forward with dropout needs an rng")

        h = tz.swap_axes(x, 1, 2)                    # (B, S, P, K)
        h = self.block1.forward(h, op)
        h = tz.dropout(h, cfg.dropout, training, rng)
        h = self.block2.forward(h, op)
        h = tz.dropout(h, cfg.dropout, training, rng)
        h = self.head_temporal.forward(h)            # (B, S, 1, c3)
        h = tz.reshape(h, (x.shape[0], cfg.n_nodes, cfg.channels[2]))
        return tz.add(tz.matmul(h, self.fc_weight), self.fc_bias)


def l2_loss(pred: Tensor, target) -> Tensor:
    """Mean over the batch of the squared residual norm."""
    t = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != t.shape:
        raise ShapeError(f"loss operands differ: {pred.shape} vs {t.shape}")
    diff = tz.sub(pred, t)
    return tz.multiply_elementwise(
        tz.reduce_sum(tz.multiply_elementwise(diff, diff)), 1.0 / pred.shape[0])


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    loss_horizon: int = 1  # which horizon step supervises training

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.loss_horizon < 1:
            raise ConfigError(f"loss_horizon must be >= 1, got {self.loss_horizon}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_mae: float
    val_rmse: float


@dataclass
class TrainResult:
    history: list[EpochStats]
    best_epoch: int
    best_val_loss: float


def _validation_stats(model: StgcnModel, op: GraphOperator, inputs: np.ndarray,
                      targets: np.ndarray, batch_size: int) -> tuple[float, float, float]:
    preds = []
    for lo in range(0, inputs.shape[0], batch_size):
        preds.append(model.forward(inputs[lo:lo + batch_size], op).data)
    pred = np.concatenate(preds, axis=0)
    err = pred - targets
    loss = float((err ** 2).sum() / inputs.shape[0])
    return loss, float(np.abs(err).mean()), float(np.sqrt((err ** 2).mean()))


def train(model: StgcnModel, dataset: WindowedDataset, op: GraphOperator,
          config: TrainConfig | None = None) -> TrainResult:
    """Adam training with a fixed shuffle seed and best-validation selection.

    The supervision signal is horizon step ``loss_horizon`` (default 1, the
    next step). Validation loss, MAE and RMSE are computed on the normalized
    scale after every epoch; the parameters of the best validation epoch are
    restored into the model before returning.
    """
    config = config or TrainConfig()
    config.validate()
    if config.loss_horizon > dataset.horizon_steps:
        raise ConfigError(
            f"loss_horizon {config.loss_horizon} exceeds dataset horizon "
            f"{dataset.horizon_steps}")
    train_x, train_y_all = dataset.part("train")
    val_x, val_y_all = dataset.part("val")
    if train_x.shape[0] == 0:
        raise TrainingError("training split is empty")
    if val_x.shape[0] == 0:
        raise TrainingError("validation split is empty; best-epoch selection needs it")
    h = config.loss_horizon - 1
    train_y = train_y_all[:, h]                  # (N, S, 1)
    val_y = val_y_all[:, h]

    model._check_operator(op)
    params = model.parameters()
    opt = Adam(list(params.values()), lr=config.lr)
    rng = np.random.default_rng(config.seed)

    history: list[EpochStats] = []
    best_val = np.inf
    best_epoch = 0
    best_state: dict[str, np.ndarray] = {}

    n_train = train_x.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_train)
        total = 0.0
        for lo in range(0, n_train, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            with tz.Tape():
                pred = model.forward(train_x[idx], op, training=True, rng=rng)
                loss = l2_loss(pred, train_y[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {lo // config.batch_size}; "
                    "lower the learning rate")
            tz.backward(loss)
            opt.step()
            opt.zero_grad()
            total += value * len(idx)

        val_loss, val_mae, val_rmse = _validation_stats(
            model, op, val_x, val_y, max(config.batch_size, 64))
        history.append(EpochStats(epoch, total / n_train, val_loss, val_mae, val_rmse))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {name: p.data.copy() for name, p in params.items()}

    for name, p in params.items():
        p.data[...] = best_state[name]
    return TrainResult(history, best_epoch, float(best_val))


def predict(model: StgcnModel, window: np.ndarray, op: GraphOperator,
            horizon: int, predicted_channel: int) -> np.ndarray:
    """Iterate the one-step model ``horizon`` times on one (P, S, K) window.

    Each step's prediction is appended into the predicted channel of the
    rolling window; the other channels repeat their last observed value.
    Returns (horizon, S) on the same (normalized) scale as the input.
    """
    preds = predict_batch(model, window[np.newaxis], op, horizon, predicted_channel)
    return preds[0]


def predict_batch(model: StgcnModel, windows: np.ndarray, op: GraphOperator,
                  horizon: int, predicted_channel: int,
                  batch_size: int = 256) -> np.ndarray:
    """Vectorized rollout over (N, P, S, K) windows. Returns (N, horizon, S)."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 4:
        raise ShapeError(f"expected (N, P, S, K) windows, got {windows.shape}")
    if np.isnan(windows).any():
        raise ValidationError("forecast windows contain missing values")
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    if not 0 <= predicted_channel < windows.shape[3]:
        raise ValidationError(
            f"predicted channel {predicted_channel} out of range for "
            f"{windows.shape[3]} channels")

    n = windows.shape[0]
    out = np.empty((n, horizon, windows.shape[2]))
    for lo in range(0, n, batch_size):
        block = windows[lo:lo + batch_size].copy()
        for step in range(horizon):
            pred = model.forward(block, op).data[:, :, 0]    # (B, S)
            out[lo:lo + block.shape[0], step] = pred
            nxt = block[:, -1].copy()                        # hold exogenous channels
            nxt[:, :, predicted_channel] = pred
            block = np.concatenate([block[:, 1:], nxt[:, np.newaxis]], axis=1)
    return out


def save_model(path, model: StgcnModel, meta: dict | None = None) -> None:
    """Checkpoint parameters plus enough metadata to rebuild the model."""
    payload = dict(meta or {})
    payload["model_config"] = asdict(model.config)
    save_checkpoint(path, model.parameters(), payload)


def load_model(path) -> tuple[StgcnModel, dict]:
    """Rebuild a model from a checkpoint. Parameter blocks replace the init."""
    blocks, meta = load_checkpoint(path)
    try:
        raw = dict(meta["model_config"])
        raw["channels"] = tuple(raw["channels"])
        config = ModelConfig(**raw)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"checkpoint lacks a usable model config: {exc}") from exc
    model = StgcnModel(config, seed=0)
    params = model.parameters()
    if set(params) != set(blocks):
        missing = set(params) ^ set(blocks)
        raise ValidationError(f"checkpoint parameter names do not match model: {missing}")
    for name, p in params.items():
        if blocks[name].shape != p.data.shape:
            raise ValidationError(
                f"parameter {name} has shape {blocks[name].shape}, "
                f"expected {p.data.shape}")
        p.data[...] = blocks[name]
    return model, meta
