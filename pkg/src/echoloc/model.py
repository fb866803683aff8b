"""Fully connected regressor trained from scratch: ReLU hidden layers with
inverted dropout, MSE loss, bias-corrected Adam, and early stopping on
validation nRMSE.

The standard architecture maps the 1534-dim feature vector through hidden
widths 500, 300 and 50 to the three echo times. All arithmetic is float64
and deterministic given the seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .dsp import FEATURE_DIM
from .errors import FormatError

STANDARD_LAYERS = (FEATURE_DIM, 500, 300, 50, 3)

MODEL_MAGIC = b"MIRM"
MODEL_VERSION = 1


@dataclass
class MlpParams:
    """Weight matrices (fan_in x fan_out) and bias vectors, float64."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weight/bias count mismatch")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"inconsistent shapes {w.shape} / {b.shape}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator) -> "MlpParams":
        """He-style uniform init, limit sqrt(6 / fan_in)."""
        weights, biases = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / n_in)
            weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases)


@dataclass
class Normalizer:
    """Per-dimension z-score statistics fitted on the training split."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> "Normalizer":
        return cls(
            x_mean=x.mean(axis=0),
            x_std=np.maximum(x.std(axis=0), 1e-12),
            y_mean=y.mean(axis=0),
            y_std=np.maximum(y.std(axis=0), 1e-12),
        )

    def normalize_x(self, x):
        return (x - self.x_mean) / self.x_std

    def normalize_y(self, y):
        return (y - self.y_mean) / self.y_std

    def denormalize_y(self, y):
        return y * self.y_std + self.y_mean


@dataclass
class AdamState:
    """First/second moment accumulators and step counter."""

    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: MlpParams, lr: float = 1e-3) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(w) for w in params.weights],
            v_w=[np.zeros_like(w) for w in params.weights],
            m_b=[np.zeros_like(b) for b in params.biases],
            v_b=[np.zeros_like(b) for b in params.biases],
            lr=lr,
        )


@dataclass
class TrainConfig:
    batch_size: int = 128
    max_epochs: int = 200
    dropout: float = 0.3
    patience: int = 20
    seed: int = 0
    lr: float = 1e-3
    layer_sizes: tuple[int, ...] = STANDARD_LAYERS

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def forward(x: np.ndarray, params: MlpParams, mode: str = "infer",
            dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Run the network; returns (predictions, cache for backward).

    Train mode applies inverted dropout after each hidden ReLU: units are
    zeroed with probability `dropout` and survivors scaled by 1/(1-p), so
    inference needs no rescaling and is deterministic.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"input dim {x.shape[1]} != network input "
                         f"{params.weights[0].shape[0]}")
    if mode == "train" and dropout > 0.0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")

    n_layers = len(params.weights)
    h = x
    pre_acts, masks, hiddens = [], [], [x]
    for l in range(n_layers - 1):
        a = h @ params.weights[l] + params.biases[l]
        h = np.maximum(a, 0.0)
        if mode == "train" and dropout > 0.0:
            mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = h * mask
        else:
            mask = None
        pre_acts.append(a)
        masks.append(mask)
        hiddens.append(h)
    y = h @ params.weights[-1] + params.biases[-1]
    cache = {"pre_acts": pre_acts, "masks": masks, "hiddens": hiddens,
             "pred": y, "params": params}
    return (y[0] if squeeze else y), cache


def loss_mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over every output of every sample in the batch."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def backward(cache: dict, target: np.ndarray):
    """Exact batch-MSE gradients for every weight and bias, reusing the
    dropout masks drawn in the forward pass."""
    params: MlpParams = cache["params"]
    pred = cache["pred"]
    target = np.asarray(target, dtype=float)
    if target.ndim == 1:
        target = target[None, :]
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)

    delta = 2.0 * (pred - target) / pred.size
    grad_w[-1] = cache["hiddens"][-1].T @ delta
    grad_b[-1] = delta.sum(axis=0)
    dh = delta @ params.weights[-1].T
    for l in range(len(params.weights) - 2, -1, -1):
        mask = cache["masks"][l]
        if mask is not None:
            dh = dh * mask
        da = dh * (cache["pre_acts"][l] > 0.0)
        grad_w[l] = cache["hiddens"][l].T @ da
        grad_b[l] = da.sum(axis=0)
        if l > 0:
            dh = da @ params.weights[l].T
    return grad_w, grad_b


def adam_step(params: MlpParams, grads, state: AdamState):
    """Standard bias-corrected Adam update, in place."""
    grad_w, grad_b = grads
    state.step += 1
    b1c = 1.0 - state.beta1 ** state.step
    b2c = 1.0 - state.beta2 ** state.step
    for group, moments1, moments2, gs in (
            (params.weights, state.m_w, state.v_w, grad_w),
            (params.biases, state.m_b, state.v_b, grad_b)):
        for p, m, v, g in zip(group, moments1, moments2, gs):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            p -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
    return params, state


def nrmse(preds: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-target RMSE over the (population) standard deviation of the truth.

    0 is a perfect fit; 1 means no better than predicting the mean.
    """
    preds = np.atleast_2d(np.asarray(preds, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch {preds.shape} vs {targets.shape}")
    if preds.shape[0] < 2:
        raise ValueError("nRMSE needs at least 2 samples")
    std = targets.std(axis=0)
    if np.any(std == 0.0):
        raise ValueError("a target column has zero variance")
    rmse = np.sqrt(np.mean((preds - targets) ** 2, axis=0))
    return rmse / std


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_nrmse: list[np.ndarray] = field(default_factory=list)
    best_epoch: int = -1


def train(train_set, val_set, config: TrainConfig = TrainConfig(),
          log=None):
    """Minibatch Adam on z-scored features/targets.

    `train_set` and `val_set` are (X, Y) array pairs in raw units. Returns
    the parameters of the best validation epoch (mean nRMSE across targets),
    the fitted normalizer, and the per-epoch history. Stops early after
    `config.patience` epochs without improvement.
    """
    x_tr, y_tr = (np.asarray(a, dtype=float) for a in train_set)
    x_va, y_va = (np.asarray(a, dtype=float) for a in val_set)
    if x_tr.shape[0] == 0 or x_va.shape[0] == 0:
        raise ValueError("train and validation splits must be non-empty")

    norm = Normalizer.fit(x_tr, y_tr)
    xn_tr = norm.normalize_x(x_tr)
    yn_tr = norm.normalize_y(y_tr)
    xn_va = norm.normalize_x(x_va)

    rng = np.random.default_rng(config.seed)
    params = MlpParams.init(config.layer_sizes, rng)
    state = AdamState.zeros(params, lr=config.lr)
    history = TrainHistory()
    best = np.inf
    best_params = params.copy()
    since_best = 0

    n = x_tr.shape[0]
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            pred, cache = forward(xn_tr[idx], params, mode="train",
                                  dropout=config.dropout, rng=rng)
            losses.append(loss_mse(pred, yn_tr[idx]))
            grads = backward(cache, yn_tr[idx])
            adam_step(params, grads, state)
        history.train_loss.append(float(np.mean(losses)))

        pred_va, _ = forward(xn_va, params, mode="infer")
        val = nrmse(norm.denormalize_y(pred_va), y_va)
        history.val_nrmse.append(val)
        if log is not None:
            log(f"epoch {epoch + 1:3d}  loss {history.train_loss[-1]:.5f}  "
                f"val nRMSE {val[0]:.3f} {val[1]:.3f} {val[2]:.3f}")

        mean_val = float(val.mean())
        if mean_val < best - 1e-12:
            best = mean_val
            best_params = params.copy()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    return best_params, norm, history


@dataclass
class MlpModel:
    """A trained regressor plus everything inference and aggregation need."""

    params: MlpParams
    normalizer: Normalizer
    val_nrmse: np.ndarray   # per target, on the validation split
    target_std: np.ndarray  # validation-target std, seconds
    config: dict
    seed: int = 0

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Raw-unit predictions for one feature vector or a batch."""
        y, _ = forward(self.normalizer.normalize_x(np.asarray(x, dtype=float)),
                       self.params, mode="infer")
        return self.normalizer.denormalize_y(y)

    def variances(self) -> np.ndarray:
        """Per-target validation MSE in seconds^2, the Gaussian widths used
        by the aggregation stage."""
        return (self.val_nrmse * self.target_std) ** 2


def _model_blocks(model: MlpModel) -> list[np.ndarray]:
    blocks = []
    for w, b in zip(model.params.weights, model.params.biases):
        blocks.extend([w, b])
    blocks.extend([model.normalizer.x_mean, model.normalizer.x_std,
                   model.normalizer.y_mean, model.normalizer.y_std])
    return blocks


def save_model(model: MlpModel, path):
    """Write the versioned container: magic, version, JSON header, then
    float64 little-endian parameter blocks."""
    blocks = _model_blocks(model)
    header = {
        "layer_sizes": list(model.params.layer_sizes),
        "val_nrmse": [float(v) for v in model.val_nrmse],
        "target_std": [float(v) for v in model.target_std],
        "config": model.config,
        "seed": int(model.seed),
        "block_shapes": [list(b.shape) for b in blocks],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(raw)))
        fh.write(raw)
        for b in blocks:
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    if len(data) < 12 + hlen:
        raise FormatError("truncated model header")
    try:
        header = json.loads(data[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable model header: {e}") from e

    shapes = [tuple(s) for s in header["block_shapes"]]
    need = sum(int(np.prod(s)) for s in shapes) * 8
    body = data[12 + hlen:]
    if len(body) != need:
        raise FormatError(f"model payload is {len(body)} bytes, expected {need}")
    arrays = []
    off = 0
    for s in shapes:
        cnt = int(np.prod(s))
        arrays.append(np.frombuffer(body, dtype="<f8", count=cnt,
                                    offset=off).reshape(s).copy())
        off += cnt * 8

    sizes = header["layer_sizes"]
    n_layers = len(sizes) - 1
    weights = [arrays[2 * i] for i in range(n_layers)]
    biases = [arrays[2 * i + 1] for i in range(n_layers)]
    nm = arrays[2 * n_layers:]
    return MlpModel(
        params=MlpParams(weights, biases),
        normalizer=Normalizer(*nm),
        val_nrmse=np.array(header["val_nrmse"], dtype=float),
        target_std=np.array(header["target_std"], dtype=float),
        config=header["config"],
        seed=int(header["seed"]),
    )
