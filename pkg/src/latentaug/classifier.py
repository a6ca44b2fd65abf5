"""Small image classifiers, cross-entropy training, and plateau LR scheduling.

Two architectures are available: ``small-cnn`` (two stride-2 3x3 conv blocks
and a dense head) and ``mlp`` (one hidden dense layer). Images are passed as
(N, H, W, C) arrays in [0, 1].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint
from .augment import random_classical
from .errors import ContractError, DataError, DimensionError, InsufficientDataError, ParseError
from .layers import AdamState, Conv2dLayer, DenseLayer, adam_step
from .tensor import Tensor, as_tensor, backward, log_softmax, relu

logger = logging.getLogger(__name__)

ARCHITECTURES = ("small-cnn", "mlp")


@dataclass
class ClassifierConfig:
    arch: str = "small-cnn"
    epochs: int = 150
    lr: float = 5e-4
    batch_size: int = 24
    patience: int = 10
    factor: float = 10.0
    threshold: float = 1e-4
    conv_channels: tuple[int, int] = (8, 16)
    mlp_hidden: int = 128
    classical_ops: tuple[str, ...] = ()


@dataclass
class ClassifierModel:
    arch: str
    num_classes: int
    input_shape: tuple[int, int, int]  # (H, W, C)
    convs: list[Conv2dLayer] = field(default_factory=list)
    dense: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ContractError(f"unknown architecture {self.arch!r}")
        if self.dense[-1].out_dim != self.num_classes:
            raise DimensionError("classifier head must output one logit per class")

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, conv in enumerate(self.convs):
            named += [(f"conv.{i}.kernels", conv.kernels), (f"conv.{i}.bias", conv.bias)]
        for i, layer in enumerate(self.dense):
            named += [(f"dense.{i}.weight", layer.weight), (f"dense.{i}.bias", layer.bias)]
        return named

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def build_classifier(arch: str, input_shape, num_classes: int, rng: np.random.Generator,
                     conv_channels=(8, 16), mlp_hidden: int = 128) -> ClassifierModel:
    shape = tuple(int(s) for s in input_shape)
    if len(shape) == 2:
        shape += (1,)
    h, w, c = shape
    if arch == "small-cnn":
        convs, in_ch = [], c
        for out_ch in conv_channels:
            convs.append(Conv2dLayer.create(in_ch, out_ch, rng, kernel_size=3, stride=2))
            h, w = convs[-1].output_hw(h, w)
            in_ch = out_ch
        dense = [DenseLayer.create(in_ch * h * w, num_classes, rng)]
    elif arch == "mlp":
        convs = []
        dense = [DenseLayer.create(h * w * c, mlp_hidden, rng),
                 DenseLayer.create(mlp_hidden, num_classes, rng)]
    else:
        raise ContractError(f"unknown architecture {arch!r}")
    return ClassifierModel(arch, int(num_classes), shape, convs, dense)


def _check_geometry(model: ClassifierModel, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4 or tuple(images.shape[1:]) != tuple(model.input_shape):
        raise DimensionError(f"model expects images of shape {model.input_shape}, got {images.shape[1:]}")
    return images


def logits(model: ClassifierModel, images) -> Tensor:
    images = _check_geometry(model, images)
    n = images.shape[0]
    if model.arch == "small-cnn":
        h = Tensor(images.transpose(0, 3, 1, 2))
        for conv in model.convs:
            h = relu(conv(h))
        h = h.reshape(n, -1)
    else:
        h = Tensor(images.reshape(n, -1))
    for layer in model.dense[:-1]:
        h = relu(layer(h))
    return model.dense[-1](h)


def predict(model: ClassifierModel, images) -> np.ndarray:
    """Class-probability rows (softmax of the logits)."""
    z = logits(model, images).data
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(z: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(z)."""
    z = as_tensor(z)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise DimensionError(f"logits {z.shape} and labels {labels.shape} disagree")
    onehot = np.zeros(z.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    return -(log_softmax(z) * onehot).sum() * (1.0 / labels.size)


@dataclass(frozen=True)
class PlateauSchedulerState:
    lr: float
    patience: int = 10
    factor: float = 10.0
    threshold: float = 1e-4
    best: float = math.inf
    epochs_since_improvement: int = 0


def scheduler_step(state: PlateauSchedulerState, validation_loss: float) -> PlateauSchedulerState:
    if not math.isfinite(validation_loss):
        raise ContractError(f"validation loss must be finite, got {validation_loss}")
    if validation_loss < state.best - state.threshold:
        return replace(state, best=validation_loss, epochs_since_improvement=0)
    waited = state.epochs_since_improvement + 1
    if waited >= state.patience:
        return replace(state, lr=state.lr / state.factor, epochs_since_improvement=0)
    return replace(state, epochs_since_improvement=waited)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class LabeledImages:
    images: np.ndarray  # (N, H, W, C)
    labels: np.ndarray  # (N,) int
    augmentable: np.ndarray | None = None  # (N,) bool, rows eligible for classical ops

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def _validate_split(data: LabeledImages, num_classes: int, name: str) -> None:
    if len(data) == 0:
        raise InsufficientDataError(f"{name} split is empty")
    if data.labels.min() < 0 or data.labels.max() >= num_classes:
        raise DataError(f"{name} split has labels outside 0..{num_classes - 1}")


def evaluate_loss(model: ClassifierModel, data: LabeledImages) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) without building a tape."""
    z = logits(model, data.images)
    loss = cross_entropy(z, data.labels).item()
    acc = float(np.mean(z.data.argmax(axis=1) == data.labels))
    return loss, acc


def train_classifier(train: LabeledImages, val: LabeledImages, config: ClassifierConfig,
                     rng: np.random.Generator, num_classes: int | None = None
                     ) -> tuple[ClassifierModel, list[EpochRecord]]:
    """Minibatch Adam on cross-entropy with plateau LR reduction.

    Classical augmentation (``config.classical_ops``) is drawn per sample and
    per epoch for rows flagged ``augmentable``. Returns the parameters of the
    epoch with the lowest validation loss together with the full history.
    """
    if num_classes is None:
        num_classes = int(max(train.labels.max(), val.labels.max())) + 1 if len(train) and len(val) else 0
    _validate_split(train, num_classes, "train")
    _validate_split(val, num_classes, "validation")
    images = np.asarray(train.images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    model = build_classifier(config.arch, images.shape[1:], num_classes, rng,
                             config.conv_channels, config.mlp_hidden)
    params = model.parameters()
    opt = AdamState(lr=config.lr)
    sched = PlateauSchedulerState(config.lr, config.patience, config.factor, config.threshold)
    augmentable = (np.ones(len(train), dtype=bool) if train.augmentable is None
                   else np.asarray(train.augmentable, dtype=bool))
    n = len(train)
    history: list[EpochRecord] = []
    best_loss, best_params = math.inf, None
    for epoch in range(config.epochs):
        opt.lr = sched.lr
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = images[idx]
            if config.classical_ops:
                mask = augmentable[idx]
                if mask.any():
                    batch = batch.copy()
                    batch[mask] = random_classical(batch[mask], config.classical_ops, rng)
            loss = cross_entropy(logits(model, batch), train.labels[idx])
            grads = backward(loss, wrt=params)
            adam_step(params, [grads[p].data for p in params], opt)
            running += loss.item() * idx.size
        val_loss, val_acc = evaluate_loss(model, val)
        history.append(EpochRecord(epoch, running / n, val_loss, val_acc, sched.lr))
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = [p.data.copy() for p in params]
        sched = scheduler_step(sched, val_loss)
        if epoch % 25 == 0:
            logger.debug("clf epoch %d train %.4f val %.4f acc %.3f lr %.1e",
                         epoch, running / n, val_loss, val_acc, sched.lr)
    for p, saved in zip(params, best_params):
        p.data = saved
    return model, history


def save_checkpoint(model: ClassifierModel, path) -> None:
    meta = {
        "arch": model.arch,
        "num_classes": model.num_classes,
        "input_shape": list(model.input_shape),
        "strides": [conv.stride for conv in model.convs],
    }
    tensors = [(name, t.data) for name, t in model.named_parameters()]
    checkpoint.write_container(path, checkpoint.CLF_FORMAT, meta, tensors)


def load_checkpoint(path) -> ClassifierModel:
    meta, tensors = checkpoint.read_container(path, checkpoint.CLF_FORMAT)
    try:
        convs = [Conv2dLayer(Tensor(tensors[f"conv.{i}.kernels"], requires_grad=True),
                             Tensor(tensors[f"conv.{i}.bias"], requires_grad=True), stride)
                 for i, stride in enumerate(meta["strides"])]
        n_dense = sum(1 for k in tensors if k.startswith("dense.") and k.endswith(".weight"))
        dense = [DenseLayer(Tensor(tensors[f"dense.{i}.weight"], requires_grad=True),
                            Tensor(tensors[f"dense.{i}.bias"], requires_grad=True))
                 for i in range(n_dense)]
        return ClassifierModel(meta["arch"], int(meta["num_classes"]),
                               tuple(meta["input_shape"]), convs, dense)
    except (KeyError, TypeError, DimensionError, ContractError) as exc:
        raise ParseError(f"inconsistent checkpoint metadata: {exc}", 0) from None
