"""Two-class MLP training demo with masked gradients and activations.

A small fully connected ReLU network is trained by plain SGD on synthetic
2-D datasets. Neural gradients (loss gradients at pre-activations) can be
masked with any stochastic block estimator before they enter the weight
update, and hidden activations can be masked greedily, either on the raw
pre-activations or after the ReLU. The backward pass itself always uses
the unmasked gradient signal; masking applies where the gradient is
consumed by the update, mirroring how block-sparse hardware would consume
it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import SparsityPattern
from .estimators import (
    PATTERN_24,
    EstimatorKind,
    elementwise_variance_array,
    greedy_mask_array,
    prune_array,
    resolve_pattern,
)
from .rng import RandomStream

DATASET_KINDS = ("two-moons", "spirals")
ACT_MODES = ("none", "greedy", "relu-greedy")


@dataclass(frozen=True)
class MlpConfig:
    """Training configuration; defaults give a quickly separable problem."""

    widths: tuple[int, ...] = (2, 64, 64, 2)
    epochs: int = 120
    lr: float = 0.15
    batch_size: int = 64
    seed: int = 0
    grad_mask: EstimatorKind | None = None
    grad_pattern: SparsityPattern | None = None
    act_mask: str = "none"
    act_pattern: SparsityPattern = PATTERN_24
    val_fraction: float = 0.25
    validate_patterns: bool = False

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ValueError("need at least input, one hidden and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 < self.lr:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.act_mask not in ACT_MODES:
            raise ValueError(f"act_mask must be one of {ACT_MODES}")
        if self.grad_mask is not None:
            if self.grad_mask is EstimatorKind.GREEDY_MSE:
                raise ValueError("gradient masking requires a stochastic estimator")
            pattern = resolve_pattern(self.grad_mask, self.grad_pattern)
            if max(self.widths[1:]) < pattern.m:
                raise ValueError(
                    f"no layer is wide enough for gradient pattern {pattern}"
                )
        if self.act_mask != "none":
            if min(self.widths[1:-1]) < self.act_pattern.m:
                raise ValueError(
                    f"hidden widths {self.widths[1:-1]} too small for activation pattern {self.act_pattern}"
                )

    def resolved_grad_pattern(self) -> SparsityPattern | None:
        if self.grad_mask is None:
            return None
        return resolve_pattern(self.grad_mask, self.grad_pattern)


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    loss: float
    val_acc: float


def generate_dataset(
    kind: str, n: int, noise: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced, shuffled 2-D two-class dataset; X is (n, 2), y is (n,)."""
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    if n < 2:
        raise ValueError("need at least one sample per class")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    stream = RandomStream(seed, stream=7)
    n0 = n // 2
    n1 = n - n0
    if kind == "two-moons":
        t0 = stream.uniforms(n0) * math.pi
        t1 = stream.uniforms(n1) * math.pi
        x0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
        x1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    else:
        t0 = 3.0 * math.pi * np.sqrt(stream.uniforms(n0))
        t1 = 3.0 * math.pi * np.sqrt(stream.uniforms(n1))
        r0 = t0 / (3.0 * math.pi)
        r1 = t1 / (3.0 * math.pi)
        x0 = np.stack([r0 * np.cos(t0), r0 * np.sin(t0)], axis=1)
        x1 = np.stack([-r1 * np.cos(t1), -r1 * np.sin(t1)], axis=1)
    X = np.concatenate([x0, x1], axis=0)
    if noise > 0:
        X = X + stream.normals(X.shape, scale=noise)
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    perm = stream.permutation(n)
    return X[perm], y[perm]


def _mask_rows_greedy(mat: np.ndarray, pattern: SparsityPattern) -> tuple[np.ndarray, np.ndarray]:
    """Greedy-mask whole blocks along the feature axis; the remainder
    columns pass through unpruned with a True keep flag."""
    rows, cols = mat.shape
    whole = cols - cols % pattern.m
    keep = np.ones(mat.shape, dtype=bool)
    out = mat.copy()
    if whole:
        head = mat[:, :whole].reshape(-1, pattern.m)
        mask = greedy_mask_array(head, pattern)
        out[:, :whole] = np.where(mask, head, 0.0).reshape(rows, whole)
        keep[:, :whole] = mask.reshape(rows, whole)
    return out, keep


def relu_then_prune(acts: np.ndarray, pattern: SparsityPattern) -> np.ndarray:
    """ReLU followed by greedy block masking along the last axis."""
    arr = np.asarray(acts, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    out, _ = _mask_rows_greedy(np.maximum(arr, 0.0), pattern)
    return out[0] if squeeze else out


def prune_only(acts: np.ndarray, pattern: SparsityPattern) -> np.ndarray:
    """Greedy block masking along the last axis without a nonlinearity."""
    arr = np.asarray(acts, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    out, _ = _mask_rows_greedy(arr, pattern)
    return out[0] if squeeze else out


def _mask_grad_rows(
    mat: np.ndarray,
    kind: EstimatorKind,
    pattern: SparsityPattern,
    stream: RandomStream,
) -> np.ndarray:
    """Stochastically mask whole blocks along the feature axis; remainder
    columns pass through unmasked."""
    rows, cols = mat.shape
    whole = cols - cols % pattern.m
    if whole == 0:
        return mat
    out = mat.copy()
    head = mat[:, :whole].reshape(-1, pattern.m)
    pruned, _ = prune_array(head, kind, pattern, stream)
    out[:, :whole] = pruned.reshape(rows, whole)
    return out


class _Mlp:
    """Plain numpy MLP with softmax cross-entropy loss."""

    def __init__(self, config: MlpConfig, stream: RandomStream):
        self.config = config
        self.weights = []
        self.biases = []
        for l in range(len(config.widths) - 1):
            fan_in, fan_out = config.widths[l], config.widths[l + 1]
            init = stream.split(l)
            self.weights.append(init.normals((fan_in, fan_out), scale=math.sqrt(2.0 / fan_in)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, X: np.ndarray):
        """Returns (layer inputs, derivative masks, logits)."""
        config = self.config
        inputs = [X]
        deriv_masks = []
        h = X
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if l == last:
                return inputs, deriv_masks, z
            if config.act_mask == "none":
                h = np.maximum(z, 0.0)
                deriv = z > 0.0
            else:
                if config.act_mask == "relu-greedy":
                    h, keep = _mask_rows_greedy(np.maximum(z, 0.0), config.act_pattern)
                    deriv = (z > 0.0) & keep
                else:  # greedy on raw pre-activations
                    h, keep = _mask_rows_greedy(z, config.act_pattern)
                    deriv = keep
                if config.validate_patterns:
                    _assert_pattern(h, config.act_pattern)
            inputs.append(h)
            deriv_masks.append(deriv)

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[2]

    def layer_gradients(self, X: np.ndarray, y: np.ndarray):
        """Unmasked pre-activation gradients per layer plus the loss."""
        inputs, deriv_masks, logits = self.forward(X)
        batch = X.shape[0]
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        loss = float(-np.log(probs[np.arange(batch), y] + 1e-300).mean())
        grad = probs
        grad[np.arange(batch), y] -= 1.0
        grad /= batch
        grads = [None] * len(self.weights)
        grads[-1] = grad
        for l in range(len(self.weights) - 2, -1, -1):
            grad = (grad @ self.weights[l + 1].T) * deriv_masks[l]
            grads[l] = grad
        return inputs, grads, loss

    def apply_gradients(self, inputs, grads, grad_streams) -> None:
        config = self.config
        kind = config.grad_mask
        pattern = config.resolved_grad_pattern()
        for l in range(len(self.weights)):
            g = grads[l]
            if kind is not None:
                g = _mask_grad_rows(g, kind, pattern, grad_streams[l])
            self.weights[l] -= config.lr * (inputs[l].T @ g)
            self.biases[l] -= config.lr * g.sum(axis=0)

    def accuracy(self, X: np.ndarray, y: np.ndarray) -> float:
        return float((self.logits(X).argmax(axis=1) == y).mean())


def _assert_pattern(mat: np.ndarray, pattern: SparsityPattern) -> None:
    cols = mat.shape[1] - mat.shape[1] % pattern.m
    if cols == 0:
        return
    head = mat[:, :cols].reshape(-1, pattern.m)
    counts = np.count_nonzero(head, axis=1)
    if np.any(counts > pattern.kept):
        raise AssertionError(f"activation block violates pattern {pattern}")


def _split_train_val(X, y, val_fraction):
    n_val = max(1, int(round(X.shape[0] * val_fraction)))
    return X[:-n_val], y[:-n_val], X[-n_val:], y[-n_val:]


def train(
    config: MlpConfig, data: tuple[np.ndarray, np.ndarray] | None = None
) -> list[TrainRecord]:
    """Train the MLP; returns one record per epoch.

    Identical configs (and data) produce identical record sequences.
    Raises FloatingPointError if the loss leaves the finite range.
    """
    if data is None:
        data = generate_dataset("two-moons", 1024, 0.1, config.seed)
    X, y = np.asarray(data[0], dtype=np.float64), np.asarray(data[1], dtype=np.int64)
    X_train, y_train, X_val, y_val = _split_train_val(X, y, config.val_fraction)

    master = RandomStream(config.seed, stream=11)
    model = _Mlp(config, master.split(1))
    shuffle_stream = master.split(2)
    grad_streams = [master.split(100 + l) for l in range(len(config.widths) - 1)]

    records = []
    n_train = X_train.shape[0]
    for epoch in range(config.epochs):
        perm = shuffle_stream.permutation(n_train)
        total_loss = 0.0
        for start in range(0, n_train, config.batch_size):
            idx = perm[start : start + config.batch_size]
            inputs, grads, loss = model.layer_gradients(X_train[idx], y_train[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, step {start // config.batch_size}"
                )
            model.apply_gradients(inputs, grads, grad_streams)
            total_loss += loss * idx.shape[0]
        records.append(
            TrainRecord(
                epoch=epoch,
                loss=total_loss / n_train,
                val_acc=model.accuracy(X_val, y_val),
            )
        )
    return records


@dataclass(frozen=True)
class GradCheckResult:
    """Componentwise z-scores of the masked-gradient mean against the
    unmasked gradient, after ``redraws`` independent mask draws. Standard
    errors come from the estimator's closed-form per-entry variance, so
    rarely kept entries are judged fairly rather than by a vanishing
    empirical spread."""

    kind: EstimatorKind
    redraws: int
    components: int
    z_scores: np.ndarray = field(repr=False)
    max_z: float = 0.0

    def fraction_above(self, sigma: float) -> float:
        return float((self.z_scores > sigma).mean())


def masked_gradient_check(
    config: MlpConfig,
    kind: EstimatorKind | None = None,
    redraws: int = 10_000,
    at_step: int = 5,
    layer: int = 0,
    seed: int = 1234,
    chunk: int = 500,
) -> GradCheckResult:
    """Empirical mean of repeated gradient maskings against the true
    gradient, captured mid-training.

    Runs the configured training loop up to ``at_step`` updates, takes the
    unmasked pre-activation gradient of ``layer`` on that step's batch,
    then redraws the mask ``redraws`` times. z-scores are
    |mean - g| / (sd_i / sqrt(redraws)) per component with sd_i from the
    closed-form estimator variance; axis-remainder columns are excluded
    since they pass through unmasked.
    """
    if kind is None:
        kind = config.grad_mask
    if kind is None or kind is EstimatorKind.GREEDY_MSE:
        raise ValueError("the gradient-mean check needs a stochastic estimator")
    pattern = resolve_pattern(kind, config.grad_pattern)

    data = generate_dataset("two-moons", 1024, 0.1, config.seed)
    X, y = data
    X_train, y_train, _, _ = _split_train_val(X, y, config.val_fraction)

    master = RandomStream(config.seed, stream=11)
    model = _Mlp(config, master.split(1))
    shuffle_stream = master.split(2)
    grad_streams = [master.split(100 + l) for l in range(len(config.widths) - 1)]

    n_train = X_train.shape[0]
    captured = None
    step = 0
    while captured is None:
        perm = shuffle_stream.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            idx = perm[start : start + config.batch_size]
            inputs, grads, _ = model.layer_gradients(X_train[idx], y_train[idx])
            if step == at_step:
                captured = grads[layer]
                break
            model.apply_gradients(inputs, grads, grad_streams)
            step += 1

    rows, cols = captured.shape
    whole = cols - cols % pattern.m
    if whole == 0:
        raise ValueError(f"layer {layer} has no whole {pattern} blocks")
    blocks = captured[:, :whole].reshape(-1, pattern.m)
    # All-zero blocks (dead units) are reproduced exactly by every method
    # and carry no information; check only the live ones.
    blocks = blocks[np.any(blocks != 0.0, axis=1)]
    if blocks.shape[0] == 0:
        raise ValueError(f"layer {layer} gradient is entirely zero at step {at_step}")
    nb = blocks.shape[0]

    stream = RandomStream(seed, stream=13)
    total = np.zeros_like(blocks)
    done = 0
    while done < redraws:
        count = min(chunk, redraws - done)
        tiled = np.broadcast_to(blocks, (count, nb, pattern.m)).reshape(-1, pattern.m)
        pruned, _ = prune_array(tiled, kind, pattern, stream)
        total += pruned.reshape(count, nb, pattern.m).sum(axis=0)
        done += count

    mean = total / redraws
    se = np.sqrt(elementwise_variance_array(blocks, kind) / redraws)
    diff = np.abs(mean - blocks)
    scale = max(1.0, float(np.abs(blocks).max()))
    z = np.where(
        se > 0.0,
        diff / np.maximum(se, 1e-300),
        np.where(diff > 1e-12 * scale, np.inf, 0.0),
    )
    z = z.reshape(-1)
    return GradCheckResult(
        kind=kind,
        redraws=redraws,
        components=int(z.size),
        z_scores=z,
        max_z=float(z.max()),
    )
