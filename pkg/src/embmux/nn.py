"""Minimal trainable model over concatenated feature embeddings.

Two heads share one manual-backprop engine: a bias-free logistic head,
where the logit is the inner product of the concatenated embeddings
with a weight vector partitioned per feature, and a small stack of
cross layers (x0 * (W x + b) + x) followed by rectified dense layers
and a scalar output. Gradients flow exactly through the head into the
embedding scheme's adjoint, so every trainable real is covered by the
finite-difference check.

Training runs mini-batch SGD or Adam. Embedding rows use lazy Adam:
only the rows a batch touched receive moment updates that step, with
bias correction driven by the global step count. Logits are clamped
to +-30 before exponentiation.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .hashing import derive_seed
from .tables import EmbeddingScheme, grad_accumulate_batch

LOGISTIC = "logistic"
DCN_MLP = "dcn_mlp"

LOGIT_CLAMP = 30.0

_SALT_HEAD_INIT = 0x30
_SALT_SHUFFLE = 0x31


@dataclass(frozen=True)
class ModelSpec:
    """Architecture: head kind, per-feature input widths, layer sizes.

    `dims` doubles as the partition of the first-layer weights per
    feature. A logistic head has no hidden layers at all.
    """

    head: str
    dims: tuple[int, ...]
    cross_layers: int = 0
    dense_layers: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.head not in (LOGISTIC, DCN_MLP):
            raise ValueError(f"unknown head {self.head!r}")
        dims = tuple(int(x) for x in self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "dense_layers", tuple(int(x) for x in self.dense_layers))
        if not dims or any(x < 1 for x in dims):
            raise ValueError(f"dims must be positive, got {dims}")
        if not 0 <= self.cross_layers <= 2:
            raise ValueError(f"cross_layers must be 0..2, got {self.cross_layers}")
        if self.head == LOGISTIC and (self.cross_layers or self.dense_layers):
            raise ValueError("a logistic head has no hidden layers")
        if any(w < 1 for w in self.dense_layers):
            raise ValueError(f"dense widths must be positive, got {self.dense_layers}")

    @property
    def input_width(self) -> int:
        return sum(self.dims)

    def theta_partitions(self) -> tuple[tuple[int, int], ...]:
        """(start, end) span of each feature's first-layer weights."""
        spans = []
        start = 0
        for d in self.dims:
            spans.append((start, start + d))
            start += d
        return tuple(spans)


@dataclass(frozen=True)
class _Slot:
    name: str
    shape: tuple[int, ...]
    start: int
    end: int


@dataclass
class Model:
    """A ModelSpec plus its flat trainable head parameters."""

    spec: ModelSpec
    theta: np.ndarray
    slots: tuple[_Slot, ...]

    def view(self, name: str) -> np.ndarray:
        slot = next(s for s in self.slots if s.name == name)
        return self.theta[slot.start : slot.end].reshape(slot.shape)


def _layout(spec: ModelSpec) -> tuple[_Slot, ...]:
    slots: list[_Slot] = []
    cursor = 0

    def add(name: str, shape: tuple[int, ...]) -> None:
        nonlocal cursor
        size = int(np.prod(shape))
        slots.append(_Slot(name, shape, cursor, cursor + size))
        cursor += size

    d = spec.input_width
    if spec.head == LOGISTIC:
        add("out_w", (d,))
        return tuple(slots)
    for i in range(spec.cross_layers):
        add(f"cross{i}_w", (d, d))
        add(f"cross{i}_b", (d,))
    prev = d
    for j, width in enumerate(spec.dense_layers):
        add(f"dense{j}_w", (width, prev))
        add(f"dense{j}_b", (width,))
        prev = width
    add("out_w", (prev,))
    add("out_b", (1,))
    return tuple(slots)


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Fan-in-scaled uniform weights, zero biases."""
    slots = _layout(spec)
    theta = np.zeros(slots[-1].end, dtype=np.float64)
    rng = np.random.default_rng(derive_seed(seed, 0, _SALT_HEAD_INIT))
    model = Model(spec, theta, slots)
    for slot in slots:
        if slot.name.endswith("_b"):
            continue
        fan_in = slot.shape[-1]
        bound = 1.0 / np.sqrt(fan_in)
        theta[slot.start : slot.end] = rng.uniform(-bound, bound, slot.end - slot.start)
    return model


def sigmoid(logits: np.ndarray) -> np.ndarray:
    """Logistic function with logits clamped to +-30."""
    z = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def bce_loss(p: float | np.ndarray, y: float | np.ndarray) -> float:
    """Binary cross-entropy -y ln p - (1-y) ln(1-p), via the logit form."""
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-15, 1.0 - 1e-15)
    logit = np.log(p) - np.log1p(-p)
    return bce_loss_from_logits(logit, y)


def bce_loss_from_logits(logits: float | np.ndarray, y: float | np.ndarray) -> float:
    """Numerically stable mean BCE directly from logits."""
    z = np.clip(np.asarray(logits, dtype=np.float64), -LOGIT_CLAMP, LOGIT_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def cross_layer(x0: np.ndarray, xl: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x0 * (W xl + b) + xl, the low-rank-free cross interaction."""
    x0 = np.asarray(x0, dtype=np.float64)
    xl = np.asarray(xl, dtype=np.float64)
    if w.shape != (x0.size, x0.size) or b.shape != (x0.size,) or xl.shape != x0.shape:
        raise ValueError(
            f"shape mismatch: x0 {x0.shape}, xl {xl.shape}, W {w.shape}, b {b.shape}"
        )
    return x0 * (w @ xl + b) + xl


@dataclass
class Tape:
    """Every intermediate needed for exact backprop of one batch."""

    values: np.ndarray
    embeddings: np.ndarray
    btraces: list
    cross_inputs: list[np.ndarray] = field(default_factory=list)
    cross_pre: list[np.ndarray] = field(default_factory=list)
    dense_inputs: list[np.ndarray] = field(default_factory=list)
    dense_pre: list[np.ndarray] = field(default_factory=list)
    final_input: np.ndarray | None = None
    logits: np.ndarray | None = None
    probs: np.ndarray | None = None


def forward_batch(
    model: Model, scheme: EmbeddingScheme, values: np.ndarray
) -> tuple[np.ndarray, Tape]:
    """Probabilities (B,) and tape for a batch of per-feature values (B, T)."""
    spec = model.spec
    if tuple(scheme.config.d) != spec.dims:
        raise ValueError(
            f"model dims {spec.dims} do not match scheme dims {scheme.config.d}"
        )
    values = np.asarray(values, dtype=np.int64)
    if values.ndim != 2 or values.shape[1] != len(spec.dims):
        raise ValueError(f"values must be (batch, {len(spec.dims)}), got {values.shape}")
    parts = []
    btraces = []
    for t in range(values.shape[1]):
        emb, btrace = scheme.lookup_batch(t, values[:, t])
        parts.append(emb)
        btraces.append(btrace)
    e = np.concatenate(parts, axis=1)
    tape = Tape(values=values, embeddings=e, btraces=btraces)

    if spec.head == LOGISTIC:
        logits = e @ model.view("out_w")
    else:
        x = e
        for i in range(spec.cross_layers):
            w = model.view(f"cross{i}_w")
            b = model.view(f"cross{i}_b")
            pre = x @ w.T + b
            tape.cross_inputs.append(x)
            tape.cross_pre.append(pre)
            x = e * pre + x
        h = x
        for j in range(len(spec.dense_layers)):
            w = model.view(f"dense{j}_w")
            b = model.view(f"dense{j}_b")
            pre = h @ w.T + b
            tape.dense_inputs.append(h)
            tape.dense_pre.append(pre)
            h = np.maximum(pre, 0.0)
        tape.final_input = h
        logits = h @ model.view("out_w") + model.view("out_b")[0]
    tape.logits = logits
    tape.probs = sigmoid(logits)
    return tape.probs, tape


def forward(model: Model, scheme: EmbeddingScheme, example: np.ndarray) -> tuple[float, Tape]:
    """Probability for one example (one value per feature)."""
    probs, tape = forward_batch(model, scheme, np.asarray(example, dtype=np.int64)[None, :])
    return float(probs[0]), tape


def backward_batch(
    model: Model,
    scheme: EmbeddingScheme,
    tape: Tape,
    dlogits: np.ndarray,
    store_grad: np.ndarray,
) -> np.ndarray:
    """Exact adjoint of forward_batch.

    Adds the embedding-store gradient into `store_grad` and returns the
    flat head gradient.
    """
    spec = model.spec
    dtheta = np.zeros_like(model.theta)
    gmodel = Model(spec, dtheta, model.slots)
    e = tape.embeddings

    if spec.head == LOGISTIC:
        gmodel.view("out_w")[:] = e.T @ dlogits
        de = np.outer(dlogits, model.view("out_w"))
    else:
        gmodel.view("out_w")[:] = tape.final_input.T @ dlogits
        gmodel.view("out_b")[0] = float(dlogits.sum())
        dh = np.outer(dlogits, model.view("out_w"))
        for j in reversed(range(len(spec.dense_layers))):
            dpre = dh * (tape.dense_pre[j] > 0.0)
            gmodel.view(f"dense{j}_w")[:] = dpre.T @ tape.dense_inputs[j]
            gmodel.view(f"dense{j}_b")[:] = dpre.sum(axis=0)
            dh = dpre @ model.view(f"dense{j}_w")
        dx = dh
        de = np.zeros_like(e)
        for i in reversed(range(spec.cross_layers)):
            dpre = dx * e
            # x_{l+1} = e * pre + x_l: e collects dx * pre from every layer.
            de += dx * tape.cross_pre[i]
            gmodel.view(f"cross{i}_w")[:] = dpre.T @ tape.cross_inputs[i]
            gmodel.view(f"cross{i}_b")[:] = dpre.sum(axis=0)
            dx = dx + dpre @ model.view(f"cross{i}_w")
        de += dx

    start = 0
    for t, btrace in enumerate(tape.btraces):
        d = spec.dims[t]
        grad_accumulate_batch(scheme, btrace, de[:, start : start + d], store_grad)
        start += d
    return dtheta


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule, and seed for one training run."""

    optimizer: str = "adam"
    lr: float = 2e-4
    batch: int = 128
    steps: int = 1000
    epochs: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch < 1 or self.steps < 1:
            raise ValueError("batch and steps must be positive")
        if not 1 <= self.epochs <= 3:
            raise ValueError(f"epochs must be 1..3, got {self.epochs}")


class TrainingDiverged(RuntimeError):
    """Raised when the running loss stops being finite."""


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    step: int
    train_loss: float
    eval_auc: float
    eval_logloss: float


@dataclass
class TrainResult:
    """Best-epoch snapshot plus the full per-epoch history."""

    history: tuple[EpochStats, ...]
    best_epoch: int
    best_auc: float
    best_logloss: float
    store_values: np.ndarray
    theta: np.ndarray


def history_to_csv(history: tuple[EpochStats, ...]) -> str:
    """Render history as (step, epoch, split, metric, value) rows."""
    out = io.StringIO()
    out.write("step,epoch,split,metric,value\n")
    for h in history:
        out.write(f"{h.step},{h.epoch},train,loss,{h.train_loss!r}\n")
        out.write(f"{h.step},{h.epoch},eval,auc,{h.eval_auc!r}\n")
        out.write(f"{h.step},{h.epoch},eval,logloss,{h.eval_logloss!r}\n")
    return out.getvalue()


def predict(
    model: Model, scheme: EmbeddingScheme, values: np.ndarray, chunk: int = 8192
) -> np.ndarray:
    """Probabilities for (n, T) values, evaluated in chunks."""
    values = np.asarray(values, dtype=np.int64)
    out = np.empty(values.shape[0], dtype=np.float64)
    for start in range(0, values.shape[0], chunk):
        probs, _ = forward_batch(model, scheme, values[start : start + chunk])
        out[start : start + probs.size] = probs
    return out


class _AdamState:
    """Dense Adam for the head; lazy per-offset Adam for the store."""

    def __init__(self, head_size: int, store_size: int):
        self.hm = np.zeros(head_size)
        self.hv = np.zeros(head_size)
        self.sm = np.zeros(store_size)
        self.sv = np.zeros(store_size)
        self.t = 0

    def step_head(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> None:
        b1, b2, eps = 0.9, 0.999, 1e-8
        self.hm[:] = b1 * self.hm + (1 - b1) * grad
        self.hv[:] = b2 * self.hv + (1 - b2) * grad * grad
        mhat = self.hm / (1 - b1**self.t)
        vhat = self.hv / (1 - b2**self.t)
        theta -= lr * mhat / (np.sqrt(vhat) + eps)

    def step_store(self, values: np.ndarray, grad: np.ndarray, touched: np.ndarray, lr: float) -> None:
        # Only touched offsets receive moment updates; bias correction
        # uses the global step count.
        b1, b2, eps = 0.9, 0.999, 1e-8
        g = grad[touched]
        self.sm[touched] = b1 * self.sm[touched] + (1 - b1) * g
        self.sv[touched] = b2 * self.sv[touched] + (1 - b2) * g * g
        mhat = self.sm[touched] / (1 - b1**self.t)
        vhat = self.sv[touched] / (1 - b2**self.t)
        values[touched] -= lr * mhat / (np.sqrt(vhat) + eps)


def _touched_offsets(tape: Tape) -> np.ndarray:
    parts = []
    for btrace in tape.btraces:
        parts.append(btrace.offsets.ravel())
        if btrace.importance_offsets is not None:
            parts.append(btrace.importance_offsets.ravel())
    return np.unique(np.concatenate(parts))


def train(
    model: Model,
    scheme: EmbeddingScheme,
    train_data: tuple[np.ndarray, np.ndarray],
    eval_data: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
) -> TrainResult:
    """Mini-batch training of head and store; best epoch by eval AUC.

    `train_data` and `eval_data` are (values (n, T), labels (n,))
    pairs. Raises TrainingDiverged when the loss stops being finite.
    """
    x_train, y_train = train_data
    x_eval, y_eval = eval_data
    x_train = np.asarray(x_train, dtype=np.int64)
    y_train = np.asarray(y_train, dtype=np.float64)
    if x_train.shape[0] == 0:
        raise ValueError("training split is empty")
    if np.asarray(x_eval).shape[0] == 0:
        raise ValueError("eval split is empty")

    rng = np.random.default_rng(derive_seed(config.seed, 0, _SALT_SHUFFLE))
    adam = (
        _AdamState(model.theta.size, scheme.store.size)
        if config.optimizer == "adam"
        else None
    )
    store_grad = scheme.store.zeros_like()

    history: list[EpochStats] = []
    best: TrainResult | None = None
    global_step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(x_train.shape[0])
        losses = []
        for start in range(0, x_train.shape[0], config.batch):
            if (start // config.batch) >= config.steps:
                break
            idx = order[start : start + config.batch]
            xb, yb = x_train[idx], y_train[idx]
            probs, tape = forward_batch(model, scheme, xb)
            loss = bce_loss_from_logits(tape.logits, yb)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {global_step}"
                )
            losses.append(loss)
            dlogits = (probs - yb) / yb.size
            dtheta = backward_batch(model, scheme, tape, dlogits, store_grad)
            touched = _touched_offsets(tape)
            global_step += 1
            if adam is not None:
                adam.t = global_step
                adam.step_head(model.theta, dtheta, config.lr)
                adam.step_store(scheme.store.values, store_grad, touched, config.lr)
            else:
                model.theta -= config.lr * dtheta
                scheme.store.values[touched] -= config.lr * store_grad[touched]
            store_grad[touched] = 0.0

        probs_eval = predict(model, scheme, x_eval)
        stats = EpochStats(
            epoch=epoch,
            step=global_step,
            train_loss=float(np.mean(losses)) if losses else float("nan"),
            eval_auc=metrics.auc(probs_eval, y_eval),
            eval_logloss=metrics.logloss(probs_eval, y_eval),
        )
        history.append(stats)
        if best is None or stats.eval_auc > best.best_auc:
            best = TrainResult(
                history=(),
                best_epoch=epoch,
                best_auc=stats.eval_auc,
                best_logloss=stats.eval_logloss,
                store_values=scheme.store.values.copy(),
                theta=model.theta.copy(),
            )
    best.history = tuple(history)
    return best


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_err: float
    checked: int
    noop: bool


def full_gradient_check(
    model: Model,
    scheme: EmbeddingScheme,
    batch: tuple[np.ndarray, np.ndarray],
    step: float = 1e-5,
    max_store_offsets: int | None = None,
) -> GradCheckResult:
    """Compare every analytic gradient with central finite differences.

    Checks all head parameters and every store offset the batch
    touches (plus a few untouched ones, which must be zero). Uses the
    mean BCE of the batch as the objective.
    """
    values, labels = batch
    values = np.asarray(values, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.float64)
    if values.shape[0] == 0:
        return GradCheckResult(max_rel_err=0.0, checked=0, noop=True)

    probs, tape = forward_batch(model, scheme, values)
    dlogits = (probs - labels) / labels.size
    store_grad = scheme.store.zeros_like()
    dtheta = backward_batch(model, scheme, tape, dlogits, store_grad)

    def loss() -> float:
        _, t = forward_batch(model, scheme, values)
        return bce_loss_from_logits(t.logits, labels)

    worst = 0.0
    checked = 0

    def compare(buffer: np.ndarray, index: int, analytic: float) -> None:
        nonlocal worst, checked
        orig = buffer[index]
        buffer[index] = orig + step
        lp = loss()
        buffer[index] = orig - step
        lm = loss()
        buffer[index] = orig
        fd = (lp - lm) / (2.0 * step)
        denom = max(abs(fd), abs(analytic), 1e-8)
        worst = max(worst, abs(fd - analytic) / denom)
        checked += 1

    for i in range(model.theta.size):
        compare(model.theta, i, float(dtheta[i]))
    touched = _touched_offsets(tape)
    if max_store_offsets is not None and touched.size > max_store_offsets:
        touched = touched[:: max(1, touched.size // max_store_offsets)]
    for off in touched:
        compare(scheme.store.values, int(off), float(store_grad[off]))
    untouched = np.setdiff1d(
        np.arange(min(scheme.store.size, 64)), _touched_offsets(tape)
    )[:3]
    for off in untouched:
        compare(scheme.store.values, int(off), 0.0)
    return GradCheckResult(max_rel_err=worst, checked=checked, noop=False)
