"""Small MLP heads over frozen embeddings, plus zero-shot scoring.

A head maps an embedding to P(concept). Training runs Adam with decoupled
weight decay on a class-balanced sampled stream: each stream slot draws its
class (positives 0.5, labeled negatives 0.25, random negatives 0.25, with
the shares renormalized over the non-empty pools) and then an example from
that pool with replacement, so scarce positives are upsampled automatically.

Numerics: master weights are float64 during optimization and are cast to
float32 once at the end, so the in-memory model matches its checkpoint bit
for bit. Inference always recomputes in float64 from the float32 weights.

Checkpoint layout: one JSON header line (utf-8, ends with newline), then
every parameter tensor as little-endian float32, in layer order, weights
before biases.
"""

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from agilem.embed_store import CHUNK_ROWS, Corpus
from agilem.errors import FormatError, TrainingDivergedError, ValidationError

# Architecture by session round: a tiny head for the first labeled batch,
# a wider one once active learning starts feeding it.
INITIAL_HIDDEN = (16,)
ACTIVE_HIDDEN = (128, 128, 128)

ZERO_SHOT_THRESHOLDS = {"clip-like": 0.28, "align-like": 0.20}

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8

CHECKPOINT_FORMAT = "agilem-head"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    """Hyperparameters for one training run."""

    hidden_layers: tuple = ACTIVE_HIDDEN
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    dropout_rate: float = 0.5
    epochs: int = 10
    batch_size: int = 256
    seed: int = 0
    random_negative_count: int = 500_000
    mixture: tuple = (0.5, 0.25, 0.25)
    min_epoch_examples: int = 6400

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        object.__setattr__(self, "mixture", tuple(float(s) for s in self.mixture))
        if not self.hidden_layers or any(w < 1 for w in self.hidden_layers):
            raise ValidationError("hidden_layers must be non-empty positive widths")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValidationError("dropout_rate must be in [0, 1)")
        if self.learning_rate <= 0.0:
            raise ValidationError("learning_rate must be positive")
        if self.weight_decay < 0.0:
            raise ValidationError("weight_decay must be non-negative")
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.random_negative_count < 0:
            raise ValidationError("random_negative_count must be non-negative")
        if len(self.mixture) != 3 or any(s < 0 for s in self.mixture):
            raise ValidationError("mixture must be three non-negative shares")
        if abs(sum(self.mixture) - 1.0) > 1e-9:
            raise ValidationError("mixture shares must sum to 1")
        if self.mixture[0] <= 0.0 or self.mixture[1] <= 0.0:
            raise ValidationError("positive and labeled-negative shares must be positive")
        if self.min_epoch_examples < 1:
            raise ValidationError("min_epoch_examples must be at least 1")

    def to_json(self) -> dict:
        return {
            "hidden_layers": list(self.hidden_layers),
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "dropout_rate": self.dropout_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "random_negative_count": self.random_negative_count,
            "mixture": list(self.mixture),
            "min_epoch_examples": self.min_epoch_examples,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MlpConfig":
        return cls(
            hidden_layers=tuple(obj["hidden_layers"]),
            learning_rate=obj["learning_rate"],
            weight_decay=obj["weight_decay"],
            dropout_rate=obj["dropout_rate"],
            epochs=obj["epochs"],
            batch_size=obj["batch_size"],
            seed=obj["seed"],
            random_negative_count=obj["random_negative_count"],
            mixture=tuple(obj["mixture"]),
            min_epoch_examples=obj["min_epoch_examples"],
        )


@dataclass(frozen=True)
class TrainingPool:
    """Item ids per class, pairwise disjoint, each sorted ascending."""

    positives: np.ndarray
    labeled_negatives: np.ndarray
    random_negatives: np.ndarray
    random_clamped: bool = False

    def __post_init__(self):
        for name in ("positives", "labeled_negatives", "random_negatives"):
            arr = np.sort(np.asarray(getattr(self, name), dtype=np.uint64))
            if len(np.unique(arr)) != len(arr):
                raise ValidationError(f"duplicate ids in {name}")
            object.__setattr__(self, name, arr)
        if len(self.positives) == 0 or len(self.labeled_negatives) == 0:
            raise ValidationError("pool needs at least one positive and one labeled negative")
        pairs = (
            (self.positives, self.labeled_negatives),
            (self.positives, self.random_negatives),
            (self.labeled_negatives, self.random_negatives),
        )
        for a, b in pairs:
            if len(np.intersect1d(a, b)) != 0:
                raise ValidationError("pool classes must be disjoint")


@dataclass
class MlpModel:
    """A trained head: float32 parameters plus the config that produced them."""

    input_dim: int
    hidden_layers: tuple
    weights: list
    biases: list
    config: MlpConfig
    round_index: int = -1
    loss_per_epoch: list = field(default_factory=list)

    @property
    def param_count(self) -> int:
        return int(sum(w.size for w in self.weights) + sum(b.size for b in self.biases))

    def layer_dims(self) -> list:
        return [self.input_dim, *self.hidden_layers, 1]


def zero_shot_score(image_vec, text_vec) -> float:
    """Cosine similarity of two embeddings (both normalized here)."""
    a = np.asarray(image_vec, dtype=np.float64).reshape(-1)
    b = np.asarray(text_vec, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError(f"dim mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("zero-norm embedding")
    return float((a / na) @ (b / nb))


def zero_shot_scores(corpus: Corpus, text_vec) -> np.ndarray:
    """Cosine of every corpus row against one phrase embedding, float64."""
    if not corpus.matrix.normalized:
        raise ValidationError("zero-shot scoring requires a normalized corpus")
    q = np.asarray(text_vec, dtype=np.float64).reshape(-1)
    if q.shape[0] != corpus.dim:
        raise ValidationError(f"phrase dim {q.shape[0]} does not match corpus dim {corpus.dim}")
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise ValidationError("zero-norm phrase embedding")
    q = q / norm
    out = np.empty(corpus.count, dtype=np.float64)
    vectors = corpus.matrix.vectors
    for start in range(0, corpus.count, CHUNK_ROWS):
        chunk = vectors[start:start + CHUNK_ROWS]
        out[start:start + len(chunk)] = chunk.astype(np.float64) @ q
    return out


def zero_shot_threshold(embedding_family: str) -> float:
    """Decision threshold on cosine for binarizing zero-shot scores."""
    try:
        return ZERO_SHOT_THRESHOLDS[embedding_family]
    except KeyError:
        known = ", ".join(sorted(ZERO_SHOT_THRESHOLDS))
        raise ValidationError(f"unknown embedding family {embedding_family!r}, expected one of {known}")


def assemble_pool(labels: Mapping[int, bool], corpus: Corpus, seed: int,
                  random_negative_count: int) -> TrainingPool:
    """Build the three training pools from resolved labels.

    Random negatives are drawn uniformly without replacement from the
    unlabeled remainder of the corpus; when fewer unlabeled items exist
    than requested the draw is clamped and flagged.
    """
    pos = np.asarray(sorted(i for i, v in labels.items() if v), dtype=np.uint64)
    neg = np.asarray(sorted(i for i, v in labels.items() if not v), dtype=np.uint64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValidationError("labels must include at least one positive and one negative")
    labeled = np.concatenate([pos, neg])
    corpus.items.rows_for_ids(labeled)  # every labeled id must exist
    candidates = np.setdiff1d(corpus.items.ids, labeled)
    n = min(int(random_negative_count), len(candidates))
    if n > 0:
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x9001)))
        chosen = np.sort(candidates[rng.choice(len(candidates), size=n, replace=False)])
    else:
        chosen = np.empty(0, dtype=np.uint64)
    return TrainingPool(
        positives=pos,
        labeled_negatives=neg,
        random_negatives=chosen,
        random_clamped=n < int(random_negative_count),
    )


def _mixture_shares(config: MlpConfig, have_random: bool) -> tuple:
    p_pos, p_neg, p_rand = config.mixture
    if have_random:
        return (p_pos, p_neg, p_rand)
    # No random pool: its share folds into the labeled negatives.
    return (p_pos, p_neg + p_rand, 0.0)


def _epoch_length(config: MlpConfig, pool_sizes: Sequence[int], shares: Sequence[float]) -> int:
    # Long enough that the largest pool is cycled once at its mixture share,
    # but never shorter than the floor that keeps tiny ledgers converging.
    need = max(
        math.ceil(size / share)
        for size, share in zip(pool_sizes, shares)
        if size > 0 and share > 0
    )
    return max(int(config.min_epoch_examples), need)


def _init_params(rng: np.random.Generator, dims: Sequence[int]):
    """Fan-in uniform init for hidden layers; the output layer starts at zero
    so the head begins at p=0.5 regardless of input scale."""
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i == len(dims) - 2:
            w = np.zeros((fan_in, fan_out), dtype=np.float64)
        else:
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights.append(w)
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return weights, biases


def _forward(weights, biases, x: np.ndarray, dropout_masks=None):
    """Returns (logits, hidden_activations, pre_activations)."""
    h = x
    hidden = [h]
    pre = []
    for i in range(len(weights) - 1):
        z = h @ weights[i] + biases[i]
        pre.append(z)
        h = np.maximum(z, 0.0)
        if dropout_masks is not None:
            h = h * dropout_masks[i]
        hidden.append(h)
    logits = (h @ weights[-1] + biases[-1]).reshape(-1)
    return logits, hidden, pre


def _bce_from_logits(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    # max(z, 0) - z*y + log(1 + exp(-|z|)) is exact and never overflows.
    return np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _backward(weights, hidden, pre, dropout_masks, dlogits: np.ndarray):
    """Gradients of the mean loss wrt every parameter, given dL/dlogits."""
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    d = dlogits[:, None]
    grads_w[-1] = hidden[-1].T @ d
    grads_b[-1] = d.sum(axis=0)
    dh = d @ weights[-1].T
    for i in range(len(weights) - 2, -1, -1):
        if dropout_masks is not None:
            dh = dh * dropout_masks[i]
        dz = dh * (pre[i] > 0.0)
        grads_w[i] = hidden[i].T @ dz
        grads_b[i] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ weights[i].T
    return grads_w, grads_b


def train(config: MlpConfig, pool: TrainingPool, corpus: Corpus,
          round_index: int = -1) -> MlpModel:
    """Optimize a fresh head on the pooled labels.

    Deterministic: the same config, pool, and corpus produce bit-identical
    parameters. Raises TrainingDivergedError if the loss or any parameter
    goes non-finite.
    """
    rows = [
        corpus.items.rows_for_ids(pool.positives),
        corpus.items.rows_for_ids(pool.labeled_negatives),
        corpus.items.rows_for_ids(pool.random_negatives),
    ]
    sizes = [len(r) for r in rows]
    shares = _mixture_shares(config, have_random=sizes[2] > 0)
    epoch_len = _epoch_length(config, sizes, shares)
    vectors = corpus.matrix.vectors

    dims = [corpus.dim, *config.hidden_layers, 1]
    rng = np.random.default_rng(np.random.SeedSequence((int(config.seed), 0x7121)))
    weights, biases = _init_params(rng, dims)

    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]

    lr = config.learning_rate
    wd = config.weight_decay
    keep = 1.0 - config.dropout_rate
    boundaries = np.cumsum(shares)
    step = 0
    losses = []

    for epoch in range(config.epochs):
        cls = np.searchsorted(boundaries, rng.random(epoch_len), side="right")
        cls = np.minimum(cls, 2)
        stream_rows = np.empty(epoch_len, dtype=np.intp)
        for c in range(3):
            slots = np.flatnonzero(cls == c)
            if len(slots) == 0:
                continue
            if sizes[c] == 0:
                # Only reachable if a share rounds onto an empty pool edge.
                cls[slots] = 1
                stream_rows[slots] = rows[1][rng.integers(0, sizes[1], size=len(slots))]
                continue
            stream_rows[slots] = rows[c][rng.integers(0, sizes[c], size=len(slots))]
        targets_all = (cls == 0).astype(np.float64)

        loss_sum = 0.0
        for start in range(0, epoch_len, config.batch_size):
            batch_rows = stream_rows[start:start + config.batch_size]
            x = vectors[batch_rows].astype(np.float64)
            y = targets_all[start:start + config.batch_size]
            if config.dropout_rate > 0.0:
                masks = [
                    (rng.random((len(batch_rows), w.shape[1])) >= config.dropout_rate) / keep
                    for w in weights[:-1]
                ]
            else:
                masks = None
            logits, hidden, pre = _forward(weights, biases, x, masks)
            batch_loss = _bce_from_logits(logits, y)
            loss_sum += float(batch_loss.sum())
            if not np.isfinite(batch_loss).all():
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step}", epoch, step
                )
            dlogits = (_sigmoid(logits) - y) / len(batch_rows)
            grads_w, grads_b = _backward(weights, hidden, pre, masks, dlogits)

            step += 1
            b1c = 1.0 - _ADAM_BETA1 ** step
            b2c = 1.0 - _ADAM_BETA2 ** step
            for params, grads, ms, vs, decay in (
                (weights, grads_w, m_w, v_w, True),
                (biases, grads_b, m_b, v_b, False),
            ):
                for p, g, m, v in zip(params, grads, ms, vs):
                    m *= _ADAM_BETA1
                    m += (1.0 - _ADAM_BETA1) * g
                    v *= _ADAM_BETA2
                    v += (1.0 - _ADAM_BETA2) * np.square(g)
                    p -= lr * (m / b1c) / (np.sqrt(v / b2c) + _ADAM_EPS)
                    if decay and wd > 0.0:
                        p -= lr * wd * p

        for w in weights:
            if not np.isfinite(w).all():
                raise TrainingDivergedError(
                    f"non-finite weight after epoch {epoch}", epoch, step
                )
        losses.append(loss_sum / epoch_len)

    return MlpModel(
        input_dim=corpus.dim,
        hidden_layers=tuple(config.hidden_layers),
        weights=[w.astype(np.float32) for w in weights],
        biases=[b.astype(np.float32) for b in biases],
        config=config,
        round_index=round_index,
        loss_per_epoch=losses,
    )


def _f64_params(model: MlpModel):
    return (
        [w.astype(np.float64) for w in model.weights],
        [b.astype(np.float64) for b in model.biases],
    )


def predict_logits(model: MlpModel, x) -> np.ndarray:
    """Raw logits for a (n, dim) block, computed in float64."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValidationError(f"expected (n, {model.input_dim}) inputs, got {x.shape}")
    weights, biases = _f64_params(model)
    logits, _, _ = _forward(weights, biases, x.astype(np.float64))
    return logits


def predict_probs(model: MlpModel, x) -> np.ndarray:
    """P(concept) for a (n, dim) block of embeddings, float64 in (0, 1)."""
    return _sigmoid(predict_logits(model, x))


def predict(model: MlpModel, vec) -> float:
    """P(concept) for a single embedding."""
    v = np.asarray(vec, dtype=np.float64).reshape(1, -1)
    return float(predict_probs(model, v)[0])


def gradient_check(model: MlpModel, inputs, targets, step: float = 1e-4,
                   max_coords: int = 2048, seed: int = 0) -> float:
    """Worst relative disagreement between analytic and numeric gradients.

    Evaluates the mean BCE loss (no dropout, no decay) on the given batch.
    Analytic gradients come from the training backward pass; numeric ones
    from central differences on float64 copies of the parameters. Models
    with more than ``max_coords`` parameters are checked on a seeded random
    subset of coordinates. Two caveats of the numeric side are handled
    explicitly. First, the relative error divides by
    ``max(|analytic|, |numeric|, 1e-6)``: a float64 central difference
    carries absolute noise around ``|loss| * eps / step`` (~1e-12 here), so
    gradients smaller than the floor cannot be resolved relatively and are
    compared on an absolute scale instead. Second, coordinates whose
    +/-step probes land on different rectifier activation patterns are
    skipped: the loss is not differentiable across such a kink, so a
    central difference there measures the subgradient jump, not the
    gradient.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValidationError(f"expected (n, {model.input_dim}) inputs, got {x.shape}")
    if x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValidationError("inputs and targets must be non-empty and aligned")

    weights, biases = _f64_params(model)
    logits, hidden, pre = _forward(weights, biases, x)
    dlogits = (_sigmoid(logits) - y) / len(y)
    grads_w, grads_b = _backward(weights, hidden, pre, None, dlogits)
    analytic = np.concatenate([g.reshape(-1) for g in grads_w + grads_b])

    tensors = weights + biases
    flat = np.concatenate([t.reshape(-1) for t in tensors])
    total = flat.size
    if total <= max_coords:
        coords = np.arange(total)
    else:
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x6C0D)))
        coords = np.sort(rng.choice(total, size=max_coords, replace=False))

    offsets = np.cumsum([0] + [t.size for t in tensors])

    def loss_with(flat_params: np.ndarray):
        ws = [
            flat_params[offsets[i]:offsets[i + 1]].reshape(tensors[i].shape)
            for i in range(len(weights))
        ]
        bs = [
            flat_params[offsets[len(weights) + i]:offsets[len(weights) + i + 1]]
            for i in range(len(biases))
        ]
        logits_p, _, pre_p = _forward(ws, bs, x)
        pattern = b"".join((z > 0.0).tobytes() for z in pre_p)
        return float(_bce_from_logits(logits_p, y).mean()), pattern

    worst = 0.0
    work = flat.copy()
    for c in coords:
        orig = work[c]
        work[c] = orig + step
        hi, pattern_hi = loss_with(work)
        work[c] = orig - step
        lo, pattern_lo = loss_with(work)
        work[c] = orig
        if pattern_hi != pattern_lo:
            continue
        numeric = (hi - lo) / (2.0 * step)
        a = analytic[c]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        if err > worst:
            worst = err
    return worst


def save_model(path, model: MlpModel) -> None:
    """Write the checkpoint: JSON header line, then float32 parameter blob."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_dim": model.input_dim,
        "hidden_layers": list(model.hidden_layers),
        "round_index": model.round_index,
        "loss_per_epoch": model.loss_per_epoch,
        "param_count": model.param_count,
        "config": model.config.to_json(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for w in model.weights:
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
        for b in model.biases:
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_model(path) -> MlpModel:
    """Read a checkpoint written by save_model."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: invalid checkpoint header ({exc})") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a head checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    dims = [int(header["input_dim"]), *(int(w) for w in header["hidden_layers"]), 1]
    sizes = []
    for i in range(len(dims) - 1):
        sizes.append((dims[i], dims[i + 1]))
    expected = sum(a * b for a, b in sizes) + sum(b for _, b in sizes)
    if len(blob) != expected * 4:
        raise FormatError(f"{path}: expected {expected * 4} parameter bytes, found {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f4")
    weights, biases = [], []
    off = 0
    for a, b in sizes:
        weights.append(flat[off:off + a * b].reshape(a, b).copy())
        off += a * b
    for a, b in sizes:
        biases.append(flat[off:off + b].copy())
        off += b
    return MlpModel(
        input_dim=int(header["input_dim"]),
        hidden_layers=tuple(int(w) for w in header["hidden_layers"]),
        weights=weights,
        biases=biases,
        config=MlpConfig.from_json(header["config"]),
        round_index=int(header["round_index"]),
        loss_per_epoch=[float(x) for x in header["loss_per_epoch"]],
    )
