"""Multi-task (and single-task) GRU signature classifier: build, train, predict."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .labels import NUM_CLASSES, TASK_CLASSES, TASKS
from .nn.core import (
    AdamState,
    DenseParams,
    GruLayerParams,
    adam_update,
    clip_by_global_norm,
    cross_entropy,
    dropout_mask,
    gru_layer_backward,
    gru_layer_forward,
    softmax,
)
from .tokenize import SliceSpec, Vocabulary, encode_functions

log = logging.getLogger(__name__)

STRUCTURES = ("mtl", "stl")


@dataclass
class ModelConfig:
    structure: str = "mtl"
    task: str | None = None
    size: int = 40
    location: str = "head"
    embed_dim: int = 128
    hidden: int = 256
    shared_layers: int = 2
    dropout: float = 0.2
    train_embeddings: bool = False
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 128
    clip_norm: float | None = None
    precision: int = 32

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}")
        if self.structure == "mtl" and self.task is not None:
            raise ValueError("an MTL model takes no task")
        if self.structure == "stl" and self.task not in TASKS:
            raise ValueError(f"an STL model needs a task from {TASKS}")
        if self.shared_layers != 2:
            raise ValueError("the shared encoder has exactly two GRU layers")
        if self.hidden < 1 or self.embed_dim < 1:
            raise ValueError("hidden and embed_dim must be positive")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        SliceSpec(self.size, self.location)

    @property
    def slice(self) -> SliceSpec:
        return SliceSpec(self.size, self.location)

    @property
    def tasks(self) -> tuple[str, ...]:
        return TASKS if self.structure == "mtl" else (self.task,)

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Prediction:
    labels: dict[str, str]
    probabilities: dict[str, np.ndarray]

    def __getitem__(self, task):
        return self.labels[task]


@dataclass
class TrainHistory:
    losses: list[dict[str, float]] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.losses)

    def total_loss(self, epoch: int = -1) -> float:
        return float(sum(self.losses[epoch].values()))


class MtlGruModel:
    """Embedding -> GRU -> GRU -> final state -> one dense-softmax head per task."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, embedding: np.ndarray,
                 gru1: GruLayerParams, gru2: GruLayerParams, heads: dict[str, DenseParams]):
        self.config = config
        self.vocab = vocab
        self.embedding = embedding
        self.gru1 = gru1
        self.gru2 = gru2
        self.heads = heads
        if tuple(heads) != config.tasks:
            raise ValueError("heads do not match the configured tasks")

    @property
    def tasks(self):
        return self.config.tasks

    def params(self) -> dict[str, np.ndarray]:
        """Trainable tensors by name (fused gate storage)."""
        out = {}
        if self.config.train_embeddings:
            out["embedding"] = self.embedding
        for layer, p in (("gru1", self.gru1), ("gru2", self.gru2)):
            out[f"{layer}.W"] = p.W
            out[f"{layer}.U"] = p.U
            out[f"{layer}.b"] = p.b
        for task, h in self.heads.items():
            out[f"head.{task}.W"] = h.W
            out[f"head.{task}.b"] = h.b
        return out

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Every stored tensor in checkpoint order, GRU gates split out."""
        out = {"embedding": self.embedding}
        for layer, p in (("gru1", self.gru1), ("gru2", self.gru2)):
            for name, arr in p.tensors().items():
                out[f"{layer}.{name}"] = arr
        for task, h in self.heads.items():
            out[f"head.{task}.W"] = h.W
            out[f"head.{task}.b"] = h.b
        return out

    # -- forward / backward ------------------------------------------------

    def sample_masks(self, batch: int, timesteps: int, rng) -> dict | None:
        rate = self.config.dropout
        if rng is None or rate == 0:
            return None
        dt = self.config.dtype
        masks = {"gru1": dropout_mask((timesteps, batch, self.config.hidden), rate, rng, dt)}
        for task in self.tasks:
            masks[task] = dropout_mask((batch, self.config.hidden), rate, rng, dt)
        return masks

    def forward(self, ids, lengths, masks: dict | None = None):
        """ids: [B, T] token ids, lengths: [B] true token counts.

        Returns ({task: probs [B, K]}, cache). ``masks`` (from
        ``sample_masks``) turns on dropout; None is inference mode.
        """
        ids = np.asarray(ids)
        lengths = np.asarray(lengths, dtype=np.int64)
        if np.any(lengths < 1):
            raise ValueError("every sequence needs at least one token")
        x = self.embedding[ids.T]
        out1, c1 = gru_layer_forward(x, lengths, self.gru1)
        x2 = out1 * masks["gru1"] if masks else out1
        out2, c2 = gru_layer_forward(x2, lengths, self.gru2)
        rep = out2[-1]
        probs = {}
        head_in = {}
        for task, h in self.heads.items():
            hin = rep * masks[task] if masks else rep
            head_in[task] = hin
            probs[task] = softmax(hin @ h.W + h.b)
        cache = {"ids": ids, "c1": c1, "c2": c2, "rep": rep, "head_in": head_in, "masks": masks, "probs": probs}
        return probs, cache

    def loss_and_grads(self, ids, lengths, targets: dict[str, np.ndarray], masks: dict | None = None,
                       need_grads: bool = True):
        """Mean over the batch of the summed per-head cross-entropy.

        Returns (total loss, per-head mean losses, grads keyed like ``params``).
        """
        probs, cache = self.forward(ids, lengths, masks)
        head_losses = {t: float(cross_entropy(probs[t], targets[t]).mean()) for t in self.tasks}
        total = float(sum(head_losses.values()))
        if not need_grads:
            return total, head_losses, None
        return total, head_losses, self.backward(cache, targets)

    def backward(self, cache, targets):
        if cache is None:
            raise ValueError("missing cache")
        probs = cache["probs"]
        masks = cache["masks"]
        B = len(cache["rep"])
        grads = {}
        d_rep = np.zeros_like(cache["rep"])
        for task, h in self.heads.items():
            d_logits = probs[task].copy()
            d_logits[np.arange(B), targets[task]] -= 1
            d_logits /= B
            d_logits = d_logits.astype(h.W.dtype)
            grads[f"head.{task}.W"] = cache["head_in"][task].T @ d_logits
            grads[f"head.{task}.b"] = d_logits.sum(axis=0)
            d_in = d_logits @ h.W.T
            d_rep += d_in * masks[task] if masks else d_in
        c2 = cache["c2"]
        d_out2 = np.zeros(c2.zs.shape, dtype=d_rep.dtype)
        d_out2[-1] = d_rep
        d_x2, g2 = gru_layer_backward(d_out2, c2, self.gru2)
        d_out1 = d_x2 * masks["gru1"] if masks else d_x2
        d_x, g1 = gru_layer_backward(d_out1, cache["c1"], self.gru1)
        for layer, g in (("gru1", g1), ("gru2", g2)):
            grads[f"{layer}.W"] = g.W
            grads[f"{layer}.U"] = g.U
            grads[f"{layer}.b"] = g.b
        if self.config.train_embeddings:
            d_emb = np.zeros_like(self.embedding)
            np.add.at(d_emb, cache["ids"].T, d_x)
            grads["embedding"] = d_emb
        return grads

    # -- inference -----------------------------------------------------------

    def encode(self, functions):
        return encode_functions(functions, self.vocab, self.config.slice)

    def predict_ids(self, ids, lengths) -> dict[str, np.ndarray]:
        probs, _ = self.forward(ids, lengths)
        return probs


def build_model(config: ModelConfig, vocab: Vocabulary, embeddings, seed: int = 0) -> MtlGruModel:
    emb = np.asarray(getattr(embeddings, "input_vectors", embeddings))
    if emb.ndim != 2 or emb.shape[1] != config.embed_dim:
        raise ValueError(f"embedding dim {emb.shape[-1]} does not match config.embed_dim {config.embed_dim}")
    if emb.shape[0] != len(vocab):
        raise ValueError("embedding rows do not match the vocabulary")
    dt = config.dtype
    rng = np.random.default_rng(seed)
    gru1 = GruLayerParams.init(rng, config.embed_dim, config.hidden, dt)
    gru2 = GruLayerParams.init(rng, config.hidden, config.hidden, dt)
    heads = {t: DenseParams.init(rng, config.hidden, NUM_CLASSES[t], dt) for t in config.tasks}
    return MtlGruModel(config, vocab, emb.astype(dt, copy=True), gru1, gru2, heads)


def shared_parameter_count(model: MtlGruModel) -> int:
    n = model.gru1.size() + model.gru2.size()
    if model.config.train_embeddings:
        n += model.embedding.size
    return n


def count_parameters(model: MtlGruModel) -> int:
    """Trainable scalars; frozen embeddings are excluded."""
    return shared_parameter_count(model) + sum(h.size() for h in model.heads.values())


# ---------------------------------------------------------------------------
# training

def label_targets(labels, tasks=TASKS) -> dict[str, np.ndarray]:
    return {t: np.array([lab.index(t) for lab in labels], dtype=np.int64) for t in tasks}


def train(model: MtlGruModel, train_set, epochs: int = 100, batch_size: int | None = None, seed: int = 0,
          callback=None):
    """Mini-batch Adam with dropout. ``train_set`` is a LabeledDataset or
    a pre-encoded (ids, lengths, targets) triple.
    """
    cfg = model.config
    if isinstance(train_set, tuple):
        ids, lengths, targets = train_set
    else:
        if len(train_set) == 0:
            raise ValueError("empty training set")
        ids, lengths = model.encode(train_set.functions)
        targets = label_targets(train_set.labels, model.tasks)
    n = len(ids)
    if n == 0:
        raise ValueError("empty training set")
    batch_size = batch_size or cfg.batch_size
    rng = np.random.default_rng(seed)
    opt = getattr(model, "optimizer", None)
    if opt is None:
        opt = model.optimizer = AdamState(lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2)
    params = model.params()
    history = TrainHistory()
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sums = {t: 0.0 for t in model.tasks}
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch_ids = ids[idx]
            masks = model.sample_masks(len(idx), batch_ids.shape[1], rng)
            _, head_losses, grads = model.loss_and_grads(
                batch_ids, lengths[idx], {t: targets[t][idx] for t in model.tasks}, masks
            )
            if cfg.clip_norm:
                clip_by_global_norm(grads, cfg.clip_norm)
            adam_update(params, grads, opt)
            for t, v in head_losses.items():
                sums[t] += v * len(idx)
        history.losses.append({t: v / n for t, v in sums.items()})
        history.epoch_seconds.append(time.perf_counter() - t0)
        log.debug("epoch %d loss %.4f", epoch + 1, history.total_loss())
        if callback is not None and callback(epoch, history) is False:
            break
    return model, history


def evaluate_loss(model: MtlGruModel, dataset) -> dict[str, float]:
    ids, lengths = model.encode(dataset.functions)
    targets = label_targets(dataset.labels, model.tasks)
    _, head_losses, _ = model.loss_and_grads(ids, lengths, targets, need_grads=False)
    return head_losses


def predict_proba(model: MtlGruModel, functions, batch_size: int = 256) -> dict[str, np.ndarray]:
    chunks = {t: [] for t in model.tasks}
    for start in range(0, len(functions), batch_size):
        part = functions[start:start + batch_size]
        if any(len(getattr(f, "instructions", f)) == 0 for f in part):
            raise ValueError("cannot predict an empty function")
        ids, lengths = model.encode(part)
        probs = model.predict_ids(ids, lengths)
        for t in model.tasks:
            chunks[t].append(probs[t])
    return {t: np.concatenate(v) if v else np.zeros((0, NUM_CLASSES[t])) for t, v in chunks.items()}


def predict_batch(model: MtlGruModel, functions, batch_size: int = 256) -> list[Prediction]:
    probs = predict_proba(model, functions, batch_size)
    out = []
    for i in range(len(functions)):
        p = {t: probs[t][i] for t in model.tasks}
        # np.argmax returns the lowest index on ties
        out.append(Prediction({t: TASK_CLASSES[t][int(np.argmax(v))] for t, v in p.items()}, p))
    return out


def predict(model: MtlGruModel, function) -> Prediction:
    return predict_batch(model, [function], batch_size=1)[0]
