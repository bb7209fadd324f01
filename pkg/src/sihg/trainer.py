"""Initialisation, optimisation loop, checkpointing and seeding."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .autodiff import Tape, Tensor
from . import autodiff as ad
from .graph import NeighborView, SignedGraph, SplitPlan, sample_neutrals
from .layers import AttentionMap, encode, init_params
from .manifold import MODELS, get_manifold
from .mi import Discriminator, MIBatch, mi_loss, pair_feature
from .objective import (DecoderParams, EvalReport, LossWeights, NonFiniteLossError,
                        classification_loss_logits, evaluate, fermi_dirac_logit,
                        ranking_losses, total_loss)
from .optim import AdamState, NonFiniteGradientError, adam_step, cosine_lr

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


class CheckpointError(ValueError):
    """Unreadable, truncated or internally inconsistent checkpoint file."""


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 64
    layers: int = 3
    epochs: int = 800
    lr: float = 1e-2
    weight_decay: float = 1e-5
    alpha: float = 1.0
    beta: float = 0.83
    gamma: float = 0.5
    radius: float = 2.0
    temp: float = 1.0
    curvature: float = 1.0
    seed: int = 42
    model: str = "hyperboloid"
    split: float = 0.2
    attention: bool = True
    eval_every: int = 10
    svd_iter: int = 30
    mi_batch: int = 20000
    edge_batch: int = 0  # 0 = full batch

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        for name in ("dim", "layers", "epochs", "eval_every", "svd_iter", "mi_batch"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("lr", "temp", "curvature"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0 or self.edge_batch < 0:
            raise ConfigError("weight_decay and edge_batch must be non-negative")
        if not 0 < self.split < 1:
            raise ConfigError("split fraction must lie in (0, 1)")
        try:
            LossWeights(self.alpha, self.beta, self.gamma)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def for_dataset(cls, num_edges: int, **overrides) -> "TrainConfig":
        """Bitcoin-scale defaults below 100k edges, the large-graph recipe above."""
        base = {} if num_edges < 100_000 else {"epochs": 900, "lr": 5e-3, "edge_batch": 20_000}
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma)

    @property
    def decoder(self) -> DecoderParams:
        return DecoderParams(self.radius, self.temp)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def graph_fingerprint(graph: SignedGraph) -> str:
    h = hashlib.sha256()
    h.update(np.int64(graph.num_nodes).tobytes())
    h.update(np.ascontiguousarray(graph.edges).tobytes())
    h.update(np.ascontiguousarray(graph.signs).tobytes())
    return h.hexdigest()[:16]


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent named random stream derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode()), *extra]))


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------

def signed_adjacency(view: NeighborView) -> sp.csr_matrix:
    """Symmetric matrix with +1 / -1 on observed pairs, 0 elsewhere."""
    n = view.num_nodes
    rows = np.concatenate([view.pos_src, view.neg_src])
    cols = np.concatenate([view.pos_dst, view.neg_dst])
    vals = np.concatenate([np.ones(len(view.pos_src)), -np.ones(len(view.neg_src))])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def randomized_svd(A, k: int, n_iter: int = 30, rng: np.random.Generator | None = None,
                   oversample: int = 10):
    """Rank-k SVD by randomised subspace iteration with QR re-orthonormalisation.

    Returns ``(U, S, Vt)`` with singular values in decreasing order.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    m, n = A.shape
    width = min(k + oversample, m, n)
    Q, _ = np.linalg.qr(A @ rng.standard_normal((n, width)))
    for _ in range(n_iter):
        Z, _ = np.linalg.qr(A.T @ Q)
        Q, _ = np.linalg.qr(A @ Z)
    B = np.asarray((A.T @ Q).T)
    Ub, S, Vt = np.linalg.svd(B, full_matrices=False)
    U = Q @ Ub
    k = min(k, width)
    return U[:, :k], S[:k], Vt[:k]


def init_embeddings(view: NeighborView, d: int, max_iter: int = 30, seed: int = 42) -> np.ndarray:
    """Truncated-SVD node features U * S, scaled so the largest row norm is 1.

    Raises:
        ConfigError: if the graph is empty or has fewer nodes than ``d``.
    """
    n = view.num_nodes
    if n == 0:
        raise ConfigError("cannot initialise embeddings of an empty graph")
    if d > n:
        raise ConfigError(f"embedding dimension {d} exceeds node count {n}")
    U, S, _ = randomized_svd(signed_adjacency(view), d, max_iter, substream(seed, "init-svd"))
    X = np.zeros((n, d))
    X[:, :len(S)] = U * S
    top = np.max(np.linalg.norm(X, axis=1))
    return X / top if top > 0 else X


# ---------------------------------------------------------------------------
# model wrapper
# ---------------------------------------------------------------------------

class SIHGModel:
    """Encoder, decoder and discriminator parameters for one graph."""

    def __init__(self, config: TrainConfig, num_nodes: int, X0: np.ndarray | None = None):
        self.config = config
        self.manifold = get_manifold(config.model, config.curvature)
        rng = substream(config.seed, "init-weights")
        self.params = init_params(num_nodes, config.dim, config.layers, rng, X0)
        self.disc = Discriminator(4 * config.dim, substream(config.seed, "init-disc"))
        self.params.update(self.disc.params)

    def embed(self, view: NeighborView, attn_map: AttentionMap | None = None) -> Tensor:
        return encode(view, self.params, self.manifold, self.config.layers,
                      self.config.attention, attn_map)

    def edge_logit(self, z: Tensor, edges: np.ndarray) -> Tensor:
        d = self.manifold.dist(z[edges[:, 0]], z[edges[:, 1]])
        return fermi_dirac_logit(d, self.config.decoder)

    def edge_probability(self, z: Tensor, edges: np.ndarray) -> Tensor:
        return ad.sigmoid(self.edge_logit(z, edges))

    def predict(self, view: NeighborView, edges: np.ndarray) -> np.ndarray:
        return self.edge_probability(self.embed(view), edges).data

    def attention(self, view: NeighborView) -> AttentionMap:
        amap = AttentionMap()
        self.embed(view, amap)
        return amap

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if arrays[k].shape != p.data.shape:
                raise ConfigError(f"checkpoint shape mismatch for {k}: {arrays[k].shape} vs {p.data.shape}")
            p.data = np.array(arrays[k], dtype=np.float64, copy=True)


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    adam: AdamState
    epoch: int
    config: TrainConfig
    graph_hash: str
    split: SplitPlan
    history: list[dict]
    metrics: dict | None = None
    graph: SignedGraph | None = None

    @property
    def config_hash(self) -> str:
        return self.config.hash()

    def save(self, path) -> None:
        meta = {
            "format": "sihg-checkpoint/1",
            "epoch": self.epoch,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "graph_hash": self.graph_hash,
            "split": json.loads(self.split.to_json()),
            "history": self.history,
            "metrics": self.metrics,
            "adam_t": self.adam.t,
            "node_labels": list(self.graph.node_labels) if self.graph is not None else None,
        }
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays.update({f"adam_m/{k}": v for k, v in self.adam.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in self.adam.v.items()})
        if self.graph is not None:
            arrays["graph/edges"] = self.graph.edges
            arrays["graph/signs"] = self.graph.signs
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            with np.load(path, allow_pickle=False) as z:
                meta = json.loads(bytes(z["meta"]).decode())
                if meta.get("format") != "sihg-checkpoint/1":
                    raise CheckpointError(f"{path}: not a checkpoint file")
                arrays = {key: z[key] for key in z.files}
            params, m, v = {}, {}, {}
            for key, value in arrays.items():
                kind, _, name = key.partition("/")
                target = {"param": params, "adam_m": m, "adam_v": v}.get(kind)
                if target is not None:
                    target[name] = value
            config = TrainConfig.from_dict(meta["config"])
            graph = None
            if "graph/edges" in arrays:
                labels = tuple(meta["node_labels"])
                graph = SignedGraph(len(labels), arrays["graph/edges"], arrays["graph/signs"], labels)
            ckpt = cls(params, AdamState(m, v, meta["adam_t"]), meta["epoch"], config,
                       meta["graph_hash"], SplitPlan.from_json(json.dumps(meta["split"])),
                       meta["history"], meta["metrics"], graph)
        except CheckpointError:
            raise
        except FileNotFoundError:
            raise
        except Exception as exc:  # zip, json, key and shape errors all mean a bad file
            raise CheckpointError(f"{path}: cannot read checkpoint ({type(exc).__name__}: {exc})") from exc
        if config.hash() != meta["config_hash"]:
            raise CheckpointError(f"{path}: stored config hash does not match its config")
        if graph is not None and graph_fingerprint(graph) != ckpt.graph_hash:
            raise CheckpointError(f"{path}: stored graph does not match its fingerprint")
        return ckpt


@dataclass
class TrainResult:
    model: SIHGModel
    best: Checkpoint
    last: Checkpoint
    history: list[dict]
    attention: AttentionMap
    report: EvalReport


HISTORY_FIELDS = ("epoch", "lr", "loss", "cls", "pos", "neg", "mim", "skipped",
                  "test_auc", "test_f1", "test_macro_f1", "test_micro_f1")


def _loss(model: SIHGModel, view: NeighborView, edges: np.ndarray, labels: np.ndarray,
          epoch: int) -> tuple[Tensor, dict]:
    cfg = model.config
    m = model.manifold
    if cfg.edge_batch and len(edges) > cfg.edge_batch:
        pick = np.sort(substream(cfg.seed, "edge-batch", epoch).choice(len(edges), cfg.edge_batch, replace=False))
        edges, labels = edges[pick], labels[pick]
    z = model.embed(view)
    l_cls = classification_loss_logits(model.edge_logit(z, edges), labels)

    neutral = sample_neutrals(view, edges[:, 0], substream(cfg.seed, "neutral", epoch))
    is_pos = labels > 0.5
    l_pos, l_neg, skipped = ranking_losses(z, edges[is_pos], neutral[is_pos],
                                           edges[~is_pos], neutral[~is_pos], m)
    mi_rng = substream(cfg.seed, "mi-permutation", epoch)
    mi_edges, mi_labels = edges, labels
    if len(edges) > cfg.mi_batch:
        pick = np.sort(mi_rng.choice(len(edges), cfg.mi_batch, replace=False))
        mi_edges, mi_labels = edges[pick], labels[pick]
    feats = pair_feature(z[mi_edges[:, 0]], z[mi_edges[:, 1]], m)
    l_mim = mi_loss(model.disc, MIBatch.shuffled(feats, mi_labels, mi_rng))
    loss = total_loss(l_cls, l_pos, l_neg, l_mim, cfg.weights)
    parts = {"loss": loss.item(), "cls": l_cls.item(), "pos": l_pos.item(),
             "neg": l_neg.item(), "mim": l_mim.item(), "skipped": skipped}
    return loss, parts


def evaluate_model(model: SIHGModel, view: NeighborView, edges: np.ndarray,
                   labels: np.ndarray) -> EvalReport:
    return evaluate(model.predict(view, edges), labels)


def train(graph: SignedGraph, split: SplitPlan, config: TrainConfig,
          resume: Checkpoint | None = None, stop_after: int | None = None,
          on_epoch: Callable[[dict], None] | None = None,
          dump_path: str | Path | None = None) -> TrainResult:
    """Full-batch training with test evaluation every ``eval_every`` epochs.

    Aggregation only sees training edges. The returned ``best`` checkpoint
    holds the parameters with the highest test AUC seen at an evaluation
    epoch; ``last`` holds the final state and can be resumed from.
    """
    view = graph.view_of(split.train_edges)
    train_e = graph.edges[split.train_edges]
    train_y = graph.labels[split.train_edges]
    test_e = graph.edges[split.test_edges]
    test_y = graph.labels[split.test_edges]
    ghash = graph_fingerprint(graph)

    if resume is not None:
        if resume.config.hash() != config.hash():
            raise ConfigError(f"checkpoint config {resume.config.hash()} differs from {config.hash()}")
        if resume.graph_hash != ghash:
            raise ConfigError(f"checkpoint graph {resume.graph_hash} differs from dataset {ghash}")
        model = SIHGModel(config, graph.num_nodes, resume.params["X0"])
        model.load(resume.params)
        adam = AdamState({k: v.copy() for k, v in resume.adam.m.items()},
                         {k: v.copy() for k, v in resume.adam.v.items()}, resume.adam.t)
        history = [dict(r) for r in resume.history]
        start = resume.epoch + 1
    else:
        X0 = init_embeddings(view, config.dim, config.svd_iter, config.seed)
        model = SIHGModel(config, graph.num_nodes, X0)
        adam = AdamState()
        history = []
        start = 1

    # after a resume, model selection only covers the resumed epochs
    best_auc, best_params, best_metrics, best_epoch = -1.0, model.snapshot(), None, 0
    end = config.epochs if stop_after is None else min(config.epochs, stop_after)
    names = list(model.params)

    def checkpoint(params, epoch, metrics) -> Checkpoint:
        return Checkpoint(params, AdamState({k: v.copy() for k, v in adam.m.items()},
                                            {k: v.copy() for k, v in adam.v.items()}, adam.t),
                          epoch, config, ghash, split, [dict(r) for r in history], metrics, graph)

    tic = time.perf_counter()
    for epoch in range(start, end + 1):
        lr = cosine_lr(epoch - 1, config.epochs, config.lr)
        try:
            with Tape() as tape:
                loss, parts = _loss(model, view, train_e, train_y, epoch)
                grads = tape.backward(loss, [model.params[k] for k in names])
            tape.clear()
            adam_step(model.params, dict(zip(names, grads)), adam, lr, config.weight_decay)
        except (NonFiniteLossError, NonFiniteGradientError) as exc:
            if dump_path is not None:
                checkpoint(model.snapshot(), epoch - 1, None).save(dump_path)
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
        row = {"epoch": epoch, "lr": lr, **parts}
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            rep = evaluate_model(model, view, test_e, test_y)
            row.update(test_auc=rep.auc, test_f1=rep.f1,
                       test_macro_f1=rep.macro_f1, test_micro_f1=rep.micro_f1)
            score = rep.auc if rep.auc is not None else -1.0
            if score >= best_auc:  # ties go to the later, longer-trained epoch
                best_auc, best_params, best_metrics, best_epoch = score, model.snapshot(), rep.to_dict(), epoch
            log.info("epoch %d loss %.4f test auc %s f1 %.4f (%.1fs)", epoch, parts["loss"],
                     f"{rep.auc:.4f}" if rep.auc is not None else "n/a", rep.f1,
                     time.perf_counter() - tic)
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)

    last_epoch = max(start - 1, end)
    last = checkpoint(model.snapshot(), last_epoch, None)
    if best_metrics is None:
        best_params = model.snapshot()
        rep = evaluate_model(model, view, test_e, test_y)
        best_metrics, best_epoch = rep.to_dict(), last_epoch
    best = checkpoint(best_params, best_epoch, best_metrics)
    model.load(best_params)
    attention = model.attention(view)
    report = EvalReport(**{k: best_metrics[k] for k in ("auc", "f1", "macro_f1", "micro_f1",
                                                        "threshold", "n_edges")})
    return TrainResult(model, best, last, history, attention, report)


def model_from_checkpoint(ckpt: Checkpoint, graph: SignedGraph) -> SIHGModel:
    model = SIHGModel(ckpt.config, graph.num_nodes, ckpt.params["X0"])
    model.load(ckpt.params)
    return model


def evaluate_checkpoint(ckpt: Checkpoint, graph: SignedGraph,
                        split: SplitPlan | None = None) -> EvalReport:
    split = split if split is not None else ckpt.split
    model = model_from_checkpoint(ckpt, graph)
    view = graph.view_of(split.train_edges)
    return evaluate_model(model, view, graph.edges[split.test_edges], graph.labels[split.test_edges])
