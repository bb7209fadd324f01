"""Donsker-Varadhan mutual information bound between pair features and edge signs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, leaky_relu

HIDDEN = 128


class EmptyBatchError(ValueError):
    pass


def pair_feature(z_i, z_j, manifold) -> Tensor:
    """[log_o(z_i), log_o(z_j)] for row-aligned node embeddings."""
    return ad.concat([manifold.logmap0(z_i), manifold.logmap0(z_j)], axis=-1)


@dataclass
class MIBatch:
    """Joint samples (features, labels) and the same features with permuted labels."""

    features: Tensor
    labels: np.ndarray
    marginal_labels: np.ndarray

    @classmethod
    def shuffled(cls, features, labels, rng: np.random.Generator) -> "MIBatch":
        labels = np.asarray(labels, dtype=np.float64)
        return cls(as_tensor(features), labels, labels[rng.permutation(len(labels))])

    def __len__(self) -> int:
        return len(self.labels)


class Discriminator:
    """Statistics network T(z, a).

    ``z`` passes two dense layers (in_dim -> 128 -> 128), the scalar sign two
    more (1 -> 128 -> 128); the two codes are added, passed through a
    leaky ReLU and projected to a score.
    """

    def __init__(self, in_dim: int, rng: np.random.Generator, hidden: int = HIDDEN):
        self.in_dim = in_dim
        self.hidden = hidden
        self.params: dict[str, Tensor] = {}
        for name, (fan_in, fan_out) in {
            "T_pair1": (in_dim, hidden), "T_pair2": (hidden, hidden),
            "T_sign1": (1, hidden), "T_sign2": (hidden, hidden),
            "T_head": (hidden, 1),
        }.items():
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.params[f"{name}.W"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)),
                                              requires_grad=True, name=f"{name}.W")
            self.params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b")

    def _dense(self, name: str, x: Tensor) -> Tensor:
        return x @ self.params[f"{name}.W"] + self.params[f"{name}.b"]

    def encode_pairs(self, features) -> Tensor:
        features = as_tensor(features)
        if features.ndim != 2 or features.shape[1] != self.in_dim:
            raise ad.DimensionError(f"discriminator expects (n, {self.in_dim}) features, got {features.shape}")
        return self._dense("T_pair2", leaky_relu(self._dense("T_pair1", features)))

    def encode_signs(self, labels: np.ndarray) -> Tensor:
        # labels take few distinct values; encode each once and gather
        values, inverse = np.unique(np.asarray(labels, dtype=np.float64), return_inverse=True)
        codes = self._dense("T_sign2", leaky_relu(self._dense("T_sign1", Tensor(values[:, None]))))
        return codes[inverse.reshape(-1)]

    def score(self, pair_codes: Tensor, labels: np.ndarray) -> Tensor:
        h = leaky_relu(pair_codes + self.encode_signs(labels))
        return ad.reshape(self._dense("T_head", h), (-1,))

    def __call__(self, features, labels) -> Tensor:
        return self.score(self.encode_pairs(features), labels)


def log_mean_exp(t: Tensor) -> Tensor:
    shift = float(np.max(t.data))
    return ad.log(ad.exp(t - shift).mean()) + shift


def dv_bound(disc: Discriminator, batch: MIBatch) -> Tensor:
    """E_joint[T] - log E_marginal[exp T]."""
    if len(batch) == 0:
        raise EmptyBatchError("mutual information batch is empty")
    codes = disc.encode_pairs(batch.features)
    joint = disc.score(codes, batch.labels)
    marginal = disc.score(codes, batch.marginal_labels)
    return joint.mean() - log_mean_exp(marginal)


def mi_loss(disc: Discriminator, batch: MIBatch) -> Tensor:
    return -dv_bound(disc, batch)


@dataclass
class MIEstimate:
    """Result of :func:`estimate_mi`.

    Attributes:
        heldout: DV bound on rows the critic never trained on.
        trace: training-batch DV bound recorded at every optimisation step.
    """

    heldout: float
    trace: np.ndarray

    def trailing(self, steps: int = 100) -> float:
        """Mean training bound over the last ``steps`` steps."""
        return float(np.mean(self.trace[-steps:]))


def estimate_mi(features, labels, steps: int = 250, lr: float = 1e-3, seed: int = 0,
                holdout: float = 0.5, eval_rounds: int = 8, hidden: int = HIDDEN) -> MIEstimate:
    """Fit a fresh discriminator by maximising the DV bound.

    The critic is trained full-batch with Adam on a ``1 - holdout`` share of
    the rows, with a fresh label permutation every step. The held-out value
    averages the bound over ``eval_rounds`` permutations of the remaining
    rows, so an overfitted critic does not inflate it.
    """
    from .autodiff import Tape
    from .optim import AdamState, adam_step

    feats = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(labels) < 4:
        raise EmptyBatchError("need at least four samples to estimate mutual information")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labels))
    n_fit = max(2, int(round(len(labels) * (1.0 - holdout))))
    fit, held = order[:n_fit], order[n_fit:]
    disc = Discriminator(feats.shape[1], rng, hidden)
    state = AdamState()
    names = list(disc.params)
    x_fit = Tensor(feats[fit])
    trace = np.empty(steps)
    for step in range(steps):
        batch = MIBatch.shuffled(x_fit, labels[fit], rng)
        with Tape() as tape:
            loss = mi_loss(disc, batch)
            grads = tape.backward(loss, [disc.params[k] for k in names])
        tape.clear()
        trace[step] = -loss.item()
        adam_step(disc.params, dict(zip(names, grads)), state, lr)
    x_held = Tensor(feats[held])
    vals = [dv_bound(disc, MIBatch.shuffled(x_held, labels[held], rng)).item()
            for _ in range(eval_rounds)]
    return MIEstimate(float(np.mean(vals)), trace)
