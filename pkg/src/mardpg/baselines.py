"""Single-scenario ranking baselines: fixed empirical weights and point-wise L2R."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import numgrad as ng
from .agents import ACTOR_ACTIVATIONS, load_checkpoint, save_checkpoint


@dataclass
class EwPolicy:
    """Fixed feature weights for one scenario; the observation is ignored."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise ValueError("EW weights must form a probability vector")
        self.weights = w

    @classmethod
    def uniform(cls, action_dim: int) -> "EwPolicy":
        return cls(np.full(action_dim, 1.0 / action_dim))

    def act(self, message, obs) -> np.ndarray:
        return self.weights.copy()


def ew_rank(policy: EwPolicy, obs) -> np.ndarray:
    return policy.act(None, obs)


@dataclass
class L2rData:
    """Logged pages of one scenario: observations, shown item features and labels.

    ``labels[p, k]`` is 1 when item ``k`` of page ``p`` was clicked or bought.
    """

    obs: np.ndarray          # (P, obs_dim)
    features: np.ndarray     # (P, k, d)
    labels: np.ndarray       # (P, k)

    def __len__(self) -> int:
        return len(self.obs)

    def subset(self, idx) -> "L2rData":
        return L2rData(self.obs[idx], self.features[idx], self.labels[idx])


@dataclass
class L2rModel:
    """Point-wise relevance scorer ``sigmoid(alpha * <w(obs), x> + b)``.

    ``w(obs)`` is the softmax head of an actor-shaped MLP without message
    input; it doubles as the serving weight vector.
    """

    obs_dim: int
    action_dim: int
    params: ng.ParameterSet
    history: List[float] = field(default_factory=list)

    @classmethod
    def create(cls, obs_dim: int, action_dim: int, rng: np.random.Generator,
               hidden: Sequence[int] = (32, 32)) -> "L2rModel":
        params = ng.init_params(ng.mlp_shapes([obs_dim, *hidden, action_dim]), rng)
        params["log_alpha"] = np.array([np.log(4.0)])
        params["bias"] = np.array([-2.0])
        return cls(obs_dim, action_dim, params)

    @property
    def net(self) -> ng.ParameterSet:
        return {k: v for k, v in self.params.items() if k[0] in "Wb" and k[1:].isdigit()}

    def weights(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation must have {self.obs_dim} dims, got {obs.shape[-1]}")
        return ng.mlp_forward(self.net, ACTOR_ACTIVATIONS, obs)[0]

    def act(self, message, obs) -> np.ndarray:
        return self.weights(obs)

    def predict(self, obs, features) -> np.ndarray:
        """Click-or-purchase probability for each item of each page."""
        w = self.weights(obs)
        u = np.einsum("pkd,pd->pk", features, np.atleast_2d(w))
        return ng.sigmoid(np.exp(self.params["log_alpha"][0]) * u + self.params["bias"][0])

    def loss_and_grads(self, data: L2rData):
        """Mean logistic loss over all items and its gradient."""
        net = self.net
        w, tape = ng.mlp_forward(net, ACTOR_ACTIVATIONS, data.obs)
        alpha = np.exp(self.params["log_alpha"][0])
        u = np.einsum("pkd,pd->pk", data.features, w)
        logit = alpha * u + self.params["bias"][0]
        y = data.labels
        n = y.size
        loss = float(np.sum(np.logaddexp(0.0, logit) - y * logit) / n)
        dlogit = (ng.sigmoid(logit) - y) / n
        du = dlogit * alpha
        dw = np.einsum("pk,pkd->pd", du, data.features)
        grads, _ = ng.mlp_backward(net, tape, dw)
        grads["log_alpha"] = np.array([np.sum(dlogit * u) * alpha])
        grads["bias"] = np.array([np.sum(dlogit)])
        return loss, {k: grads[k] for k in self.params}


def l2r_train(model: L2rModel, data: L2rData, epochs: int = 10, batch_size: int = 256,
              learning_rate: float = 3e-3, rng: Optional[np.random.Generator] = None) -> L2rModel:
    """Minibatch RMSProp on the logistic loss; appends the full-data loss per epoch to ``history``."""
    if len(data) == 0:
        raise ValueError("no logged interactions to train on")
    rng = rng or np.random.default_rng(0)
    opt = ng.RmsPropState(learning_rate)
    for _ in range(epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), batch_size):
            _, grads = model.loss_and_grads(data.subset(order[start:start + batch_size]))
            ng.rmsprop_step(model.params, grads, opt)
        model.history.append(model.loss_and_grads(data)[0])
    return model


def l2r_rank(model: L2rModel, obs) -> np.ndarray:
    return model.weights(obs)


def save_l2r(path, models: Sequence[L2rModel], seed: int | None = None):
    """One checkpoint holding a ranker per scenario (``l2r0``, ``l2r1``, ...)."""
    nets = {f"l2r{i}": m.params for i, m in enumerate(models)}
    dims = {"obs_dim": models[0].obs_dim, "action_dims": [m.action_dim for m in models],
            "hidden": [int(models[0].params[f"W{i}"].shape[0]) for i in range(ng.n_layers(models[0].net) - 1)]}
    return save_checkpoint(path, nets, dims=dims, seed=seed, step=len(models[0].history))


def load_l2r(path) -> List[L2rModel]:
    header, nets = load_checkpoint(path)
    d = header["dims"]
    models = []
    for i, dim in enumerate(d["action_dims"]):
        model = L2rModel.create(d["obs_dim"], dim, np.random.default_rng(0), d["hidden"])
        for k in model.params:
            model.params[k][...] = nets[f"l2r{i}"][k]
        models.append(model)
    return models


def auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Probability that a random positive outscores a random negative (ties count half)."""
    labels = np.asarray(labels, dtype=bool).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
