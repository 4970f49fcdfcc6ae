"""Actors, centralized critic and the recurrent message channel."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence

import numpy as np

from . import numgrad as ng

ACTOR_ACTIVATIONS = ("relu", "relu", "softmax")
CRITIC_ACTIVATIONS = ("relu", "relu", "linear")
CHECKPOINT_FORMAT = "mardpg-checkpoint/1"


@dataclass(frozen=True)
class AgentSpec:
    agent_id: int
    action_dim: int
    offset: int
    padded_dim: int

    @property
    def action_slice(self) -> slice:
        return slice(self.offset, self.offset + self.action_dim)


def make_agent_specs(action_dims: Sequence[int]) -> List[AgentSpec]:
    """Lay agents out back to back inside one padded action vector."""
    if not action_dims or any(d <= 0 for d in action_dims):
        raise ValueError(f"action dims must be positive, got {list(action_dims)}")
    total = int(sum(action_dims))
    specs, offset = [], 0
    for i, d in enumerate(action_dims):
        specs.append(AgentSpec(i, int(d), offset, total))
        offset += d
    return specs


def pad_action(spec: AgentSpec, action: np.ndarray) -> np.ndarray:
    """Place an agent's action in its slice of a zero vector (batched rows allowed)."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape[-1] != spec.action_dim:
        raise ValueError(f"agent {spec.agent_id} expects {spec.action_dim} action dims, got {action.shape[-1]}")
    out = np.zeros(action.shape[:-1] + (spec.padded_dim,))
    out[..., spec.action_slice] = action
    return out


def unpad_action(spec: AgentSpec, padded: np.ndarray) -> np.ndarray:
    padded = np.asarray(padded, dtype=np.float64)
    if padded.shape[-1] != spec.padded_dim:
        raise ValueError(f"padded action must have {spec.padded_dim} dims, got {padded.shape[-1]}")
    return padded[..., spec.action_slice].copy()


def _check_dim(arr: np.ndarray, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape[-1] != dim:
        raise ValueError(f"{what} must have {dim} dims, got {arr.shape[-1]}")
    return arr


@dataclass
class Actor:
    """Deterministic policy ``(message, obs) -> simplex weights``."""

    spec: AgentSpec
    obs_dim: int
    msg_dim: int
    params: ng.ParameterSet

    @classmethod
    def create(cls, spec: AgentSpec, obs_dim: int, msg_dim: int, rng: np.random.Generator,
               hidden: Sequence[int] = (32, 32)) -> "Actor":
        sizes = [msg_dim + obs_dim, *hidden, spec.action_dim]
        return cls(spec, obs_dim, msg_dim, ng.init_params(ng.mlp_shapes(sizes), rng))

    def inputs(self, message, obs) -> np.ndarray:
        message = _check_dim(message, self.msg_dim, "message")
        obs = _check_dim(obs, self.obs_dim, "observation")
        return np.concatenate([message, obs], axis=-1)

    def logits(self, message, obs) -> np.ndarray:
        acts = ACTOR_ACTIVATIONS[:-1] + ("linear",)
        return ng.mlp_forward(self.params, acts, self.inputs(message, obs))[0]

    def forward(self, message, obs):
        return ng.mlp_forward(self.params, ACTOR_ACTIVATIONS, self.inputs(message, obs))

    def act(self, message, obs) -> np.ndarray:
        return self.forward(message, obs)[0]


def actor_forward(actor: Actor, message, obs) -> np.ndarray:
    return actor.forward(message, obs)[0]


@dataclass
class Critic:
    """Shared action-value estimate ``Q(message, obs, padded_action)``."""

    obs_dim: int
    msg_dim: int
    padded_dim: int
    params: ng.ParameterSet

    @classmethod
    def create(cls, obs_dim: int, msg_dim: int, padded_dim: int, rng: np.random.Generator,
               hidden: Sequence[int] = (32, 32)) -> "Critic":
        sizes = [msg_dim + obs_dim + padded_dim, *hidden, 1]
        return cls(obs_dim, msg_dim, padded_dim, ng.init_params(ng.mlp_shapes(sizes), rng))

    @property
    def input_dim(self) -> int:
        return self.msg_dim + self.obs_dim + self.padded_dim

    def inputs(self, message, obs, padded_action) -> np.ndarray:
        message = _check_dim(message, self.msg_dim, "message")
        obs = _check_dim(obs, self.obs_dim, "observation")
        padded_action = _check_dim(padded_action, self.padded_dim, "padded action")
        return np.concatenate([message, obs, padded_action], axis=-1)

    def forward(self, message, obs, padded_action):
        """Returns ``(q, tape)`` with ``q`` shaped like the batch (scalar for one input)."""
        y, tape = ng.mlp_forward(self.params, CRITIC_ACTIVATIONS, self.inputs(message, obs, padded_action))
        return y[..., 0], tape

    def backward(self, tape: ng.MlpTape, dL_dq):
        """Returns ``(grads, d_message, d_obs, d_action)``."""
        dq = np.asarray(dL_dq, dtype=np.float64)[..., None]
        grads, dx = ng.mlp_backward(self.params, tape, dq)
        m, o = self.msg_dim, self.msg_dim + self.obs_dim
        return grads, dx[..., :m], dx[..., m:o], dx[..., o:]


def critic_forward(critic: Critic, message, obs, padded_action) -> float:
    q, _ = critic.forward(message, obs, padded_action)
    return float(q) if np.ndim(q) == 0 else q


@dataclass
class CommChannel:
    """LSTM over ``[obs; padded_action]``; its hidden state is the message."""

    obs_dim: int
    padded_dim: int
    msg_dim: int
    params: ng.ParameterSet
    h: np.ndarray = field(default=None)
    c: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.h is None:
            self.reset()

    @classmethod
    def create(cls, obs_dim: int, padded_dim: int, msg_dim: int, rng: np.random.Generator) -> "CommChannel":
        params = ng.init_params(ng.lstm_shapes(obs_dim + padded_dim, msg_dim), rng)
        return cls(obs_dim, padded_dim, msg_dim, params)

    @property
    def input_dim(self) -> int:
        return self.obs_dim + self.padded_dim

    def reset(self) -> np.ndarray:
        self.h = np.zeros(self.msg_dim)
        self.c = np.zeros(self.msg_dim)
        return self.h

    def step_inputs(self, obs, padded_action) -> np.ndarray:
        obs = _check_dim(obs, self.obs_dim, "observation")
        padded_action = _check_dim(padded_action, self.padded_dim, "padded action")
        return np.concatenate([obs, padded_action], axis=-1)

    def cell(self, h, c, obs, padded_action):
        return ng.lstm_cell_forward(self.params, h, c, self.step_inputs(obs, padded_action))


def comm_step(ch: CommChannel, obs, padded_action) -> np.ndarray:
    """Advance the channel by one step and return the new message."""
    ch.h, ch.c, _ = ch.cell(ch.h, ch.c, obs, padded_action)
    return ch.h


@dataclass
class MARDPGModel:
    """All trainable networks of one multi-agent system."""

    actors: List[Actor]
    critic: Critic
    comm: CommChannel

    @classmethod
    def create(cls, obs_dim: int, msg_dim: int, action_dims: Sequence[int], rng: np.random.Generator,
               actor_hidden: Sequence[int] = (32, 32), critic_hidden: Sequence[int] = (32, 32)) -> "MARDPGModel":
        specs = make_agent_specs(action_dims)
        padded = specs[0].padded_dim
        actors = [Actor.create(s, obs_dim, msg_dim, rng, actor_hidden) for s in specs]
        critic = Critic.create(obs_dim, msg_dim, padded, rng, critic_hidden)
        comm = CommChannel.create(obs_dim, padded, msg_dim, rng)
        return cls(actors, critic, comm)

    @property
    def specs(self) -> List[AgentSpec]:
        return [a.spec for a in self.actors]

    @property
    def obs_dim(self) -> int:
        return self.critic.obs_dim

    @property
    def msg_dim(self) -> int:
        return self.critic.msg_dim

    @property
    def padded_dim(self) -> int:
        return self.critic.padded_dim

    def networks(self) -> Dict[str, ng.ParameterSet]:
        nets = {f"actor{i}": a.params for i, a in enumerate(self.actors)}
        nets["critic"] = self.critic.params
        nets["comm"] = self.comm.params
        return nets

    def copy(self) -> "MARDPGModel":
        actors = [Actor(a.spec, a.obs_dim, a.msg_dim, ng.copy_params(a.params)) for a in self.actors]
        critic = Critic(self.critic.obs_dim, self.critic.msg_dim, self.critic.padded_dim,
                        ng.copy_params(self.critic.params))
        comm = CommChannel(self.comm.obs_dim, self.comm.padded_dim, self.comm.msg_dim,
                           ng.copy_params(self.comm.params))
        return MARDPGModel(actors, critic, comm)

    def dims(self) -> dict:
        return {
            "obs_dim": self.obs_dim,
            "msg_dim": self.msg_dim,
            "action_dims": [a.spec.action_dim for a in self.actors],
            "actor_hidden": [self.actors[0].params[f"W{i}"].shape[0] for i in range(2)],
            "critic_hidden": [self.critic.params[f"W{i}"].shape[0] for i in range(2)],
        }


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, networks: Mapping[str, Mapping[str, np.ndarray]], *, dims: dict,
                    seed: int | None = None, step: int = 0, extra: dict | None = None) -> Path:
    """Write named arrays as ``<network>/<param>`` entries of an ``.npz`` archive.

    The header travels as the JSON string entry ``__header__``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": CHECKPOINT_FORMAT, "dims": dims, "seed": seed, "step": int(step),
              "networks": {net: sorted(arrs) for net, arrs in networks.items()}}
    if extra:
        header["extra"] = extra
    arrays = {f"{net}/{name}": np.asarray(arr, dtype=np.float64)
              for net, arrs in networks.items() for name, arr in arrs.items()}
    arrays["__header__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Returns ``(header, networks)`` where networks maps name -> ParameterSet."""
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
        networks: Dict[str, ng.ParameterSet] = {}
        for key in data.files:
            if key == "__header__":
                continue
            net, name = key.split("/", 1)
            networks.setdefault(net, {})[name] = data[key].copy()
    return header, networks


def save_model(path, model: MARDPGModel, seed: int | None = None, step: int = 0) -> Path:
    return save_checkpoint(path, model.networks(), dims=model.dims(), seed=seed, step=step)


def load_model(path) -> MARDPGModel:
    header, nets = load_checkpoint(path)
    d = header["dims"]
    model = MARDPGModel.create(d["obs_dim"], d["msg_dim"], d["action_dims"], np.random.default_rng(0),
                               d["actor_hidden"], d["critic_hidden"])
    for name, params in model.networks().items():
        for k in params:
            params[k][...] = nets[name][k]
    return model
