"""MA-RDPG training: episode collection, replay, and the coupled updates of
the centralized critic, the private actors and the message LSTM.

Episodes of a minibatch are padded to a common length and processed together.
Messages are always recomputed from the stored observations and actions with
the current LSTM parameters, so the communication loss can be
back-propagated through the whole message chain.
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import numgrad as ng
from .agents import MARDPGModel, pad_action, save_model


class TrainingAbort(RuntimeError):
    """An update produced non-finite values; ``where`` locates the culprit."""

    def __init__(self, message: str, where: dict | None = None):
        super().__init__(message)
        self.where = where or {}


class EpisodeAbort(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"environment failed at step {step}: {cause}")
        self.step = step


@dataclass
class Transition:
    agent_id: int
    obs: np.ndarray
    action: np.ndarray
    reward: float
    terminal: bool


@dataclass
class Episode:
    """One session. ``final_obs``/``final_agent`` bootstrap a truncated tail.

    ``messages`` is the behaviour-time message trace, kept for diagnostics only.
    """

    transitions: List[Transition]
    final_obs: Optional[np.ndarray] = None
    final_agent: Optional[int] = None
    messages: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.transitions:
            raise ValueError("an episode needs at least one transition")
        if any(tr.terminal for tr in self.transitions[:-1]):
            raise ValueError("only the final transition may be terminal")

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def terminal(self) -> bool:
        return self.transitions[-1].terminal

    @property
    def total_reward(self) -> float:
        return float(sum(tr.reward for tr in self.transitions))

    def arrays(self):
        obs = np.array([tr.obs for tr in self.transitions])
        act = np.array([tr.action for tr in self.transitions])
        rew = np.array([tr.reward for tr in self.transitions])
        agents = np.array([tr.agent_id for tr in self.transitions])
        return obs, act, rew, agents


class ReplayBuffer:
    """Bounded FIFO of episodes; the oldest episode is evicted first."""

    def __init__(self, capacity: int = 10_000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._episodes: deque = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._episodes)

    def __iter__(self):
        return iter(list(self._episodes))

    def store(self, episode: Episode) -> None:
        if len(episode) == 0:
            raise ValueError("cannot store an empty episode")
        with self._lock:
            self._episodes.append(episode)

    def sample(self, k: int, rng: np.random.Generator) -> List[Episode]:
        """``k`` uniform draws; without replacement unless ``k`` exceeds the size."""
        n = len(self._episodes)
        if n == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.choice(n, size=k, replace=k > n)
        return [self._episodes[i] for i in idx]


def buffer_store(buf: ReplayBuffer, episode: Episode) -> None:
    buf.store(episode)


def buffer_sample(buf: ReplayBuffer, k: int, rng: np.random.Generator) -> List[Episode]:
    return buf.sample(k, rng)


@dataclass
class TrainConfig:
    __pydantic_config__ = {"extra": "forbid"}

    gamma: float = 0.9
    lr_actor: float = 1e-3
    lr_critic: float = 1e-5
    lr_comm: float = 1e-5
    minibatch: int = 100
    buffer_capacity: int = 10_000
    episodes_per_step: int = 10
    max_episode_steps: int = 10
    train_steps: int = 1000
    noise_start: float = 0.3
    noise_end: float = 0.02
    comm_q_coef: float = 1.0
    clip_norm: float = 5.0
    reward_scale: float = 1.0
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    per_timestep: bool = False
    target_networks: bool = False
    target_tau: float = 0.01
    checkpoint_every: int = 0
    # learning rates decay linearly to this fraction of their start value
    lr_final_fraction: float = 1.0

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("lr_actor", "lr_critic", "lr_comm"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("minibatch", "buffer_capacity", "episodes_per_step", "max_episode_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.train_steps < 0 or self.checkpoint_every < 0:
            raise ValueError(f"{'train_steps' if self.train_steps < 0 else 'checkpoint_every'} must be >= 0")
        for name in ("clip_norm", "reward_scale", "rms_eps"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.rms_decay < 1.0:
            raise ValueError("rms_decay must lie in (0, 1)")
        if self.noise_start < 0.0 or self.noise_end < 0.0:
            raise ValueError("noise_start must be >= 0" if self.noise_start < 0.0 else "noise_end must be >= 0")
        if self.comm_q_coef < 0.0:
            raise ValueError("comm_q_coef must be >= 0")
        if not 0.0 < self.target_tau <= 1.0:
            raise ValueError("target_tau must lie in (0, 1]")
        if not 0.0 < self.lr_final_fraction <= 1.0:
            raise ValueError("lr_final_fraction must lie in (0, 1]")

    def noise_at(self, step: int) -> float:
        if self.train_steps <= 1:
            return self.noise_end
        frac = min(step / (self.train_steps - 1), 1.0)
        return self.noise_start + frac * (self.noise_end - self.noise_start)

    def lr_factor(self, step: int) -> float:
        if self.train_steps <= 1:
            return 1.0
        frac = min(step / (self.train_steps - 1), 1.0)
        return 1.0 + frac * (self.lr_final_fraction - 1.0)


@dataclass
class Optimizers:
    actors: List[ng.RmsPropState]
    critic: ng.RmsPropState
    comm: ng.RmsPropState

    @classmethod
    def create(cls, model: MARDPGModel, cfg: TrainConfig) -> "Optimizers":
        def make(lr):
            return ng.RmsPropState(lr, cfg.rms_decay, cfg.rms_eps)
        return cls([make(cfg.lr_actor) for _ in model.actors], make(cfg.lr_critic), make(cfg.lr_comm))

    def scale(self, cfg: TrainConfig, factor: float) -> None:
        for opt in self.actors:
            opt.learning_rate = cfg.lr_actor * factor
        self.critic.learning_rate = cfg.lr_critic * factor
        self.comm.learning_rate = cfg.lr_comm * factor


# ---------------------------------------------------------------------------
# collection


def collect_episode(env, model: MARDPGModel, rng: np.random.Generator, exploration_noise: float = 0.0,
                    max_steps: int = 10) -> Episode:
    """Roll out one episode with Gaussian noise added to the actors' logits."""
    obs, agent = env.reset(rng)
    comm = model.comm
    h, c = np.zeros(comm.msg_dim), np.zeros(comm.msg_dim)
    messages = [h]
    transitions: List[Transition] = []
    final_obs = final_agent = None
    for t in range(max_steps):
        actor = model.actors[agent]
        logits = actor.logits(h, obs)
        if exploration_noise > 0.0:
            logits = logits + exploration_noise * rng.standard_normal(logits.shape)
        padded = pad_action(actor.spec, ng.softmax(logits))
        try:
            step = env.step(padded)
        except Exception as exc:  # noqa: BLE001 - any env failure aborts the episode
            raise EpisodeAbort(t, exc) from exc
        transitions.append(Transition(agent, obs, padded, float(step.reward), bool(step.terminal)))
        h, c, _ = comm.cell(h, c, obs, padded)
        messages.append(h)
        if step.terminal:
            break
        obs, agent = step.next_obs, step.next_agent
        if t == max_steps - 1 or step.info.get("truncated"):
            final_obs, final_agent = obs, agent
            break
    return Episode(transitions, final_obs, final_agent, np.array(messages))


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    obs: np.ndarray          # (B, T, obs_dim)
    act: np.ndarray          # (B, T, padded_dim)
    rew: np.ndarray          # (B, T)
    agent: np.ndarray        # (B, T)
    valid: np.ndarray        # (B, T) timestep exists
    mask: np.ndarray         # (B, T) timestep contributes to the loss
    next_obs: np.ndarray     # (B, T, obs_dim)
    next_agent: np.ndarray   # (B, T)
    bootstrap: np.ndarray    # (B, T)

    @property
    def size(self) -> int:
        return int(self.mask.sum())


def make_batch(episodes: Sequence[Episode], only: Optional[Sequence[tuple]] = None) -> Batch:
    """Pad episodes to a common length.

    ``only`` restricts the loss mask to the listed ``(episode, t)`` pairs.
    """
    if not episodes:
        raise ValueError("batch must contain at least one episode")
    B = len(episodes)
    T = max(len(e) for e in episodes)
    first = episodes[0].transitions[0]
    o_dim, p_dim = len(first.obs), len(first.action)
    obs = np.zeros((B, T, o_dim))
    act = np.zeros((B, T, p_dim))
    rew = np.zeros((B, T))
    agent = np.zeros((B, T), dtype=int)
    valid = np.zeros((B, T), dtype=bool)
    next_obs = np.zeros((B, T, o_dim))
    next_agent = np.zeros((B, T), dtype=int)
    bootstrap = np.zeros((B, T), dtype=bool)
    for b, ep in enumerate(episodes):
        n = len(ep)
        o, a, r, g = ep.arrays()
        obs[b, :n], act[b, :n], rew[b, :n], agent[b, :n] = o, a, r, g
        valid[b, :n] = True
        next_obs[b, :n - 1], next_agent[b, :n - 1] = o[1:], g[1:]
        bootstrap[b, :n - 1] = True
        if not ep.terminal and ep.final_obs is not None:
            next_obs[b, n - 1], next_agent[b, n - 1] = ep.final_obs, ep.final_agent
            bootstrap[b, n - 1] = True
    if only is None:
        mask = valid.copy()
    else:
        mask = np.zeros_like(valid)
        for b, t in only:
            mask[b, t] = valid[b, t]
    return Batch(obs, act, rew, agent, valid, mask, next_obs, next_agent, bootstrap & valid)


def unroll_messages(model: MARDPGModel, batch: Batch, keep_tapes: bool = False):
    """Messages ``H[:, t]`` seen at step ``t`` (``H[:, 0] = 0``); shape ``(B, T+1, msg)``."""
    B, T = batch.rew.shape
    m = model.msg_dim
    H = np.zeros((B, T + 1, m))
    h, c = np.zeros((B, m)), np.zeros((B, m))
    tapes = []
    for t in range(T):
        h, c, tape = model.comm.cell(h, c, batch.obs[:, t], batch.act[:, t])
        H[:, t + 1] = h
        if keep_tapes:
            tapes.append(tape)
    return (H, tapes) if keep_tapes else H


def _policy_actions(model: MARDPGModel, messages: np.ndarray, obs: np.ndarray, agents: np.ndarray) -> np.ndarray:
    """Padded greedy actions for rows with per-row acting agents."""
    out = np.zeros((len(obs), model.padded_dim))
    for i, actor in enumerate(model.actors):
        rows = agents == i
        if rows.any():
            out[rows] = pad_action(actor.spec, actor.forward(messages[rows], obs[rows])[0])
    return out


def batch_targets(model: MARDPGModel, batch: Batch, H: np.ndarray, gamma: float,
                  reward_scale: float = 1.0) -> np.ndarray:
    """TD targets ``y[b, t]`` for every timestep (constants for differentiation)."""
    y = batch.rew * reward_scale
    boot = batch.bootstrap & batch.mask
    if gamma > 0.0 and boot.any():
        msg = H[:, 1:][boot]
        nobs = batch.next_obs[boot]
        nact = _policy_actions(model, msg, nobs, batch.next_agent[boot])
        q_next, _ = model.critic.forward(msg, nobs, nact)
        y = y.copy()
        y[boot] += gamma * q_next
    return y


def td_target(model: MARDPGModel, messages: np.ndarray, episode: Episode, t: int, gamma: float) -> float:
    """``r_t + gamma * Q(h_t, o_{t+1}, mu(h_t, o_{t+1}))``, or ``r_t`` at a terminal step.

    ``messages`` holds ``h_0 .. h_T`` recomputed for this episode.
    """
    if not 0 <= t < len(episode):
        raise IndexError(f"timestep {t} outside episode of length {len(episode)}")
    tr = episode.transitions[t]
    if tr.terminal:
        return float(tr.reward)
    if t + 1 < len(episode):
        nobs, nagent = episode.transitions[t + 1].obs, episode.transitions[t + 1].agent_id
    elif episode.final_obs is not None:
        nobs, nagent = episode.final_obs, episode.final_agent
    else:
        return float(tr.reward)
    actor = model.actors[nagent]
    a = pad_action(actor.spec, actor.act(messages[t + 1], nobs))
    q, _ = model.critic.forward(messages[t + 1], nobs, a)
    return float(tr.reward + gamma * float(q))


def episode_messages(model: MARDPGModel, episode: Episode) -> np.ndarray:
    return unroll_messages(model, make_batch([episode]))[0]


# ---------------------------------------------------------------------------
# updates


def _critic_loss_grads(model: MARDPGModel, batch: Batch, H: np.ndarray, y: np.ndarray):
    m = batch.mask
    q, tape = model.critic.forward(H[:, :-1][m], batch.obs[m], batch.act[m])
    err = q - y[m]
    n = len(err)
    loss = float(np.mean(err ** 2))
    grads, _, _, _ = model.critic.backward(tape, 2.0 * err / n)
    return loss, grads, q


def critic_update(model: MARDPGModel, batch: Batch, opt: ng.RmsPropState, gamma: float,
                  reward_scale: float = 1.0, target_model: Optional[MARDPGModel] = None) -> dict:
    """One RMSProp step on the mean squared TD error. Returns pre-update stats."""
    if batch.size == 0:
        raise ValueError("empty batch")
    H = unroll_messages(model, batch)
    if target_model is None:
        y = batch_targets(model, batch, H, gamma, reward_scale)
    else:
        y = batch_targets(target_model, batch, unroll_messages(target_model, batch), gamma, reward_scale)
    loss, grads, q = _critic_loss_grads(model, batch, H, y)
    if not np.isfinite(loss):
        bad = np.argwhere(~np.isfinite(q))
        where = dict(zip(("episode", "step"), map(int, np.argwhere(batch.mask)[bad[0][0]]))) if len(bad) else {}
        raise TrainingAbort("non-finite critic loss", where)
    ng.rmsprop_step(model.critic.params, grads, opt)
    return {"loss": loss, "mean_q": float(np.mean(q))}


def _actor_objective_grads(model: MARDPGModel, batch: Batch, H: np.ndarray, agent: int):
    rows = batch.mask & (batch.agent == agent)
    if not rows.any():
        return None
    actor = model.actors[agent]
    msg, obs = H[:, :-1][rows], batch.obs[rows]
    a, atape = actor.forward(msg, obs)
    q, ctape = model.critic.forward(msg, obs, pad_action(actor.spec, a))
    n = len(q)
    _, _, _, d_act = model.critic.backward(ctape, np.full(n, 1.0 / n))
    dq_da = d_act[:, actor.spec.action_slice]
    finite = np.all(np.isfinite(dq_da), axis=1) & np.isfinite(q)
    skipped = int(n - finite.sum())
    if skipped:
        dq_da = np.where(finite[:, None], dq_da, 0.0)
    # ascent on J == descent on -J
    grads, _ = ng.mlp_backward(actor.params, atape, -dq_da)
    objective = float(np.mean(q[finite])) if finite.any() else float("nan")
    return objective, grads, skipped, a.mean(axis=0)


def actor_update(model: MARDPGModel, batch: Batch, opts: Sequence[ng.RmsPropState]) -> dict:
    """Ascend ``Q(h, o, mu(h, o))`` for each agent over the timesteps it was active."""
    H = unroll_messages(model, batch)
    out = {"objective": {}, "skipped": 0, "mean_action": {}}
    results = [_actor_objective_grads(model, batch, H, i) for i in range(len(model.actors))]
    for i, res in enumerate(results):
        if res is None:
            continue
        objective, grads, skipped, mean_action = res
        out["objective"][i] = objective
        out["skipped"] += skipped
        out["mean_action"][i] = mean_action.tolist()
        ng.rmsprop_step(model.actors[i].params, grads, opts[i])
    return out


def comm_loss(model: MARDPGModel, batch: Batch, y: np.ndarray, q_coef: float = 1.0) -> float:
    """Forward value of the communication loss for fixed targets ``y``."""
    H = unroll_messages(model, batch)
    m = batch.mask
    q, _ = model.critic.forward(H[:, :-1][m], batch.obs[m], batch.act[m])
    return float(np.mean((q - y[m]) ** 2) - q_coef * np.mean(q))


def comm_loss_and_grads(model: MARDPGModel, batch: Batch, gamma: float, q_coef: float = 1.0,
                        reward_scale: float = 1.0, clip_norm: Optional[float] = 5.0,
                        y: Optional[np.ndarray] = None):
    """``mean (Q - y)^2 - q_coef * mean Q`` and its BPTT gradient w.r.t. the LSTM.

    Each episode's gradient is clipped to ``clip_norm`` before summation;
    non-finite episode gradients are dropped. Returns ``(loss, grads, info)``.
    """
    H, tapes = unroll_messages(model, batch, keep_tapes=True)
    if y is None:
        y = batch_targets(model, batch, H, gamma, reward_scale)
    m = batch.mask
    q, ctape = model.critic.forward(H[:, :-1][m], batch.obs[m], batch.act[m])
    n = len(q)
    err = q - y[m]
    loss = float(np.mean(err ** 2) - q_coef * np.mean(q))
    _, d_msg, _, _ = model.critic.backward(ctape, (2.0 * err - q_coef) / n)
    B, T = batch.rew.shape
    dH = np.zeros_like(H)
    dH[:, :-1][m] = d_msg
    params = model.comm.params
    x_dim = model.comm.input_dim
    gate_ct = {gname: np.zeros((B, T, model.msg_dim)) for gname in ng.LSTM_GATES}
    dh_carry = np.zeros((B, model.msg_dim))
    dc_carry = np.zeros((B, model.msg_dim))
    # step t maps H[:, t] -> H[:, t+1]; H[:, 0] is a constant
    for t in reversed(range(T)):
        pre, dc_carry = ng.lstm_gate_cotangents(tapes[t], dH[:, t + 1] + dh_carry, dc_carry)
        dz = sum(pre[gname] @ params[f"W_{gname}"] for gname in ng.LSTM_GATES)
        dh_carry = dz[:, x_dim:]
        for gname in ng.LSTM_GATES:
            gate_ct[gname][:, t] = pre[gname]
    Z = np.stack([tape.z for tape in tapes], axis=1)  # (B, T, x_dim + msg)
    per_ep = {}
    for gname in ng.LSTM_GATES:
        per_ep[f"W_{gname}"] = np.matmul(gate_ct[gname].transpose(0, 2, 1), Z)
        per_ep[f"b_{gname}"] = gate_ct[gname].sum(axis=1)
    per_ep = {k: per_ep[k] for k in params}
    norms = np.sqrt(sum(np.sum(g.reshape(B, -1) ** 2, axis=1) for g in per_ep.values()))
    finite = np.isfinite(norms)
    scale = np.where(finite, 1.0, 0.0)
    clipped = 0
    if clip_norm is not None:
        over = finite & (norms > clip_norm)
        clipped = int(over.sum())
        scale = np.where(over, clip_norm / np.where(over, norms, 1.0), scale)
    grads = {}
    for k, g in per_ep.items():
        g = np.where(finite.reshape((B,) + (1,) * (g.ndim - 1)), g, 0.0)
        grads[k] = np.tensordot(scale, g, axes=(0, 0))
    info = {"clipped": clipped, "dropped": int((~finite).sum())}
    return loss, grads, info


def comm_update(model: MARDPGModel, batch: Batch, opt: ng.RmsPropState, gamma: float, q_coef: float = 1.0,
                reward_scale: float = 1.0, clip_norm: float = 5.0,
                target_model: Optional[MARDPGModel] = None) -> dict:
    """One RMSProp step on the communication loss."""
    y = None
    if target_model is not None:
        y = batch_targets(target_model, batch, unroll_messages(target_model, batch), gamma, reward_scale)
    loss, grads, info = comm_loss_and_grads(model, batch, gamma, q_coef, reward_scale, clip_norm, y)
    if not np.isfinite(loss):
        raise TrainingAbort("non-finite communication loss")
    ng.rmsprop_step(model.comm.params, grads, opt)
    return {"loss": loss, **info}


def soft_update(target: MARDPGModel, source: MARDPGModel, tau: float) -> None:
    for name, params in source.networks().items():
        tparams = target.networks()[name]
        for k, v in params.items():
            tparams[k] *= 1.0 - tau
            tparams[k] += tau * v


# ---------------------------------------------------------------------------
# training loop


@dataclass
class Trainer:
    """Holds the mutable state of a training run (optimizers, buffer, RNG)."""

    model: MARDPGModel
    cfg: TrainConfig
    buffer: ReplayBuffer
    rng: np.random.Generator
    opts: Optimizers = None
    target: Optional[MARDPGModel] = None
    step: int = 0
    log: List[dict] = field(default_factory=list)

    def __post_init__(self):
        self.cfg.validate()
        if self.opts is None:
            self.opts = Optimizers.create(self.model, self.cfg)
        if self.cfg.target_networks and self.target is None:
            self.target = self.model.copy()

    def update(self, episodes: Sequence[Episode]) -> dict:
        cfg = self.cfg
        if cfg.per_timestep:
            return self._update_per_timestep(episodes)
        batch = make_batch(episodes)
        c = critic_update(self.model, batch, self.opts.critic, cfg.gamma, cfg.reward_scale, self.target)
        a = actor_update(self.model, batch, self.opts.actors)
        m = comm_update(self.model, batch, self.opts.comm, cfg.gamma, cfg.comm_q_coef, cfg.reward_scale,
                        cfg.clip_norm, self.target)
        if self.target is not None:
            soft_update(self.target, self.model, cfg.target_tau)
        return {"critic_loss": c["loss"], "mean_q": c["mean_q"], "comm_loss": m["loss"],
                "clipped": m["clipped"], "skipped": a["skipped"], "mean_action": a["mean_action"]}

    def _update_per_timestep(self, episodes: Sequence[Episode]) -> dict:
        cfg = self.cfg
        closs, mloss, qs = [], [], []
        actions: Dict[int, list] = {}
        for ep in episodes:
            for t in reversed(range(len(ep))):
                batch = make_batch([ep], only=[(0, t)])
                c = critic_update(self.model, batch, self.opts.critic, cfg.gamma, cfg.reward_scale, self.target)
                a = actor_update(self.model, batch, self.opts.actors)
                m = comm_update(self.model, batch, self.opts.comm, cfg.gamma, cfg.comm_q_coef,
                                cfg.reward_scale, cfg.clip_norm, self.target)
                if self.target is not None:
                    soft_update(self.target, self.model, cfg.target_tau)
                closs.append(c["loss"])
                qs.append(c["mean_q"])
                mloss.append(m["loss"])
                for i, v in a["mean_action"].items():
                    actions.setdefault(i, []).append(v)
        return {"critic_loss": float(np.mean(closs)), "mean_q": float(np.mean(qs)),
                "comm_loss": float(np.mean(mloss)), "clipped": 0, "skipped": 0,
                "mean_action": {i: np.mean(v, axis=0).tolist() for i, v in actions.items()}}

    def train_step(self, envs: Sequence) -> dict:
        cfg = self.cfg
        t0 = time.perf_counter()
        noise = cfg.noise_at(self.step)
        rewards = []
        for j in range(cfg.episodes_per_step):
            env = envs[j % len(envs)]
            ep = collect_episode(env, self.model, self.rng, noise, cfg.max_episode_steps)
            self.buffer.store(ep)
            rewards.append(ep.total_reward)
        batch = self.buffer.sample(cfg.minibatch, self.rng)
        if cfg.lr_final_fraction != 1.0:
            self.opts.scale(cfg, cfg.lr_factor(self.step))
        stats = self.update(batch)
        record = {
            "step": self.step,
            "wall_ms": round(1000.0 * (time.perf_counter() - t0), 3),
            "critic_loss": stats["critic_loss"],
            "comm_loss": stats["comm_loss"],
            "mean_q": stats["mean_q"],
            "mean_episode_reward": float(np.mean(rewards)),
            "mean_action": {str(k): v for k, v in sorted(stats["mean_action"].items())},
            "noise": noise,
        }
        self.step += 1
        return record


def train(envs, model: MARDPGModel, config: TrainConfig, buffer: Optional[ReplayBuffer] = None,
          rng: Optional[np.random.Generator] = None, log_path=None, checkpoint_dir=None,
          seed: Optional[int] = None) -> List[dict]:
    """Run ``config.train_steps`` iterations of collect -> store -> sample -> update.

    Returns the per-step log records; with ``log_path`` they are also written
    as JSON lines. A failed update is logged and skipped; three consecutive
    failures stop training.
    """
    if not isinstance(envs, (list, tuple)):
        envs = [envs]
    rng = rng if rng is not None else np.random.default_rng(seed)
    buffer = buffer if buffer is not None else ReplayBuffer(config.buffer_capacity)
    trainer = Trainer(model, config, buffer, rng)
    fh = open(log_path, "w") if log_path is not None else None
    failures = 0
    try:
        for _ in range(config.train_steps):
            try:
                record = trainer.train_step(envs)
                failures = 0
            except (TrainingAbort, EpisodeAbort, ng.NonFiniteGradient) as exc:
                failures += 1
                record = {"step": trainer.step, "aborted": str(exc)}
                trainer.step += 1
            trainer.log.append(record)
            if fh is not None:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if failures >= 3:
                break
            if checkpoint_dir is not None and config.checkpoint_every and trainer.step % config.checkpoint_every == 0:
                save_model(Path(checkpoint_dir) / f"step{trainer.step:07d}.npz", model, seed, trainer.step)
    finally:
        if fh is not None:
            fh.close()
    return trainer.log


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
