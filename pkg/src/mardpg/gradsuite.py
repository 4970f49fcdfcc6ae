"""Finite-difference checks of every analytic gradient used in training.

Each check builds fresh networks from a seed and returns a
:class:`~mardpg.numgrad.GradCheckReport`.
"""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from . import numgrad as ng
from .agents import MARDPGModel, pad_action
from .env import ShoppingConfig, ShoppingEnv
from .marl import batch_targets, collect_episode, comm_loss, comm_loss_and_grads, make_batch, unroll_messages

OBS_DIM, MSG_DIM, ACTION_DIMS = 52, 10, (7, 3)
# BPTT entries can be ~1e-11; a wider step keeps round-off below the 1e-8 floor
BPTT_STEP = 1e-4


def _model(seed: int) -> MARDPGModel:
    return MARDPGModel.create(OBS_DIM, MSG_DIM, ACTION_DIMS, np.random.default_rng(seed))


def check_actor(seed: int, tolerance: float = 1e-4) -> ng.GradCheckReport:
    """Random linear readout of the softmax weights of agent 0."""
    rng = np.random.default_rng([seed, 10])
    actor = _model(seed).actors[0]
    msg, obs = rng.uniform(-1, 1, (4, MSG_DIM)), rng.uniform(0, 1, (4, OBS_DIM))
    v = rng.standard_normal((4, actor.spec.action_dim))

    def closure():
        y, tape = actor.forward(msg, obs)
        grads, _ = ng.mlp_backward(actor.params, tape, v)
        return float(np.sum(v * y)), grads

    def loss():
        return float(np.sum(v * actor.act(msg, obs)))

    return ng.grad_check(closure, actor.params, tolerance, loss=loss)


def check_critic(seed: int, tolerance: float = 1e-4) -> ng.GradCheckReport:
    """Squared error of the critic against random targets, w.r.t. its parameters."""
    rng = np.random.default_rng([seed, 11])
    critic = _model(seed).critic
    msg, obs = rng.uniform(-1, 1, (4, MSG_DIM)), rng.uniform(0, 1, (4, OBS_DIM))
    act = np.concatenate([ng.softmax(rng.standard_normal((4, 7))), np.zeros((4, 3))], axis=1)
    y = rng.standard_normal(4)

    def closure():
        q, tape = critic.forward(msg, obs, act)
        err = q - y
        grads, _, _, _ = critic.backward(tape, 2.0 * err / len(err))
        return float(np.mean(err ** 2)), grads

    def loss():
        return float(np.mean((critic.forward(msg, obs, act)[0] - y) ** 2))

    return ng.grad_check(closure, critic.params, tolerance, loss=loss)


def check_lstm_cell(seed: int, tolerance: float = 1e-4) -> ng.GradCheckReport:
    """Linear readout of both cell outputs; inputs and state are checked too."""
    rng = np.random.default_rng([seed, 12])
    comm = _model(seed).comm
    x = {"x": rng.uniform(0, 1, (3, comm.input_dim)), "h": rng.uniform(-1, 1, (3, MSG_DIM)),
         "c": rng.uniform(-1, 1, (3, MSG_DIM))}
    vh, vc = rng.standard_normal((3, MSG_DIM)), rng.standard_normal((3, MSG_DIM))
    params = {**comm.params, **x}

    def closure():
        cell = {k: params[k] for k in comm.params}
        h, c, tape = ng.lstm_cell_forward(cell, params["h"], params["c"], params["x"])
        grads, dh, dc, dx = ng.lstm_cell_backward(cell, tape, vh, vc)
        return float(np.sum(vh * h) + np.sum(vc * c)), {**grads, "x": dx, "h": dh, "c": dc}

    def loss():
        cell = {k: params[k] for k in comm.params}
        h, c, _ = ng.lstm_cell_forward(cell, params["h"], params["c"], params["x"])
        return float(np.sum(vh * h) + np.sum(vc * c))

    return ng.grad_check(closure, params, tolerance, loss=loss)


def check_actor_critic_chain(seed: int, tolerance: float = 1e-4) -> ng.GradCheckReport:
    """``Q(h, o, pad(mu(h, o)))`` w.r.t. the actor parameters, through dQ/da."""
    rng = np.random.default_rng([seed, 13])
    model = _model(seed)
    actor, critic = model.actors[1], model.critic
    msg, obs = rng.uniform(-1, 1, (3, MSG_DIM)), rng.uniform(0, 1, (3, OBS_DIM))

    def closure():
        a, atape = actor.forward(msg, obs)
        q, ctape = critic.forward(msg, obs, pad_action(actor.spec, a))
        _, _, _, d_act = critic.backward(ctape, np.ones_like(q))
        grads, _ = ng.mlp_backward(actor.params, atape, d_act[:, actor.spec.action_slice])
        return float(np.sum(q)), grads

    def loss():
        return float(np.sum(critic.forward(msg, obs, pad_action(actor.spec, actor.act(msg, obs)))[0]))

    return ng.grad_check(closure, actor.params, tolerance, loss=loss)


def bptt_episode(seed: int, model: MARDPGModel, length: int = 5):
    """A simulator episode of exactly ``length`` steps (users never leave early)."""
    cfg = ShoppingConfig(leave_base=0.0, leave_no_click=0.0, leave_after_purchase=0.0, max_steps=length)
    env = ShoppingEnv(cfg, catalog_seed=0)
    return collect_episode(env, model, np.random.default_rng([seed, 14]), 0.3, length)


def check_bptt_chain(seed: int, tolerance: float = 1e-4, length: int = 5, reward_scale: float = 0.03,
                     step: float = BPTT_STEP) -> ng.GradCheckReport:
    """Communication loss of one episode w.r.t. the LSTM, through every message."""
    model = _model(seed)
    batch = make_batch([bptt_episode(seed, model, length)])
    y = batch_targets(model, batch, unroll_messages(model, batch), 0.9, reward_scale)

    def closure():
        loss, grads, _ = comm_loss_and_grads(model, batch, 0.9, 1.0, reward_scale, None, y)
        return loss, grads

    return ng.grad_check(closure, model.comm.params, tolerance, step, loss=lambda: comm_loss(model, batch, y))


CHECKS: Dict[str, Callable[..., ng.GradCheckReport]] = {
    "actor": check_actor,
    "critic": check_critic,
    "lstm_cell": check_lstm_cell,
    "actor_critic_chain": check_actor_critic_chain,
    "bptt_chain": check_bptt_chain,
}


def run_suite(seeds=range(10), tolerance: float = 1e-4) -> Dict[str, Dict[int, ng.GradCheckReport]]:
    return {name: {int(s): fn(int(s), tolerance) for s in seeds} for name, fn in CHECKS.items()}
