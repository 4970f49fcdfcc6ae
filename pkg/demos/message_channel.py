"""What the message carries: replay one shopping session with a trained model.

Prints, per step, which agent acted, the weights it chose and the norm of the
message it read. Pass a checkpoint from ``mardpg train``, or the demo trains a
short model first.

    python3 demos/message_channel.py [checkpoint.npz]
"""

import sys

import numpy as np

from mardpg import harness
from mardpg.agents import comm_step, load_model, pad_action

cfg = harness.load_config("configs/shopping.yaml", environ={"MARDPG__TRAIN__TRAIN_STEPS": "300"})
model = load_model(sys.argv[1]) if len(sys.argv) > 1 else harness.train_mardpg(cfg, 0)[0]
env = harness.make_env(cfg, 0)
names = ("main search", "in-shop")


def play(seed, verbose):
    obs, agent = env.reset(np.random.default_rng(seed))
    message = model.comm.reset()
    steps = 0
    while True:
        actor = model.actors[agent]
        weights = actor.act(message, obs)
        padded = pad_action(actor.spec, weights)
        step = env.step(padded)
        steps += 1
        if verbose:
            print(f"{names[agent]:12s} |h|={np.linalg.norm(message):.3f} weights={np.round(weights, 2)} "
                  f"reward={step.reward:+.1f}")
        message = comm_step(model.comm, obs, padded)
        if step.terminal:
            return steps
        obs, agent = step.next_obs, step.next_agent


# replay the first session long enough to show the message evolving
seed = next(s for s in range(1000) if play(s, False) >= 4)
play(seed, True)
