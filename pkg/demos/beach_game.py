"""Two sellers learn to split a beach between them.

Trains one seed on the beach game, then compares the learned positions with
the brute-force optimum and the Hotelling (both-at-centre) outcome.

    python3 demos/beach_game.py [seed]
"""

import sys

from mardpg import harness
from mardpg.env import BeachEnv, beach_bruteforce

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = harness.load_config("configs/beach.yaml")
oracle = beach_bruteforce(cfg.beach.rho, cfg.beach.n_customers, cfg.beach.resolution)
print(f"optimum: {oracle.best_reward:.0f} customers at {oracle.best_positions}")
print(f"hotelling: {oracle.hotelling_reward:.0f} customers at {oracle.hotelling_positions}")

model, log = harness.train_mardpg(cfg, seed)
for rec in log[:: len(log) // 10]:
    print(f"step {rec['step']:5d}  mean team reward {rec['mean_episode_reward']:6.1f}  noise {rec['noise']:.2f}")
positions, reward = harness.beach_greedy_positions(model, BeachEnv(cfg.beach.rho, cfg.beach.n_customers))
print(f"learned: {reward:.0f} customers at ({positions[0]:.3f}, {positions[1]:.3f})")
