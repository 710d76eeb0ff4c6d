"""Train the agent on a 6-node network and compare its paths with the baselines."""
import numpy as np

from sdwnroute.baselines import ROUTERS, simple_paths
from sdwnroute.env import as_info, normalized_info, total_reward
from sdwnroute.ppo import PpoConfig, select_path, train
from sdwnroute.topology import generate_topology
from sdwnroute.traffic import generate_series

topo = generate_topology(6, 9, seed=3)
snap = generate_series(topo, 20, seed=1).snapshots[10]
res = train(topo, [snap], PpoConfig(episodes=1000), seed=0)
print(f"mean reward first/last 100 episodes: {np.mean(res.rewards[:100]):.2f} / {np.mean(res.rewards[-100:]):.2f}")

ni = normalized_info(as_info(snap, topo))
print(f"{'pair':>6} {'optimum':>8} {'agent':>8} " + " ".join(f"{a:>8}" for a in ROUTERS))
for s, d in [(1, 6), (2, 5), (3, 4), (6, 1)]:
    best = max(total_reward(p, ni) for p in simple_paths(topo, s, d))
    r = select_path(res.checkpoint, topo, s, d, snap)
    agent = f"{total_reward(r.path, ni):8.3f}" if r.ok else f"{'none':>8}"
    base = " ".join(f"{total_reward(fn(snap, topo, s, d), ni):8.3f}" for fn in ROUTERS.values())
    print(f"{s:>2}->{d:<3} {best:8.3f} {agent} {base}")
