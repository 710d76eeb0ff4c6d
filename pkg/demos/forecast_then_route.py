"""Fit the traffic forecaster on the bundled network, then train on its forecasts.

Takes a few minutes on one CPU.
"""
import numpy as np

from sdwnroute.pipeline import agent_snapshots, aligned_measured
from sdwnroute.ppo import PpoConfig, train
from sdwnroute.predictor import PredictorConfig, train_predictor
from sdwnroute.topology import bundled_topology
from sdwnroute.traffic import generate_series

topo = bundled_topology()
series = generate_series(topo, 1000, seed=0)
pred = train_predictor(series, topo, PredictorConfig(episodes=30))
print(f"forecast MSE {pred.test_mse:.5f}, persistence {pred.persistence_mse:.5f}")

cfg = PpoConfig()
runs = {"measured": train(topo, aligned_measured(series, pred.config.window), cfg, seed=0),
        "predicted": train(topo, agent_snapshots(series, topo, pred.checkpoint), cfg, seed=0)}
for name, r in runs.items():
    print(f"{name:>9}: final-100 reward {np.mean(r.rewards[-100:]):7.2f}, steps {np.mean(r.steps[-100:]):5.2f}")
