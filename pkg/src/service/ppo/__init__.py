"""PPO baseline: expert data generation and comparison curves."""
