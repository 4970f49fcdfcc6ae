"""Multi-agent recurrent deterministic policy gradient for multi-scenario ranking."""
