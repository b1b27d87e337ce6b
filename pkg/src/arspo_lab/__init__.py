"""Multi-task group-relative policy optimization with adaptive reward shaping.

Submodules: metrics, rewards, group_norm, objectives, dca, dynamics, policy,
envs, train, config, verify, cli.
"""

__version__ = "0.1.0"
