"""MultiAC6: two-agent DDPG toolkit for shaping a simulated deformable linear object."""

__version__ = "1.0.0"
