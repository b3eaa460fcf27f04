"""advsim: lockstep co-simulation sandbox for adversarial AV perception and V2X attacks."""

__version__ = "0.1.0"
