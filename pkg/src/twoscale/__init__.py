"""Large deviations for two-scale chemical kinetic processes."""

__version__ = "0.1.0"
