"""Cloud controller, policy layer and simulated edge fleet for mobile urban sensing."""

__version__ = "0.1.0"
