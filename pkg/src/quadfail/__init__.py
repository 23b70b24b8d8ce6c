"""Emergency landing toolkit for a quadcopter that has lost one rotor."""

__version__ = "0.1.0"
