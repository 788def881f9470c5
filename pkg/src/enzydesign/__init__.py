"""Joint enzyme sequence/backbone design with substrate conditioning."""

__version__ = "0.1.0"
