"""Adaptive full/hybrid/linear transient-stability simulation with
balanced-truncation reduction of an external area."""
from importlib.resources import files as _files

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path of a bundled data file, e.g. ``fixture_path("synth48.json")``."""
    return _files(__name__) / "data" / name
