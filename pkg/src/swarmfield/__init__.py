"""Robust semi-cooperative coordination of unicycle agents under wind and sensor noise."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("swarmfield")
except PackageNotFoundError:  # running from a source checkout without install
    __version__ = "0.0.0"
