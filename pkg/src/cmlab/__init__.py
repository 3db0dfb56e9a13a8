"""Coded-modulation laboratory for 8PSK: turbo TCM and BICM LDPC over correlated AWGN."""

from .modulation import Constellation, build_8psk

__version__ = "0.1.0"

__all__ = ["Constellation", "build_8psk", "__version__"]
