"""Normal forms, resonance catalogs and Fermi-golden-rule diagnostics for a
time-periodically forced nonlinear Schrödinger equation on a periodic box."""

__version__ = "0.1.0"

from . import birkhoff, cli, dynamics, fgr, hamalg, resonance, spectral  # noqa: F401
