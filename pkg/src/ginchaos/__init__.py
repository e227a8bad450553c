"""Log-determinants of non-Hermitian random matrices and their Gaussian
multiplicative chaos limit: moment predictions, Monte Carlo, and the local
Dyson Brownian motion analysis."""

from importlib import metadata as _metadata

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0+unknown"

__all__ = ["__version__"]
