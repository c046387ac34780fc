"""Two-photon interference between a pulsed single-photon source and thermal light.

Analytic coincidence models, tag-level Monte Carlo, a detector chain, coincidence
analysis and post-selected Bell tests.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"
