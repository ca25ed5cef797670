"""pakrat: reproducible environments from a manifest, a lockfile and sharded channels."""

__version__ = "0.1.0"
