"""Whitney Bundles - Glaeser refinement and Whitney extension for C^m solvability problems."""

__version__ = "0.1.0"
