"""Entry point for python -m whitney_bundles."""

import sys

from .app import main

if __name__ == "__main__":
    sys.exit(main())
