"""
Run ``python -m incentfl simulate --config experiment.cfg``.
"""

import sys

from .cli import main


if __name__ == "__main__":
    sys.exit(main())
