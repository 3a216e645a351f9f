"""Run the command-line interface with ``python -m saddle``."""

import sys

from .cli import main

sys.exit(main())
