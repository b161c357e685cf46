"""Entry point for the watersic command line."""

import sys

from watersic.cli import main

if __name__ == "__main__":
    sys.exit(main())
