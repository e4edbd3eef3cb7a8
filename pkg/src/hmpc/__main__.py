"""Entry point for python -m hmpc."""

import sys
from hmpc.cli import main

if __name__ == "__main__":
    sys.exit(main())
