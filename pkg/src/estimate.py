"""evspline CLI wrapper."""

import sys

from evspline.cli import main


if __name__ == "__main__":
    sys.exit(main())
