import sys

from .hinfplatoon import main


if __name__ == "__main__":
    sys.exit(main())
