import sys

from .cli import runCommand


def main() -> None:
    sys.exit(runCommand())


if __name__ == "__main__":
    main()
