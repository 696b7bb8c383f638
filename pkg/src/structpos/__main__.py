"""Allow running structpos as a module: python -m structpos."""

from structpos.cli import main

if __name__ == "__main__":
    main()
