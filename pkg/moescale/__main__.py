"""Main entry point for the moescale package."""

from .cli import cli

if __name__ == "__main__":
    cli()
