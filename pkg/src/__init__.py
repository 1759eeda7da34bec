import sys

from src.cli import run


def main():
    sys.exit(run())
