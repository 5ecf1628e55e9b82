"""Constant simulator: every step reports the same z (default 7).

Usage: python3 -m durability.sims.echo [Z]
"""

import sys

from . import serve


def main(argv=None):
    args = sys.argv[1:] if argv is None else argv
    z = float(args[0]) if args else 7.0
    serve(lambda gen: {}, lambda state, gen: z)


if __name__ == "__main__":
    main()
