# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

"""Command line wrapper around the growthsim library."""

import argparse
import asyncio
import logging
import sys
from abc import ABC, abstractmethod
from os import path

import argcomplete
from argcomplete.completers import FilesCompleter

from growthsim import __name__ as MODULE_NAME
from growthsim import __version__ as MODULE_VERSION

PROG_NAME = (
    f"{path.basename(sys.executable)} -m {MODULE_NAME}"
    if sys.argv[0].endswith("__main__.py")
    else path.basename(sys.argv[0])
)

EXIT_INVALID_SPEC = 1


class Tool(ABC):
    """Common base class for tool implementations."""

    @abstractmethod
    def add_parser(self, subparsers: argparse._SubParsersAction):
        """
        Overriding methods must at least do the following::

            parser = subparsers.add_parser('tool', ...)
            parser.tool = self

        Then additional arguments can be added using the ``parser`` object.
        """
        pass

    @abstractmethod
    async def run(self, args: argparse.Namespace) -> int:
        """
        Overriding methods should provide an implementation to run the tool
        and return the exit status.
        """
        pass


class Experiment(Tool):
    """One experiment kind, configured by a ``key = value`` file."""

    def __init__(self, kind: str, help: str):
        self.kind = kind
        self.help = help

    def add_parser(self, subparsers: argparse._SubParsersAction):
        from growthsim.experiment import describe_keys

        parser = subparsers.add_parser(
            self.kind,
            help=self.help,
            epilog="configuration keys:\n" + describe_keys(),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        parser.tool = self

        parser.add_argument(
            "--config",
            metavar="<path>",
            required=True,
            help="the experiment file (`key = value` lines)",
        ).completer = FilesCompleter(allowednames=(".conf", ".txt"))
        parser.add_argument(
            "--seed",
            metavar="<n>",
            type=int,
            help="override the seed of the experiment file",
        )
        parser.add_argument(
            "--parallelism",
            metavar="<k>",
            type=int,
            default=1,
            help="replicas to run at once (default: %(default)s)",
        )
        parser.add_argument(
            "--out",
            metavar="<dir>",
            help="output directory (default: output.dir of the experiment file)",
        )

    async def run(self, args: argparse.Namespace) -> int:
        from growthsim.cli.run import EXIT_IO, run_experiment
        from growthsim.experiment import SpecError, parse_spec

        try:
            with open(args.config) as f:
                text = f.read()
        except OSError as e:
            print(f"{args.config}: {e.strerror or e}", file=sys.stderr)
            return EXIT_IO

        try:
            spec = parse_spec(text, self.kind)

            overrides = {}
            if args.seed is not None:
                overrides["seed"] = args.seed
            if args.out is not None:
                overrides["output.dir"] = args.out
            if overrides:
                spec = spec.with_values(overrides)
        except SpecError as e:
            for error in e.errors:
                print(f"{args.config}: {error}", file=sys.stderr)
            return EXIT_INVALID_SPEC

        return await run_experiment(spec, args.parallelism)


EXPERIMENTS = (
    Experiment("simulate", "run the growth process and report its extent"),
    Experiment("estimate-mu", "estimate the time constant μ (or μ_b in a stripe)"),
    Experiment("shape-check", "compare the infected set with the asymptotic ball"),
    Experiment("coexist", "estimate finite-horizon survival of both types"),
    Experiment("couple-check", "run the coupled constructions and their certificates"),
    Experiment("brw-speed", "estimate the speed of the dominating branching walk"),
    Experiment("effective-count", "count effective outbursts in a region"),
)


def main():
    """Runs ``growthsim`` command line interface."""

    # Provide main description and help.
    parser = argparse.ArgumentParser(
        prog=PROG_NAME,
        description="Monte Carlo experiments for continuum Richardson growth.",
        epilog="Run `%(prog)s <kind> --help` for kind-specific arguments.",
    )

    parser.add_argument(
        "-v", "--version", action="version", version=f"{MODULE_NAME} v{MODULE_VERSION}"
    )
    parser.add_argument(
        "-d", "--debug", action="store_true", help="enable debug logging"
    )

    subparsers = parser.add_subparsers(
        metavar="<kind>",
        dest="tool",
        help="the experiment to run",
    )

    for tool in EXPERIMENTS:
        tool.add_parser(subparsers)

    argcomplete.autocomplete(parser)
    args = parser.parse_args()

    logging.basicConfig(
        format="%(asctime)s: %(levelname)s: %(name)s: %(message)s",
        level=logging.DEBUG if args.debug else logging.WARNING,
    )

    if not args.tool:
        parser.error(f'Missing name of kind: {"|".join(subparsers.choices.keys())}')

    sys.exit(asyncio.run(subparsers.choices[args.tool].tool.run(args)))
