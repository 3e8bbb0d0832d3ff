# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

"""Main entry point for running growthsim as a module."""

from growthsim.cli import main

if __name__ == "__main__":
    main()
