# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--full-size",
        action="store_true",
        help="run slow statistical tests at their full replica counts",
    )


@pytest.fixture
def size(request):
    """Picks the desk-scale or the full-size value of a slow test parameter."""
    full = request.config.getoption("--full-size")

    def pick(desk, full_size):
        return full_size if full else desk

    return pick
