# SPDX-License-Identifier: MIT
# Copyright (c) 2024 The growthsim Authors

from importlib.metadata import version

try:
    __version__ = version(__name__)
except Exception:  # pragma: no cover
    __version__ = "0.0.0"

del version
