"""Small builders shared by the test modules."""

from __future__ import annotations

import textwrap

from iotbotsim import parse_scenario


def scenario(text: str):
    """Parse an indented YAML scenario literal."""
    return parse_scenario(textwrap.dedent(text))
