"""Quantities with units as they appear in scenario files."""

from __future__ import annotations

import re

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QTY = re.compile(rf"^\s*({_NUM})\s*([A-Za-z/]*)\s*$")

RATE_UNITS = {"": 1.0, "bps": 1.0, "kbps": 1e3, "mbps": 1e6, "gbps": 1e9, "tbps": 1e12}
SIZE_UNITS = {"": 1.0, "bit": 1.0, "bits": 1.0, "B": 8.0, "KB": 8e3, "MB": 8e6, "GB": 8e9}
DURATION_UNITS = {"": 1.0, "s": 1.0, "ms": 1e-3, "m": 60.0, "min": 60.0, "h": 3600.0, "d": 86400.0}
QPS_UNITS = {"": 1.0, "qps": 1.0, "q/s": 1.0}
COUNT_UNITS = {"": 1.0}

UNIT_TABLES = {
    "rate": RATE_UNITS,
    "size": SIZE_UNITS,
    "duration": DURATION_UNITS,
    "qps": QPS_UNITS,
    "count": COUNT_UNITS,
}


class UnitError(ValueError):
    pass


def parse_quantity(value, kind: str) -> float:
    """Convert ``12``, ``"25.96Mbps"``, ``"14d"`` or ``"1e9"`` to base units.

    Base units are bits/s, bits, seconds and queries/s.
    """
    table = UNIT_TABLES[kind]
    if isinstance(value, bool):
        raise UnitError(f"expected a {kind}, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise UnitError(f"expected a {kind}, got {value!r}")
    m = _QTY.match(value)
    if not m:
        raise UnitError(f"cannot read {value!r} as a {kind}")
    unit = m.group(2)
    # byte units are case-sensitive so that "b" never silently means a bit
    key = unit if kind == "size" else unit.lower()
    if key not in table:
        raise UnitError(f"unknown {kind} unit {unit!r} in {value!r}; known: {sorted(k for k in table if k)}")
    return float(m.group(1)) * table[key]
