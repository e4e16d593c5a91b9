"""Mitigations: ingress filtering, device hygiene, scrubbing, anycast, C2 takedown."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .botnet import STRONG, VULN_BITS, Botnet, C2Addressing, Credential, Mode, PatchError, Persistence, Population, State
from .dns import anycast_rebalance
from .topology import NodeKind, Network

log = logging.getLogger(__name__)

DEFAULT_REBOOT_DELAY = 60.0


class DefenseKind(str, Enum):
    ENABLE_BCP38 = "enable-bcp38"
    REBOOT = "reboot"
    CHANGE_CREDENTIALS = "change-credentials"
    PATCH = "patch"
    ATTACH_SCRUBBER = "attach-scrubber"
    ANYCAST_REBALANCE = "anycast-rebalance"
    C2_TAKEDOWN = "c2-takedown"


# ---------------------------------------------------------------------------
# Ingress filtering
# ---------------------------------------------------------------------------


def bcp38_filter(origin_region: str, spoofed_src_region: str | None, enabled: bool) -> bool:
    """True when the flow passes; spoofed sources outside the origin region are dropped."""
    if not enabled or spoofed_src_region is None:
        return True
    return spoofed_src_region == origin_region


def bcp38_drop_mask(origin_regions: np.ndarray, spoofed_region: int, enabled_regions: np.ndarray) -> np.ndarray:
    """Vectorized drop decision for spoofed flows from many access regions."""
    origin_regions = np.asarray(origin_regions)
    return np.isin(origin_regions, enabled_regions) & (origin_regions != spoofed_region)


# ---------------------------------------------------------------------------
# Device hygiene
# ---------------------------------------------------------------------------


def reboot(pop: Population, idx: np.ndarray, bots: list[Botnet], t: float) -> tuple[np.ndarray, np.ndarray]:
    """Start rebooting devices; returns the devices and the epochs their completion must match.

    RAM-resident malware is gone as soon as the device powers down; a
    persistent resident is kept and comes back when the reboot finishes.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if not len(idx):
        return idx, np.zeros(0, np.int64)
    res = pop.resident[idx]
    persistent = np.array([bots[r].spec.persistence == Persistence.PERSISTENT for r in range(len(bots))], dtype=bool)
    keep = res >= 0
    if len(persistent):
        keep &= persistent[np.maximum(res, 0)]
    else:
        keep[:] = False
    pop.set_state(idx, State.REBOOTING, t)
    lost = idx[~keep]
    pop.resident[lost] = -1
    pop.closed[lost] = 0
    pop.claim[idx] = -1
    pop.touch()
    pop.mode[idx] = Mode.DORMANT
    pop.attack_cmd[idx] = -1
    pop.attack_rate[idx] = 0.0
    pop.epoch[idx] += 1
    return idx, pop.epoch[idx].copy()


def complete_reboot(pop: Population, idx: np.ndarray, epochs: np.ndarray, t: float) -> np.ndarray:
    """Bring devices back up; devices rebooted again in the meantime are left alone."""
    idx = np.asarray(idx, dtype=np.int64)
    live = (pop.epoch[idx] == epochs) & (pop.state[idx] == State.REBOOTING)
    idx = idx[live]
    back_infected = idx[pop.resident[idx] >= 0]
    pop.set_state(idx[pop.resident[idx] < 0], State.CLEAN, t)
    pop.set_state(back_infected, State.INFECTED, t)
    return idx


def change_credentials(pop: Population, idx: np.ndarray, credential: Credential | None = None) -> np.ndarray:
    """Replace credentials; ``None`` means a unique strong credential per device."""
    idx = np.asarray(idx, dtype=np.int64)
    cred = STRONG if credential is None else pop.credentials.add(credential)
    pop.cred[idx] = cred
    pop.touch()
    pop.epoch[idx] += 1
    return idx


def patch(pop: Population, idx: np.ndarray, vuln_id: str, strict: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Install a firmware fix for ``vuln_id``; returns (patched, refused).

    A patched device loses the vulnerability and no longer crashes on failed
    attempts to exploit it. Unpatchable devices refuse; with ``strict`` that
    raises instead.
    """
    if vuln_id not in VULN_BITS:
        raise KeyError(f"unknown vulnerability {vuln_id!r}")
    idx = np.asarray(idx, dtype=np.int64)
    ok = pop.patchable[idx]
    if strict and not ok.all():
        raise PatchError(f"device {int(idx[~ok][0])} cannot be patched")
    bit = np.uint8(1 << VULN_BITS[vuln_id])
    done = idx[ok]
    pop.vulns[done] &= ~bit
    pop.patched[done] |= bit
    pop.touch()
    pop.epoch[done] += 1
    pop._port_cache.clear()
    return done, idx[~ok]


# ---------------------------------------------------------------------------
# Scrubbing
# ---------------------------------------------------------------------------


@dataclass
class ScrubberPolicy:
    capacity: float
    efficacy: Mapping[str, float] = field(default_factory=dict)
    legitimate_passthrough: float = 1.0

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValueError("scrubber capacity must be positive")
        for k, v in {**self.efficacy, "legitimate": self.legitimate_passthrough}.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"scrubber fraction for {k!r} must lie in [0, 1], got {v}")

    def survival(self, attack: np.ndarray, vectors: list) -> np.ndarray:
        """Fraction of each flow left after scrubbing."""
        out = np.full(len(attack), self.legitimate_passthrough)
        eff = np.array([self.efficacy.get(v, 0.0) if v is not None else 0.0 for v in vectors])
        if len(eff):
            out[attack] = 1.0 - eff[attack]
        return out


def scrub(policy: ScrubberPolicy, rates: np.ndarray, attack: np.ndarray, vectors: list) -> np.ndarray:
    """Rates after scrubbing, ignoring the scrubber's own capacity."""
    return np.asarray(rates, dtype=float) * policy.survival(np.asarray(attack, bool), vectors)


@dataclass
class Scrubber:
    node: int
    target: int
    policy: ScrubberPolicy


def attach_scrubber(network: Network, target: int, policy: ScrubberPolicy) -> Scrubber:
    """Splice a scrubbing point between a target and its upstream router.

    The upstream link of the scrubber carries the scrubber capacity; the
    link from scrubber to target keeps the target's original access rate.
    """
    upstream = int(network.parent[target])
    if upstream < 0:
        raise ValueError(f"node {target} has no upstream router to splice into")
    down = network.find_link(upstream, target)
    up = network.find_link(target, upstream)
    access = float(network.link_capacity[down])
    latency = float(network.link_latency[down])
    node = network.add_node(NodeKind.SCRUBBER, network.region_of(target), f"scrubber-{target}", parent=upstream)
    network.disable_links([down, up])
    network.add_link(upstream, node, policy.capacity, latency / 2)
    network.add_link(node, target, access, latency / 2)
    network.set_parent(target, node)
    return Scrubber(node, target, policy)


# ---------------------------------------------------------------------------
# Command and control
# ---------------------------------------------------------------------------


def c2_takedown(bot: Botnet) -> bool:
    """Seize the C2 address. Families that look their C2 up by name just move."""
    if bot.spec.c2_addressing == C2Addressing.HARDCODED:
        bot.c2_alive = False
        return True
    return False


__all__ = [
    "DEFAULT_REBOOT_DELAY",
    "DefenseKind",
    "Scrubber",
    "ScrubberPolicy",
    "anycast_rebalance",
    "attach_scrubber",
    "bcp38_drop_mask",
    "bcp38_filter",
    "c2_takedown",
    "change_credentials",
    "complete_reboot",
    "patch",
    "reboot",
    "scrub",
]
