from __future__ import annotations

import numpy as np
import pytest

from helpers import scenario
from iotbotsim.botnet import State
from iotbotsim.metrics import window_availability
from iotbotsim.simulation import Simulation

FLOOD = """
name: flood
horizon: 600s
metrics: {cadence: 10s}
topology:
  regions:
    - {name: bots, devices: 50, cpe: 50, dslam: 1, bras: 1}
    - {name: users, devices: 2, cpe: 2, dslam: 1, bras: 1}
  servers:
    - {name: site, kind: target, capacity: 100Mbps, legitimate: [{region: users, rate: 10Mbps}]}
population:
  profiles:
    - {name: cam, count: 50, regions: [bots], services: [23], uplink: 10Mbps, credentials: {default_share: 1.0, vendor_defaults: 1}}
malware:
  - {name: m, dictionary: {vendor_defaults: 1}, vectors: [udp], seed: {infected: 50}}
attacks:
  - {malware: m, target: site, vector: udp, rate: 4Mbps, start: 100s, duration: 300s}
"""


def samples_between(series, a, b):
    return [v for t, v in series.samples if a <= t < b]


# -- a small end-to-end flood ---------------------------------------------------------------------


def test_flood_window_and_conservation():
    sim = Simulation(scenario(FLOOD))
    res = sim.run()
    ingress = res.series["attack_ingress"]
    emitted = 50 * 4e6
    assert max(samples_between(ingress, 0, 100)) == 0.0
    assert max(ingress.values) <= emitted * (1 + 1e-9)
    # 200 Mbps offered to a 100 Mbps access link: the link is full during the attack
    assert max(samples_between(ingress, 110, 400)) == pytest.approx(100e6 * 200 / 210, rel=1e-6)
    assert max(samples_between(ingress, 410, 600)) == 0.0
    avail = res.series["availability"]
    assert window_availability(avail, 110, 390) == pytest.approx(100 / 210, rel=1e-6)
    assert window_availability(avail, 410, 600) == 1.0


def test_bots_return_to_dormant_after_attack():
    sim = Simulation(scenario(FLOOD))
    sim.step_until(200.0)
    assert (sim.pop.attack_cmd[sim.pop.state == State.INFECTED] >= 0).all()
    sim.step_until(500.0)
    assert (sim.pop.attack_cmd == -1).all()


def test_stepping_in_pieces_matches_one_run():
    whole = Simulation(scenario(FLOOD)).run()
    pieces = Simulation(scenario(FLOOD))
    for t in (37.0, 100.0, 250.5, 600.0):
        pieces.step_until(t)
    split = pieces.run()
    assert split.series["attack_ingress"].samples == whole.series["attack_ingress"].samples


# -- presets --------------------------------------------------------------------------------------


def test_dyn_outage_is_regional_and_recovers(preset_runs):
    run = preset_runs("dyn-watertorture")
    east = run.series["availability.region.us-east"]
    assert window_availability(east, 0, 590) == 1.0
    # wave 1 before any mitigation
    assert window_availability(east, 700, 7100) < 0.5
    for region in ("us-west", "eu"):
        assert window_availability(run.series[f"availability.region.{region}"], 700, 7100) > 0.99
    # after rebalancing and filtering, and through the quiet afternoon
    assert window_availability(east, 7900, 8400) > 0.99
    assert window_availability(east, 9000, 17300) > 0.99
    load = run.series["dns_load_multiplier.example"]
    assert max(samples_between(load, 700, 7100)) > 1.0
    assert max(samples_between(load, 9000, 17300)) == pytest.approx(1.0)
    assert run.series["torture_cache_hits"].values[-1] == 0.0


def test_cctv_scrubber_restores_service(preset_runs):
    run = preset_runs("cctv-http")
    avail = run.series["availability"]
    assert window_availability(avail, 0, 540) == 1.0
    assert window_availability(avail, 700, 4 * 3600 - 60) < 0.5
    assert window_availability(avail, 4 * 3600 + 60, 12 * 3600) > 0.99
    # 25,000 bots at 16 kbps emit 400 Mbps; the 100 Mbps access link carries less
    assert max(run.series["attack_ingress"].values) <= 25_000 * 16e3


def test_fail_safe_loop_stops_once_filtered(preset_runs):
    run = preset_runs("lappeenranta-loop")
    day = 86400.0
    for name in ("controller-a", "controller-b"):
        reboots = run.series[f"target_reboots.{name}"]
        assert np.all(np.diff(reboots.values) >= 0)
        before = samples_between(reboots, 0, 3600)
        assert max(before) == 0.0
        at_filter = max(samples_between(reboots, 0, 8.5 * day))
        assert at_filter > 1000
        # no further reboots once the flood is filtered
        assert reboots.values[-1] == at_filter
        avail = run.series[f"availability.{name}"]
        assert window_availability(avail, 8.5 * day + 600, 10 * day) > 0.99
    assert max(run.series["attack_ingress"].values) <= 400 * 1e6
