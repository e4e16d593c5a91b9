from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotbotsim.attacks import AttackVector, spoof_and_reflect, start_flood
from iotbotsim.botnet import (
    STRONG,
    C2Addressing,
    Dictionary,
    MalwareSpec,
    PatchError,
    Persistence,
    Population,
    State,
    actionable,
    brute_force,
    build_botnets,
    c2_broadcast,
    complete_load,
    discover,
    finish_brute_force,
    seed_infections,
    susceptible,
    service_mask,
    vuln_mask,
)
from iotbotsim.defenses import (
    ScrubberPolicy,
    attach_scrubber,
    bcp38_drop_mask,
    bcp38_filter,
    c2_takedown,
    change_credentials,
    complete_reboot,
    patch,
    reboot,
    scrub,
)
from iotbotsim.dns import anycast_rebalance
from iotbotsim.topology import LEGITIMATE, Flow, FlowSet, Network, NodeKind, apply_flows

TELNET = service_mask([23])
TR064 = service_mask([7547])
TR064_BUG = "tr064-command-injection"


# -- BCP38 ------------------------------------------------------------------------------------


def test_bcp38_decisions():
    assert not bcp38_filter("isp-a", "victim-net", enabled=True)
    assert bcp38_filter("isp-a", None, enabled=True)  # true-source flood such as GRE
    assert bcp38_filter("isp-a", "victim-net", enabled=False)
    assert bcp38_filter("isp-a", "isp-a", enabled=True)


def test_bcp38_mask():
    origins = np.array([0, 1, 2, 0])
    assert bcp38_drop_mask(origins, 9, np.array([0])).tolist() == [True, False, False, True]
    assert not bcp38_drop_mask(origins, 9, np.array([], dtype=int)).any()


def test_bcp38_everywhere_zeroes_reflection_and_keeps_gre():
    # hub 0, bots 1..4, reflector 5, victim 6
    net = Network()
    net.add_nodes(NodeKind.CORE_ROUTER, 7, "core")
    net.add_links(np.zeros(6, np.int64), np.arange(1, 7), 1e15, 0.0)
    bots = np.arange(1, 5)
    vec = AttackVector("reflection-dns")
    drop = bcp38_drop_mask(np.zeros(4, int), 1, np.array([0]))
    _, reflected = spoof_and_reflect(net, bots, np.full(4, 1e6), [5], vec, 6, bcp38_drop=drop)
    assert reflected.offered.sum() == 0.0
    gre = start_flood(bots, np.full(4, 2e6), np.full(4, 1e8), 6, "gre-ip")
    before = apply_flows(net, gre).delivered.sum()
    assert before == pytest.approx(8e6, rel=1e-9)


# -- hygiene ----------------------------------------------------------------------------------


def infected_pop(persistence: Persistence = Persistence.VOLATILE, n: int = 3):
    pop = Population(n, trace=True)
    admin = pop.credentials.add(("admin", "admin"))
    pop.assign(np.arange(n), services=TELNET | TR064, vulns=vuln_mask([TR064_BUG]), cred=admin)
    (bot,) = build_botnets(
        [
            MalwareSpec(
                "m",
                dictionary=Dictionary(pairs=frozenset({("admin", "admin")})),
                persistence=persistence,
                exploit_ids=frozenset({TR064_BUG}),
                vectors=frozenset({"syn"}),
            )
        ]
    )
    pop.set_malware_count(1)
    seed_infections(pop, np.arange(n), bot)
    return pop, bot


def test_volatile_reboot_cleans():
    pop, bot = infected_pop()
    idx, epochs = reboot(pop, np.arange(3), [bot], 0.0)
    assert (pop.state == State.REBOOTING).all() and pop.offline() == 3
    complete_reboot(pop, idx, epochs, 60.0)
    assert (pop.state == State.CLEAN).all() and (pop.resident == -1).all()
    # credentials and vulnerabilities are untouched, so reinfection stays possible
    assert len(actionable(pop, np.arange(3), bot)) == 3


def test_persistent_malware_survives_reboot():
    pop, bot = infected_pop(Persistence.PERSISTENT)
    idx, epochs = reboot(pop, np.arange(3), [bot], 0.0)
    complete_reboot(pop, idx, epochs, 60.0)
    assert (pop.state == State.INFECTED).all() and (pop.resident == 0).all()


def test_reboot_of_clean_device_is_idempotent():
    pop = Population(1)
    idx, epochs = reboot(pop, np.array([0]), [], 0.0)
    complete_reboot(pop, idx, epochs, 60.0)
    assert pop.state[0] == State.CLEAN


def test_second_reboot_supersedes_first():
    pop, bot = infected_pop(n=1)
    idx, first = reboot(pop, np.array([0]), [bot], 0.0)
    _, second = reboot(pop, np.array([0]), [bot], 30.0)
    assert len(complete_reboot(pop, idx, first, 60.0)) == 0
    assert pop.state[0] == State.REBOOTING
    assert complete_reboot(pop, idx, second, 90.0).tolist() == [0]


def test_credential_changes():
    pop, bot = infected_pop(n=2)
    d = bot.spec.dictionary
    change_credentials(pop, np.array([0]))
    change_credentials(pop, np.array([1]), ("admin", "admin"))
    assert pop.cred[0] == STRONG
    assert brute_force(pop, np.arange(2), d).tolist() == [False, True]


def test_patch_closes_exploit_path():
    pop, bot = infected_pop(n=2)
    reboot(pop, np.arange(2), [bot], 0.0)
    pop.patchable[1] = False
    done, refused = patch(pop, np.arange(2), TR064_BUG)
    assert done.tolist() == [0] and refused.tolist() == [1]
    assert pop.vulns[0] == 0 and pop.vulns[1] != 0
    with pytest.raises(PatchError):
        patch(pop, np.array([1]), TR064_BUG, strict=True)
    with pytest.raises(KeyError):
        patch(pop, np.array([0]), "no-such-bug")


@settings(max_examples=30, deadline=None)
@given(
    services=st.lists(st.sampled_from([23, 2323, 7547, 80, 22]), min_size=1, max_size=5, unique=True),
    vulns=st.lists(st.sampled_from([TR064_BUG, "php-cgi-injection", "dlink-hnap-bypass"]), max_size=3, unique=True),
    crash=st.floats(0, 1),
)
def test_full_hygiene_makes_device_uninfectable(services, vulns, crash):
    pop = Population(1)
    admin = pop.credentials.add(("admin", "admin"))
    pop.assign(np.array([0]), services=service_mask(services), vulns=vuln_mask(vulns), cred=admin)
    bots = build_botnets(
        [
            MalwareSpec(
                "m",
                dictionary=Dictionary(pairs=frozenset({("admin", "admin")})),
                exploit_ids=frozenset({TR064_BUG, "php-cgi-injection", "dlink-hnap-bypass"}),
                crash_probability=crash,
            )
        ]
    )
    reboot(pop, np.array([0]), bots, 0.0)
    complete_reboot(pop, np.array([0]), pop.epoch[[0]].copy(), 60.0)
    change_credentials(pop, np.array([0]))
    for v in (TR064_BUG, "php-cgi-injection", "dlink-hnap-bypass"):
        patch(pop, np.array([0]), v)
    bot = bots[0]
    rng = np.random.default_rng(0)
    for k in range(5):
        t = 100.0 * (k + 1)
        d = discover(pop, np.array([0]), bot, rng, t)
        won = finish_brute_force(pop, d.brute, pop.epoch[d.brute].copy(), bot, t + 5)
        ready = np.union1d(won, d.compromised)
        bot.reporting.report_many(pop, ready, bot.index, t + 5)
        complete_load(pop, ready, bot, t + 6)
        assert pop.state[0] in (State.CLEAN, State.SCANNED)
    assert len(susceptible(pop, bot.spec)) == 0


# -- scrubbing ------------------------------------------------------------------------------------


def test_scrub_examples():
    full = ScrubberPolicy(100e9, {"udp": 1.0})
    out = scrub(full, np.array([10e9, 1e9]), np.array([True, False]), ["udp", None])
    assert out.tolist() == [0.0, 1e9]
    none = ScrubberPolicy(100e9, {"udp": 0.0})
    assert scrub(none, np.array([10e9, 1e9]), np.array([True, False]), ["udp", None]).tolist() == [10e9, 1e9]
    partial = ScrubberPolicy(1e12, {"syn": 0.9})
    assert scrub(partial, np.array([623e9]), np.array([True]), ["syn"])[0] == pytest.approx(62.3e9, rel=0.01)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["syn", "udp", "http"]), st.floats(0, 1e10)), min_size=1, max_size=30))
def test_scrubbing_is_linear_per_vector(flows):
    eff = {"syn": 0.3, "udp": 0.95, "http": 0.0}
    policy = ScrubberPolicy(1e15, eff)
    rates = np.array([r for _, r in flows])
    out = scrub(policy, rates, np.ones(len(flows), bool), [v for v, _ in flows])
    expected = sum((1 - eff[v]) * sum(r for w, r in flows if w == v) for v in eff)
    assert out.sum() == pytest.approx(expected, rel=1e-9, abs=1e-6)


def test_invalid_scrubber_rejected():
    with pytest.raises(ValueError):
        ScrubberPolicy(0.0)
    with pytest.raises(ValueError):
        ScrubberPolicy(1e9, {"udp": 1.5})


def test_attached_scrubber_filters_and_caps():
    net = Network()
    core = net.add_node(NodeKind.CORE_ROUTER, "core")
    bot = net.add_node(NodeKind.IOT_DEVICE, "isp", parent=core)
    user = net.add_node(NodeKind.IOT_DEVICE, "isp", parent=core)
    target = net.add_node(NodeKind.TARGET, "core", parent=core)
    net.add_link(bot, core, 1e12)
    net.add_link(user, core, 1e12)
    net.add_link(target, core, 1e12)
    s = attach_scrubber(net, target, ScrubberPolicy(5e9, {"udp": 1.0}))
    assert net.kind_of(s.node) is NodeKind.SCRUBBER
    flows = FlowSet.from_flows([Flow(bot, target, 10e9, vector="udp"), Flow(user, target, 1e9, cls=LEGITIMATE)])
    surv = s.policy.survival(flows.attack, flows.vector)
    res = apply_flows(net, flows, {s.node: lambda rows: surv[rows]})
    # the scrubber's upstream link shares 5 Gbps before the filter drops the flood
    assert res.delivered[0] == 0.0
    assert res.delivered[1] == pytest.approx(5e9 * 1 / 11)


# -- anycast and C2 -----------------------------------------------------------------------------------


def test_anycast_examples():
    assert anycast_rebalance([10.0], 7.0).tolist() == [7.0]
    assert anycast_rebalance([5.0, 5.0], 8.0).tolist() == [4.0, 4.0]
    # one region flooded at 2.5x its capacity fits once spread over three equal pops
    loads = anycast_rebalance([100.0, 100.0, 100.0], 250.0)
    assert (loads < 100.0).all()


def test_takedown_depends_on_addressing():
    hard, named = build_botnets(
        [
            MalwareSpec("bashlite", c2_addressing=C2Addressing.HARDCODED, vectors=frozenset({"udp"})),
            MalwareSpec("mirai", c2_addressing=C2Addressing.DOMAIN, vectors=frozenset({"udp"})),
        ]
    )
    pop = Population(4)
    pop.set_malware_count(2)
    seed_infections(pop, np.array([0, 1]), hard)
    seed_infections(pop, np.array([2, 3]), named)
    assert c2_takedown(hard) and not c2_takedown(named)
    assert len(c2_broadcast(pop, hard, 0, "udp")) == 0
    assert len(c2_broadcast(pop, named, 1, "udp")) == 2
