from hypothesis import given, strategies as st

from assise.cluster import Cluster
from assise.coherence import (Lease, conflicts, covers, find_overlaps, find_overlaps_naive, overlaps, replay,
                              unit_of)
from assise.config import ClusterConfig
from assise.kernfs import RecordLog

scopes = st.sampled_from(["/", "/a", "/a/b", "/a/b/c", "/ab", "/x", "/x/y"])
leases = st.lists(st.builds(Lease, scopes, st.sampled_from(["read", "write"]), st.booleans(),
                            st.sampled_from(["p0", "p1", "p2"]), st.just("n0"), st.just("n0"), st.integers(0, 99)),
                  max_size=25)


@given(leases)
def test_indexed_audit_matches_all_pairs(ls):
    """Dual route: the scope-bucketed audit finds exactly the pairs a brute-force scan finds."""
    fast = {frozenset((id(a), id(b))) for a, b in find_overlaps(ls)}
    slow = {frozenset((id(a), id(b))) for a, b in find_overlaps_naive(ls)}
    assert fast == slow


def test_scope_rules():
    assert covers("/tmp", True, "/tmp/x") and not covers("/tmp", True, "/tmpx")
    assert not covers("/tmp", False, "/tmp/x")
    assert overlaps("/a", True, "/a/b", False) and not overlaps("/a", False, "/a/b", False)
    w = Lease("/a", "write", True, "p0", "n0", "n0", 1)
    r = Lease("/a/b", "read", False, "p1", "n1", "n0", 2)
    assert conflicts(w, r)
    assert not conflicts(w, Lease("/a/b", "write", False, "p0", "n0", "n0", 3))  # same holder
    assert not conflicts(r, Lease("/a/b", "read", False, "p2", "n1", "n0", 4))  # two readers
    assert unit_of("/a/b/c") == "/a" and unit_of("/") == "/" and unit_of("/a/b/c", 2) == "/a/b"


def test_replay_rebuilds_tables():
    l1 = Lease("/a/f", "write", False, "p0", "n0", "n0", 1)
    l2 = Lease("/a/g", "read", False, "p1", "n1", "n0", 2)
    recs = [{"t": "take", "unit": "/a", "leases": []},
            {"t": "grant", "unit": "/a", "lease": l1.to_dict()},
            {"t": "grant", "unit": "/a", "lease": l2.to_dict()},
            {"t": "release", "unit": "/a", "gen": 2},
            {"t": "regrant", "unit": "/a", "old": "p0", "new": "p0.2", "hnode": "n1"},
            {"t": "take", "unit": "/b", "leases": []},
            {"t": "drop", "unit": "/b"}]
    table, units, order = replay(recs)
    assert units == {"/a"}
    assert [(l.scope, l.holder, l.hnode) for l in table["/a"]] == [("/a/f", "p0.2", "n1")]
    assert [o[0] for o in order] == ["/a/f", "/a/g"]


def _two_nodes(**kw):
    sim = Cluster(ClusterConfig(nodes=["n0", "n1"], **kw), seed=0)
    sim.spawn("n0", pid="a")
    sim.spawn("n1", pid="b")
    sim.call("a", "mkdir", "/s")
    sim.call("a", "create", "/s/f")
    return sim


def test_handoff_revokes_and_moves_data():
    sim = _two_nodes()
    sim.call("a", "write", "/s/f", 0, b"from a")
    h0 = sim.lease_hops()
    assert sim.call("b", "read", "/s/f", 0, 6) == b"from a"
    assert sim.lease_hops() > h0
    assert sim.net.messages["REVOKE"] >= 1
    sim.call("b", "write", "/s/f", 0, b"from b")
    assert sim.call("a", "read", "/s/f", 0, 6) == b"from b"
    sim.quiesce()
    assert not sim.audit_violations and sim.audits > 0


def test_lease_log_survives_manager_restart():
    sim = _two_nodes()
    sim.call("b", "write", "/s/f", 0, b"x")
    k = sim.kernfs["n0"]
    recs, _, _ = RecordLog.read_all(k.media, k.leaselog_rid)
    table, units, _ = replay(recs)
    held = {(l.scope, l.holder) for u in units for l in table[u]}
    live = {(l.scope, l.holder) for l in k.lm.all_leases()}
    assert held == live and live


def test_expired_management_migrates():
    sim = _two_nodes()
    sim.cfg.timeouts.manager_expiry = 1000
    sim.call("a", "write", "/s/f", 0, b"x")
    sim.advance(10_000)
    sim.call("b", "write", "/s/f", 0, b"y")
    assert any(e[0] == "migrate" for e in sim.cm.events)
    assert sim.call("a", "read", "/s/f", 0, 1) == b"y"
    assert not sim.audit_violations
