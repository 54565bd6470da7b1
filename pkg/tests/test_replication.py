import pytest

from assise.cluster import Cluster
from assise.config import ClusterConfig
from assise.replication import ReplicationCursor, mirror_rid, mode_semantics


def test_mode_semantics():
    # a process-only failure loses nothing that completed
    assert mode_semantics("optimistic", 9, [3, 6], [3], "process") == {9}
    # a node failure lands on a closed batch boundary at or after the last acknowledged sync
    assert mode_semantics("pessimistic", 9, [3, 6, 9], [6], "node") == {6, 9}
    assert mode_semantics("optimistic", 9, [2, 5], [], "node") == {0, 2, 5}
    with pytest.raises(ValueError):
        mode_semantics("eventual", 1, [], [], "node")


def test_cursor_tracks_the_slowest_replica():
    c = ReplicationCursor()
    c.wrote("n1", 5)
    c.ack("n1", 5)
    c.wrote("n2", 5)
    c.ack("n2", 3)
    assert c.chain_acked(["n1", "n2"]) == 3


def _sim(mode):
    sim = Cluster(ClusterConfig(nodes=["n0", "n1", "n2"], mode=mode), seed=0)
    p = sim.spawn("n0", pid="p")
    sim.call("p", "mkdir", "/d")
    sim.call("p", "create", "/d/f")
    sim.call("p", "write", "/d/f", 0, b"payload" * 100)
    return sim, p


@pytest.mark.parametrize("mode,sync", [("pessimistic", "fsync"), ("optimistic", "dsync")])
def test_sync_makes_the_log_durable_on_every_replica(mode, sync):
    sim, p = _sim(mode)
    h = p.logs["/"]
    before = sim.net.bytes_by_tag["SEGMENT_WRITE"]
    sim.call("p", sync)
    assert sim.net.bytes_by_tag["SEGMENT_WRITE"] > before
    assert h.log.replicated_seq == h.log.tail_seq
    for n in ("n1", "n2"):
        assert mirror_rid(n, h.log_id) in sim.media.regions
    sim.quiesce()
    assert sim.converged()


def test_pessimistic_writes_replicate_before_sync_returns_only():
    sim, p = _sim("pessimistic")
    h = p.logs["/"]
    # nothing has been synced yet: the log is ahead of what replicas hold
    assert h.log.replicated_seq < h.log.tail_seq
    sim.call("p", "fsync")
    assert h.log.replicated_seq == h.log.tail_seq


def test_chain_forwarding_is_ordered():
    sim, p = _sim("pessimistic")
    sim.call("p", "fsync")
    steps = [line.split("\t") for line in sim.net.trace if line.endswith("SEGMENT_WRITE")]
    hops = [(s[2].split("/")[0], s[3].split("/")[0]) for s in steps]
    assert ("n0", "n1") in hops and ("n1", "n2") in hops
    assert hops.index(("n0", "n1")) < hops.index(("n1", "n2"))
