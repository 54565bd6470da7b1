import pytest
from hypothesis import given, strategies as st

from assise.cluster import Cluster
from assise.config import ClusterConfig
from assise.errors import FsError
from assise.fscore import lease_requests
from assise.posix import PosixModel

from .strategies import op

steps = st.lists(st.tuples(st.integers(0, 2), op), min_size=1, max_size=25)


def _cluster(mode="pessimistic", nodes=3):
    sim = Cluster(ClusterConfig(nodes=[f"n{i}" for i in range(nodes)], mode=mode), seed=0)
    for i in range(3):
        sim.spawn(f"n{i % nodes}", pid=f"p{i}")
    return sim


@given(steps, st.sampled_from(["pessimistic", "optimistic"]), st.sampled_from([1, 3]))
def test_processes_on_any_node_agree_with_the_sequential_model(prog, mode, nodes):
    """Operations issued one at a time by processes on different nodes behave like one file system."""
    sim = _cluster(mode, nodes)
    model = PosixModel()
    for who, (name, args) in [(0, ("mkdir", ("/d",))), (1, ("mkdir", ("/e",)))] + prog:
        assert sim.apply(f"p{who}", name, *args) == model.apply(name, *args), (who, name, args)
    sim.quiesce()
    assert sim.converged()
    assert not sim.audit_violations


def test_descriptor_interface():
    sim = _cluster()
    p = sim.procs["p0"]
    p.mkdir("/d")
    fd = p.create("/d/f")
    assert p.write(fd, b"hello ") == 6
    assert p.write(fd, b"world") == 5
    assert p.pread(fd, 0, 100) == b"hello world"
    p.pwrite(fd, 0, b"J")
    p.close(fd)
    with pytest.raises(FsError):
        p.read(fd, 1)
    q = sim.procs["p1"]
    fd = q.open("/d/f")
    assert q.read(fd, 5) == b"Jello"
    assert q.read(fd, 100) == b" world"
    assert q.stat("/d/f") == ("file", 11)
    q.fsync()


def test_permissions_follow_owner_and_mode():
    sim = Cluster(ClusterConfig(nodes=["n0", "n1"]), seed=0)
    sim.spawn("n0", pid="alice", uid=1, gid=1)
    sim.spawn("n1", pid="bob", uid=2, gid=2)
    sim.call("alice", "mkdir", "/home", 0o755)
    sim.call("alice", "create", "/home/notes", 0o644)
    sim.call("alice", "write", "/home/notes", 0, b"mine")
    assert sim.apply("bob", "read", "/home/notes", 0, 4) == ("ok", b"mine")
    assert sim.apply("bob", "write", "/home/notes", 0, b"ours") == ("err", "EACCES")
    assert sim.apply("bob", "create", "/home/x") == ("err", "EACCES")


def test_read_provenance_walks_down_the_hierarchy():
    from assise.config import ChainSpec
    cfg = ClusterConfig(nodes=["n0", "n1", "n2"], chains={"/": ChainSpec("/", ["n0", "n1"])})
    sim = Cluster(cfg, seed=0)
    for i in range(3):
        sim.spawn(f"n{i}", pid=f"p{i}")
    sim.call("p0", "mkdir", "/d")
    sim.call("p0", "create", "/d/f")
    sim.call("p0", "write", "/d/f", 0, b"x" * 8192)
    sim.call("p0", "read", "/d/f", 0, 8192)
    assert sim.procs["p0"].last_provenance == ["private-log", "private-log"]
    sim.call("p0", "fsync")
    sim.quiesce()
    # a replica reads its own NVM directly, every time
    for _ in range(2):
        sim.call("p1", "read", "/d/f", 0, 8192)
        assert sim.procs["p1"].last_provenance == ["local-nvm", "local-nvm"]
    # n2 holds no copy: the first read crosses the network, the repeat hits DRAM
    sim.call("p2", "read", "/d/f", 0, 8192)
    assert sim.procs["p2"].last_provenance == ["remote-nvm", "remote-nvm"]
    sim.call("p2", "read", "/d/f", 0, 8192)
    assert sim.procs["p2"].last_provenance == ["dram-cache", "dram-cache"]


def test_lease_requests_cover_every_touched_path():
    need = {(s, k) for s, k, _ in lease_requests("rename", ("/a/x", "/b/y"))}
    assert ("/a", "write") in need and ("/b", "write") in need
    need = {(s, k) for s, k, _ in lease_requests("read", ("/a/x", 0, 1))}
    assert ("/a/x", "read") in need
