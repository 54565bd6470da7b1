import pytest

from assise.cluster import Cluster
from assise.config import ChainSpec, ClusterConfig, KiB, MiB
from assise.errors import NodeFailed
from assise.harness import recovery
from assise.kernfs import BLOCK


def _detect(sim, node):
    sim.advance(2 * sim.cfg.timeouts.heartbeat_interval + 1)
    assert sim.cm.status[node] != "ALIVE"


def test_hot_failover_keeps_synced_data_and_restarts_elsewhere():
    sim = Cluster(ClusterConfig(nodes=["n0", "n1", "n2"]), seed=0)
    sim.spawn("n0", pid="app")
    sim.call("app", "mkdir", "/d")
    sim.call("app", "create", "/d/f")
    sim.call("app", "write", "/d/f", 0, b"synced")
    sim.call("app", "fsync")
    sim.call("app", "write", "/d/f", 6, b"+more")
    e0 = sim.cm.epoch
    sim.crash_node("n0", "all")
    _detect(sim, "n0")
    assert sim.cm.epoch > e0 and sim.cm.fail_epoch["n0"] == e0
    assert sim.active_chain("/") == ["n1", "n2"]
    sim.spawn("n1", pid="app.2", restart_of="app")
    got = sim.call("app.2", "read", "/d/f", 0, 100)
    assert got in (b"synced", b"synced+more")
    sim.quiesce()
    assert sim.converged()


def test_spawning_on_a_dead_node_fails():
    sim = Cluster(ClusterConfig(nodes=["n0", "n1"]), seed=0)
    sim.crash_node("n1")
    with pytest.raises(NodeFailed):
        sim.spawn("n1")


def test_rejoin_refreshes_what_changed_while_down():
    sim = Cluster(ClusterConfig(nodes=["n0", "n1", "n2"]), seed=0)
    sim.spawn("n0", pid="w")
    sim.call("w", "mkdir", "/d")
    for i in range(4):
        sim.call("w", "create", f"/d/f{i}")
        sim.call("w", "write", f"/d/f{i}", 0, b"old")
    sim.call("w", "fsync")
    sim.quiesce()
    # an unrelated outage closes the epoch the setup writes belong to
    sim.crash_node("n1")
    _detect(sim, "n1")
    sim.restart_node("n1")
    sim.crash_node("n2")
    _detect(sim, "n2")
    sim.call("w", "write", "/d/f1", 0, b"new")
    sim.call("w", "fsync")
    sim.quiesce()
    rep = sim.restart_node("n2")
    touched = sim.kernfs["n0"].lookup_path("/d/f1")
    assert touched in rep.invalidated_inodes
    assert sim.kernfs["n0"].lookup_path("/d/f2") not in rep.invalidated_inodes
    sim.spawn("n2", pid="r")
    assert sim.call("r", "read", "/d/f1", 0, 3) == b"new"
    assert sim.active_chain("/") == ["n0", "n1", "n2"]
    assert sim.converged()


def test_kernfs_state_survives_reboot():
    sim = Cluster(ClusterConfig(nodes=["n0", "n1"]), seed=0)
    sim.spawn("n0", pid="w")
    sim.call("w", "mkdir", "/d")
    sim.call("w", "create", "/d/f")
    sim.call("w", "write", "/d/f", 0, b"x" * 10000)
    sim.call("w", "fsync")
    sim.quiesce()
    before = sim.kernfs["n1"].state_hash("/")
    sim.crash_node("n1", "all")
    sim.restart_node("n1")
    assert sim.kernfs["n1"].state_hash("/") == before


def test_cold_migration_keeps_contents():
    cfg = ClusterConfig(nodes=["n0", "n1"])
    cfg.sizes.hot_capacity = 256 * KiB
    sim = Cluster(cfg, seed=0)
    sim.spawn("n0", pid="w")
    sim.call("w", "mkdir", "/d")
    blob = bytes(range(256)) * 4 * 200  # 200 KiB per file
    for i in range(4):
        sim.call("w", "create", f"/d/f{i}")
        sim.call("w", "write", f"/d/f{i}", 0, blob)
        sim.call("w", "fsync")
    sim.quiesce()
    k = sim.kernfs["n1"]
    assert k.stats["migrated"] > 0
    assert any(t == "ssd" for blocks in k.blocks.values() for t, _ in blocks.values())
    sim.spawn("n1", pid="r")
    for i in range(4):
        assert sim.call("r", "read", f"/d/f{i}", 0, len(blob)) == blob
    assert sim.converged()


def test_reserve_takes_over_and_warms_up():
    ph = recovery.measure_reserve(2 * MiB, log_fill=64 * KiB)
    first, second = ph.provenance
    # the first pass pulls extents off SSD (the rest of each extent lands in DRAM)
    assert first.get("local-ssd", 0) > 0 and first.get("local-nvm", 0) < sum(first.values())
    assert set(second) == {"local-nvm"}


def test_process_restart_regrants_every_logged_lease():
    held, regranted = recovery.process_restart(files=5)
    assert held > 0 and held == regranted


def test_cold_rebuild_reloads_the_whole_area():
    sim = recovery._reserve_cluster(1 * MiB, 64 * KiB, 0)
    sim.crash_node("n0")
    recovery._detect(sim, "n0")
    k = sim.kernfs["r"]
    ssd = sum(1 for b in k.blocks.values() for t, _ in b.values() if t == "ssd")
    ns, nbytes = recovery.cold_rebuild(sim, "r")
    assert nbytes == 2 * BLOCK * ssd and ns > 0
    assert all(t == "nvm" for b in k.blocks.values() for t, _ in b.values())
