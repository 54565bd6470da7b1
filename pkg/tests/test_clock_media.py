import pytest
from hypothesis import given, strategies as st

from assise.clock import SimClock
from assise.errors import CapacityExceeded, NodeCrashed, OutOfRange, WrongTier
from assise.media import Media, Tier, replay_journal


def test_timers_fire_in_deadline_order():
    c = SimClock()
    seen = []
    c.schedule(30, lambda: seen.append("c"))
    c.schedule(10, lambda: seen.append("a"))
    tid = c.schedule(20, lambda: seen.append("x"))
    c.schedule(20, lambda: seen.append("b"))
    c.cancel(tid)
    assert c.run_until(25) == 2
    assert seen == ["a", "b"] and c.now == 25
    c.run_until(100)
    assert seen == ["a", "b", "c"]
    with pytest.raises(ValueError):
        c.advance(-1)


def test_parallel_branches_end_at_the_slowest():
    c = SimClock(100)

    def branch(dt):
        return lambda: c.advance(dt)

    assert c.parallel([branch(5), branch(50), branch(7)]) == [105, 150, 107]
    assert c.now == 150


def _media():
    clock = SimClock()
    m = Media(clock)
    r = m.create_region("n0", Tier.NVM, 1 << 16, "n0:nvm")
    return clock, m, r


def test_reads_see_pending_writes_but_crash_drops_them():
    clock, m, r = _media()
    m.write_persistent(r.id, 0, b"durable")
    m.fence(r.id)
    m.write_persistent(r.id, 100, b"in flight")
    assert m.read(r.id, 100, 9, charge=False) == b"in flight"
    m.crash("n0")
    m.recover("n0")
    assert m.read(r.id, 0, 7, charge=False) == b"durable"
    assert m.read(r.id, 100, 9, charge=False) == bytes(9)


def test_dram_is_volatile_and_tiers_are_enforced():
    clock, m, r = _media()
    d = m.create_region("n0", Tier.DRAM, 4096, "n0:dram")
    m.store(d.id, 0, b"cache")
    with pytest.raises(WrongTier):
        m.write_persistent(d.id, 0, b"x")
    with pytest.raises(WrongTier):
        m.store(r.id, 0, b"x")
    with pytest.raises(CapacityExceeded):
        m.write_persistent(r.id, (1 << 16) - 2, b"xyz")
    with pytest.raises(OutOfRange):
        m.read(r.id, 1 << 16, 1)
    m.crash("n0")
    with pytest.raises(NodeCrashed):
        m.read(r.id, 0, 1)
    m.recover("n0")
    assert m.read(d.id, 0, 5) == bytes(5)


def test_armed_crash_fires_after_nth_write():
    clock, m, r = _media()
    m.arm_crash("n0", 3, cut="all")
    m.write_persistent(r.id, 0, b"a")
    m.write_persistent(r.id, 1, b"b")
    with pytest.raises(NodeCrashed):
        m.write_persistent(r.id, 2, b"c")
    m.recover("n0")
    assert m.read(r.id, 0, 3, charge=False) == b"abc"


writes = st.lists(st.tuples(st.integers(0, 4000), st.binary(min_size=1, max_size=300)), min_size=1, max_size=25)


@given(before=writes, after=writes, k=st.integers(0, 30))
def test_crash_recovers_a_prefix_of_issued_writes(before, after, k):
    """Property: whatever survives a crash is the replay of a prefix of the write stream."""
    clock, m, r = _media()
    for off, data in before:
        m.write_persistent(r.id, off, data)
    m.fence(r.id)
    for off, data in after:
        m.write_persistent(r.id, off, data)
    m.crash("n0", cut=k)
    m.recover("n0")
    kept = min(k, len(after))
    want = replay_journal(before + after[:kept], 1 << 16)
    assert m.read(r.id, 0, 1 << 16, charge=False) == want


def test_ssd_writes_are_block_aligned():
    clock = SimClock()
    m = Media(clock)
    s = m.create_region("n0", Tier.SSD, 1 << 16, "ssd")
    m.write_persistent(s.id, 10, b"abc")
    m.fence(s.id)
    assert r_journal(m, s.id) == [(0, 4096)]
    assert m.read(s.id, 10, 3) == b"abc"


def r_journal(m, rid):
    return m.region(rid).journal


def test_region_save_and_load(tmp_path):
    clock, m, r = _media()
    m.write_persistent(r.id, 5, b"hello")
    m.write_persistent(r.id, 9000, b"world")
    m.fence(r.id)
    m.save_region(r.id, tmp_path / "r.bin")
    m2 = Media(SimClock())
    r2 = m2.load_region(tmp_path / "r.bin", "n9", "copy")
    assert r2.tier is Tier.NVM and r2.capacity == r.capacity
    assert m2.read("copy", 0, 1 << 16) == m.read(r.id, 0, 1 << 16)
    assert r2.journal == [(5, 5), (9000, 5)]


def test_persistence_takes_time():
    clock, m, r = _media()
    t = m.write_persistent(r.id, 0, b"x" * 4096)
    assert not m.is_persisted(t)
    m.wait(t)
    assert m.is_persisted(t) and clock.now >= t.persist_at > 0
