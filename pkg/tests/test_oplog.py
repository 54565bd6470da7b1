import pytest
from hypothesis import given, strategies as st

from assise.clock import SimClock
from assise.cluster import Cluster
from assise.config import ClusterConfig
from assise.errors import ChecksumError, LogError, LogFull
from assise.media import Media, Tier
from assise.oplog import (DATA_START, HEADER_SIZE, LogEntry, OpKind, ScratchImage, UpdateLog, batches, coalesce,
                          complete_batches, next_capacity, resize)
from assise.posix import PosixModel

from .strategies import programs


def _log(capacity=1 << 16):
    m = Media(SimClock())
    m.create_region("n0", Tier.NVM, capacity, "log")
    return m, UpdateLog(m, "log", "p")


@given(st.sampled_from(list(OpKind)), st.integers(0, 2**40), st.integers(0, 2**40), st.binary(max_size=300),
       st.integers(1, 2**30))
def test_entry_roundtrip(op, ino, off, payload, seq):
    e = LogEntry(seq, op, ino, off, payload, txn=3, time=7)
    raw = e.encode()
    back = LogEntry.decode(raw[:HEADER_SIZE], raw[HEADER_SIZE:])
    assert (back.seq, back.op, back.inode, back.offset, back.payload, back.txn) == (seq, op, ino, off, payload, 3)


@given(st.binary(min_size=1, max_size=100), st.data())
def test_any_flipped_bit_is_detected(payload, data):
    raw = bytearray(LogEntry(1, OpKind.WRITE, 5, 0, payload).encode())
    i = data.draw(st.integers(0, len(raw) - 1))
    raw[i] ^= 1 << data.draw(st.integers(0, 7))
    with pytest.raises(ChecksumError):
        LogEntry.decode(bytes(raw[:HEADER_SIZE]), bytes(raw[HEADER_SIZE:]))


def test_reopen_after_crash_recovers_every_fenced_entry():
    m, log = _log()
    for i in range(10):
        log.append(OpKind.WRITE, 2, i * 10, bytes([i]) * 10)
    log.append_commit()
    m.crash("n0")
    m.recover("n0")
    back = UpdateLog.open(m, "log", "p")
    assert back.tail_seq == 11 and back.last_commit_seq == 11
    assert [e.payload for e in back.entries(0, 10)] == [bytes([i]) * 10 for i in range(10)]


def test_ring_wraps_and_reclaims():
    m, log = _log(DATA_START + 4 * 600)
    seen = 0
    for i in range(20):
        while not log.has_room(HEADER_SIZE + 500):
            oldest = log.live_seqs()[0]
            log.mark_replicated(log.tail_seq)
            log.reclaim(oldest)
        e = log.append(OpKind.WRITE, 1, 0, bytes([i]) * 500)
        seen += 1
        assert log.entry(e.seq).payload == bytes([i]) * 500
        log.check_watermarks()
    back = UpdateLog.open(m, "log", "p")
    assert back.live_seqs() == log.live_seqs()
    with pytest.raises(LogError):
        log.reclaim(log.tail_seq + 1)


def test_full_log_refuses_appends():
    m, log = _log(DATA_START + 1000)
    log.append(OpKind.WRITE, 1, 0, b"x" * 800)
    with pytest.raises(LogFull):
        log.append(OpKind.WRITE, 1, 0, b"x" * 800)


@given(st.lists(st.tuples(st.sampled_from([OpKind.WRITE, OpKind.TRUNCATE]), st.integers(1, 3),
                          st.integers(0, 300), st.integers(1, 200)), max_size=40),
       st.lists(st.tuples(st.integers(1, 3), st.integers(0, 600)), min_size=1, max_size=10))
def test_index_lookup_matches_region_scan(ops, probes):
    """Dual route: the in-memory index and a linear scan of NVM agree."""
    m, log = _log()
    for op, ino, off, n in ops:
        log.append(op, ino, off, b"z" * n if op is OpKind.WRITE else b"")
    for ino, off in probes:
        assert log.lookup(ino, off) == log.lookup_scan(ino, off)


def test_batches_and_complete_batches():
    m, log = _log()
    log.append(OpKind.WRITE, 1, 0, b"a")
    log.append(OpKind.WRITE, 1, 1, b"b")
    log.append_commit()
    log.append(OpKind.WRITE, 1, 2, b"c")  # open batch: not yet complete
    ents = log.entries(0, log.tail_seq)
    done = complete_batches(ents)
    assert [e.payload for e in done if e.op is OpKind.WRITE] == [b"a", b"b"]
    bs = batches(done)
    assert len(bs) == 1 and len(bs[0].entries) >= 2


def _entries_for(prog):
    sim = Cluster(ClusterConfig(nodes=["n0", "n1"], mode="optimistic"), seed=0)
    p = sim.spawn("n0", pid="p")
    model = PosixModel()
    for op, args in prog:
        assert sim.apply("p", op, *args) == model.apply(op, *args), (op, args)
    h = p.logs.get("/")
    ents = [] if h is None else h.log.entries(0, h.log.tail_seq)
    return ents, model


def _as_model_tree(tree):
    return {path: (kind, data) for path, (kind, _, _, _, _, data) in tree.items()}


@given(programs)
def test_log_replay_and_coalescing_preserve_meaning(prog):
    """Replaying the log equals the sequential model; coalescing changes nothing visible."""
    prog = [("mkdir", ("/d",)), ("mkdir", ("/e",))] + prog
    ents, model = _entries_for(prog)
    full = ScratchImage().apply_all(ents).tree()
    model_tree = {p: ("dir", b"") for p in model.dirs}
    model_tree.update({p: ("file", bytes(d)) for p, d in model.files.items()})
    assert _as_model_tree(full) == model_tree
    small = coalesce([e for e in ents if e.op is not OpKind.COMMIT])
    assert ScratchImage().apply_all(small).tree() == full
    assert sum(e.size for e in small) <= sum(e.size for e in ents)


def test_coalescing_drops_short_lived_files():
    prog = [("mkdir", ("/d",)), ("create", ("/d/t",)), ("write", ("/d/t", 0, b"x" * 3000)), ("unlink", ("/d/t",)),
            ("create", ("/d/k",)), ("write", ("/d/k", 0, b"a" * 100)), ("write", ("/d/k", 0, b"b" * 100))]
    ents, _ = _entries_for(prog)
    small = coalesce(ents)
    assert not any(e.op is OpKind.WRITE and e.payload == b"x" * 3000 for e in small)
    assert [e.payload for e in small if e.op is OpKind.WRITE] == [b"b" * 100]


class _Part:
    def __init__(self, vote):
        self.vote, self.state = vote, "idle"

    def prepare_resize(self, log_id, cap):
        self.state = "prepared"
        return self.vote

    def commit_resize(self, log_id, cap):
        self.state = f"committed {cap}"

    def abort_resize(self, log_id):
        self.state = "aborted"


def test_two_phase_resize():
    ps = [_Part(True), _Part(True)]
    assert resize(ps, "l", 64)
    assert [p.state for p in ps] == ["committed 64", "committed 64"]
    ps = [_Part(True), _Part(False), _Part(True)]
    assert not resize(ps, "l", 64)
    assert [p.state for p in ps] == ["aborted", "prepared", "idle"]


def test_capacity_growth_policy():
    assert next_capacity(16, 256, 64) == 32
    assert next_capacity(256, 256, 64) == 320
