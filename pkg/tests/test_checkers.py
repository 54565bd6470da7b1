import math
import random

import pytest
from hypothesis import given, strategies as st

from assise.fscore import LibFS
from assise.harness import crashcheck, idempotence, linearize, schedules
from assise.harness.history import History


def _hist(script):
    """script: list of ("inv", pid, op, args) / ("ret", pid, result) in real-time order."""
    h = History()
    open_ = {}
    for step in script:
        if step[0] == "inv":
            _, pid, op, args = step
            open_[pid] = h.invoke(pid, op, args)
        else:
            _, pid, res = step
            h.respond(open_.pop(pid), res)
    return h


SETUP = [("create", ("/f",)), ("write", ("/f", 0, b"a"))]


def test_concurrent_write_may_or_may_not_be_seen():
    for seen in (b"a", b"b"):
        h = _hist([("inv", "w", "write", ("/f", 0, b"b")), ("inv", "r", "read", ("/f", 0, 1)),
                   ("ret", "r", ("ok", seen)), ("ret", "w", ("ok", 1))])
        assert h.well_formed()
        assert linearize.check(h, SETUP).ok


def test_stale_read_after_completed_write_is_rejected():
    h = _hist([("inv", "w", "write", ("/f", 0, b"b")), ("ret", "w", ("ok", 1)),
               ("inv", "r", "read", ("/f", 0, 1)), ("ret", "r", ("ok", b"a"))])
    v = linearize.check(h, SETUP)
    assert not v.ok and not linearize.brute_force(h, SETUP)
    assert "read" in v.explain()


def test_pending_operation_may_take_effect_or_not():
    for seen in (b"a", b"b"):
        h = _hist([("inv", "w", "write", ("/f", 0, b"b")), ("inv", "r", "read", ("/f", 0, 1)),
                   ("ret", "r", ("ok", seen))])
        assert linearize.check(h, SETUP).ok


def test_history_json_roundtrip_is_stable():
    h = _hist([("inv", "w", "write", ("/f", 0, b"\x00\xff")), ("ret", "w", ("ok", 2))])
    assert h.dumps() == _hist([("inv", "w", "write", ("/f", 0, b"\x00\xff")), ("ret", "w", ("ok", 2))]).dumps()
    assert '"hex": "00ff"' in h.dumps()


def test_malformed_history_detected():
    h = History()
    h.invoke("p", "read", ("/f", 0, 1))
    h.invoke("p", "read", ("/f", 0, 1))
    assert not h.well_formed()


ops = st.sampled_from([("write", ("/f", 0, b"b")), ("write", ("/f", 0, b"c")), ("read", ("/f", 0, 1)),
                       ("truncate", ("/f", 0)), ("unlink", ("/f",)), ("create", ("/f",)), ("stat", ("/f",))])
results = st.sampled_from([("ok", None), ("ok", 1), ("ok", b"a"), ("ok", b"b"), ("ok", b"c"), ("ok", b""),
                           ("err", "ENOENT"), ("err", "EEXIST"), ("ok", ("file", 1)), ("ok", ("file", 0))])


@st.composite
def histories(draw):
    """Random well-formed histories over three processes with random (often wrong) results."""
    h = History()
    open_ = {}
    for _ in range(draw(st.integers(1, 10))):
        pid = draw(st.sampled_from(["p", "q", "r"]))
        if pid in open_:
            h.respond(open_.pop(pid), draw(results))
        else:
            op, args = draw(ops)
            open_[pid] = h.invoke(pid, op, args)
    for pid in sorted(open_):
        if draw(st.booleans()):
            h.respond(open_.pop(pid), draw(results))
    return h


@given(histories())
def test_fast_checker_agrees_with_brute_force(h):
    """Dual route: the memoised search and plain enumeration give the same verdict."""
    assert h.well_formed()
    assert linearize.check(h, SETUP, witness=False).ok == linearize.brute_force(h, SETUP)


@given(st.dictionaries(st.sampled_from("abc"), st.integers(0, 3), min_size=1))
def test_schedule_enumeration_counts(counts):
    want = math.factorial(sum(counts.values()))
    for n in counts.values():
        want //= math.factorial(n)
    perms = list(schedules.multiset_permutations(counts))
    assert len(perms) == len(set(perms)) == want == schedules.count_permutations(counts)
    s = schedules.random_schedule(counts, random.Random(0))
    assert sorted(s) == sorted(perms[0])


def test_sampling_beyond_the_limit_is_seeded():
    progs = schedules.make_programs(3, 5, 1)
    a = list(schedules.schedules_for(progs, True, 20, random.Random(4)))
    b = list(schedules.schedules_for(progs, True, 20, random.Random(4)))
    assert a == b and len(set(a)) == 20


def test_sweep_accepts_the_real_protocol_and_self_test_rejects_mutants():
    rep = schedules.interleaving_sweep([schedules.SweepConfig(2, 3, True, limit=60)], keep_every=5)
    assert rep.ok and rep.histories == 120
    st_ = linearize.self_test(rep.samples, seed=1)
    assert st_.known_bad > 0 and st_.reject_rate == 1.0 and not st_.disagreements


def _revoke_without_eviction(self, src, p):
    key = (p["scope"], p["subtree"])
    if key not in self.leases:
        return True
    if self.pins.get(key):
        return False
    del self.leases[key]
    self._invalidate_all()
    return True


def _revoke_without_invalidation(self, src, p):
    key = (p["scope"], p["subtree"])
    kind = self.leases.get(key)
    if kind is None:
        return True
    if self.pins.get(key):
        return False
    if kind == "write":
        self.evict("lease-revoke")
    del self.leases[key]
    return True


@pytest.mark.parametrize("broken,cfg", [
    (_revoke_without_eviction, schedules.SweepConfig(2, 3, True, limit=60)),
    (_revoke_without_invalidation, schedules.SweepConfig(2, 3, True, limit=120, replicas=1,
                                                         programs=schedules.CACHED_READER)),
])
def test_sweep_catches_a_broken_revoke(monkeypatch, broken, cfg):
    """Sensitivity: the same sweep run against a deliberately broken protocol rejects histories."""
    monkeypatch.setattr(LibFS, "h_revoke", broken)
    rep = schedules.interleaving_sweep([cfg], modes=("pessimistic",))
    assert rep.rejected


SMALL = crashcheck.CrashCase("small", nodes=2, mode="optimistic", placement=(0, 1), ops=6, seed=3)


def test_prefix_check_on_a_small_case():
    rep = crashcheck.check_prefix([SMALL], rejoin_every=4)
    assert rep.ok and rep.cut_points == 3 * crashcheck.count_writes(SMALL)
    assert rep.rejoins > 0 and rep.converged_after_rejoin == rep.rejoins


def test_prefix_check_catches_lost_acknowledged_writes(monkeypatch):
    """Sensitivity: if a sync returns before the chain holds the batch, a crash exposes it."""
    from assise import fscore

    def lazy(sim, h, up_to=None, coalesced=None):
        return h.log.tail_seq  # claim success without shipping anything

    case = crashcheck.CrashCase("lazy", nodes=2, mode="pessimistic", placement=(0, 0), ops=8, seed=1)
    assert crashcheck.check_prefix([case]).ok
    monkeypatch.setattr(fscore, "replicate", lazy)
    assert crashcheck.check_prefix([case]).violations


def test_digest_idempotence_small():
    rep = idempotence.check_digest_idempotence(seed=5, ops=6, modes=("optimistic",))
    assert rep.ok and rep.cut_points > 0
