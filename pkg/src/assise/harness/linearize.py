"""Linearizability checking of file-system histories against the sequential model.

The main checker is a Wing-Gong style depth-first search with memoisation of
(linearized set, model state) pairs, as refined by Lowe. A much dumber
brute-force enumerator is kept alongside it and used by the self-tests as an
independent second opinion.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import SearchBoundExceeded
from ..posix import PosixModel
from .history import Event, History


def _norm(v: Any) -> Any:
    if isinstance(v, (bytes, bytearray, memoryview)):
        return bytes(v)
    if isinstance(v, list):
        return tuple(_norm(x) for x in v)
    if isinstance(v, tuple):
        return tuple(_norm(x) for x in v)
    return v


def same_result(a: tuple[str, Any] | None, b: tuple[str, Any] | None) -> bool:
    if a is None or b is None:
        return True
    return a[0] == b[0] and _norm(a[1]) == _norm(b[1])


def model_key(m: PosixModel) -> tuple:
    return frozenset(m.dirs), tuple(sorted((p, bytes(d)) for p, d in m.files.items()))


@dataclass
class Verdict:
    ok: bool
    order: list[int] = field(default_factory=list)
    witness: list[Event] = field(default_factory=list)
    explored: int = 0

    def explain(self) -> str:
        if self.ok:
            return f"linearizable ({self.explored} states)"
        lines = [f"not linearizable; minimal witness of {len(self.witness)} ops:"]
        lines += ["  " + e.describe() for e in self.witness]
        return "\n".join(lines)


def _setup_model(setup: list[tuple[str, tuple]] | None) -> PosixModel:
    m = PosixModel()
    for op, args in setup or ():
        m.apply(op, *args)
    return m


def _search(events: list[Event], model: PosixModel, bound: int) -> tuple[bool, list[int], int]:
    n = len(events)
    full = 0
    for i, e in enumerate(events):
        if not e.pending:
            full |= 1 << i
    seen: set[tuple[int, tuple]] = set()
    order: list[int] = []
    explored = 0

    def go(done: int, m: PosixModel) -> bool:
        nonlocal explored
        if done & full == full:
            return True
        key = (done, model_key(m))
        if key in seen:
            return False
        seen.add(key)
        explored += 1
        if explored > bound:
            raise SearchBoundExceeded(f"more than {bound} search states")
        horizon = min(events[i].response for i in range(n) if not done >> i & 1 and not events[i].pending)
        for i in range(n):
            if done >> i & 1:
                continue
            e = events[i]
            if e.invoke > horizon:
                continue
            m2 = m.copy()
            res = m2.apply(e.op, *e.args)
            if not same_result(res, e.result):
                continue
            order.append(e.index)
            if go(done | 1 << i, m2):
                return True
            order.pop()
        return False

    ok = go(0, model)
    return ok, list(order), explored


def check(history: History, setup: list[tuple[str, tuple]] | None = None, bound: int = 2_000_000,
          witness: bool = True) -> Verdict:
    """Is there a sequential order, consistent with real time, that the model accepts?

    ``setup`` is a list of operations applied to the model first (the
    scenario's preamble, which ran before any recorded event).
    """
    events = sorted(history.events, key=lambda e: e.invoke)
    ok, order, explored = _search(events, _setup_model(setup), bound)
    v = Verdict(ok, order if ok else [], [], explored)
    if not ok and witness:
        v.witness = minimal_witness(events, setup, bound)
    return v


def minimal_witness(events: list[Event], setup, bound: int) -> list[Event]:
    """Shrink a failing history until dropping any one event makes it linearizable."""
    keep = list(events)
    i = 0
    while i < len(keep):
        trial = keep[:i] + keep[i + 1 :]
        ok, _, _ = _search(trial, _setup_model(setup), bound)
        if not ok:
            keep = trial
        else:
            i += 1
    return keep


def brute_force(history: History, setup: list[tuple[str, tuple]] | None = None, limit: int = 500_000) -> bool:
    """Reference check: try every real-time-consistent order, no memo, no pruning tricks.

    Pending events may appear anywhere after their invocation or not at all.
    """
    events = sorted(history.events, key=lambda e: e.invoke)
    base = _setup_model(setup)
    budget = [limit]

    def go(remaining: list[Event], m: PosixModel) -> bool:
        budget[0] -= 1
        if budget[0] < 0:
            raise SearchBoundExceeded("brute force budget exhausted")
        if all(e.pending for e in remaining):
            return True
        for e in remaining:
            if any(f.response < e.invoke for f in remaining if f is not e):
                continue  # something still unplaced finished before e started
            m2 = m.copy()
            if not same_result(m2.apply(e.op, *e.args), e.result):
                continue
            if go([f for f in remaining if f is not e], m2):
                return True
        return False

    return go(events, base)


# -- mutations for self-testing ---------------------------------------------------------------

Mutator = Callable[[History, random.Random], History | None]


def _clone(h: History) -> History:
    return History([Event(e.index, e.pid, e.op, e.args, e.invoke, e.response, e.result, e.t_invoke, e.t_response)
                    for e in h.events], h.step)


def mutate_swap_results(h: History, rng: random.Random) -> History | None:
    """Swap the results of two completed operations that returned different things."""
    done = [e for e in h.events if not e.pending]
    pairs = [(a, b) for i, a in enumerate(done) for b in done[i + 1 :]
             if a.op == b.op and not same_result(a.result, b.result)]
    if not pairs:
        return None
    a, b = rng.choice(pairs)
    out = _clone(h)
    ea, eb = out.events[h.events.index(a)], out.events[h.events.index(b)]
    ea.result, eb.result = eb.result, ea.result
    return out


def mutate_phantom_read(h: History, rng: random.Random) -> History | None:
    """A read returns bytes nobody ever wrote."""
    reads = [e for e in h.events if e.op == "read" and e.result and e.result[0] == "ok"]
    if not reads:
        return None
    e = rng.choice(reads)
    out = _clone(h)
    length = max(1, len(e.result[1]))
    out.events[h.events.index(e)].result = ("ok", b"\xa5" * length)
    return out


def mutate_flip_status(h: History, rng: random.Random) -> History | None:
    """Turn a success into ENOENT or a failure into success."""
    done = [e for e in h.events if not e.pending and e.op in ("stat", "readdir", "create", "unlink", "read")]
    if not done:
        return None
    e = rng.choice(done)
    out = _clone(h)
    ev = out.events[h.events.index(e)]
    if e.result[0] == "ok":
        ev.result = ("err", "EEXIST" if e.op == "create" else "ENOENT")
    else:
        ev.result = ("ok", None if e.op in ("create", "unlink") else (("file", 0) if e.op == "stat" else b""))
    return out


def mutate_reorder(h: History, rng: random.Random) -> History | None:
    """Move an operation's response before an earlier, non-overlapping operation was invoked.

    The two events swap positions in real time without swapping results.
    """
    done = sorted((e for e in h.events if not e.pending), key=lambda e: e.invoke)
    pairs = [(a, b) for a in done for b in done if a.response < b.invoke]
    if not pairs:
        return None
    a, b = rng.choice(pairs)
    out = _clone(h)
    ea, eb = out.events[h.events.index(a)], out.events[h.events.index(b)]
    ea.invoke, eb.invoke = eb.invoke, ea.invoke
    ea.response, eb.response = eb.response, ea.response
    if not out.well_formed():
        return None
    return out


MUTATORS: dict[str, Mutator] = {
    "swap-results": mutate_swap_results,
    "phantom-read": mutate_phantom_read,
    "flip-status": mutate_flip_status,
    "reorder": mutate_reorder,
}


@dataclass
class SelfTest:
    mutants: int = 0
    known_bad: int = 0
    rejected_bad: int = 0
    agree: int = 0
    disagreements: list[str] = field(default_factory=list)

    @property
    def reject_rate(self) -> float:
        return self.rejected_bad / self.known_bad if self.known_bad else 1.0


def self_test(histories: list[tuple[History, list]], seed: int = 0, per_history: int = 4) -> SelfTest:
    """Mutate accepted histories; the fast checker must agree with brute force on every mutant.

    Mutants brute force rejects are the known-bad set; the fast checker has to
    reject all of them.
    """
    rng = random.Random(seed)
    st = SelfTest()
    for h, setup in histories:
        for _ in range(per_history):
            name = rng.choice(sorted(MUTATORS))
            mut = MUTATORS[name](h, rng)
            if mut is None:
                continue
            st.mutants += 1
            try:
                ref = brute_force(mut, setup)
            except SearchBoundExceeded:
                continue
            fast = check(mut, setup, witness=False).ok
            if fast == ref:
                st.agree += 1
            else:
                st.disagreements.append(f"{name}: fast={fast} brute={ref}")
            if not ref:
                st.known_bad += 1
                if not fast:
                    st.rejected_bad += 1
    return st
