"""Operation histories recorded by the scenario driver."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

INF = float("inf")


@dataclass
class Event:
    """One operation: who ran it, when it started and ended, and what it returned.

    ``invoke`` and ``response`` are logical step numbers (a total order over
    the whole run); ``t_invoke``/``t_response`` are simulated nanoseconds.
    ``result`` is ``None`` while the operation is pending (its process died).
    """

    index: int
    pid: str
    op: str
    args: tuple
    invoke: int
    response: float = INF
    result: tuple[str, Any] | None = None
    t_invoke: int = 0
    t_response: int | None = None

    @property
    def pending(self) -> bool:
        return self.result is None

    def describe(self) -> str:
        args = ", ".join(_short(a) for a in self.args)
        res = "pending" if self.result is None else f"{self.result[0]} {_short(self.result[1])}"
        return f"[{self.invoke}..{self.response}] {self.pid}: {self.op}({args}) -> {res}"


def _short(v: Any) -> str:
    if isinstance(v, (bytes, bytearray)):
        b = bytes(v)
        return repr(b if len(b) <= 12 else b[:12] + b"...") + f"[{len(b)}]"
    return repr(v)


@dataclass
class History:
    events: list[Event] = field(default_factory=list)
    step: int = 0

    def tick(self) -> int:
        self.step += 1
        return self.step

    def invoke(self, pid: str, op: str, args: tuple, now: int = 0) -> Event:
        ev = Event(len(self.events), pid, op, tuple(args), self.tick(), t_invoke=now)
        self.events.append(ev)
        return ev

    def respond(self, ev: Event, result: tuple[str, Any], now: int = 0) -> None:
        if ev.result is not None:
            raise ValueError(f"event {ev.index} already has a response")
        ev.result = result
        ev.response = self.tick()
        ev.t_response = now

    def well_formed(self) -> bool:
        """Each process has at most one operation outstanding, and times are ordered."""
        busy: dict[str, Event] = {}
        marks = sorted([(e.invoke, 0, e) for e in self.events] +
                       [(e.response, 1, e) for e in self.events if not e.pending], key=lambda t: (t[0], t[1]))
        for _, kind, e in marks:
            if kind == 0:
                if e.pid in busy:
                    return False
                busy[e.pid] = e
            else:
                if busy.get(e.pid) is not e:
                    return False
                del busy[e.pid]
        return all(e.pending or e.invoke < e.response for e in self.events)

    def by_process(self) -> dict[str, list[Event]]:
        out: dict[str, list[Event]] = {}
        for e in self.events:
            out.setdefault(e.pid, []).append(e)
        return out

    def to_json(self) -> list[dict]:
        rows = []
        for e in self.events:
            rows.append({
                "pid": e.pid, "op": e.op, "args": [_jsonable(a) for a in e.args],
                "invoke": e.invoke, "response": None if e.pending else e.response,
                "result": None if e.result is None else [e.result[0], _jsonable(e.result[1])],
                "t_invoke": e.t_invoke, "t_response": e.t_response,
            })
        return rows

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def subset(self, keep: list[int]) -> "History":
        ks = set(keep)
        return History([e for e in self.events if e.index in ks], self.step)


def _jsonable(v: Any) -> Any:
    if isinstance(v, (bytes, bytearray)):
        return {"hex": bytes(v).hex()}
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v
