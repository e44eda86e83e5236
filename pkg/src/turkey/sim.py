"""Headless synthetic-worker simulator speaking only the public wire protocol.

Profiles are fixed constants chosen to make the bot/diligent separation
unambiguous rather than realistic:

  diligent  mouse bursts (10-30 samples at 16-50 ms spacing) separated by
            200-2000 ms dwell gaps, several clicks and keypresses, total
            session time 30-120 s, never blurred.
  sloppy    sparse events and 1-3 long blur intervals covering at least 30%
            of a 20-90 s session.
  bot       zero mouse events, one uniform event train (30-80 ms gap),
            total time under 1 s.
"""

from __future__ import annotations

import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import httpx

PROFILES = ("diligent", "sloppy", "bot")
MAX_BATCH_EVENTS = 200


@dataclass(frozen=True)
class WorkerOutcome:
    index: int
    assignment_id: str
    response_pk: int
    events_sent: int
    per_kind: dict[str, int]


@dataclass
class SimReport:
    task_id: str
    profile: str
    outcomes: list[WorkerOutcome] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def total_events(self) -> int:
        return sum(o.events_sent for o in self.outcomes)


class ProtocolError(Exception):
    pass


def _mouse(t: int, x: int, y: int) -> dict[str, Any]:
    return {"kind": "mouse_movement", "t_ms": t, "data": {"x_px": x, "y_px": y}}


def _click(t: int, rng: random.Random) -> dict[str, Any]:
    return {
        "kind": "clicks_total",
        "t_ms": t,
        "data": {
            "x_px": rng.randrange(1400),
            "y_px": rng.randrange(900),
            "target": rng.choice(["input#opt-1", "textarea.answer", "button.submit", "div.step"]),
        },
    }


def _key(t: int) -> dict[str, Any]:
    return {"kind": "keypresses_total", "t_ms": t, "data": {}}


def _resize(t: int, rng: random.Random) -> dict[str, Any]:
    return {
        "kind": "resizes_total",
        "t_ms": t,
        "data": {"width_px": rng.randint(600, 1920), "height_px": rng.randint(400, 1080)},
    }


def _focus(t: int, state: str) -> dict[str, Any]:
    return {"kind": "focus_changes", "t_ms": t, "data": {"state": state}}


def generate_stream(profile: str, rng: random.Random, kinds: set[str]) -> tuple[list[dict], int]:
    """Event stream plus session end time; only configured kinds are emitted."""
    if profile == "diligent":
        return _diligent_stream(rng, kinds)
    if profile == "sloppy":
        return _sloppy_stream(rng, kinds)
    if profile == "bot":
        return _bot_stream(rng, kinds)
    raise ValueError(f"unknown profile {profile!r}")


def _diligent_stream(rng: random.Random, kinds: set[str]) -> tuple[list[dict], int]:
    total = rng.randint(30000, 120000)
    events: list[dict] = []
    if "mouse_movement" in kinds:
        t = rng.randint(300, 1200)
        x, y = rng.randrange(1400), rng.randrange(900)
        for _ in range(rng.randint(3, 8)):
            for _ in range(rng.randint(10, 30)):
                t += rng.randint(16, 50)
                x = min(1399, max(0, x + rng.randint(-40, 40)))
                y = min(899, max(0, y + rng.randint(-40, 40)))
                if t >= total - 500:
                    break
                events.append(_mouse(t, x, y))
            t += rng.randint(200, 2000)  # dwell gap between bursts
    if "clicks_total" in kinds:
        for _ in range(rng.randint(4, 10)):
            events.append(_click(rng.randint(500, total - 500), rng))
    if "keypresses_total" in kinds:
        t = rng.randint(2000, max(3000, total - 5000))
        for _ in range(rng.randint(8, 25)):
            t += rng.randint(80, 200)
            if t >= total - 200:
                break
            events.append(_key(t))
    if "resizes_total" in kinds and rng.random() < 0.3:
        events.append(_resize(rng.randint(500, total - 500), rng))
    return events, total


def _sloppy_stream(rng: random.Random, kinds: set[str]) -> tuple[list[dict], int]:
    total = rng.randint(20000, 90000)
    events: list[dict] = []
    if "mouse_movement" in kinds:
        t = rng.randint(500, 3000)
        for _ in range(rng.randint(5, 20)):
            t += rng.randint(300, 3000)
            if t >= total - 500:
                break
            events.append(_mouse(t, rng.randrange(1400), rng.randrange(900)))
    if "clicks_total" in kinds:
        for _ in range(rng.randint(1, 4)):
            events.append(_click(rng.randint(500, total - 500), rng))
    if "keypresses_total" in kinds:
        base = rng.randint(1000, total // 2)
        for i in range(rng.randint(2, 6)):
            events.append(_key(base + i * rng.randint(300, 900)))
    if "focus_changes" in kinds:
        # 1-3 blur intervals covering at least 30% of the session.
        target = int(total * rng.uniform(0.32, 0.55))
        pieces = rng.randint(1, 3)
        cursor = rng.randint(200, 2000)
        for piece in range(pieces):
            span = target // pieces
            if cursor + span >= total - 200:
                break
            events.append(_focus(cursor, "blur"))
            events.append(_focus(cursor + span, "focus"))
            cursor += span + rng.randint(500, 3000)
    return events, total


def _bot_stream(rng: random.Random, kinds: set[str]) -> tuple[list[dict], int]:
    gap = rng.randint(30, 80)
    count = rng.randint(6, 12)
    if "keypresses_total" in kinds:
        make: Callable[[int], dict] = _key
    elif "clicks_total" in kinds:
        make = lambda t: _click_fixed(t)
    else:
        make = lambda t: _focus(t, "blur" if t % 2 else "focus")
    events = [make(i * gap) for i in range(count)]
    end = (count - 1) * gap + gap
    return events, min(end, 999)


def _click_fixed(t: int) -> dict[str, Any]:
    return {"kind": "clicks_total", "t_ms": t, "data": {"x_px": 100, "y_px": 100, "target": "a"}}


def answers_for(bundle: dict[str, Any], profile: str, rng: random.Random) -> list[dict[str, Any]]:
    texts = {
        "diligent": 'Considered answer with detail: café & <markup> "quotes" included.',
        "sloppy": "idk",
        "bot": "ok",
    }
    answers = []
    for step in bundle["steps"]:
        kind = step["kind"]
        if kind == "multiple_choice":
            value: Any = rng.randrange(len(step["options"]))
        elif kind == "multiple_answer":
            n = len(step["options"])
            value = sorted(rng.sample(range(n), rng.randint(1, n)))
        elif kind == "text_response":
            value = texts[profile]
        else:
            if not step["required"]:
                continue
            raise ProtocolError(f"cannot synthesize answer for custom step {step['step_id']}")
        answers.append({"step_id": step["step_id"], "value": value})
    return answers


def run_worker(
    client: httpx.Client,
    task_id: str,
    profile: str,
    seed: int,
    index: int,
) -> WorkerOutcome:
    rng = random.Random(f"{seed}:{profile}:{index}")
    assignment_id = f"sim-{profile}-s{seed}-w{index:04d}"
    resp = client.get(
        f"/t/{task_id}",
        params={
            "assignmentId": assignment_id,
            "hitId": f"sim-hit-{profile}-{seed}",
            "workerId": f"sim-worker-{index:04d}",
            "turkSubmitTo": "https://workersandbox.mturk.com",
        },
        headers={"Accept": "application/json"},
    )
    if resp.status_code != 200:
        raise ProtocolError(f"handshake failed ({resp.status_code}): {resp.text}")
    bundle = resp.json()
    token = bundle["session_token"]
    kinds = {a["kind"] for a in bundle["auditors"]}

    events, end_ms = generate_stream(profile, rng, kinds)
    events.sort(key=lambda e: e["t_ms"])
    per_kind: dict[str, int] = {}
    for event in events:
        per_kind[event["kind"]] = per_kind.get(event["kind"], 0) + 1

    batch_seq = 0
    cursor = 0
    while cursor < len(events):
        size = rng.randint(50, MAX_BATCH_EVENTS)
        chunk = events[cursor : cursor + size]
        cursor += size
        batch_seq += 1
        ack_resp = client.post(
            f"/api/v1/sessions/{token}/events",
            json={"batch_seq": batch_seq, "events": chunk},
        )
        if ack_resp.status_code != 200:
            raise ProtocolError(f"batch {batch_seq} failed ({ack_resp.status_code})")
        ack = ack_resp.json()
        if ack["accepted"] != len(chunk) or ack["rejected"]:
            raise ProtocolError(
                f"ack mismatch in batch {batch_seq}: sent {len(chunk)}, got {ack}"
            )

    submit_resp = client.post(
        f"/api/v1/sessions/{token}/submit",
        json={"answers": answers_for(bundle, profile, rng), "events": [], "end_ms": end_ms},
    )
    if submit_resp.status_code != 200:
        raise ProtocolError(f"submit failed ({submit_resp.status_code}): {submit_resp.text}")
    body = submit_resp.json()
    redirect = body["redirect"]
    if redirect["fields"].get("assignmentId") != assignment_id:
        raise ProtocolError("redirect does not echo the assignment id")
    return WorkerOutcome(
        index=index,
        assignment_id=assignment_id,
        response_pk=body["response_pk"],
        events_sent=len(events),
        per_kind=per_kind,
    )


def run_simulation(
    url: str,
    task_id: str,
    workers: int,
    profile: str,
    seed: int,
    parallelism: int = 8,
    emit: Callable[[str], None] = print,
) -> SimReport:
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {PROFILES}")
    report = SimReport(task_id=task_id, profile=profile)
    report_lock = threading.Lock()

    def one(index: int) -> None:
        with httpx.Client(base_url=url, timeout=60.0) as client:
            try:
                outcome = run_worker(client, task_id, profile, seed, index)
            except (ProtocolError, httpx.HTTPError) as exc:
                with report_lock:
                    report.failures.append(f"worker {index:04d}: {exc}")
                return
        with report_lock:
            report.outcomes.append(outcome)
            emit(
                f"worker={index:04d} assignment={outcome.assignment_id}"
                f" response_pk={outcome.response_pk} events={outcome.events_sent}"
            )

    if workers > 0:
        with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
            list(pool.map(one, range(workers)))

    report.outcomes.sort(key=lambda o: o.index)
    emit(
        f"simulated workers={workers} profile={profile} responses={len(report.outcomes)}"
        f" events={report.total_events()} failures={len(report.failures)}"
    )
    for failure in report.failures:
        emit(f"FAILED {failure}")
    return report
