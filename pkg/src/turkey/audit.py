"""Auditor event model, ingestion validation, and task-fingerprint extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .domain import Aggregation, AuditorDescriptor, PluginRegistry
from .errors import AlreadyFinalized, EndBeforeEvents, NotFinalized

# Rejection reasons returned by validate_event.
REJECT_SESSION_FINALIZED = "session_finalized"
REJECT_UNKNOWN_KIND = "unknown_kind"
REJECT_MALFORMED_PAYLOAD = "malformed_payload"
REJECT_NEGATIVE_TIMESTAMP = "negative_timestamp"

MAX_CLICK_TARGET_LEN = 256

# FingerprintVector field names, in declaration order; the CSV and XML export
# column order is pinned to this.
FINGERPRINT_FIELDS = (
    "total_time_ms",
    "clicks_count",
    "keypress_count",
    "resize_count",
    "mouse_sample_count",
    "mouse_path_px",
    "mouse_net_displacement_px",
    "focus_loss_count",
    "unfocused_ms",
    "dwell_mean_ms",
    "dwell_median_ms",
    "dwell_max_ms",
)
FINGERPRINT_FLOAT_FIELDS = frozenset(
    {"mouse_path_px", "mouse_net_displacement_px", "dwell_mean_ms", "dwell_median_ms"}
)

FLAG_NO_MOUSE_ACTIVITY = "no_mouse_activity"
FLAG_INSTANT_COMPLETION = "instant_completion"
FLAG_ZERO_DWELL_VARIANCE = "zero_dwell_variance"


@dataclass(frozen=True)
class AuditEvent:
    kind: str
    t_ms: int
    payload: Mapping[str, Any]


@dataclass(frozen=True)
class FingerprintVector:
    total_time_ms: int
    clicks_count: int
    keypress_count: int
    resize_count: int
    mouse_sample_count: int
    mouse_path_px: float
    mouse_net_displacement_px: float
    focus_loss_count: int
    unfocused_ms: int
    dwell_mean_ms: float
    dwell_median_ms: float
    dwell_max_ms: int

    def as_row(self) -> tuple[Any, ...]:
        return tuple(getattr(self, name) for name in FINGERPRINT_FIELDS)


@dataclass(frozen=True)
class BotThresholds:
    min_total_time_ms: int = 2000
    min_events_for_dwell: int = 5


@dataclass(frozen=True)
class BotSignalReport:
    flags: frozenset[str]
    evaluated_thresholds: BotThresholds


@dataclass
class SessionEventLog:
    """Per-session event streams, one list per auditor kind.

    Events append in arrival order; finalization sorts each list stably by
    timestamp and freezes the log.
    """

    session_token: str
    allowed_kinds: frozenset[str]
    registry: PluginRegistry
    finalized: bool = False
    _events: dict[str, list[AuditEvent]] = field(default_factory=dict)

    def events_of(self, kind: str) -> tuple[AuditEvent, ...]:
        return tuple(self._events.get(kind, ()))

    def count(self, kind: str) -> int:
        return len(self._events.get(kind, ()))

    def kinds_present(self) -> tuple[str, ...]:
        return tuple(k for k, v in self._events.items() if v)

    def merged_timestamps(self) -> list[int]:
        """Timestamps of every event of every kind, sorted ascending."""
        out: list[int] = []
        for events in self._events.values():
            out.extend(e.t_ms for e in events)
        out.sort()
        return out

    def last_event_ms(self) -> int:
        latest = 0
        for events in self._events.values():
            for e in events:
                if e.t_ms > latest:
                    latest = e.t_ms
        return latest

    def copy(self) -> "SessionEventLog":
        clone = SessionEventLog(
            session_token=self.session_token,
            allowed_kinds=self.allowed_kinds,
            registry=self.registry,
            finalized=self.finalized,
        )
        clone._events = {k: list(v) for k, v in self._events.items()}
        return clone


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _payload_ok(event: AuditEvent, registry: PluginRegistry) -> bool:
    payload = event.payload
    if not isinstance(payload, Mapping):
        return False
    kind = event.kind
    if kind == "mouse_movement":
        return (
            set(payload) == {"x_px", "y_px"}
            and _is_int(payload["x_px"])
            and _is_int(payload["y_px"])
            and payload["x_px"] >= 0
            and payload["y_px"] >= 0
        )
    if kind == "clicks_total":
        return (
            set(payload) == {"x_px", "y_px", "target"}
            and _is_int(payload["x_px"])
            and _is_int(payload["y_px"])
            and payload["x_px"] >= 0
            and payload["y_px"] >= 0
            and isinstance(payload["target"], str)
            and len(payload["target"]) <= MAX_CLICK_TARGET_LEN
        )
    if kind == "focus_changes":
        return set(payload) == {"state"} and payload["state"] in ("focus", "blur")
    if kind == "keypresses_total":
        return len(payload) == 0
    if kind == "resizes_total":
        return (
            set(payload) == {"width_px", "height_px"}
            and _is_int(payload["width_px"])
            and _is_int(payload["height_px"])
            and payload["width_px"] > 0
            and payload["height_px"] > 0
        )
    # Custom auditors: payload must carry exactly the schema fields (t_ms is
    # sourced from the event itself, general_model at persist time).
    desc = registry.auditor(kind)
    if desc is None:
        return False
    expected = {name: scalar for name, scalar in desc.field_schema if name != "t_ms"}
    if desc.aggregation is Aggregation.COUNTER:
        return len(payload) == 0
    if set(payload) != set(expected):
        return False
    for name, scalar in expected.items():
        value = payload[name]
        if scalar == "integer" and not _is_int(value):
            return False
        if scalar == "float" and not (_is_int(value) or isinstance(value, float)):
            return False
        if scalar == "string" and not isinstance(value, str):
            return False
    return True


def validate_event(event: AuditEvent, log: SessionEventLog) -> str | None:
    """Append the event if valid; otherwise return the rejection reason."""
    if log.finalized:
        return REJECT_SESSION_FINALIZED
    if event.kind not in log.allowed_kinds or log.registry.auditor(event.kind) is None:
        return REJECT_UNKNOWN_KIND
    if not _is_int(event.t_ms):
        return REJECT_MALFORMED_PAYLOAD
    if event.t_ms < 0:
        return REJECT_NEGATIVE_TIMESTAMP
    if not _payload_ok(event, log.registry):
        return REJECT_MALFORMED_PAYLOAD
    log._events.setdefault(event.kind, []).append(event)
    return None


def finalize_log(log: SessionEventLog) -> SessionEventLog:
    """Stably sort each kind's events by timestamp and freeze the log."""
    if log.finalized:
        raise AlreadyFinalized()
    for events in log._events.values():
        events.sort(key=lambda e: e.t_ms)
    log.finalized = True
    return log


def _require_finalized(log: SessionEventLog) -> None:
    if not log.finalized:
        raise NotFinalized()


def clicks_count(log: SessionEventLog) -> int:
    _require_finalized(log)
    return log.count("clicks_total")


def mouse_path_length(log: SessionEventLog) -> float:
    """Total Euclidean path over consecutive mouse samples, in pixels."""
    _require_finalized(log)
    samples = log.events_of("mouse_movement")
    total = 0.0
    for prev, cur in zip(samples, samples[1:]):
        dx = cur.payload["x_px"] - prev.payload["x_px"]
        dy = cur.payload["y_px"] - prev.payload["y_px"]
        total += math.hypot(dx, dy)
    return total


def mouse_net_displacement(log: SessionEventLog) -> float:
    _require_finalized(log)
    samples = log.events_of("mouse_movement")
    if len(samples) < 2:
        return 0.0
    first, last = samples[0], samples[-1]
    return math.hypot(
        last.payload["x_px"] - first.payload["x_px"],
        last.payload["y_px"] - first.payload["y_px"],
    )


def unfocused_duration(log: SessionEventLog, session_end_ms: int) -> int:
    """Total ms spent blurred; a trailing blur is closed at session end.

    The session starts focused. Only blur-when-focused and focus-when-blurred
    advance the state machine; redundant same-state events are ignored.
    """
    _require_finalized(log)
    last = log.last_event_ms()
    if session_end_ms < last:
        raise EndBeforeEvents(session_end_ms, last)
    total = 0
    blurred_at: int | None = None
    for event in log.events_of("focus_changes"):
        state = event.payload["state"]
        if state == "blur" and blurred_at is None:
            blurred_at = event.t_ms
        elif state == "focus" and blurred_at is not None:
            total += event.t_ms - blurred_at
            blurred_at = None
    if blurred_at is not None:
        total += session_end_ms - blurred_at
    return total


def _dwell_gaps(timestamps: list[int]) -> list[int]:
    return [b - a for a, b in zip(timestamps, timestamps[1:])]


def extract_fingerprint(log: SessionEventLog, session_end_ms: int) -> FingerprintVector:
    """The 12 per-session behavioral features over the finalized streams."""
    _require_finalized(log)
    last = log.last_event_ms()
    if session_end_ms < last:
        raise EndBeforeEvents(session_end_ms, last)

    merged = log.merged_timestamps()
    gaps = _dwell_gaps(merged)
    if gaps:
        dwell_mean = sum(gaps) / len(gaps)
        ordered = sorted(gaps)
        # Even counts take the lower middle element.
        dwell_median = float(ordered[(len(ordered) - 1) // 2])
        dwell_max = max(gaps)
    else:
        dwell_mean = 0.0
        dwell_median = 0.0
        dwell_max = 0

    focus_events = log.events_of("focus_changes")
    return FingerprintVector(
        total_time_ms=session_end_ms,
        clicks_count=log.count("clicks_total"),
        keypress_count=log.count("keypresses_total"),
        resize_count=log.count("resizes_total"),
        mouse_sample_count=log.count("mouse_movement"),
        mouse_path_px=mouse_path_length(log),
        mouse_net_displacement_px=mouse_net_displacement(log),
        focus_loss_count=sum(1 for e in focus_events if e.payload["state"] == "blur"),
        unfocused_ms=unfocused_duration(log, session_end_ms),
        dwell_mean_ms=dwell_mean,
        dwell_median_ms=dwell_median,
        dwell_max_ms=dwell_max,
    )


def detect_bot_signals(
    fp: FingerprintVector, thresholds: BotThresholds | None = None
) -> BotSignalReport:
    """Heuristic automation flags; deterministic in (fingerprint, thresholds).

    The event count backing the dwell-variance rule is the sum of the
    vector's countable events (clicks, keypresses, resizes, mouse samples,
    blurs); refocus events are not individually counted in the vector.
    """
    t = thresholds if thresholds is not None else BotThresholds()
    flags: set[str] = set()
    if fp.mouse_sample_count == 0 and fp.mouse_path_px == 0.0:
        flags.add(FLAG_NO_MOUSE_ACTIVITY)
    if fp.total_time_ms < t.min_total_time_ms:
        flags.add(FLAG_INSTANT_COMPLETION)
    countable = (
        fp.clicks_count
        + fp.keypress_count
        + fp.resize_count
        + fp.mouse_sample_count
        + fp.focus_loss_count
    )
    # All gaps identical <=> mean equals max (mean of integers is exact here).
    if countable >= t.min_events_for_dwell and fp.dwell_mean_ms == float(fp.dwell_max_ms):
        flags.add(FLAG_ZERO_DWELL_VARIANCE)
    return BotSignalReport(flags=frozenset(flags), evaluated_thresholds=t)


def fingerprint_from_mapping(values: Mapping[str, Any]) -> FingerprintVector:
    kwargs: dict[str, Any] = {}
    for name in FINGERPRINT_FIELDS:
        value = values[name]
        kwargs[name] = float(value) if name in FINGERPRINT_FLOAT_FIELDS else int(value)
    return FingerprintVector(**kwargs)


def events_from_wire(raw_events: Iterable[Any]) -> list[AuditEvent | None]:
    """Decode wire-format event dicts; None marks an undecodable entry.

    Undecodable entries reject as malformed_payload at validation time.
    """
    out: list[AuditEvent | None] = []
    for raw in raw_events:
        if (
            isinstance(raw, Mapping)
            and set(raw) <= {"kind", "t_ms", "data"}
            and isinstance(raw.get("kind"), str)
            and isinstance(raw.get("data", {}), Mapping)
        ):
            out.append(
                AuditEvent(kind=raw["kind"], t_ms=raw.get("t_ms"), payload=dict(raw.get("data", {})))
            )
        else:
            out.append(None)
    return out


def auditor_rows_for_log(
    log: SessionEventLog, auditor_kinds: Iterable[str], registry: PluginRegistry
) -> list[tuple[AuditorDescriptor, list[tuple[Any, ...]]]]:
    """Export row values per configured auditor, in export (kind-sorted) order.

    Counter auditors produce one row holding the event count; event_list
    auditors produce one row per event with values per the field schema.
    """
    _require_finalized(log)
    out: list[tuple[AuditorDescriptor, list[tuple[Any, ...]]]] = []
    for kind in sorted(auditor_kinds):
        desc = registry.auditor(kind)
        if desc is None:
            continue
        rows: list[tuple[Any, ...]] = []
        if desc.aggregation is Aggregation.COUNTER:
            rows.append((log.count(kind),))
        else:
            for event in log.events_of(kind):
                rows.append(_event_list_row(desc, event))
        out.append((desc, rows))
    return out


def _event_list_row(desc: AuditorDescriptor, event: AuditEvent) -> tuple[Any, ...]:
    if desc.kind == "mouse_movement":
        return (event.t_ms, event.payload["x_px"], event.payload["y_px"])
    if desc.kind == "focus_changes":
        return (event.t_ms, event.payload["state"])
    values: list[Any] = []
    for name, scalar in desc.field_schema:
        if name == "t_ms":
            values.append(event.t_ms)
            continue
        value = event.payload[name]
        values.append(float(value) if scalar == "float" else value)
    return tuple(values)
