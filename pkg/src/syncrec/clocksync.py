"""Clock offset estimation and timestamp correction.

Each producer's clock is related to the hub clock through round-trip
exchanges: the initiator stamps send (t0) and receive (t3), the responder
stamps its receive (t1) and send (t2). The classic two-way estimate

    offset = ((t1 - t0) + (t2 - t3)) / 2
    rtt    = (t3 - t0) - (t2 - t1)

recovers the responder-minus-initiator clock offset exactly when the two
one-way delays are equal, and with error bounded by rtt/2 otherwise.
"""

from __future__ import annotations

import bisect
import time
from dataclasses import dataclass, field, replace


class SyncError(Exception):
    pass


@dataclass(frozen=True)
class OffsetMeasurement:
    """One completed exchange. t0/t3 are on the producer clock, t1/t2 on
    the hub clock; offset is hub_time - producer_time."""

    t0: float
    t1: float
    t2: float
    t3: float
    offset: float
    rtt: float


# Sub-nanosecond causality violations are clock/float granularity, not a
# broken exchange; clamp instead of rejecting.
_CAUSALITY_EPS = 1e-9


def measure_offset(t0: float, t1: float, t2: float, t3: float) -> OffsetMeasurement:
    """Estimate offset and round-trip time from one exchange.

    Raises SyncError for a non-causal exchange (negative rtt or the
    responder replying before it received).
    """
    if t3 - t0 < -_CAUSALITY_EPS or t2 - t1 < -_CAUSALITY_EPS:
        raise SyncError("non-causal exchange")
    rtt = (t3 - t0) - (t2 - t1)
    if rtt < -_CAUSALITY_EPS:
        raise SyncError("non-causal exchange")
    rtt = max(0.0, rtt)
    offset = ((t1 - t0) + (t2 - t3)) / 2.0
    return OffsetMeasurement(t0=t0, t1=t1, t2=t2, t3=t3, offset=offset, rtt=rtt)


def measure_offset_hub_initiated(hub_send: float, prod_recv: float,
                                 prod_send: float, hub_recv: float
                                 ) -> OffsetMeasurement:
    """Same estimator for a hub-initiated exchange.

    The clocks swap roles (hub stamps the outer pair), so the raw estimate
    comes out producer-minus-hub; the returned measurement is negated back
    to the hub-minus-producer convention. rtt is direction-independent.
    """
    m = measure_offset(hub_send, prod_recv, prod_send, hub_recv)
    return replace(m, offset=-m.offset)


def select_offset(window: list[OffsetMeasurement]) -> float:
    """Offset of the minimum-rtt measurement in the window.

    Least-delay exchanges bound the asymmetry error tightest (|error| <=
    rtt/2). Ties go to the most recent measurement.
    """
    if not window:
        raise SyncError("empty measurement window")
    best = window[0]
    for m in window[1:]:
        if m.rtt <= best.rtt:  # <= keeps the latest on ties
            best = m
    return best.offset


@dataclass
class OffsetTable:
    """Time-ordered (measured_at, offset) entries for one source.

    measured_at is on the hub clock; entries must be strictly increasing.
    """

    source_id: str = ""
    entries: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        for (a, _), (b, _) in zip(self.entries, self.entries[1:]):
            if b <= a:
                raise SyncError("offset entries must be strictly increasing in time")

    def add(self, measured_at: float, offset: float) -> bool:
        """Append an entry; drops (returns False) anything not strictly
        after the last entry rather than corrupting the order."""
        if self.entries and measured_at <= self.entries[-1][0]:
            return False
        self.entries.append((measured_at, offset))
        return True

    def offset_at(self, t: float) -> float:
        """Offset at time ``t``: linear interpolation between bracketing
        entries, clamped to the first/last entry outside the range."""
        if not self.entries:
            raise SyncError("empty offset table")
        times = [e[0] for e in self.entries]
        i = bisect.bisect_right(times, t)
        if i == 0:
            return self.entries[0][1]
        if i == len(self.entries):
            return self.entries[-1][1]
        (ta, oa), (tb, ob) = self.entries[i - 1], self.entries[i]
        frac = (t - ta) / (tb - ta)
        return oa + frac * (ob - oa)

    @property
    def last(self) -> tuple[float, float] | None:
        return self.entries[-1] if self.entries else None


def correct_timestamp(raw_t: float, table: OffsetTable) -> float:
    """Map a producer-clock timestamp onto the hub timeline:
    raw_t + offset(raw_t)."""
    return raw_t + table.offset_at(raw_t)


# --- clocks ---------------------------------------------------------------

class WallClock:
    """Monotonic wall clock; the hub's reference timeline in live runs."""

    def now(self) -> float:
        return time.monotonic()


class SimClock:
    """Manually stepped clock shared by all parties of an accelerated run."""

    def __init__(self, start: float = 0.0):
        self._t = start

    def now(self) -> float:
        return self._t

    def advance(self, dt: float) -> float:
        if dt < 0:
            raise ValueError("cannot step a clock backwards")
        self._t += dt
        return self._t

    def set(self, t: float) -> None:
        if t < self._t:
            raise ValueError("cannot step a clock backwards")
        self._t = t
