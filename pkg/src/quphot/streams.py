"""Time-tagged photon streams."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from ._validation import check_timestamps

EMITTER = 0
BACKGROUND = 1
AFTERPULSE = 2


@dataclass(frozen=True, eq=False)
class PhotonStream:
    """Detector clicks of one channel.

    Timestamps are strictly increasing uint64 picosecond counts, all below
    ``duration_ps``. ``origin`` optionally tags each event with
    :data:`EMITTER`, :data:`BACKGROUND` or :data:`AFTERPULSE` and is
    diagnostic only; no analysis routine reads it.
    """

    channel: int
    timestamps: np.ndarray
    duration_ps: int
    origin: np.ndarray | None = None
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ts = check_timestamps(self.timestamps)
        object.__setattr__(self, "timestamps", ts)
        if not 0 <= int(self.channel) < 2**16:
            raise ValueError(f"channel must fit in u16, got {self.channel}")
        object.__setattr__(self, "channel", int(self.channel))
        duration = int(self.duration_ps)
        if duration <= 0:
            raise ValueError(f"duration_ps must be > 0, got {self.duration_ps}")
        if ts.size and int(ts[-1]) >= duration:
            raise ValueError(
                f"timestamp {int(ts[-1])} ps is not below duration {duration} ps"
            )
        object.__setattr__(self, "duration_ps", duration)
        if self.origin is not None:
            origin = np.array(self.origin, dtype=np.uint8)
            if origin.shape != ts.shape:
                raise ValueError("origin tags must match timestamps one to one")
            origin.flags.writeable = False
            object.__setattr__(self, "origin", origin)
        object.__setattr__(
            self, "metadata", MappingProxyType({k: str(v) for k, v in self.metadata.items()})
        )

    def __len__(self):
        return int(self.timestamps.size)

    @property
    def rate_per_s(self):
        return len(self) / (self.duration_ps * 1e-12)

    def count(self, origin):
        """Number of events carrying the given origin tag."""
        if self.origin is None:
            raise ValueError("stream carries no origin tags")
        return int(np.count_nonzero(self.origin == origin))

    def __eq__(self, other):
        if not isinstance(other, PhotonStream):
            return NotImplemented
        return (
            self.channel == other.channel
            and self.duration_ps == other.duration_ps
            and np.array_equal(self.timestamps, other.timestamps)
        )

    __hash__ = None
