"""Seeded, replayable Wiener-increment streams.

Divergence experiments evolve two trajectories under one noise realization,
so the stream must be exactly reproducible: a counter-based Philox generator
keyed by ``(seed, stream)`` gives bit-identical sequences on replay and
independent streams for ensemble members derived from ``(base_seed, index)``
with no coordination.
"""

from __future__ import annotations

import json
import math

import numpy as np

__all__ = ["NoisePath", "next_dw", "rewind", "dump_increments"]

_BLOCK = 4096


class NoisePath:
    """Lazily generated stream of increments dW ~ Normal(0, dt).

    Parameters
    ----------
    seed : int
        64-bit key; together with ``stream`` and ``dt`` it fully determines
        the sequence.
    dt : float
        Timestep; each increment has variance dt.
    stream : int
        Substream index, used to derive ensemble member i from (base_seed, i).
    record : bool
        Keep every consumed increment for audit output.
    """

    def __init__(self, seed: int, dt: float, stream: int = 0,
                 record: bool = False):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.seed = int(seed)
        self.stream = int(stream)
        self.dt = float(dt)
        self.record = bool(record)
        self.consumed: list[float] = []
        self._reset()

    @classmethod
    def for_member(cls, base_seed: int, index: int, dt: float,
                   record: bool = False) -> "NoisePath":
        return cls(seed=base_seed, dt=dt, stream=index, record=record)

    def _reset(self) -> None:
        key = np.array([self.seed % 2 ** 64, self.stream % 2 ** 64],
                       dtype=np.uint64)
        self._rng = np.random.Generator(np.random.Philox(key=key))
        self._buffer = np.empty(0)
        self._buf_pos = 0
        self.cursor = 0

    def _refill(self, n: int) -> None:
        block = max(_BLOCK, n)
        self._buffer = self._rng.standard_normal(block) * math.sqrt(self.dt)
        self._buf_pos = 0

    def next_dw(self) -> float:
        if self._buf_pos >= self._buffer.size:
            self._refill(1)
        dw = float(self._buffer[self._buf_pos])
        self._buf_pos += 1
        self.cursor += 1
        if self.record:
            self.consumed.append(dw)
        return dw

    def draw(self, n: int) -> np.ndarray:
        """Next n increments as an array (advances the cursor by n)."""
        out = np.empty(n)
        avail = self._buffer.size - self._buf_pos
        take = min(avail, n)
        out[:take] = self._buffer[self._buf_pos:self._buf_pos + take]
        self._buf_pos += take
        if take < n:
            self._refill(n - take)
            rest = n - take
            out[take:] = self._buffer[:rest]
            self._buf_pos = rest
        self.cursor += n
        if self.record:
            self.consumed.extend(out.tolist())
        return out

    def rewind(self) -> "NoisePath":
        """Reset the cursor to 0; subsequent draws replay the sequence."""
        self._reset()
        self.consumed = []
        return self

    def clone(self) -> "NoisePath":
        """Fresh path with the same key, positioned at the start.

        Two clones yield identical sequences: the mechanism by which a
        fiducial/perturbed trajectory pair shares one noise realization.
        """
        return NoisePath(self.seed, self.dt, self.stream, record=self.record)


def next_dw(path: NoisePath) -> float:
    return path.next_dw()


def rewind(path: NoisePath) -> NoisePath:
    return path.rewind()


def dump_increments(path: NoisePath, fileobj) -> int:
    """Write recorded increments as NDJSON lines {"i": ..., "dw": ...};
    returns the number of lines written."""
    if not path.record:
        raise ValueError("path was not created with record=True")
    for i, dw in enumerate(path.consumed):
        fileobj.write(json.dumps({"i": i, "dw": dw}) + "\n")
    return len(path.consumed)
