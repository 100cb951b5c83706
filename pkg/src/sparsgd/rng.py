"""Counter-based random streams keyed by (seed, tag, step, ordinal).

Draws come from Philox4x64-10. Every stream position is addressed directly
by its key and counter, so workers that agree on the key agree on every
draw without communicating, and nothing depends on call history.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ALGORITHM = "philox4x64-10"

# tag 0 is reserved for streams shared by every worker
SHARED_TAG = 0

_MASK64 = (1 << 64) - 1


def worker_tag(worker_id: int) -> int:
    return worker_id + 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    tag: int = SHARED_TAG
    step: int = 0
    ordinal: int = 0

    algorithm = ALGORITHM

    def _bitgen(self) -> np.random.Philox:
        key = np.array([self.seed & _MASK64, self.tag & _MASK64], dtype=np.uint64)
        counter = np.array([0, self.ordinal & _MASK64, self.step & _MASK64, 0], dtype=np.uint64)
        return np.random.Philox(key=key, counter=counter)

    def raw(self, n: int) -> np.ndarray:
        """The first ``n`` 64-bit words at this stream position."""
        return self._bitgen().random_raw(n)

    def below(self, bounds: np.ndarray | int) -> np.ndarray | int:
        """One draw per bound, each uniform on ``[0, bound)``.

        Reduction is by modulo of a 64-bit word; for bounds below 2**32 the
        bias is under 2**-32.
        """
        if np.isscalar(bounds):
            return int(self.raw(1)[0] % np.uint64(bounds))
        bounds = np.asarray(bounds, dtype=np.uint64)
        return (self.raw(bounds.size) % bounds).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        # sort by random keys; ties in 64-bit keys are resolved by position
        return np.argsort(self.raw(n), kind="stable")

    def at_step(self, step: int) -> "RngStream":
        return replace(self, step=step, ordinal=0)

    def advance(self) -> "RngStream":
        """The stream for the next payload within the same step."""
        return replace(self, ordinal=self.ordinal + 1)


def stream_for(base_seed: int, worker_id: int, step: int, shared: bool) -> RngStream:
    tag = SHARED_TAG if shared else worker_tag(worker_id)
    return RngStream(seed=base_seed, tag=tag, step=step)
