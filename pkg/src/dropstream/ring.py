"""Pre-allocated packet slot ring shared by the intake thread and workers.

All slot memory is allocated up front. Each slot is owned by exactly one
party at a time: the free pool, the intake thread, or a worker. Ownership
moves in batches (index arrays) so that bookkeeping cost is per burst.
"""

from __future__ import annotations

import collections
import threading

import numpy as np

from .protocol import MAX_SLOT_SIZE

FREE, INTAKE, WORKER = 0, 1, 2
OWNER_NAMES = {FREE: "free", INTAKE: "intake", WORKER: "worker"}


class OwnershipError(RuntimeError):
    pass


class SlotRing:
    def __init__(self, slot_count: int = 4096, slot_size: int = MAX_SLOT_SIZE):
        if slot_count < 1 or slot_count & (slot_count - 1):
            raise ValueError(f"slot_count must be a power of two, got {slot_count}")
        if not 0 < slot_size <= MAX_SLOT_SIZE:
            raise ValueError(f"slot_size must be in 1..{MAX_SLOT_SIZE}, got {slot_size}")
        self.slot_count = slot_count
        self.slot_size = slot_size
        self.slots = np.zeros((slot_count, slot_size), dtype=np.uint8)
        self.lengths = np.zeros(slot_count, dtype=np.int64)
        self.rx_ns = np.zeros(slot_count, dtype=np.int64)
        self.queue_index = np.zeros(slot_count, dtype=np.int16)
        self.owner = np.zeros(slot_count, dtype=np.int8)
        # free pool: deque of index arrays, refilled by whole returned batches
        self._free: collections.deque = collections.deque([np.arange(slot_count, dtype=np.int64)])
        self._free_count = slot_count
        self._cond = threading.Condition()
        self.exhausted_events = 0

    @property
    def free_count(self) -> int:
        return self._free_count

    def acquire(self, n: int) -> np.ndarray:
        """Take up to ``n`` free slots for the intake thread (may return fewer)."""
        with self._cond:
            got = []
            need = n
            while need and self._free:
                batch = self._free.popleft()
                if len(batch) > need:
                    self._free.appendleft(batch[need:])
                    batch = batch[:need]
                got.append(batch)
                need -= len(batch)
            idx = np.concatenate(got) if got else np.zeros(0, np.int64)
            self._free_count -= len(idx)
        if len(idx) and np.any(self.owner[idx] != FREE):
            raise OwnershipError("free pool handed out a slot that is not free")
        self.owner[idx] = INTAKE
        return idx

    def wait_free(self, n: int, timeout: float) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: self._free_count >= n, timeout)

    def hand_to_worker(self, idx: np.ndarray) -> None:
        self._transfer(idx, INTAKE, WORKER)

    def release(self, idx: np.ndarray, expected_owner: int | None = None) -> None:
        """Return slots to the free pool."""
        if len(idx) == 0:
            return
        if expected_owner is not None and np.any(self.owner[idx] != expected_owner):
            raise OwnershipError(f"release of slots not owned by {OWNER_NAMES[expected_owner]}")
        if np.any(self.owner[idx] == FREE):
            raise OwnershipError("double release of a free slot")
        self.owner[idx] = FREE
        self.lengths[idx] = 0
        with self._cond:
            self._free.append(np.array(idx, dtype=np.int64))
            self._free_count += len(idx)
            self._cond.notify_all()

    def _transfer(self, idx, frm, to):
        if np.any(self.owner[idx] != frm):
            raise OwnershipError(f"slots not owned by {OWNER_NAMES[frm]}")
        self.owner[idx] = to

    def census(self) -> dict[str, int]:
        counts = np.bincount(self.owner, minlength=3)
        return {OWNER_NAMES[k]: int(counts[k]) for k in (FREE, INTAKE, WORKER)}

    def check_conservation(self) -> None:
        """Owner counts sum to slot_count and the free pool matches the owner map."""
        c = self.census()
        with self._cond:
            pooled = np.concatenate(list(self._free)) if self._free else np.zeros(0, np.int64)
            free_count = self._free_count
        if sum(c.values()) != self.slot_count:
            raise OwnershipError(f"census {c} does not add up to {self.slot_count}")
        if len(pooled) != free_count or c["free"] != free_count:
            raise OwnershipError(f"free pool holds {len(pooled)} (count {free_count}), owner map says {c['free']}")
        if len(np.unique(pooled)) != len(pooled) or np.any(self.owner[pooled] != FREE):
            raise OwnershipError("free pool contains duplicated or owned slots")

    def write(self, idx: np.ndarray, data: np.ndarray, lengths: np.ndarray) -> None:
        """Copy packet rows into slots (the "DMA" step). Rows must fit a slot."""
        width = min(data.shape[1], self.slot_size)
        self.slots[idx, :width] = data[:, :width]
        self.lengths[idx] = lengths
