"""Shared-word memory that the lock algorithms run against.

Every lock in this package is expressed as a step machine whose steps each
perform exactly one single-word atomic operation: load, store, test-and-set,
compare-and-swap, fetch-and-add, or a bit set/reset.  Two interchangeable
backends supply those operations:

* ``ThreadedWords`` guards the word array with one mutex, so real threads
  interleave at atomic-operation granularity.  Under CPython the mutex plus
  the GIL put every operation into a single global total order, i.e. the
  read-modify-writes are sequentially consistent and every load carries
  acquire semantics -- strictly stronger than the algorithms require.
* ``PlainWords`` is a bare array for single-threaded drivers: deterministic
  schedule replay and exhaustive interleaving exploration.

Words are 64-bit and wrap on overflow.  ``UMAX`` (all ones) doubles as the
barrier sentinel value in the batched priority lock.
"""

from __future__ import annotations

import threading

WORD_BITS = 64
UMAX = (1 << WORD_BITS) - 1


class PlainWords:
    """Unsynchronized word array for single-threaded drivers."""

    __slots__ = ("w",)

    def __init__(self, n: int, init=None):
        self.w = list(init) if init is not None else [0] * n

    def load(self, i: int) -> int:
        return self.w[i]

    def store(self, i: int, v: int) -> None:
        self.w[i] = v & UMAX

    def tas(self, i: int) -> int:
        """Set word i to 1, return its prior value."""
        old = self.w[i]
        self.w[i] = 1
        return old

    def cas(self, i: int, expect: int, new: int) -> bool:
        if self.w[i] == expect:
            self.w[i] = new & UMAX
            return True
        return False

    def faa(self, i: int, add: int) -> int:
        old = self.w[i]
        self.w[i] = (old + add) & UMAX
        return old

    def inc(self, i: int) -> int:
        old = self.w[i]
        self.w[i] = (old + 1) & UMAX
        return old

    def dec(self, i: int) -> int:
        old = self.w[i]
        self.w[i] = (old - 1) & UMAX
        return old

    def set_bit(self, i: int, bit: int) -> None:
        self.w[i] |= 1 << bit

    def reset_bit(self, i: int, bit: int) -> None:
        self.w[i] &= UMAX ^ (1 << bit)

    def snapshot(self) -> tuple:
        return tuple(self.w)


class ThreadedWords:
    """Mutex-guarded word array: the real-thread backend."""

    __slots__ = ("_w", "_mu")

    def __init__(self, n: int, init=None):
        self._w = list(init) if init is not None else [0] * n
        self._mu = threading.Lock()

    def load(self, i: int) -> int:
        with self._mu:
            return self._w[i]

    def store(self, i: int, v: int) -> None:
        with self._mu:
            self._w[i] = v & UMAX

    def tas(self, i: int) -> int:
        with self._mu:
            old = self._w[i]
            self._w[i] = 1
            return old

    def cas(self, i: int, expect: int, new: int) -> bool:
        with self._mu:
            if self._w[i] == expect:
                self._w[i] = new & UMAX
                return True
            return False

    def faa(self, i: int, add: int) -> int:
        with self._mu:
            old = self._w[i]
            self._w[i] = (old + add) & UMAX
            return old

    def inc(self, i: int) -> int:
        with self._mu:
            old = self._w[i]
            self._w[i] = (old + 1) & UMAX
            return old

    def dec(self, i: int) -> int:
        with self._mu:
            old = self._w[i]
            self._w[i] = (old - 1) & UMAX
            return old

    def set_bit(self, i: int, bit: int) -> None:
        with self._mu:
            self._w[i] |= 1 << bit

    def reset_bit(self, i: int, bit: int) -> None:
        with self._mu:
            self._w[i] &= UMAX ^ (1 << bit)

    def snapshot(self) -> tuple:
        with self._mu:
            return tuple(self._w)
