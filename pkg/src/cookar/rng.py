"""Deterministic seeded random stream (splitmix64).

Every seeded component in the package draws from this generator so that
identical seeds give byte-identical outputs on every platform, independent
of Python's own RNG internals.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """One splitmix64 output for state ``x`` (stateless finalizer)."""
    z = (x + _GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


class SeededStream:
    """splitmix64 stream with convenience draws.

    Not thread-safe; derive one stream per worker via :meth:`derive`.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def derive(self, salt: int) -> "SeededStream":
        """Independent child stream, stable for a given (seed, salt)."""
        return SeededStream(mix64(self._state ^ (salt & _MASK)))

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return (z ^ (z >> 31)) & _MASK

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform float in the closed range [lo, hi]."""
        u = self.next_u64() >> 11  # 53 bits
        return lo + (hi - lo) * (u / float((1 << 53) - 1))

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        # rejection sampling to avoid modulo bias
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            u = self.next_u64()
            if u < limit:
                return lo + (u % span)

    def choice(self, seq):
        return seq[self.randint(0, len(seq) - 1)]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]
