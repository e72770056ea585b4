"""SplitMix64: the portable PRNG behind crop origins and augmentation draws.

Every random decision that must be reproducible across ports (patch origins,
degradation choice and strength, epoch ordering) goes through this generator.
Bulk noise (synthetic corpus, weight init) uses numpy's PCG64 instead.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform double in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Integer in [0, n). Plain modulo; the bias is < n / 2**64."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n), drawing from the top index down."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            order[i], order[j] = order[j], order[i]
        return order

    @classmethod
    def derive(cls, seed: int, *keys: int) -> "SplitMix64":
        """Independent stream for (seed, *keys), e.g. (seed, epoch, sample)."""
        gen = cls(seed)
        for key in keys:
            gen = cls(gen.next_u64() ^ (key & MASK64))
        return gen
