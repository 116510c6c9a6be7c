"""SplitMix64: the project's only source of randomness.

Constants (Steele, Lea & Flood):
    increment  0x9E3779B97F4A7C15
    mix 1      0xBF58476D1CE4E5B9   (after xor-shift 30)
    mix 2      0x94D049BB133111EB   (after xor-shift 27)
    final      xor-shift 31

Floats take the top 53 bits. Integers below n use rejection sampling, so they are
unbiased. Any implementation following these rules reproduces our scenarios and
seeded selections bit for bit.
"""

import math
from typing import List, Sequence, TypeVar

T = TypeVar("T")

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * MIX_1) & MASK64
        z = ((z ^ (z >> 27)) * MIX_2) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"randbelow needs n > 0, got {n}")
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        # Box-Muller, one value per call
        u1 = 1.0 - self.random()  # (0, 1]
        u2 = self.random()
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def sample(self, population: Sequence[T], k: int) -> List[T]:
        """k distinct items without replacement (partial Fisher-Yates), in draw order."""
        pool = list(population)
        if not 0 <= k <= len(pool):
            raise ValueError(f"sample size {k} outside [0, {len(pool)}]")
        for i in range(k):
            j = i + self.randbelow(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def shuffle(self, items: List[T]) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
