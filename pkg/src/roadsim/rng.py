"""Deterministic 64-bit PRNG used for all seeded randomness.

The generator is xorshift64* (Vigna 2016) with the state initialised by one
round of splitmix64, so that small or zero seeds still produce well-mixed
streams.  The exact update is spelled out below so that other implementations
can reproduce the same sequences bit for bit:

    state initialisation (splitmix64 round):
        z = (seed + 0x9E3779B97F4A7C15) mod 2^64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2^64
        state = z ^ (z >> 31);  if state == 0: state = 0x9E3779B97F4A7C15

    next_u64:
        state ^= state >> 12
        state ^= (state << 25) mod 2^64
        state ^= state >> 27
        return (state * 0x2545F4914F6CDD1D) mod 2^64

Derived draws are defined on top of next_u64:
    random()      = (next_u64() >> 11) / 2^53            float in [0, 1)
    randrange(n)  = next_u64() % n                       int in [0, n)

randrange uses plain modulo reduction; the tiny bias is irrelevant here and
keeping the mapping trivial is what makes the stream easy to reproduce.
"""

_MASK = (1 << 64) - 1


class Xorshift64Star:
    """Seeded deterministic generator; see module docstring for the spec."""

    def __init__(self, seed: int):
        z = (seed + 0x9E3779B97F4A7C15) & _MASK
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        self._state = (z ^ (z >> 31)) or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        s = self._state
        s ^= s >> 12
        s = (s ^ (s << 25)) & _MASK
        s ^= s >> 27
        self._state = s
        return (s * 0x2545F4914F6CDD1D) & _MASK

    def random(self) -> float:
        return (self.next_u64() >> 11) / 9007199254740992.0

    def randrange(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randrange() requires n > 0")
        return self.next_u64() % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()
