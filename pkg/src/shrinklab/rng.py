"""Small reproducible random generator (xorshift64*).

State update (all arithmetic mod 2^64)::

    x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27
    out = x * 0x2545F4914F6CDD1D

The 64-bit seed is first passed through one splitmix64 round so that small
seeds give well-mixed states.  Floats use the top 53 bits of ``out``.
These constants are the whole contract: any implementation following them
draws the same stream.
"""

import math

import numpy as np

MASK64 = (1 << 64) - 1
MULT = 0x2545F4914F6CDD1D


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Xorshift64Star:
    def __init__(self, seed=0):
        s = splitmix64(int(seed) & MASK64)
        self.state = s if s else 0x9E3779B97F4A7C15

    def next_u64(self):
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * MULT) & MASK64

    def random(self):
        """Uniform in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo=0.0, hi=1.0, size=None):
        if size is None:
            return lo + (hi - lo) * self.random()
        n = int(np.prod(size))
        return lo + (hi - lo) * np.array([self.random() for _ in range(n)]).reshape(size)

    def normal(self, size=None):
        # Box-Muller, one variate per pair of uniforms (keeps the stream simple)
        def one():
            u1 = 1.0 - self.random()
            u2 = self.random()
            return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        if size is None:
            return one()
        n = int(np.prod(size))
        return np.array([one() for _ in range(n)]).reshape(size)

    def orthogonal(self, n):
        q, r = np.linalg.qr(self.normal((n, n)))
        return q * np.sign(np.diag(r))

    def symmetric(self, n, lo, hi):
        """Symmetric matrix with eigenvalues uniform in [lo, hi] and random eigenvectors."""
        Q = self.orthogonal(n)
        lam = self.uniform(lo, hi, size=n)
        S = (Q * lam) @ Q.T
        return 0.5 * (S + S.T), lam

    def spd(self, n, lo=0.2, hi=5.0):
        return self.symmetric(n, lo, hi)[0]
