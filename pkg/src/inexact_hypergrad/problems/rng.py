"""Platform-independent random streams.

Bits come from Philox4x64-10 keyed directly with the seed (counter starting
at zero).  Uniform doubles take the top 53 bits of each 64-bit word;
Gaussians use the Box-Muller transform on pairs of uniforms.  None of this
depends on numpy's distribution samplers, whose output may change across
releases.
"""

import numpy as np

_TWO53 = float(2 ** 53)


class RngStream:
    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._bits = np.random.Philox(key=self.seed)

    def _raw(self, n):
        return self._bits.random_raw(n).astype(np.uint64)

    def uniform(self, size=None):
        """Uniform doubles in [0, 1)."""
        n = int(np.prod(size)) if size is not None else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) / _TWO53
        return u.reshape(size) if size is not None else float(u[0])

    def normal(self, size=None):
        n = int(np.prod(size)) if size is not None else 1
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1]
        u2 = self.uniform(m)
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([rad * np.cos(2 * np.pi * u2),
                            rad * np.sin(2 * np.pi * u2)])[:n]
        return z.reshape(size) if size is not None else float(z[0])

    def integers(self, high, size):
        """Integers in [0, high) by scaling uniforms."""
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)

    def permutation(self, n):
        return np.argsort(self.uniform(n), kind="stable")


def rng_stream(seed: int) -> RngStream:
    return RngStream(seed)
