"""Independent reference for the crate's PRNG streams.

Prints the golden values hard-coded in tests/golden.rs. Pure Python, no
dependencies beyond numpy for float32 rounding.
"""
import math

import numpy as np

MASK = (1 << 64) - 1


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK


class Xoshiro:
    def __init__(self, seed):
        sm = seed
        self.s = []
        for _ in range(4):
            sm, v = splitmix64(sm)
            self.s.append(v)

    def next_u64(self):
        s = self.s
        result = (rotl((s[1] * 5) & MASK, 7) * 9) & MASK
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        return result

    def next_f64(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self):
        u1 = self.next_f64()
        u2 = self.next_f64()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


def main():
    r = Xoshiro(0)
    print("xoshiro seed 0:", [hex(r.next_u64()) for _ in range(3)])

    r = Xoshiro(42)
    betas = [np.float32(1.0 + 6.0 * r.next_f64()) for _ in range(4)]
    print("betas seed 42 [1,7] m=4:", [float(b) for b in betas])

    r = Xoshiro(7)
    delivered = sum(1 for _ in range(1000) if r.next_f64() >= 0.5)
    print("channel seed 7 rate 0.5 x1000 delivered:", delivered)

    # Gaussian noise severity 3 (sigma 0.12), seed 9, image index 0 at 0.5.
    r = Xoshiro(9 ^ 0)
    deltas = []
    for _ in range(6):
        noise = np.float32(r.normal() * float(np.float32(0.12)))
        noisy = np.float32(np.float32(0.5) + noise)
        deltas.append(float(np.float32(noisy - np.float32(0.5))))
    print("gaussian sev 3 seed 9 deltas:", deltas)


if __name__ == "__main__":
    main()
