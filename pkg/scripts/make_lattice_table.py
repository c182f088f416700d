"""Offline search for good Korobov lattice generators.

Searches a in [2, (N-1)/2] for the rank-1 Korobov vector z = (1, a, a^2, ...)
mod N minimizing the P_2 worst-case error criterion

    P_2(a) = -1 + (1/N) sum_k prod_i (1 + 2 pi^2 B_2({k z_i / N}))

with B_2(x) = x^2 - x + 1/6.  The winning parameter per dimension is printed
as a Python dict literal to paste into skewgp/orthant.py.
"""

import sys

import numpy as np

N = 5003
DMAX = 64


def search(n, dmax, candidates, weight=0.8):
    k = np.arange(n, dtype=np.int64)
    best = {d: (np.inf, None) for d in range(1, dmax + 1)}
    for a in candidates:
        z = 1
        prod = np.ones(n)
        for d in range(1, dmax + 1):
            if d > 1:
                z = (z * a) % n
            x = (k * z % n) / n
            g = weight ** (d - 1)
            prod = prod * (1.0 + g * 2.0 * np.pi**2 * (x * x - x + 1.0 / 6.0))
            p2 = prod.mean() - 1.0
            if p2 < best[d][0]:
                best[d] = (p2, a)
        print(f"a={a} done", file=sys.stderr)
    return best


if __name__ == "__main__":
    step = int(sys.argv[1]) if len(sys.argv) > 1 else 1
    cands = range(2, (N - 1) // 2 + 1, step)
    best = search(N, DMAX, cands)
    print("_KOROBOV_TABLE = {")
    print(f"    {N}: {{")
    for d in range(2, DMAX + 1):
        p2, a = best[d]
        print(f"        {d}: {a},  # P2 = {p2:.6e}")
    print("    },")
    print("}")
