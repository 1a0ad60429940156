#!/usr/bin/env python3
"""Brute-force count of grid cells of edge q fully inside a disk, grid anchored at the disk centre."""
import itertools
import math


def count(radius, q, anchor):
    # anchor 'centre': cells centred at c + q*i; 'corner': cell corners at c + q*i
    m = int(math.ceil(radius / q)) + 2
    n = 0
    for i, j in itertools.product(range(-m, m + 1), repeat=2):
        cx, cy = (i * q, j * q) if anchor == "centre" else ((i + 0.5) * q, (j + 0.5) * q)
        far = max(math.hypot(cx + sx * q / 2, cy + sy * q / 2) for sx in (-1, 1) for sy in (-1, 1))
        n += far <= radius
    return n


if __name__ == "__main__":
    for radius in (1.0, 0.5):
        for anchor in ("centre", "corner"):
            print(f"radius {radius} q 0.5 {anchor}: {count(radius, 0.5, anchor)}")
    c = count(1.0, 0.1, "centre")
    print(f"radius 1 q 0.1 centre: {c} cells, fraction {c * 0.01 / math.pi:.4f}")
