#!/usr/bin/env python3
"""Frozen values for the geometry tests, from exact rational arithmetic."""
from fractions import Fraction
from itertools import product
import math


def alpha(k):
    return Fraction(1) if k == 0 else Fraction(1, 2 ** (k + 1) - 1)


def generation_measure(k, n):
    return (2 ** k * alpha(k)) ** n


def cube(n, digits):
    # centre and edge of the nested cube with this address
    c = [Fraction(1, 2)] * n
    e = Fraction(1)
    for k, d in enumerate(digits, start=1):
        q = [Fraction(3, 4) if ((d - 1) >> i) & 1 else Fraction(1, 4) for i in range(n)]
        c = [c[i] + e * (q[i] - Fraction(1, 2)) for i in range(n)]
        e = e * alpha(k) / alpha(k - 1)
    return c, e


def truncation_depth(n, eps):
    k = 1
    while not 2 * math.sqrt(n) * float(alpha(k - 1)) < eps:
        k += 1
    return k


if __name__ == "__main__":
    for k in (0, 1, 5, 10, 20):
        print(f"alpha({k}) = {alpha(k)}")
    for k, n in ((1, 2), (5, 2), (10, 2), (3, 2), (2, 3), (6, 3)):
        print(f"generation_measure({k},{n}) = {generation_measure(k, n)}")
    for n, digits in ((2, [1]), (2, [1, 1]), (2, [4, 2, 3]), (3, [8, 1])):
        c, e = cube(n, digits)
        print(f"cube({n},{digits}) centre = {[str(x) for x in c]} edge = {e}")
    for n, eps in ((2, 3.0), (2, 0.1), (3, 0.01)):
        print(f"truncation_depth({n},{eps}) = {truncation_depth(n, eps)}")
    pairs = [(j, j + 2 ** (3 - 1)) for j in range(1, 2 ** (3 - 1) + 1)]
    print(f"pairs n=3 = {pairs}")
    print(f"admissible_radius(2,1) = {Fraction(1, 10 * 9 * 2)}")
