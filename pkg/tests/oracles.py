"""Slow, deliberately naive reference implementations used as test oracles.

None of these share code with the package: they are straight transcriptions
of the definitions in plain Python loops.
"""

from collections import deque
from fractions import Fraction
from itertools import product


def otsu_bruteforce(hist):
    """Exhaustive between-class variance scan in exact rational arithmetic.

    Class 0 holds bins <= t; the first (smallest) maximising t wins.
    """
    hist = [int(c) for c in hist]
    total = sum(hist)
    total_mass = sum(i * c for i, c in enumerate(hist))
    best_t, best = None, None
    w0 = m0 = 0
    for t in range(255):
        w0 += hist[t]
        m0 += t * hist[t]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        mu0 = Fraction(m0, w0)
        mu1 = Fraction(total_mass - m0, w1)
        var_b = Fraction(w0 * w1, total * total) * (mu0 - mu1) ** 2
        if best is None or var_b > best:
            best, best_t = var_b, t
    return best_t


def flood_fill_regions(mask):
    """Set of frozensets of (y, x) pixels, 8-connected, by BFS."""
    h, w = len(mask), len(mask[0])
    seen = [[False] * w for _ in range(h)]
    regions = set()
    for y0 in range(h):
        for x0 in range(w):
            if not mask[y0][x0] or seen[y0][x0]:
                continue
            region = []
            queue = deque([(y0, x0)])
            seen[y0][x0] = True
            while queue:
                y, x = queue.popleft()
                region.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny][nx] and not seen[ny][nx]:
                            seen[ny][nx] = True
                            queue.append((ny, nx))
            regions.add(frozenset(region))
    return regions


def kappa_double_loop(counts):
    """Quadratic weighted kappa written out with explicit double loops."""
    k = len(counts)
    total = 0.0
    for i in range(k):
        for j in range(k):
            total += counts[i][j]
    rows = [0.0] * k
    cols = [0.0] * k
    for i in range(k):
        for j in range(k):
            rows[i] += counts[i][j]
            cols[j] += counts[i][j]
    num = 0.0
    den = 0.0
    for i in range(k):
        for j in range(k):
            weight = (i - j) ** 2 / (k - 1) ** 2
            num += weight * counts[i][j] / total
            den += weight * rows[i] * cols[j] / (total * total)
    if den == 0:
        return 1.0
    return 1.0 - num / den


# Clinical rule table, written as a lookup over (macro, micro, itc) counts
# rather than as a chain of conditions.
def stage_rule_table(labels):
    macro = labels.count("macro")
    micro = labels.count("micro")
    itc = labels.count("itc")
    table = {}
    for a, b, c in product(range(6), repeat=3):
        if a + b + c > 5:
            continue
        if a >= 1:
            table[(a, b, c)] = "pN2" if a + b >= 4 else "pN1"
        elif b >= 1:
            table[(a, b, c)] = "pN1mi"
        elif c >= 1:
            table[(a, b, c)] = "pN0(i+)"
        else:
            table[(a, b, c)] = "pN0"
    return table[(macro, micro, itc)]


def tile_average_oracle(h, w, tiles):
    """Per-pixel mean over the tiles that cover it; tiles = [(x, y, size, fn)]."""
    acc = [[0.0] * w for _ in range(h)]
    cnt = [[0] * w for _ in range(h)]
    for x0, y0, size, values in tiles:
        for dy in range(size):
            for dx in range(size):
                acc[y0 + dy][x0 + dx] += float(values[dy][dx])
                cnt[y0 + dy][x0 + dx] += 1
    return [[acc[y][x] / cnt[y][x] if cnt[y][x] else 0.0 for x in range(w)] for y in range(h)]


def bce_scalar(probs, targets, eps=1e-7):
    import math
    total = 0.0
    n = 0
    for p, y in zip(probs, targets):
        p = min(max(p, eps), 1 - eps)
        total += -(y * math.log(p) + (1 - y) * math.log(1 - p))
        n += 1
    return total / n
