"""Independent reference implementations used to check the package.

These are written from the definitions, deliberately naively, and share no
code with the package under test.
"""

from fractions import Fraction

# The NIC queue each SKB priority lands in, as stated for the board's driver:
# priority 4 -> queue 0, priorities 2 and 3 -> queue 1, everything else -> queue 2.
DRIVER_QUEUE = {p: (0 if p == 4 else 1 if p in (2, 3) else 2) for p in range(16)}


def batch_summary(samples, deadline_ns):
    """Brute-force summary over (status, rtt_ns) pairs; status in ok/late/lost."""
    received = [rtt for status, rtt in samples if status in ("ok", "late")]
    return {
        "sent": len(samples),
        "received": len(received),
        "lost": sum(1 for status, _ in samples if status == "lost"),
        "late": sum(1 for status, _ in samples if status == "late"),
        "missed": sum(1 for rtt in received if rtt > deadline_ns),
        "min": min(received) if received else None,
        "max": max(received) if received else None,
        "sum": sum(received),
        "mean": Fraction(sum(received), len(received)) if received else None,
    }


def round_half_up_us(ns):
    """Fraction-exact half-up rounding of a nanosecond quantity to microseconds."""
    q = Fraction(ns) / 1000
    floor = q.numerator // q.denominator
    return floor + (1 if q - floor >= Fraction(1, 2) else 0)


def schedule(t0, period, n):
    target = t0
    out = []
    for _ in range(n):
        out.append(target)
        target += period
    return out


def nearest_rank(values, p):
    values = sorted(values)
    n = len(values)
    # smallest k with k/n >= p, via exact fractions
    for k in range(1, n + 1):
        if Fraction(k, n) >= Fraction(p).limit_denominator(10**9):
            return values[k - 1]
    return values[-1]
