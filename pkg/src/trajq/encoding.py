"""Integer-to-bit encodings for bounded holdings.

Linear kinds map a holding w in [0, max_holding] to bits via positive weights
(w = sum of chosen weights). The partition kind instead enumerates whole
budget-feasible columns and uses one bit per column per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from trajq.errors import SpecError

LINEAR_KINDS = ("binary", "unary", "sequential", "modified")
KINDS = LINEAR_KINDS + ("partition",)


@dataclass(frozen=True)
class EncodingScheme:
    kind: str
    weights: tuple[int, ...] = ()
    partitions: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown encoding kind {self.kind!r}")
        if self.kind == "partition":
            if not self.partitions:
                raise SpecError("partition scheme requires a non-empty partition list")
            if self.weights:
                raise SpecError("partition scheme takes no weights")
            parts = tuple(tuple(int(v) for v in p) for p in self.partitions)
            if sorted(parts) != list(parts) or len(set(parts)) != len(parts):
                raise SpecError("partitions must be distinct and in ascending order")
            sums = {sum(p) for p in parts}
            if len(sums) != 1:
                raise SpecError("partitions must all sum to the same budget")
            object.__setattr__(self, "partitions", parts)
        else:
            w = tuple(int(x) for x in self.weights)
            if not w:
                raise SpecError("linear scheme requires at least one weight")
            if any(x < 1 for x in w):
                raise SpecError("weights must be positive integers")
            if self.partitions is not None:
                raise SpecError("only the partition kind carries partitions")
            object.__setattr__(self, "weights", w)

    @property
    def bit_depth(self) -> int:
        """Bits per encoded holding (per asset-step), or per step for partition."""
        if self.kind == "partition":
            return len(self.partitions)
        return len(self.weights)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "weights": list(self.weights),
            "bit_depth": self.bit_depth,
            "partitions": None
            if self.partitions is None
            else [list(p) for p in self.partitions],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncodingScheme":
        return cls(
            kind=data["kind"],
            weights=tuple(data.get("weights") or ()),
            partitions=None
            if data.get("partitions") is None
            else tuple(tuple(p) for p in data["partitions"]),
        )


def enumerate_partitions(
    budget: int, n_assets: int, max_holding: int
) -> tuple[tuple[int, ...], ...]:
    """All ways to split the budget into n_assets holdings within the box.

    Returned in ascending lexicographic order, e.g. (3, 2, 3) gives
    (0,3), (1,2), (2,1), (3,0).
    """
    if budget < 0 or n_assets < 1 or max_holding < 0:
        raise SpecError("enumerate_partitions needs budget >= 0, n_assets >= 1")
    out: list[tuple[int, ...]] = []

    def rec(prefix: list[int], remaining: int, slots: int):
        if slots == 1:
            if 0 <= remaining <= max_holding:
                out.append(tuple(prefix + [remaining]))
            return
        lo = max(0, remaining - max_holding * (slots - 1))
        hi = min(max_holding, remaining)
        for v in range(lo, hi + 1):
            rec(prefix + [v], remaining - v, slots - 1)

    rec([], budget, n_assets)
    return tuple(out)


def build_encoding(
    kind: str,
    max_holding: int,
    budget: int | None = None,
    n_assets: int | None = None,
) -> EncodingScheme:
    """Construct the scheme for a given holding bound.

    binary:     weights 1, 2, 4, ... with ceil(log2(K'+1)) bits
    unary:      K' unit weights
    sequential: weights 1..D with D = ceil((sqrt(1+8K') - 1) / 2)
    modified:   powers repeated twice (1,1,2,2,4,...), last weight clamped so
                the weights sum exactly to K'
    partition:  one bit per budget-feasible column (needs budget, n_assets)
    """
    kp = int(max_holding)
    if kp < 1:
        raise SpecError("max_holding must be >= 1")
    if kind == "binary":
        depth = max(1, math.ceil(math.log2(kp + 1)))
        return EncodingScheme("binary", tuple(2 ** d for d in range(depth)))
    if kind == "unary":
        return EncodingScheme("unary", (1,) * kp)
    if kind == "sequential":
        depth = math.ceil((math.sqrt(1 + 8 * kp) - 1) / 2)
        return EncodingScheme("sequential", tuple(range(1, depth + 1)))
    if kind == "modified":
        weights: list[int] = []
        total = 0
        power = 1
        copies = 0
        while total < kp:
            w = min(power, kp - total)
            weights.append(w)
            total += w
            copies += 1
            if copies == 2:
                power *= 2
                copies = 0
        return EncodingScheme("modified", tuple(weights))
    if kind == "partition":
        if budget is None or n_assets is None:
            raise SpecError("partition encoding requires budget and n_assets")
        parts = enumerate_partitions(budget, n_assets, kp)
        if not parts:
            raise SpecError(
                "no feasible partitions: budget exceeds n_assets * max_holding"
            )
        return EncodingScheme("partition", partitions=parts)
    raise SpecError(f"unknown encoding kind {kind!r}")


def _suffix_sums(weights: tuple[int, ...]) -> list[set[int]]:
    """reach[d] = set of values representable using weights[d:]."""
    reach: list[set[int]] = [set() for _ in range(len(weights) + 1)]
    reach[len(weights)] = {0}
    for d in range(len(weights) - 1, -1, -1):
        prev = reach[d + 1]
        reach[d] = prev | {s + weights[d] for s in prev}
    return reach


def encode_value(scheme: EncodingScheme, value):
    """Canonical bit pattern for a holding (or column, for partition kind).

    Among all patterns decoding to the value, the canonical one sets the
    earliest usable weights first: unary 2 -> (1, 1, 0, ...), binary 5 with
    weights (1, 2, 4) -> (1, 0, 1).
    """
    if scheme.kind == "partition":
        col = tuple(int(v) for v in value)
        try:
            idx = scheme.partitions.index(col)
        except ValueError:
            raise SpecError(f"column {col} is not a feasible partition") from None
        bits = [0] * len(scheme.partitions)
        bits[idx] = 1
        return tuple(bits)

    v = int(value)
    if v < 0:
        raise SpecError("cannot encode a negative holding")
    reach = _suffix_sums(scheme.weights)
    if v not in reach[0]:
        raise SpecError(f"value {v} is not representable by weights {scheme.weights}")
    bits = []
    rem = v
    for d, w in enumerate(scheme.weights):
        if rem - w in reach[d + 1]:
            bits.append(1)
            rem -= w
        else:
            bits.append(0)
    return tuple(bits)


def decode_bits(scheme: EncodingScheme, bits):
    """Inverse of encode for any valid bit pattern (not only canonical ones)."""
    bits = tuple(int(b) for b in bits)
    if len(bits) != scheme.bit_depth:
        raise SpecError(
            f"expected {scheme.bit_depth} bits for kind {scheme.kind!r}, got {len(bits)}"
        )
    if any(b not in (0, 1) for b in bits):
        raise SpecError("bits must be 0 or 1")
    if scheme.kind == "partition":
        hot = [i for i, b in enumerate(bits) if b]
        if len(hot) != 1:
            raise SpecError("partition bits must be exactly one-hot")
        return scheme.partitions[hot[0]]
    return sum(w * b for w, b in zip(scheme.weights, bits))


def variable_count(scheme: EncodingScheme, n_assets: int, n_steps: int) -> int:
    """Binary variables needed for a whole problem (slack excluded)."""
    if scheme.kind == "partition":
        return n_steps * len(scheme.partitions)
    return n_assets * n_steps * len(scheme.weights)


def redundancy(scheme: EncodingScheme, value) -> int:
    """How many distinct bit patterns decode to the value."""
    if scheme.kind == "partition":
        col = tuple(int(v) for v in value)
        return 1 if col in scheme.partitions else 0
    v = int(value)
    if v < 0:
        return 0
    counts = {0: 1}
    for w in scheme.weights:
        nxt = dict(counts)
        for s, c in counts.items():
            if s + w <= v:
                nxt[s + w] = nxt.get(s + w, 0) + c
        counts = nxt
    return counts.get(v, 0)


def largest_representable(kind: str, epsilon: float, delta: float):
    """Largest integer an analog device can faithfully represent per kind.

    With relative coefficient error epsilon and required energy resolution
    delta, coefficients scale like the squared encoded integer, giving
    n = 1 / sqrt(epsilon * delta) as the usable weight headroom.
    """
    if epsilon <= 0 or delta <= 0:
        raise SpecError("epsilon and delta must be positive")
    n = 1.0 / math.sqrt(epsilon * delta)
    if kind == "binary":
        return int(math.floor(2 * n)) - 1
    if kind == "unary":
        return math.inf
    if kind == "sequential":
        m = int(math.floor(n))
        return m * (m + 1) // 2
    if kind == "partition":
        return int(math.floor(n))
    if kind == "modified":
        raise SpecError("no closed-form precision bound for the modified kind")
    raise SpecError(f"unknown encoding kind {kind!r}")
