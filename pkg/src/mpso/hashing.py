"""Keyed-hash set protocol for universes too large to publish.

The parties share an HMAC key the decider never sees and submit TagSets:
the keyed images of their own elements, mixed with per-region dummy tags.
A dummy for region R (a subset of parties) is a random tag inserted into
exactly the TagSets of R's parties, so to the decider it is
indistinguishable from a real element held by precisely those parties.
The decider classifies every distinct tag by its exact signature (which
TagSets contain it), counts the tags whose signature falls in a region
covered by the DNF expression, and subtracts the declared dummy totals.
Elements held by nobody are unobservable; the all-complements region is
excluded throughout.

The emptiness variant adds per-subset "cloning" keys: every group of two
or more parties shares extra keys under which each group member hashes its
own set, randomly skipping a small fraction per key.  Collisions then no
longer reveal how many matching elements exist, only that one does: the
decider reports non-empty as soon as any covered region collides more
often than its declared dummy count.  The check is one-sided by
construction: a matching element always produces an excess collision via
the common key, but clone tags land in sub-regions of the element's true
region, so expressions with complemented literals can report a spurious
non-empty.
"""

from __future__ import annotations

import hmac
import random
from dataclasses import dataclass, field

from .setops import DnfExpression, InputSet, all_regions, matching_regions

TAG_BYTES = 32
MIN_KEY_BYTES = 16
DEFAULT_MULTIPLIER = 10
DEFAULT_KEYS_PER_SUBSET = 2
SKIP_LO = 0.05
SKIP_HI = 0.15


class InconsistencyError(RuntimeError):
    """Observed tag counts are impossible under an honest protocol run."""


def keyed_hash(key: bytes, element: str | bytes) -> bytes:
    """HMAC-SHA256 tag of one element; 32 bytes, keys of 16+ bytes only."""
    if len(key) < MIN_KEY_BYTES:
        raise ValueError(f"key must be at least {MIN_KEY_BYTES} bytes")
    data = element.encode("utf-8") if isinstance(element, str) else element
    return hmac.digest(key, data, "sha256")


def _random_tag(rng: random.Random) -> bytes:
    return rng.getrandbits(TAG_BYTES * 8).to_bytes(TAG_BYTES, "big")


@dataclass(frozen=True)
class SharedKeys:
    """Keys known to all parties and to no decider.

    ``subset_keys`` maps a party bitmask (two or more bits set) to the
    extra cloning keys of that group; empty for the cardinality variant.
    """

    common: bytes
    subset_keys: dict[int, tuple[bytes, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.common) < MIN_KEY_BYTES:
            raise ValueError("common key too short")
        for mask, keys in self.subset_keys.items():
            if bin(mask).count("1") < 2:
                raise ValueError("subset keys belong to groups of 2+ parties")
            for key in keys:
                if len(key) < MIN_KEY_BYTES:
                    raise ValueError("subset key too short")


def make_shared_keys(n: int, rng: random.Random | None = None,
                     emptiness: bool = False,
                     keys_per_subset: int = DEFAULT_KEYS_PER_SUBSET) -> SharedKeys:
    rng = rng or random.SystemRandom()
    common = _random_tag(rng)
    subset_keys: dict[int, tuple[bytes, ...]] = {}
    if emptiness:
        for mask in all_regions(n):
            if bin(mask).count("1") >= 2:
                subset_keys[mask] = tuple(
                    _random_tag(rng) for _ in range(keys_per_subset))
    return SharedKeys(common=common, subset_keys=subset_keys)


@dataclass
class RegionPlan:
    """Agreed dummy tags per observable region (party bitmask -> values)."""

    n: int
    dummy_values: dict[int, tuple[bytes, ...]]

    def __post_init__(self):
        expected = set(all_regions(self.n))
        if set(self.dummy_values) != expected:
            raise ValueError("plan must cover every region except the empty one")
        flat = [v for values in self.dummy_values.values() for v in values]
        if len(set(flat)) != len(flat):
            raise ValueError("dummy values collide across regions")

    @property
    def dummy_counts(self) -> dict[int, int]:
        return {mask: len(values) for mask, values in self.dummy_values.items()}

    def regions_of(self, party: int) -> list[int]:
        bit = 1 << (party - 1)
        return [mask for mask in sorted(self.dummy_values) if mask & bit]


def plan_regions(n: int, expr: DnfExpression, size_hint: int,
                 multiplier: int = DEFAULT_MULTIPLIER,
                 rng: random.Random | None = None) -> RegionPlan:
    """Draw dummy counts for every region, scaled against ``size_hint``.

    ``size_hint`` is the public "typical input set size"; each region gets
    between multiplier*hint and 2*multiplier*hint dummies so that real
    collision counts drown in dummy counts of the same order.
    """
    rng = rng or random.SystemRandom()
    if size_hint < 1:
        raise ValueError("size_hint must be positive")
    if multiplier < 1:
        raise ValueError("multiplier must be positive")
    if expr.max_party > n:
        raise ValueError(f"expression references S{expr.max_party}, n={n}")
    used: set[bytes] = set()
    values: dict[int, tuple[bytes, ...]] = {}
    for mask in all_regions(n):
        count = rng.randint(multiplier * size_hint, 2 * multiplier * size_hint)
        region: list[bytes] = []
        while len(region) < count:
            tag = _random_tag(rng)
            if tag not in used:
                used.add(tag)
                region.append(tag)
        values[mask] = tuple(region)
    return RegionPlan(n=n, dummy_values=values)


@dataclass(frozen=True)
class TagSet:
    party: int
    tags: frozenset[bytes]

    def __len__(self) -> int:
        return len(self.tags)


def build_tagset(party: int, input_set: InputSet, plan: RegionPlan,
                 keys: SharedKeys, rng: random.Random | None = None,
                 emptiness: bool = False,
                 skip_lo: float = SKIP_LO, skip_hi: float = SKIP_HI) -> TagSet:
    """One party's submission: keyed images, region dummies, and (for the
    emptiness variant) per-subset clone images with a random skip."""
    if party != input_set.party:
        raise ValueError("input set belongs to a different party")
    rng = rng or random.SystemRandom()
    members = sorted(input_set.members)
    real = {keyed_hash(keys.common, e) for e in members}
    tags = set(real)
    for mask in plan.regions_of(party):
        for dummy in plan.dummy_values[mask]:
            if dummy in real:
                raise InconsistencyError(
                    "dummy tag collides with a real element tag")
            tags.add(dummy)
    if emptiness:
        bit = 1 << (party - 1)
        for mask in sorted(keys.subset_keys):
            if not mask & bit:
                continue
            for key in keys.subset_keys[mask]:
                fraction = rng.uniform(skip_lo, skip_hi)
                skip = rng.sample(members, round(fraction * len(members))) \
                    if members else []
                skipped = set(skip)
                tags.update(keyed_hash(key, e)
                            for e in members if e not in skipped)
    return TagSet(party=party, tags=frozenset(tags))


def declare_dummy_totals(plan: RegionPlan, expr: DnfExpression) -> dict[int, int]:
    """Per-region dummy sums for exactly the regions the expression covers.

    This is what a party sends the decider: totals only, never the values.
    """
    counts = plan.dummy_counts
    return {mask: counts[mask] for mask in sorted(matching_regions(expr, plan.n))}


def _signatures(tagsets: list[TagSet]) -> dict[bytes, int]:
    parties = sorted(ts.party for ts in tagsets)
    if parties != list(range(1, len(tagsets) + 1)):
        raise ValueError("need one TagSet per party 1..n")
    sig: dict[bytes, int] = {}
    for ts in tagsets:
        bit = 1 << (ts.party - 1)
        for tag in ts.tags:
            sig[tag] = sig.get(tag, 0) | bit
    return sig


def decider_cardinality(tagsets: list[TagSet], expr: DnfExpression,
                        declared: dict[int, int]) -> int:
    """Count matching-region tags and subtract the declared dummy totals.

    Raises ``InconsistencyError`` when the subtraction goes negative, which
    can only happen if someone lied about dummies or withheld tags.
    """
    n = len(tagsets)
    covered = matching_regions(expr, n)
    if set(declared) != covered:
        raise InconsistencyError(
            "declared dummy totals do not cover exactly the matching regions")
    sig = _signatures(tagsets)
    gross = sum(1 for mask in sig.values() if mask in covered)
    dummy_total = sum(declared.values())
    result = gross - dummy_total
    if result < 0:
        raise InconsistencyError(
            f"matching tags ({gross}) fewer than declared dummies ({dummy_total})")
    return result


def decider_emptiness(tagsets: list[TagSet], expr: DnfExpression,
                      declared: dict[int, int]) -> bool:
    """True when no covered region collides beyond its declared dummies."""
    n = len(tagsets)
    covered = matching_regions(expr, n)
    if set(declared) != covered:
        raise InconsistencyError(
            "declared dummy totals do not cover exactly the matching regions")
    sig = _signatures(tagsets)
    per_region: dict[int, int] = {mask: 0 for mask in covered}
    for mask in sig.values():
        if mask in per_region:
            per_region[mask] += 1
    for mask, observed in per_region.items():
        if observed < declared[mask]:
            raise InconsistencyError(
                f"region {mask:b} shows fewer tags than its declared dummies")
        if observed > declared[mask]:
            return False
    return True


# --- TagSet files ------------------------------------------------------------


def save_tagset(ts: TagSet, path: str) -> None:
    """Sorted hex lines, one tag per line."""
    with open(path, "w", encoding="ascii") as fh:
        for tag in sorted(ts.tags):
            fh.write(tag.hex() + "\n")


def load_tagset(party: int, path: str) -> TagSet:
    tags = set()
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if len(line) != TAG_BYTES * 2:
                raise ValueError(f"line {lineno}: expected {TAG_BYTES*2} hex chars")
            tags.add(bytes.fromhex(line))
    return TagSet(party=party, tags=frozenset(tags))
