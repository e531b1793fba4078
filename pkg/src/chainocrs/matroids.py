"""Finite matroids as rank oracles over integer bitmasks.

A matroid lives on a *universe* of element ids ``[0, n_universe)`` and
exposes a ground set that is a subset of the universe (a proper subset for
minors).  Minors are lightweight views that delegate to the base oracle:
for a restriction to ``C`` and contraction of ``A``,

    rank(S) = rank_base(S | A) - rank_base(A),     ground = C \\ A.

All set arguments are bitmasks, see :mod:`chainocrs.bitset`.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .bitset import full_mask, ids_of, iter_ids, mask_of, submasks

#: Largest universe for which dense rank/span tables are built.
SPAN_TABLE_MAX = 20

#: Largest universe on which exhaustive axiom validation is allowed.
AXIOM_CHECK_MAX = 12


class Matroid:
    """Base class: a rank oracle over a fixed ground set.

    Instances are immutable after construction and safe to share across
    concurrent workers; every operation is read-only.
    """

    def __init__(self, n_universe: int, ground_mask: int):
        self.n_universe = n_universe
        self.ground_mask = ground_mask
        self._rank_full: int | None = None
        self._tables: tuple[np.ndarray, np.ndarray] | None = None

    # -- oracle interface ------------------------------------------------

    def _rank_masked(self, mask: int) -> int:
        """Rank of ``mask``, guaranteed to be a subset of the ground set."""
        raise NotImplementedError

    def rank(self, mask: int) -> int:
        """Largest cardinality of an independent subset of ``mask``."""
        if mask & ~self.ground_mask:
            raise ValueError(
                f"set {ids_of(mask & ~self.ground_mask)} lies outside the ground set"
            )
        return self._rank_masked(mask)

    def is_independent(self, mask: int) -> bool:
        """True iff ``mask`` is independent, i.e. rank(mask) == |mask|."""
        return self.rank(mask) == mask.bit_count()

    def span(self, mask: int) -> int:
        """All elements whose addition to ``mask`` does not raise its rank."""
        r = self.rank(mask)
        out = mask
        rest = self.ground_mask & ~mask
        for e in iter_ids(rest):
            if self._rank_masked(mask | (1 << e)) == r:
                out |= 1 << e
        return out

    def full_rank(self) -> int:
        """Rank of the whole ground set."""
        if self._rank_full is None:
            self._rank_full = self._rank_masked(self.ground_mask)
        return self._rank_full

    # -- minors ----------------------------------------------------------

    def restrict(self, keep_mask: int) -> "Matroid":
        """Matroid induced on ``keep_mask`` (same ranks on its subsets)."""
        if keep_mask & ~self.ground_mask:
            raise ValueError("restriction set outside the ground set")
        return MinorMatroid(self, restricted_to=keep_mask, contracted=0)

    def contract(self, away_mask: int) -> "Matroid":
        """Minor on ground \\ away with rank(S) = rank(S | away) - rank(away)."""
        if away_mask & ~self.ground_mask:
            raise ValueError("contraction set outside the ground set")
        return MinorMatroid(
            self, restricted_to=self.ground_mask & ~away_mask, contracted=away_mask
        )

    # -- fast-path hooks ---------------------------------------------------

    def uniform_cap(self) -> int | None:
        """If rank(S) = min(|S|, k) on the ground set, return k, else None."""
        return None

    def span_lookup(self):
        """Vectorized span oracle, or None when the universe is too large.

        Returns a callable mapping an ``np.ndarray`` of masks (int64) to the
        array of their span masks.  Entries are interpreted modulo the ground
        set: ``lookup(m) == span(m & ground_mask)``.
        """
        if self.n_universe > SPAN_TABLE_MAX:
            return None
        span_t = self._dense_tables()[1]

        def lookup(masks: np.ndarray) -> np.ndarray:
            return span_t[masks]

        return lookup

    def rank_table(self) -> np.ndarray:
        """Dense table rank(m & ground) for every universe mask m (n <= 20)."""
        if self.n_universe > SPAN_TABLE_MAX:
            raise ValueError(
                f"dense tables need n <= {SPAN_TABLE_MAX}, got {self.n_universe}"
            )
        return self._dense_tables()[0]

    def _dense_tables(self) -> tuple[np.ndarray, np.ndarray]:
        if self._tables is not None:
            return self._tables
        n = self.n_universe
        g = self.ground_mask
        size = 1 << n
        rank_t = np.zeros(size, dtype=np.int64)
        for m in range(size):
            rank_t[m] = self._rank_masked(m & g)
        masks = np.arange(size, dtype=np.int64)
        span_t = masks & g
        for e in iter_ids(g):
            bit = np.int64(1 << e)
            spanned = rank_t[masks | bit] == rank_t
            span_t = np.where(spanned, span_t | bit, span_t)
        self._tables = (rank_t, span_t)
        return self._tables


class UniformMatroid(Matroid):
    """U_{k,n}: every set of at most k elements is independent."""

    def __init__(self, k: int, n: int):
        if not 0 <= k <= n:
            raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
        super().__init__(n, full_mask(n))
        self.k = k

    def _rank_masked(self, mask: int) -> int:
        return min(mask.bit_count(), self.k)

    def uniform_cap(self) -> int | None:
        return self.k

    def __repr__(self):
        return f"UniformMatroid(k={self.k}, n={self.n_universe})"


class PartitionMatroid(Matroid):
    """At most ``capacities[j]`` elements from each block of a partition."""

    def __init__(self, blocks: list[Iterable], capacities: list[int]):
        block_masks = [mask_of(b) for b in blocks]
        if len(block_masks) != len(capacities):
            raise ValueError("one capacity per block required")
        union = 0
        for bm in block_masks:
            if bm & union:
                raise ValueError("blocks must be disjoint")
            union |= bm
        if any(c < 0 for c in capacities):
            raise ValueError("capacities must be non-negative")
        super().__init__(union.bit_length(), union)
        self.block_masks = block_masks
        self.capacities = list(capacities)

    def _rank_masked(self, mask: int) -> int:
        return sum(
            min((mask & bm).bit_count(), c)
            for bm, c in zip(self.block_masks, self.capacities)
        )

    def __repr__(self):
        return f"PartitionMatroid(blocks={[ids_of(b) for b in self.block_masks]}, capacities={self.capacities})"


class GraphicMatroid(Matroid):
    """Forests of a multigraph; element e is the edge ``edges[e]``.

    Rank is computed with a union-find rebuilt per query; at the ground-set
    sizes this library targets a query is microseconds, so no caching.
    """

    def __init__(self, n_vertices: int, edges: list[tuple[int, int]]):
        if any(not (0 <= u < n_vertices and 0 <= v < n_vertices) for u, v in edges):
            raise ValueError("edge endpoint outside vertex range")
        super().__init__(len(edges), full_mask(len(edges)))
        self.n_vertices = n_vertices
        self.edges = [(int(u), int(v)) for u, v in edges]

    def _rank_masked(self, mask: int) -> int:
        parent = list(range(self.n_vertices))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        r = 0
        for e in iter_ids(mask):
            u, v = self.edges[e]
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[ru] = rv
                r += 1
        return r

    def __repr__(self):
        return f"GraphicMatroid(n_vertices={self.n_vertices}, edges={self.edges})"


class LaminarMatroid(Matroid):
    """|S ∩ F| <= capacity(F) for every set F of a laminar family."""

    def __init__(self, n: int, sets: list[Iterable], capacities: list[int]):
        family = [mask_of(s) for s in sets]
        if len(family) != len(capacities):
            raise ValueError("one capacity per family set required")
        ground = full_mask(n)
        for fm in family:
            if fm & ~ground:
                raise ValueError("family set outside the ground set")
        for a, b in itertools.combinations(family, 2):
            inter = a & b
            if inter and inter != a and inter != b:
                raise ValueError("family is not laminar")
        if any(c < 0 for c in capacities):
            raise ValueError("capacities must be non-negative")
        super().__init__(n, ground)
        # The whole ground set is implicitly unconstrained unless listed.
        self.family = family
        self.capacities = list(capacities)

    def is_independent(self, mask: int) -> bool:
        if mask & ~self.ground_mask:
            raise ValueError("set outside the ground set")
        return all(
            (mask & fm).bit_count() <= c
            for fm, c in zip(self.family, self.capacities)
        )

    def _rank_masked(self, mask: int) -> int:
        # Greedy augmentation yields a basis of `mask` in any matroid.
        counts = [0] * len(self.family)
        r = 0
        for e in iter_ids(mask):
            bit = 1 << e
            touching = [j for j, fm in enumerate(self.family) if fm & bit]
            if all(counts[j] < self.capacities[j] for j in touching):
                for j in touching:
                    counts[j] += 1
                r += 1
        return r

    def __repr__(self):
        return (
            f"LaminarMatroid(n={self.n_universe}, "
            f"sets={[ids_of(f) for f in self.family]}, capacities={self.capacities})"
        )


class ExplicitMatroid(Matroid):
    """Matroid given by the full list of its independent sets.

    Construction validates the matroid axioms exhaustively; ground sets
    larger than ``AXIOM_CHECK_MAX`` are rejected outright, since an
    unvalidated explicit family is a corpus hazard.  ``validate=False``
    skips the check so that deliberately broken families can be fed to
    :func:`validate_axioms` in tests.
    """

    def __init__(self, n: int, independent_sets: list[Iterable], validate: bool = True):
        if n > AXIOM_CHECK_MAX:
            raise ValueError(
                f"explicit matroids are limited to n <= {AXIOM_CHECK_MAX}, got {n}"
            )
        super().__init__(n, full_mask(n))
        self.independent = sorted({mask_of(s) for s in independent_sets})
        if not self.independent:
            raise ValueError("independent-set family must be nonempty")
        if validate:
            report = validate_axioms(self)
            if not report.passed:
                raise ValueError(f"not a matroid: {'; '.join(report.failures)}")

    def _rank_masked(self, mask: int) -> int:
        return max((i.bit_count() for i in self.independent if not i & ~mask), default=0)

    def is_independent(self, mask: int) -> bool:
        if mask & ~self.ground_mask:
            raise ValueError("set outside the ground set")
        return mask in self.independent

    def __repr__(self):
        return f"ExplicitMatroid(n={self.n_universe}, {len(self.independent)} independent sets)"


class MinorMatroid(Matroid):
    """Restriction/contraction view over a base matroid."""

    def __init__(self, base: Matroid, restricted_to: int, contracted: int):
        if restricted_to & contracted:
            raise ValueError("restriction and contraction sets must be disjoint")
        super().__init__(base.n_universe, restricted_to)
        self.base = base
        self.contracted = contracted
        self._r_contracted = base._rank_masked(contracted) if contracted else 0

    def _rank_masked(self, mask: int) -> int:
        if not self.contracted:
            return self.base._rank_masked(mask)
        return self.base._rank_masked(mask | self.contracted) - self._r_contracted

    def restrict(self, keep_mask: int) -> "Matroid":
        if keep_mask & ~self.ground_mask:
            raise ValueError("restriction set outside the ground set")
        return MinorMatroid(self.base, restricted_to=keep_mask, contracted=self.contracted)

    def contract(self, away_mask: int) -> "Matroid":
        if away_mask & ~self.ground_mask:
            raise ValueError("contraction set outside the ground set")
        return MinorMatroid(
            self.base,
            restricted_to=self.ground_mask & ~away_mask,
            contracted=self.contracted | away_mask,
        )

    def span(self, mask: int) -> int:
        # span_{(M|C)/A}(S) = span_M(S ∪ A) ∩ (C \ A)
        if mask & ~self.ground_mask:
            raise ValueError("set outside the ground set")
        return self.base.span(mask | self.contracted) & self.ground_mask

    def uniform_cap(self) -> int | None:
        k = self.base.uniform_cap()
        if k is None:
            return None
        return max(0, k - self._r_contracted)

    def span_lookup(self):
        base_lookup = self.base.span_lookup()
        if base_lookup is None:
            return None
        contracted = np.int64(self.contracted)
        ground = np.int64(self.ground_mask)

        def lookup(masks: np.ndarray) -> np.ndarray:
            return base_lookup(masks | contracted) & ground

        return lookup

    def __repr__(self):
        return (
            f"MinorMatroid({self.base!r}, restricted_to={ids_of(self.ground_mask)}, "
            f"contracted={ids_of(self.contracted)})"
        )


# ---------------------------------------------------------------------------
# Axiom validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of an exhaustive matroid-axiom check."""

    n: int
    independent_count: int
    downward_closed: bool
    exchange: bool
    rank_monotone: bool
    rank_cardinality_bounded: bool
    rank_submodular: bool
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def validate_axioms(m: Matroid) -> ValidationReport:
    """Exhaustively check the independence axioms and rank properties.

    Refuses ground sets larger than ``AXIOM_CHECK_MAX`` rather than
    silently truncating the check.
    """
    n = m.n_universe
    if n > AXIOM_CHECK_MAX:
        raise ValueError(f"axiom validation is limited to n <= {AXIOM_CHECK_MAX}, got {n}")
    failures: list[str] = []
    g = m.ground_mask

    independents = [s for s in submasks(g) if m.is_independent(s)]
    indep_set = set(independents)
    if 0 not in indep_set:
        failures.append("empty set is not independent")

    down_ok = True
    for s in independents:
        for e in iter_ids(s):
            if s ^ (1 << e) not in indep_set:
                down_ok = False
                failures.append(
                    f"downward closure: {ids_of(s)} independent but {ids_of(s ^ (1 << e))} is not"
                )
                break
        if not down_ok:
            break

    exch_ok = True
    by_size: dict[int, list[int]] = {}
    for s in independents:
        by_size.setdefault(s.bit_count(), []).append(s)
    for size, smaller in sorted(by_size.items()):
        larger = by_size.get(size + 1, [])
        for i_set in smaller:
            for j_set in larger:
                extra = j_set & ~i_set
                if not any(i_set | (1 << e) in indep_set for e in iter_ids(extra)):
                    exch_ok = False
                    failures.append(
                        f"exchange: no augmenting element from {ids_of(j_set)} into {ids_of(i_set)}"
                    )
                    break
            if not exch_ok:
                break
        if not exch_ok:
            break

    # Rank properties of the induced rank function, vectorized over all pairs.
    size = 1 << n
    masks = np.arange(size, dtype=np.int64)
    rank_t = np.zeros(size, dtype=np.int64)
    for s in range(size):
        rank_t[s] = _family_rank(s & g, independents)
    card = np.array([int(s).bit_count() for s in range(size)], dtype=np.int64)

    bounded = bool(np.all(rank_t <= card))
    if not bounded:
        failures.append("rank exceeds cardinality")
    monotone = True
    for e in range(n):
        bit = np.int64(1 << e)
        if not np.all(rank_t[masks | bit] >= rank_t):
            monotone = False
            failures.append("rank is not monotone")
            break
    union_r = rank_t[np.bitwise_or.outer(masks, masks)]
    inter_r = rank_t[np.bitwise_and.outer(masks, masks)]
    submodular = bool(np.all(union_r + inter_r <= rank_t[:, None] + rank_t[None, :]))
    if not submodular:
        failures.append("rank is not submodular")

    return ValidationReport(
        n=n,
        independent_count=len(independents),
        downward_closed=down_ok,
        exchange=exch_ok,
        rank_monotone=monotone,
        rank_cardinality_bounded=bounded,
        rank_submodular=submodular,
        failures=failures,
    )


def _family_rank(mask: int, independents: list[int]) -> int:
    return max((i.bit_count() for i in independents if not i & ~mask), default=0)


# ---------------------------------------------------------------------------
# JSON descriptors
# ---------------------------------------------------------------------------

# Field names follow schemas/matroid_descriptor.schema.json.


def matroid_from_descriptor(desc: dict) -> Matroid:
    """Build a matroid from its JSON descriptor (see the schema file)."""
    try:
        family = desc["family"]
    except (TypeError, KeyError):
        raise ValueError("matroid descriptor must be an object with a 'family' field")
    if family == "uniform":
        return UniformMatroid(int(desc["k"]), int(desc["n"]))
    if family == "partition":
        return PartitionMatroid(desc["blocks"], [int(c) for c in desc["capacities"]])
    if family == "graphic":
        return GraphicMatroid(
            int(desc["n_vertices"]), [tuple(e) for e in desc["edges"]]
        )
    if family == "laminar":
        return LaminarMatroid(
            int(desc["n"]), desc["sets"], [int(c) for c in desc["capacities"]]
        )
    if family == "explicit":
        return ExplicitMatroid(int(desc["n"]), desc["independent"])
    raise ValueError(f"unknown matroid family {family!r}")


def random_explicit_matroid(rng: np.random.Generator, n: int) -> ExplicitMatroid:
    """Random explicit matroid on n <= 8 elements.

    Draws a random structured matroid (uniform, partition, graphic or
    laminar), enumerates its independent sets and relabels the elements
    with a random permutation, so the result carries no family structure.
    """
    if n > 8:
        raise ValueError("random explicit matroids are kept at n <= 8")
    kind = rng.integers(4)
    if kind == 0:
        base: Matroid = UniformMatroid(int(rng.integers(0, n + 1)), n)
    elif kind == 1:
        ids = list(range(n))
        cut = int(rng.integers(1, n)) if n > 1 else 1
        blocks = [ids[:cut], ids[cut:]] if cut < n else [ids]
        caps = [int(rng.integers(1, len(b) + 1)) for b in blocks]
        base = PartitionMatroid(blocks, caps)
    elif kind == 2:
        n_vertices = int(rng.integers(2, max(3, n)))
        edges = [
            (int(rng.integers(n_vertices)), int(rng.integers(n_vertices)))
            for _ in range(n)
        ]
        base = GraphicMatroid(n_vertices, edges)
    else:
        ids = list(range(n))
        inner = ids[: max(1, n // 2)]
        base = LaminarMatroid(
            n,
            [ids, inner],
            [int(rng.integers(1, n + 1)), int(rng.integers(1, len(inner) + 1))],
        )
    independents = [s for s in submasks(base.ground_mask) if base.is_independent(s)]
    perm = rng.permutation(n)
    relabeled = [mask_of(int(perm[e]) for e in iter_ids(s)) for s in independents]
    return ExplicitMatroid(n, [ids_of(s) for s in relabeled])
