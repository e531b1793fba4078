"""Spanning-chain construction from samples.

The sample-based link builder estimates, from q fresh activation samples
per iteration, which elements are likely to be spanned, and truncates the
iteration after a randomized number of steps h̄ drawn from a geometric-like
law on {1, ..., η}.  Iterating the link builder over nested restrictions
yields a spanning chain N = C_0 ⊇ C_1 ⊇ ... ⊇ C_{ζ+1} = ∅.

Only the per-element spanning *counts* over the q samples enter a link
decision, so on small supports the counts are drawn directly from the
corresponding multinomial law instead of materializing every sample; the
resulting output distribution is identical and the draw accounting is
unchanged.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .bitset import ids_of, iter_ids
from .matroids import Matroid
from .sampling import as_marginals, realization_weights, sample_active_set

#: Support size up to which link counts are drawn from the exact multinomial.
MULTINOMIAL_MAX_SUPPORT = 12


# ---------------------------------------------------------------------------
# Truncation distribution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncationDistribution:
    """Law of the randomized iteration cutoff h̄ on {1, ..., eta}.

    Pr[h̄=1] = (1+eps)^(1-eta) and Pr[h̄=h] = eps * Pr[h̄<h] for h >= 2,
    equivalently Pr[h̄<=h] = (1+eps) * Pr[h̄<=h-1].
    """

    eps: float
    rho: int
    eta: int
    pmf: np.ndarray
    _cdf: np.ndarray = field(repr=False)

    def sample(self, rng: np.random.Generator) -> int:
        """Draw h̄; deterministic given the generator state."""
        u = rng.random()
        idx = int(np.searchsorted(self._cdf, u, side="right"))
        return min(idx + 1, self.eta)

    def mean(self) -> float:
        return float(np.dot(self.pmf, np.arange(1, self.eta + 1)))


def formula_eta(eps: float, rho: int) -> int:
    """eta = ceil(1 + log_{1+eps}(ln(rho) / eps^3)), nudged up if float
    rounding ever left Pr[h̄=1] above eps^3/ln(rho)."""
    eta = math.ceil(1.0 + math.log(math.log(rho) / eps**3) / math.log1p(eps))
    while (1.0 + eps) ** (-(eta - 1)) > eps**3 / math.log(rho):
        eta += 1
    return eta


@lru_cache(maxsize=64)
def _truncation_cached(eps: float, rho: int, eta: int) -> TruncationDistribution:
    pmf = np.empty(eta, dtype=np.float64)
    pmf[0] = (1.0 + eps) ** (-(eta - 1))
    # Pr[h̄=h] = eps * Pr[h̄<h] and Pr[h̄<h] = (1+eps)^(h-1-eta) telescope.
    for h in range(2, eta + 1):
        pmf[h - 1] = eps * (1.0 + eps) ** (h - 1 - eta)
    return TruncationDistribution(eps=eps, rho=rho, eta=eta, pmf=pmf, _cdf=np.cumsum(pmf))


def truncation_distribution(
    eps: float, rho: int, eta: int | None = None
) -> TruncationDistribution:
    """Build the cutoff law; ``eta`` may be overridden for smoke runs."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if rho < 3:
        raise ValueError(f"rho must be at least 3, got {rho}")
    if eta is None:
        eta = formula_eta(eps, rho)
    if eta < 1:
        raise ValueError(f"eta must be positive, got {eta}")
    return _truncation_cached(eps, rho, eta)


# ---------------------------------------------------------------------------
# Link parameters and traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamOverrides:
    """Optional q/eta/zeta substitutes for fast non-conforming smoke runs."""

    q: int | None = None
    eta: int | None = None
    zeta: int | None = None

    @property
    def any_set(self) -> bool:
        return self.q is not None or self.eta is not None or self.zeta is not None


@dataclass(frozen=True)
class LinkParams:
    """Parameters of one link build.

    ``threshold`` is used verbatim in the strict comparison P̂r[...] >
    threshold; callers that follow the chain recipe pass (1-eps)*tau here.
    ``q`` and ``eta`` default to their formula values; ``conforming`` is
    False whenever either was overridden.
    """

    rho: int
    threshold: float
    eps: float
    q: int
    eta: int
    conforming: bool = True

    def __post_init__(self):
        if self.rho < 3:
            raise ValueError(f"rho must be at least 3, got {self.rho}")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in (0, 1], got {self.threshold}")
        if not 0.0 < self.eps <= 0.05:
            raise ValueError(f"eps must lie in (0, 1/20], got {self.eps}")
        if self.q < 1 or self.eta < 1:
            raise ValueError("q and eta must be positive")

    @classmethod
    def from_formula(
        cls,
        rho: int,
        threshold: float,
        eps: float,
        overrides: ParamOverrides | None = None,
    ) -> "LinkParams":
        """q = ceil(6/(threshold*eps^2) * ln(ln(rho)/eps)), eta per formula_eta."""
        if rho < 3:
            raise ValueError(f"rho must be at least 3, got {rho}")
        if not 0.0 < threshold <= 1.0:
            raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
        q = math.ceil(6.0 / (threshold * eps**2) * math.log(math.log(rho) / eps))
        eta = formula_eta(eps, rho)
        conforming = True
        if overrides is not None:
            if overrides.q is not None:
                q, conforming = overrides.q, False
            if overrides.eta is not None:
                eta, conforming = overrides.eta, False
        return cls(rho=rho, threshold=threshold, eps=eps, q=q, eta=eta, conforming=conforming)


@dataclass(frozen=True)
class LinkTrace:
    """Record of one link build: cutoff, intermediate sets, draws used."""

    h_bar: int
    a_sets: tuple[int, ...]
    draws: int
    ground_mask: int


@dataclass(frozen=True)
class BuildTrace:
    """Aggregate record of a chain build."""

    rho: int
    zeta: int
    q: int
    eta: int
    threshold: float
    eps: float
    conforming: bool
    link_traces: tuple[LinkTrace, ...]

    @property
    def draw_count(self) -> int:
        return sum(lt.draws for lt in self.link_traces)

    @property
    def draw_bound(self) -> int:
        """Hard ceiling zeta * eta * q on the draw count."""
        return self.zeta * self.eta * self.q


# ---------------------------------------------------------------------------
# Spanning chains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpanningChain:
    """Nested links C_0 ⊇ C_1 ⊇ ... ⊇ C_k = ∅ as bitmasks."""

    links: tuple[int, ...]

    def __post_init__(self):
        if len(self.links) < 2:
            raise ValueError("a spanning chain needs at least (N, ∅)")
        if self.links[-1] != 0:
            raise ValueError("the final link must be empty")
        for a, b in zip(self.links, self.links[1:]):
            if b & ~a:
                raise ValueError("chain links must be nested")

    def __len__(self) -> int:
        return len(self.links)

    @property
    def ground_mask(self) -> int:
        return self.links[0]

    def level_of(self, e: int) -> int:
        """The unique i with e ∈ C_i \\ C_{i+1} (the highest index holding e)."""
        bit = 1 << e
        if not self.links[0] & bit:
            raise ValueError(f"element {e} is not in the chain's ground set")
        for i in range(len(self.links) - 2, -1, -1):
            if self.links[i] & bit:
                return i
        raise AssertionError("unreachable: element in C_0 has a level")

    def to_jsonable(self) -> list[list[int]]:
        return [ids_of(c) for c in self.links]


# ---------------------------------------------------------------------------
# Span-count estimation over q samples
# ---------------------------------------------------------------------------


class _SpanCountEstimator:
    """Per-iteration estimator of |{p : e ∈ span(A ∪ S_p)}| over q samples.

    The path is fixed per (matroid, marginals) pair at construction:

    * ``empty``       -- no element can activate; counts are q * [e ∈ span(A)].
    * ``multinomial`` -- support <= MULTINOMIAL_MAX_SUPPORT and a dense span
                         table exists: draw outcome counts for the 2^s
                         realizations directly (counts are the sufficient
                         statistic of the q samples).
    * ``uniform``     -- rank is min(|S|, k): spanning only depends on the
                         realized cardinality, vectorized at any n.
    * ``table``       -- materialize q sample rows, classify through the
                         dense span table.
    * ``oracle``      -- per-sample span() calls (correctness fallback).
    """

    def __init__(self, m: Matroid, x: np.ndarray, q: int):
        self.m = m
        self.q = q
        self.ground = m.ground_mask
        self.ground_ids = np.array(ids_of(self.ground), dtype=np.int64)
        x = np.asarray(x, dtype=np.float64)
        if len(x) != m.n_universe:
            raise ValueError("marginal vector length must match the universe size")
        sup_ids = [e for e in iter_ids(self.ground) if x[e] > 0.0]
        self.sup_ids = np.array(sup_ids, dtype=np.int64)
        self.sup_x = x[sup_ids] if sup_ids else np.empty(0)
        self.lookup = m.span_lookup()
        self.cap = m.uniform_cap()
        self._member_cache: dict[int, np.ndarray] = {}
        if not sup_ids:
            self.path = "empty"
        elif len(sup_ids) <= MULTINOMIAL_MAX_SUPPORT and self.lookup is not None:
            self.path = "multinomial"
            masks = np.zeros(1, dtype=np.int64)
            pvals = np.ones(1, dtype=np.float64)
            for e, xe in zip(sup_ids, self.sup_x):
                masks = np.concatenate([masks, masks | np.int64(1 << e)])
                pvals = np.concatenate([pvals * (1.0 - xe), pvals * xe])
            self.outcome_masks = masks
            self.pvals = pvals / pvals.sum()
        elif self.cap is not None:
            self.path = "uniform"
        elif self.lookup is not None:
            self.path = "table"
        else:
            self.path = "oracle"

    def next_link_set(self, a_mask: int, threshold: float, rng: np.random.Generator) -> int:
        """A_h from A_{h-1}: elements whose estimated spanning frequency
        over q fresh samples strictly exceeds the threshold."""
        bar = threshold * self.q
        if self.path == "empty":
            if threshold >= 1.0:
                return 0
            return self.m.span(a_mask)
        if self.path == "multinomial":
            cnt = rng.multinomial(self.q, self.pvals)
            member = self._member_cache.get(a_mask)
            if member is None:
                spans = self.lookup(self.outcome_masks | np.int64(a_mask))
                member = (spans[:, None] >> self.ground_ids[None, :]) & 1
                self._member_cache[a_mask] = member
            counts = cnt @ member
        elif self.path == "uniform":
            counts = self._uniform_counts(a_mask, rng)
        elif self.path == "table":
            rows = rng.random((self.q, len(self.sup_ids))) < self.sup_x
            keys = rows.astype(np.int64) @ (np.int64(1) << self.sup_ids)
            spans = self.lookup(keys | np.int64(a_mask))
            counts = (
                ((spans[:, None] >> self.ground_ids[None, :]) & 1).sum(axis=0)
            )
        else:
            counts = self._oracle_counts(a_mask, rng)
        out = 0
        for e, c in zip(self.ground_ids, counts):
            if c > bar:
                out |= 1 << int(e)
        return out

    def _uniform_counts(self, a_mask: int, rng: np.random.Generator) -> np.ndarray:
        rows = rng.random((self.q, len(self.sup_ids))) < self.sup_x
        a_bit = (np.int64(a_mask) >> self.sup_ids) & 1
        outside = a_bit == 0
        extra = rows[:, outside].sum(axis=1)
        full = a_mask.bit_count() + extra >= self.cap
        n_full = int(full.sum())
        sup_counts = rows[~full].sum(axis=0) + n_full
        counts = np.empty(len(self.ground_ids), dtype=np.int64)
        sup_pos = {int(e): i for i, e in enumerate(self.sup_ids)}
        for i, e in enumerate(self.ground_ids):
            e = int(e)
            if (a_mask >> e) & 1:
                counts[i] = self.q
            elif e in sup_pos:
                counts[i] = sup_counts[sup_pos[e]]
            else:
                counts[i] = n_full
        return counts

    def _oracle_counts(self, a_mask: int, rng: np.random.Generator) -> np.ndarray:
        rows = rng.random((self.q, len(self.sup_ids))) < self.sup_x
        counts = np.zeros(len(self.ground_ids), dtype=np.int64)
        pos = {int(e): i for i, e in enumerate(self.ground_ids)}
        pow2 = [1 << int(e) for e in self.sup_ids]
        for row in rows:
            s_mask = 0
            for j in np.flatnonzero(row):
                s_mask |= pow2[j]
            span = self.m.span(a_mask | s_mask)
            for e in iter_ids(span):
                counts[pos[e]] += 1
        return counts


# ---------------------------------------------------------------------------
# Link and chain construction
# ---------------------------------------------------------------------------


def single_ocrs_link(
    m: Matroid,
    x: np.ndarray,
    params: LinkParams,
    rng: np.random.Generator,
) -> tuple[int, LinkTrace]:
    """One sample-based link: randomized-cutoff iteration of span estimates.

    Starting from A_0 = ∅, each iteration h draws q fresh samples and sets

        A_h = {e : P̂r[e ∈ span(A_{h-1} ∪ S)] > params.threshold},

    stopping after h̄ ~ truncation law iterations and returning A_h̄.  The
    threshold is applied verbatim; the (1-eps) safety factor is the
    caller's responsibility.
    """
    trunc = truncation_distribution(params.eps, params.rho, params.eta)
    h_bar = trunc.sample(rng)
    est = _SpanCountEstimator(m, as_marginals(x), params.q)
    a = 0
    if est.path == "empty":
        # No element ever activates, so every estimate is deterministic and
        # the iteration reaches its fixed point span(∅) immediately.
        a = est.next_link_set(0, params.threshold, rng)
        a_sets = [a] * h_bar
    else:
        a_sets = []
        for _ in range(h_bar):
            a = est.next_link_set(a, params.threshold, rng)
            a_sets.append(a)
    return a, LinkTrace(
        h_bar=h_bar, a_sets=tuple(a_sets), draws=h_bar * params.q, ground_mask=m.ground_mask
    )


def ocrs_chain(
    m: Matroid,
    x: np.ndarray,
    tau: float,
    eps: float,
    rng: np.random.Generator,
    overrides: ParamOverrides | None = None,
) -> tuple[SpanningChain, BuildTrace]:
    """Sample a spanning chain by iterating the link builder on restrictions.

    rho = max(rank(M), 3) stays fixed across all links; each link i is built
    on M restricted to C_{i-1} with threshold (1-eps)*tau.  The chain has
    zeta+2 links, with C_0 = N and C_{zeta+1} = ∅ forced.
    """
    if not 0.0 < eps <= 0.05:
        raise ValueError(f"eps must lie in (0, 1/20], got {eps}")
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    rho = max(m.full_rank(), 3)
    zeta = math.ceil(math.log(rho / eps) / eps)
    conforming = True
    if overrides is not None and overrides.zeta is not None:
        zeta, conforming = overrides.zeta, False
    params = LinkParams.from_formula(rho, (1.0 - eps) * tau, eps, overrides)
    conforming = conforming and params.conforming

    links = [m.ground_mask]
    traces: list[LinkTrace] = []
    cur = m.ground_mask
    for _ in range(zeta):
        cur, lt = single_ocrs_link(m.restrict(cur), x, params, rng)
        links.append(cur)
        traces.append(lt)
    links.append(0)
    chain = SpanningChain(tuple(links))
    trace = BuildTrace(
        rho=rho,
        zeta=zeta,
        q=params.q,
        eta=params.eta,
        threshold=params.threshold,
        eps=eps,
        conforming=conforming,
        link_traces=tuple(traces),
    )
    return chain, trace


def minimal_link_construction(m: Matroid, x: np.ndarray, tau: float) -> int:
    """Known-marginals baseline link: fixed point of the exact iteration

        A_i = {e : Pr[e ∈ span((R(x) ∪ A_{i-1}) \\ {e})] > tau}.

    Uses exact probabilities, so it is limited to small ground sets.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    x = as_marginals(x)
    if len(x) != m.n_universe:
        raise ValueError("marginal vector length must match the universe size")
    w = realization_weights(x)
    lookup = m.span_lookup()
    idx = np.arange(len(w), dtype=np.int64)
    a = 0
    while True:
        new = 0
        for e in iter_ids(m.ground_mask):
            bit = np.int64(1 << e)
            spans = lookup((idx | np.int64(a)) & ~bit)
            p = float(w @ ((spans >> np.int64(e)) & 1))
            if p > tau:
                new |= 1 << e
        if new == a:
            return a
        a = new


def chain_freeness(
    m: Matroid,
    x: np.ndarray,
    chain: SpanningChain,
    e: int,
    mode: str = "exact",
    mc_trials: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Pr[e ∉ span(((R(x) \\ {e}) ∩ C_i) ∪ C_{i+1})] at e's level i.

    ``mode="exact"`` enumerates all realizations (n <= 20); ``mode="mc"``
    estimates from ``mc_trials`` samples.
    """
    i = chain.level_of(e)
    ci, ci1 = chain.links[i], chain.links[i + 1]
    x = as_marginals(x)
    if len(x) != m.n_universe:
        raise ValueError("marginal vector length must match the universe size")
    if mode == "exact":
        w = realization_weights(x)
        lookup = m.span_lookup()
        idx = np.arange(len(w), dtype=np.int64)
        t = ((idx & ~np.int64(1 << e)) & np.int64(ci)) | np.int64(ci1)
        free = 1 - ((lookup(t) >> np.int64(e)) & 1)
        return float(w @ free)
    if mode == "mc":
        if not mc_trials or rng is None:
            raise ValueError("mc mode needs mc_trials and rng")
        bit = 1 << e
        hits = 0
        for _ in range(mc_trials):
            r = sample_active_set(x, rng)
            t = ((r & ~bit) & ci) | ci1
            if not (m.span(t) >> e) & 1:
                hits += 1
        return hits / mc_trials
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class BalancednessEstimate:
    """Per-element expected chain-freeness over sampled chains."""

    trials: int
    element_ids: tuple[int, ...]
    means: np.ndarray
    stderrs: np.ndarray

    def minimum(self) -> float:
        return float(self.means.min()) if len(self.means) else 1.0


def balancedness_estimate(
    m: Matroid,
    x: np.ndarray,
    chain_sampler: Callable[[np.random.Generator], SpanningChain],
    trials: int,
    rng: np.random.Generator,
) -> BalancednessEstimate:
    """Mean exact freeness of every element over ``trials`` sampled chains."""
    if trials < 1:
        raise ValueError("at least one trial is required")
    ids = ids_of(m.ground_mask)
    acc = np.zeros((trials, len(ids)), dtype=np.float64)
    cache: dict[tuple[int, int, int], float] = {}
    for t in range(trials):
        chain = chain_sampler(rng)
        for j, e in enumerate(ids):
            i = chain.level_of(e)
            key = (chain.links[i], chain.links[i + 1], e)
            if key not in cache:
                cache[key] = chain_freeness(m, x, chain, e, mode="exact")
            acc[t, j] = cache[key]
    means = acc.mean(axis=0)
    stderrs = acc.std(axis=0, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros(len(ids))
    return BalancednessEstimate(
        trials=trials, element_ids=tuple(ids), means=means, stderrs=stderrs
    )
