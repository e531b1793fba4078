"""Executable checks of the scheme's probabilistic guarantees.

Each ``verify_*`` function runs Monte Carlo trials of the construction it
targets, measures the quantity the corresponding guarantee bounds, and
compares against the bound with an explicit tolerance: 3 standard errors
per check, Bonferroni-adjusted when one verdict aggregates several
per-element checks.

``brute_force_T_alpha`` is different: it is an exact oracle.  Marginals
are treated as exact rationals, expectations are integer sums over all
2^n realizations, and the reported inequalities hold with no tolerance.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .bitset import ids_of, iter_ids, submasks
from .chains import BuildTrace, LinkParams, ParamOverrides, ocrs_chain, single_ocrs_link
from .matroids import Matroid
from .sampling import (
    EXACT_ENUM_MAX,
    RngStream,
    as_marginals,
    in_scaled_polytope,
    realization_weights,
    sample_active_set,
)
from .stats import binomial_stderr, bonferroni_z

T_ALPHA_MAX = 12


# ---------------------------------------------------------------------------
# Verdict containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VerifyCheck:
    """One measured-vs-bound comparison with its tolerance."""

    name: str
    measured: float
    bound: float
    tolerance: float
    direction: str  # "<=" or ">="

    @property
    def passed(self) -> bool:
        if self.direction == "<=":
            return self.measured <= self.bound + self.tolerance
        return self.measured >= self.bound - self.tolerance


@dataclass(frozen=True)
class VerifyReport:
    kind: str
    checks: tuple[VerifyCheck, ...]
    meta: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_jsonable(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "checks": [
                {
                    "name": c.name,
                    "measured": c.measured,
                    "bound": c.bound,
                    "tolerance": c.tolerance,
                    "direction": c.direction,
                    "passed": c.passed,
                }
                for c in self.checks
            ],
            "meta": self.meta,
        }


# ---------------------------------------------------------------------------
# Good/bad classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GoodBadVerdict:
    element: int
    status: str  # "member" | "good" | "bad"
    spanning_probability: float | None


def _spanning_probabilities(m: Matroid, x: np.ndarray, a_mask: int) -> np.ndarray:
    """Pr[e ∈ span(A ∪ R(x))] for every universe element, exactly."""
    w = realization_weights(x)
    lookup = m.span_lookup()
    idx = np.arange(len(w), dtype=np.int64)
    spans = lookup(idx | np.int64(a_mask))
    probs = np.zeros(m.n_universe)
    for e in iter_ids(m.ground_mask):
        probs[e] = float(w @ ((spans >> np.int64(e)) & 1))
    return probs


def classify_element(
    m: Matroid,
    x: np.ndarray,
    a_mask: int,
    tau: float,
    e: int,
    mode: str = "exact",
    mc_trials: int | None = None,
    rng: np.random.Generator | None = None,
) -> GoodBadVerdict:
    """Good/bad status of e for the set A: members of A are neither; others
    are bad iff Pr[e ∈ span(A ∪ R(x))] > tau."""
    if not (m.ground_mask >> e) & 1:
        raise ValueError(f"element {e} is outside the ground set")
    if (a_mask >> e) & 1:
        return GoodBadVerdict(e, "member", None)
    if mode == "exact":
        if m.n_universe > EXACT_ENUM_MAX:
            raise ValueError("exact classification is limited to n <= 20")
        p = float(_spanning_probabilities(m, as_marginals(x), a_mask)[e])
    elif mode == "mc":
        if not mc_trials or rng is None:
            raise ValueError("mc mode needs mc_trials and rng")
        hits = 0
        for _ in range(mc_trials):
            r = sample_active_set(as_marginals(x), rng)
            if (m.span((a_mask | r) & m.ground_mask) >> e) & 1:
                hits += 1
        p = hits / mc_trials
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return GoodBadVerdict(e, "bad" if p > tau else "good", p)


# ---------------------------------------------------------------------------
# Monte Carlo guarantee checks
# ---------------------------------------------------------------------------

LinkBuilder = Callable[..., tuple[int, object]]


def verify_in_link_loss(
    m: Matroid,
    x: np.ndarray,
    rho: int,
    tau: float,
    eps: float,
    trials: int,
    seed_stream: RngStream,
    builder: LinkBuilder = single_ocrs_link,
    overrides: ParamOverrides | None = None,
) -> VerifyReport:
    """Check: Pr[e bad] <= eps * Pr[e good] + 2 eps^3 / ln(rho), per element.

    Builds the link with threshold (1-eps)*tau over `trials` runs and
    classifies every element exactly against the unscaled tau.  The
    ``builder`` hook lets tests inject a deliberately broken link builder,
    which must drive this check to a fail verdict.
    """
    if rho < 3:
        raise ValueError("rho must be at least 3")
    if not 0.0 < eps <= tau:
        raise ValueError("need 0 < eps <= tau")
    x = as_marginals(x)
    params = LinkParams.from_formula(rho, (1.0 - eps) * tau, eps, overrides)
    ids = ids_of(m.ground_mask)
    probs_cache: dict[int, np.ndarray] = {}
    bad = np.zeros((trials, len(ids)), dtype=bool)
    good = np.zeros((trials, len(ids)), dtype=bool)
    for t in range(trials):
        rng = seed_stream.substream(t).generator()
        a_mask, _ = builder(m, x, params, rng)
        if a_mask not in probs_cache:
            probs_cache[a_mask] = _spanning_probabilities(m, x, a_mask)
        probs = probs_cache[a_mask]
        for j, e in enumerate(ids):
            if (a_mask >> e) & 1:
                continue
            if probs[e] > tau:
                bad[t, j] = True
            else:
                good[t, j] = True
    # per-trial statistic whose mean the guarantee bounds
    vals = bad.astype(float) - eps * good.astype(float)
    z = bonferroni_z(len(ids))
    additive = 2.0 * eps**3 / math.log(rho)
    checks = []
    for j, e in enumerate(ids):
        mean = float(vals[:, j].mean())
        sigma = float(vals[:, j].std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
        checks.append(
            VerifyCheck(
                name=f"element-{e}",
                measured=mean,
                bound=additive,
                tolerance=z * sigma,
                direction="<=",
            )
        )
    meta = {
        "rho": rho,
        "tau": tau,
        "eps": eps,
        "trials": trials,
        "seed": seed_stream.seed,
        "q": params.q,
        "eta": params.eta,
        "bad_rate": {str(e): float(bad[:, j].mean()) for j, e in enumerate(ids)},
        "good_rate": {str(e): float(good[:, j].mean()) for j, e in enumerate(ids)},
    }
    return VerifyReport(kind="in-link-loss", checks=tuple(checks), meta=meta)


def verify_progress(
    m: Matroid,
    x: np.ndarray,
    lam: float,
    rho: int,
    tau: float,
    eps: float,
    trials: int,
    seed_stream: RngStream,
    overrides: ParamOverrides | None = None,
) -> VerifyReport:
    """Check: E[rank(A)] <= (1 + lambda - (1-3 eps) tau) * rank(M)."""
    if not lam < tau <= 1.0:
        raise ValueError("need lambda < tau <= 1")
    x = as_marginals(x)
    if m.n_universe <= EXACT_ENUM_MAX and not in_scaled_polytope(m, x, lam):
        raise ValueError("marginals are not in lambda * P_M")
    params = LinkParams.from_formula(rho, (1.0 - eps) * tau, eps, overrides)
    ranks = np.zeros(trials)
    for t in range(trials):
        rng = seed_stream.substream(t).generator()
        a_mask, _ = single_ocrs_link(m, x, params, rng)
        ranks[t] = m.rank(a_mask)
    bound = (1.0 + lam - (1.0 - 3.0 * eps) * tau) * m.full_rank()
    sigma = float(ranks.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    check = VerifyCheck(
        name="mean-rank", measured=float(ranks.mean()), bound=bound,
        tolerance=3.0 * sigma, direction="<=",
    )
    meta = {
        "lambda": lam, "rho": rho, "tau": tau, "eps": eps, "trials": trials,
        "seed": seed_stream.seed, "rank": m.full_rank(), "q": params.q,
    }
    return VerifyReport(kind="progress", checks=(check,), meta=meta)


def verify_spanning(
    m: Matroid,
    x: np.ndarray,
    lam: float,
    eps: float,
    trials: int,
    seed_stream: RngStream,
    overrides: ParamOverrides | None = None,
) -> VerifyReport:
    """Check: the second-to-last chain link C_zeta is empty w.p. >= 1 - eps."""
    _check_chain_params(lam, eps)
    x = as_marginals(x)
    if m.n_universe <= EXACT_ENUM_MAX and not in_scaled_polytope(m, x, lam):
        raise ValueError("marginals are not in lambda * P_M")
    empty = 0
    for t in range(trials):
        rng = seed_stream.substream(t).generator()
        chain, trace = ocrs_chain(m, x, lam + 4.0 * eps, eps, rng, overrides)
        if chain.links[trace.zeta] == 0:
            empty += 1
    frac = empty / trials
    sigma = binomial_stderr(frac, trials)
    check = VerifyCheck(
        name="spanning-fraction", measured=frac, bound=1.0 - eps,
        tolerance=3.0 * sigma, direction=">=",
    )
    meta = {"lambda": lam, "eps": eps, "trials": trials, "seed": seed_stream.seed}
    return VerifyReport(kind="spanning", checks=(check,), meta=meta)


def verify_freeness_likely(
    m: Matroid,
    x: np.ndarray,
    lam: float,
    eps: float,
    trials: int,
    seed_stream: RngStream,
    overrides: ParamOverrides | None = None,
) -> VerifyReport:
    """Check: Pr[freeness >= 1-lambda-4 eps | e not in C_zeta]
    >= 1 - eps - 2 eps / Pr[e not in C_zeta], per element."""
    _check_chain_params(lam, eps)
    x = as_marginals(x)
    if m.n_universe > EXACT_ENUM_MAX:
        raise ValueError("exact freeness needs n <= 20")
    if not in_scaled_polytope(m, x, lam):
        raise ValueError("marginals are not in lambda * P_M")
    from .chains import chain_freeness

    ids = ids_of(m.ground_mask)
    notin = np.zeros((trials, len(ids)), dtype=bool)
    high = np.zeros((trials, len(ids)), dtype=bool)
    level = 1.0 - lam - 4.0 * eps
    cache: dict[tuple[int, int, int], float] = {}
    for t in range(trials):
        rng = seed_stream.substream(t).generator()
        chain, trace = ocrs_chain(m, x, lam + 4.0 * eps, eps, rng, overrides)
        c_zeta = chain.links[trace.zeta]
        for j, e in enumerate(ids):
            if (c_zeta >> e) & 1:
                continue
            notin[t, j] = True
            i = chain.level_of(e)
            key = (chain.links[i], chain.links[i + 1], e)
            if key not in cache:
                cache[key] = chain_freeness(m, x, chain, e, mode="exact")
            high[t, j] = cache[key] >= level - 1e-12
    z = bonferroni_z(len(ids))
    checks = []
    for j, e in enumerate(ids):
        denom = int(notin[:, j].sum())
        if denom == 0:
            checks.append(
                VerifyCheck(name=f"element-{e}", measured=1.0, bound=0.0,
                            tolerance=0.0, direction=">=")
            )
            continue
        p_notin = denom / trials
        cond = int((high[:, j] & notin[:, j]).sum()) / denom
        sigma = binomial_stderr(cond, denom)
        checks.append(
            VerifyCheck(
                name=f"element-{e}",
                measured=cond,
                bound=1.0 - eps - 2.0 * eps / p_notin,
                tolerance=z * sigma,
                direction=">=",
            )
        )
    meta = {"lambda": lam, "eps": eps, "trials": trials, "seed": seed_stream.seed,
            "freeness_level": level}
    return VerifyReport(kind="freeness-likely", checks=tuple(checks), meta=meta)


def _check_chain_params(lam: float, eps: float) -> None:
    if not 0.0 < eps <= 0.05:
        raise ValueError(f"eps must lie in (0, 1/20], got {eps}")
    if not 0.0 < lam <= 1.0 - 4.0 * eps:
        raise ValueError(f"lambda must lie in (0, 1-4*eps], got {lam}")


# ---------------------------------------------------------------------------
# Exact T_alpha oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TAlphaResult:
    """Exact maximizer of r(T|B) - E[r(T|B ∪ R(x))]/(1-alpha) over T ⊇ B."""

    b_mask: int
    alpha: Fraction
    t_mask: int
    objective: Fraction

    def to_jsonable(self) -> dict:
        return {
            "B": ids_of(self.b_mask),
            "alpha": [self.alpha.numerator, self.alpha.denominator],
            "T": ids_of(self.t_mask),
            "objective": float(self.objective),
        }


def _exact_weights(m: Matroid, x) -> tuple[list[int], list[int], int]:
    """Realization masks over the ground set with exact integer weights.

    Returns (masks, numerators, denominator) with sum(numerators) == denominator.
    """
    xs = [Fraction(v) for v in x]
    if len(xs) != m.n_universe:
        raise ValueError("marginal vector length must match the universe size")
    for e, v in enumerate(xs):
        if not 0 <= v <= 1:
            raise ValueError("marginal probabilities must lie in [0, 1]")
        if v > 0 and not (m.ground_mask >> e) & 1:
            raise ValueError(f"positive marginal outside the ground set: {e}")
    g_ids = ids_of(m.ground_mask)
    denom = math.prod(xs[e].denominator for e in g_ids)
    masks = [0]
    nums = [denom]
    for e in g_ids:
        a, d = xs[e].numerator, xs[e].denominator
        on = [(n * a) // d for n in nums]
        off = [(n * (d - a)) // d for n in nums]
        bit = 1 << e
        masks = masks + [mk | bit for mk in masks]
        nums = off + on
    return masks, nums, denom


def brute_force_T_alpha(m: Matroid, x, b_mask: int, alpha) -> TAlphaResult:
    """Exhaustive T_alpha(B) with exact rational expectations.

    Ties are broken toward the smallest cardinality, then the numerically
    smallest mask.  Limited to n <= 12; cost is 2^n candidates times 2^n
    realizations (integer arithmetic throughout).
    """
    if m.n_universe > T_ALPHA_MAX:
        raise ValueError(f"T_alpha brute force is limited to n <= {T_ALPHA_MAX}")
    if b_mask & ~m.ground_mask:
        raise ValueError("B must be a subset of the ground set")
    alpha = Fraction(alpha)
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    masks, nums, denom = _exact_weights(m, x)
    rank_t = [int(v) for v in m.rank_table()]
    a_num, a_den = alpha.numerator, alpha.denominator
    # score(T) = (a_den - a_num) * denom * r(T|B)  -  a_den * sum_R num_R * r(T | B ∪ R)
    # is the objective scaled by the positive constant (1-alpha)^{-1}-free
    # factor (a_den - a_num) * denom, so argmax is unchanged.
    r_b = rank_t[b_mask]
    r_b_or_r = [rank_t[b_mask | r] for r in masks]
    free = m.ground_mask & ~b_mask
    best_score = None
    best = b_mask
    for sub in submasks(free):
        t_mask = b_mask | sub
        e_num = 0
        r_t = rank_t[t_mask]
        for r_mask, n_r, rbr in zip(masks, nums, r_b_or_r):
            e_num += n_r * (rank_t[t_mask | r_mask] - rbr)
        score = (a_den - a_num) * denom * (r_t - r_b) - a_den * e_num
        key = (-score, t_mask.bit_count(), tuple(ids_of(t_mask)))
        if best_score is None or key < best_score:
            best_score = key
            best = t_mask
    e_num_best = sum(
        n_r * (rank_t[best | r_mask] - rbr)
        for r_mask, n_r, rbr in zip(masks, nums, r_b_or_r)
    )
    objective = Fraction(rank_t[best] - r_b) - Fraction(e_num_best, denom) / (1 - alpha)
    return TAlphaResult(b_mask=b_mask, alpha=alpha, t_mask=best, objective=objective)


def t_alpha_bullets_hold(
    m: Matroid, x, result: TAlphaResult, q_mask: int | None = None
) -> tuple[bool, bool | None]:
    """Exact check of the two guarantees of the T_alpha extension.

    First: E[r(T | B ∪ R)] <= (1-alpha) * r(T | B).
    Second (for a given Q disjoint from T):
    E[r(Q ∩ span(T ∪ R) | T)] <= alpha * r(Q | T).
    """
    masks, nums, denom = _exact_weights(m, x)
    rank_t = [int(v) for v in m.rank_table()]
    span_t = m._dense_tables()[1]
    a_num, a_den = result.alpha.numerator, result.alpha.denominator
    b, t = result.b_mask, result.t_mask
    lhs1 = sum(
        n_r * (rank_t[t | r_mask] - rank_t[b | r_mask])
        for r_mask, n_r in zip(masks, nums)
    )
    first = a_den * lhs1 <= (a_den - a_num) * denom * (rank_t[t] - rank_t[b])
    if q_mask is None:
        return first, None
    if q_mask & t:
        raise ValueError("Q must be disjoint from T")
    r_t = rank_t[t]
    lhs2 = sum(
        n_r * (rank_t[(q_mask & int(span_t[t | r_mask])) | t] - r_t)
        for r_mask, n_r in zip(masks, nums)
    )
    second = a_den * lhs2 <= a_num * denom * (rank_t[q_mask | t] - r_t)
    return first, second


def verify_t_alpha(
    m: Matroid,
    x,
    b_mask: int,
    alpha,
    q_trials: int,
    rng: np.random.Generator,
) -> VerifyReport:
    """Build T_alpha(B) and check both guarantees, the second over random Q."""
    result = brute_force_T_alpha(m, x, b_mask, alpha)
    first, _ = t_alpha_bullets_hold(m, x, result)
    checks = [
        VerifyCheck(
            name="contains-B",
            measured=float((result.t_mask & result.b_mask) == result.b_mask),
            bound=1.0, tolerance=0.0, direction=">=",
        ),
        VerifyCheck(name="rank-drop", measured=0.0 if first else 1.0,
                    bound=0.0, tolerance=0.0, direction="<="),
    ]
    outside = m.ground_mask & ~result.t_mask
    out_ids = ids_of(outside)
    failures = 0
    for _ in range(q_trials):
        q_mask = 0
        for e in out_ids:
            if rng.random() < 0.5:
                q_mask |= 1 << e
        _, second = t_alpha_bullets_hold(m, x, result, q_mask)
        if not second:
            failures += 1
    checks.append(
        VerifyCheck(name="overlap-bound-failures", measured=float(failures),
                    bound=0.0, tolerance=0.0, direction="<=")
    )
    meta = {
        "alpha": float(result.alpha),
        "B": ids_of(b_mask),
        "T": ids_of(result.t_mask),
        "q_trials": q_trials,
    }
    return VerifyReport(kind="t-alpha", checks=tuple(checks), meta=meta)


# ---------------------------------------------------------------------------
# Sample-complexity audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditRow:
    rho: int
    runs: int
    mean_draws: float
    max_draws: int
    draw_bound: int
    bound_ok: bool
    reference: float
    ratio: float


@dataclass(frozen=True)
class AuditTable:
    rows: tuple[AuditRow, ...]
    band: float | None
    band_limit: float = 4.0

    @property
    def band_ok(self) -> bool | None:
        if self.band is None:
            return None
        return self.band <= self.band_limit

    @property
    def bounds_ok(self) -> bool:
        return all(r.bound_ok for r in self.rows)

    def to_jsonable(self) -> dict:
        return {
            "rows": [
                {
                    "rho": r.rho, "runs": r.runs, "mean_draws": r.mean_draws,
                    "max_draws": r.max_draws, "draw_bound": r.draw_bound,
                    "bound_ok": r.bound_ok, "reference": r.reference, "ratio": r.ratio,
                }
                for r in self.rows
            ],
            "band": self.band,
            "band_limit": self.band_limit,
            "band_ok": self.band_ok,
            "bounds_ok": self.bounds_ok,
        }


def sample_complexity_audit(traces: list[BuildTrace]) -> AuditTable:
    """Tabulate draw counts against the zeta*eta*q ceiling and the
    log(rho) * log(log(rho))^2 reference curve, grouped by rho.

    Only conforming traces are admissible; the ratio band across rho values
    is reported for comparison against the expected scaling shape.
    """
    for tr in traces:
        if not tr.conforming:
            raise ValueError("audit requires conforming (non-overridden) traces")
    by_rho: dict[int, list[BuildTrace]] = {}
    for tr in traces:
        by_rho.setdefault(tr.rho, []).append(tr)
    rows = []
    for rho in sorted(by_rho):
        group = by_rho[rho]
        draws = [tr.draw_count for tr in group]
        bound = group[0].draw_bound
        ref = math.log(rho) * math.log(math.log(rho)) ** 2
        mean_draws = sum(draws) / len(draws)
        rows.append(
            AuditRow(
                rho=rho,
                runs=len(group),
                mean_draws=mean_draws,
                max_draws=max(draws),
                draw_bound=bound,
                bound_ok=all(tr.draw_count <= tr.draw_bound for tr in group),
                reference=ref,
                ratio=mean_draws / ref,
            )
        )
    band = None
    if len(rows) >= 2:
        ratios = [r.ratio for r in rows]
        band = max(ratios) / min(ratios)
    return AuditTable(rows=tuple(rows), band=band)
