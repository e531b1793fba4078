"""Experiment orchestration: JSON config in, JSON (+ CSV) reports out.

Exit codes: 0 success, 1 invalid configuration, 2 verification failure.

Reports are deterministic: every serialized field is fully determined by
the configuration and the seed.  Wall-clock time is therefore not part of
the JSON report; it is printed to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bitset import iter_ids, mask_of
from .chains import ParamOverrides, ocrs_chain
from .matroids import Matroid, UniformMatroid, matroid_from_descriptor
from .sampling import EXACT_ENUM_MAX, RngStream, as_marginals, in_scaled_polytope
from .selection import selectability_experiment
from .verify import (
    sample_complexity_audit,
    verify_freeness_likely,
    verify_in_link_loss,
    verify_progress,
    verify_spanning,
    verify_t_alpha,
)

SCHEMA_VERSION = 1

MODES = (
    "chain",
    "ocrs",
    "verify-inlink",
    "verify-progress",
    "verify-spanning",
    "verify-freeness",
    "verify-talpha",
    "audit",
)


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    matroid: dict | None
    marginal: dict
    lam: float
    eps: float
    tau: float | None
    trials: int
    seed: int
    adversary: str
    overrides: ParamOverrides
    audit: dict = field(default_factory=dict)
    talpha: dict = field(default_factory=dict)

    @property
    def conforming(self) -> bool:
        return not self.overrides.any_set

    def echo(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "matroid": self.matroid,
            "marginal": self.marginal,
            "lambda": self.lam,
            "eps": self.eps,
            "tau": self.tau,
            "trials": self.trials,
            "seed": self.seed,
            "adversary": self.adversary,
            "overrides": {
                "q": self.overrides.q,
                "eta": self.overrides.eta,
                "zeta": self.overrides.zeta,
            },
            "conforming": self.conforming,
            "audit": self.audit,
            "talpha": self.talpha,
        }


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw JSON config object."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    mode = raw.get("mode")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    matroid = raw.get("matroid")
    if mode != "audit" and not isinstance(matroid, dict):
        raise ConfigError("a matroid descriptor is required")
    marginal = raw.get("marginal", {"kind": "basis-indicator-scaled"})
    if not isinstance(marginal, dict) or "kind" not in marginal:
        raise ConfigError("marginal must be an object with a 'kind'")
    try:
        lam = float(raw.get("lambda", 0.5))
        eps = float(raw.get("eps", 0.05))
        trials = int(raw.get("trials", 1))
        seed = int(raw.get("seed", 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric field: {exc}")
    tau = raw.get("tau")
    tau = float(tau) if tau is not None else None
    if not 0.0 < eps <= 0.05:
        raise ConfigError(f"eps must lie in (0, 1/20], got {eps}")
    if mode in ("ocrs", "chain", "verify-spanning", "verify-freeness", "audit"):
        if not 0.0 < lam <= 1.0 - 4.0 * eps:
            raise ConfigError(f"lambda must lie in (0, 1-4*eps], got {lam}")
    if trials < 1:
        raise ConfigError("trials must be positive")
    adversary = raw.get("adversary", "element-last")
    ov = raw.get("overrides", {}) or {}
    if not isinstance(ov, dict) or not set(ov) <= {"q", "eta", "zeta"}:
        raise ConfigError("overrides may only set q, eta, zeta")
    overrides = ParamOverrides(
        q=ov.get("q"), eta=ov.get("eta"), zeta=ov.get("zeta")
    )
    return ExperimentConfig(
        mode=mode,
        matroid=matroid,
        marginal=marginal,
        lam=lam,
        eps=eps,
        tau=tau,
        trials=trials,
        seed=seed,
        adversary=adversary,
        overrides=overrides,
        audit=raw.get("audit", {}),
        talpha=raw.get("talpha", {}),
    )


def generate_marginal(spec: dict, m: Matroid, lam: float) -> np.ndarray:
    """Build the activation marginals and enforce the λ·P_M precondition.

    ``uniform-scaled`` puts λ·rank(M)/n on every ground element,
    ``basis-indicator-scaled`` puts λ on a greedy basis (valid by
    construction at any size), ``custom`` takes explicit values.  Anything
    not valid by construction is brute-force checked, which caps those
    kinds at n <= 20.
    """
    kind = spec.get("kind")
    n = m.n_universe
    x = np.zeros(n)
    if kind == "uniform-scaled":
        level = lam * m.full_rank() / m.ground_mask.bit_count()
        for e in iter_ids(m.ground_mask):
            x[e] = level
    elif kind == "basis-indicator-scaled":
        basis = 0
        for e in iter_ids(m.ground_mask):
            if m.is_independent(basis | (1 << e)):
                basis |= 1 << e
        for e in iter_ids(basis):
            x[e] = lam
        return x  # in lambda * P_M by construction
    elif kind == "custom":
        values = spec.get("values")
        if not isinstance(values, list) or len(values) != n:
            raise ConfigError("custom marginal needs a 'values' list of length n")
        x = as_marginals(values)
    else:
        raise ConfigError(f"unknown marginal kind {kind!r}")
    if n > EXACT_ENUM_MAX:
        raise ConfigError(
            "cannot verify the polytope precondition beyond n=20; "
            "use basis-indicator-scaled"
        )
    if not in_scaled_polytope(m, x, lam):
        raise ConfigError("marginals are not in lambda * P_M")
    return x


@dataclass
class ExperimentReport:
    """Full experiment record; wall-clock stays out of the serialized form."""

    config: dict
    results: dict
    verdicts: list
    wall_clock_seconds: float | None = None

    def to_jsonable(self) -> dict:
        return _plain({
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "results": self.results,
            "verdicts": self.verdicts,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_jsonable(), indent=2, sort_keys=True) + "\n"


def _plain(obj):
    """Recursively convert numpy scalars/arrays for JSON serialization."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    return obj


def run(config: ExperimentConfig, threads: int = 1) -> tuple[ExperimentReport, int]:
    """Dispatch one experiment; returns (report, exit_code)."""
    t0 = time.monotonic()
    if config.mode == "audit":
        report, code = _run_audit(config)
    else:
        m = matroid_from_descriptor(config.matroid)
        x = generate_marginal(config.marginal, m, config.lam)
        runner = {
            "chain": _run_chain,
            "ocrs": _run_ocrs,
            "verify-inlink": _run_verify_inlink,
            "verify-progress": _run_verify_progress,
            "verify-spanning": _run_verify_spanning,
            "verify-freeness": _run_verify_freeness,
            "verify-talpha": _run_verify_talpha,
        }[config.mode]
        report, code = runner(config, m, x, threads)
    report.wall_clock_seconds = time.monotonic() - t0
    return report, code


def _stream(config: ExperimentConfig) -> RngStream:
    return RngStream(config.seed)


def _chain_tau(config: ExperimentConfig) -> float:
    return config.tau if config.tau is not None else config.lam + 4.0 * config.eps


def _run_chain(config, m, x, threads):
    tau = _chain_tau(config)
    per_trial = []
    total_draws = 0
    empty_final = 0
    for t in range(config.trials):
        rng = _stream(config).substream(t).generator()
        chain, trace = ocrs_chain(m, x, tau, config.eps, rng, config.overrides)
        total_draws += trace.draw_count
        c_zeta = chain.links[trace.zeta]
        empty_final += c_zeta == 0
        per_trial.append(
            {
                "links": chain.to_jsonable(),
                "link_sizes": [c.bit_count() for c in chain.links],
                "draw_count": trace.draw_count,
                "h_bars": [lt.h_bar for lt in trace.link_traces],
            }
        )
    results = {
        "tau": tau,
        "trials": config.trials,
        "c_zeta_empty_rate": empty_final / config.trials,
        "total_draw_count": total_draws,
        "per_trial": per_trial,
    }
    return ExperimentReport(config.echo(), results, []), 0


def _run_ocrs(config, m, x, threads):
    report = selectability_experiment(
        m,
        x,
        config.lam,
        config.eps,
        config.trials,
        config.adversary,
        _stream(config),
        config.overrides if config.overrides.any_set else None,
        threads=threads,
    )
    results = report.to_jsonable()
    results["floor_holds"] = report.floor_holds()
    results["quarter_minus_eps"] = 0.25 - config.eps
    return ExperimentReport(config.echo(), results, []), 0


def _verify_common(config, verdict) -> tuple[ExperimentReport, int]:
    report = ExperimentReport(config.echo(), {}, [verdict.to_jsonable()])
    return report, 0 if verdict.passed else 2


def _run_verify_inlink(config, m, x, threads):
    rho = max(m.full_rank(), 3)
    tau = _chain_tau(config)
    verdict = verify_in_link_loss(
        m, x, rho, tau, config.eps, config.trials, _stream(config),
        overrides=config.overrides if config.overrides.any_set else None,
    )
    return _verify_common(config, verdict)


def _run_verify_progress(config, m, x, threads):
    rho = max(m.full_rank(), 3)
    tau = _chain_tau(config)
    verdict = verify_progress(
        m, x, config.lam, rho, tau, config.eps, config.trials, _stream(config),
        overrides=config.overrides if config.overrides.any_set else None,
    )
    return _verify_common(config, verdict)


def _run_verify_spanning(config, m, x, threads):
    verdict = verify_spanning(
        m, x, config.lam, config.eps, config.trials, _stream(config),
        overrides=config.overrides if config.overrides.any_set else None,
    )
    return _verify_common(config, verdict)


def _run_verify_freeness(config, m, x, threads):
    verdict = verify_freeness_likely(
        m, x, config.lam, config.eps, config.trials, _stream(config),
        overrides=config.overrides if config.overrides.any_set else None,
    )
    return _verify_common(config, verdict)


def _run_verify_talpha(config, m, x, threads):
    opts = config.talpha
    alpha = opts.get("alpha")
    if alpha is None:
        tau = _chain_tau(config)
        alpha = tau * (1.0 - 2.0 * config.eps)
    elif isinstance(alpha, list):
        from fractions import Fraction

        alpha = Fraction(int(alpha[0]), int(alpha[1]))
    b_mask = mask_of(opts.get("b", []))
    rng = _stream(config).substream(0).generator()
    verdict = verify_t_alpha(m, x, b_mask, alpha, int(opts.get("q_trials", 100)), rng)
    verdict.meta["seed"] = config.seed
    return _verify_common(config, verdict)


def _run_audit(config) -> tuple[ExperimentReport, int]:
    opts = config.audit
    rhos = opts.get("rhos", [8, 64, 512])
    runs = int(opts.get("runs", 3))
    tau = _chain_tau(config)
    traces = []
    for rho in rhos:
        m = UniformMatroid(int(rho), 2 * int(rho))
        x = generate_marginal({"kind": "basis-indicator-scaled"}, m, config.lam)
        for t in range(runs):
            rng = RngStream(config.seed, (int(rho) << 20) + t).generator()
            _, trace = ocrs_chain(m, x, tau, config.eps, rng)
            traces.append(trace)
    table = sample_complexity_audit(traces)
    results = table.to_jsonable()
    ok = table.bounds_ok and (table.band_ok is not False)
    report = ExperimentReport(config.echo(), results, [])
    return report, 0 if ok else 2


def write_reports(report: ExperimentReport, out: Path) -> None:
    """Write the canonical JSON report, plus a per-element CSV for ocrs runs."""
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    rows = report.results.get("per_element")
    if rows:
        csv_path = out.with_suffix(".csv")
        with csv_path.open("w", newline="") as fh:
            writer = csv.DictWriter(
                fh,
                fieldnames=[
                    "element_id", "activations", "selections",
                    "frequency", "ci_low", "ci_high",
                ],
            )
            writer.writeheader()
            for row in rows:
                writer.writerow({k: row[k] for k in writer.fieldnames})


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="chainocrs",
        description="Spanning-chain OCRS experiments and guarantee checks",
    )
    parser.add_argument("--config", type=Path, required=True, help="JSON config path")
    parser.add_argument("--mode", choices=MODES, help="override the config mode")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--trials", type=int, help="override the config trials")
    parser.add_argument("--out", type=Path, help="report output path (JSON)")
    parser.add_argument(
        "--threads", type=int,
        default=int(os.environ.get("OCRS_THREADS", "1")),
        help="trial worker threads (results do not depend on this)",
    )
    args = parser.parse_args(argv)
    try:
        raw = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    for key, val in (("mode", args.mode), ("seed", args.seed), ("trials", args.trials)):
        if val is not None:
            raw[key] = val
    try:
        config = parse_config(raw)
        report, code = run(config, threads=max(1, args.threads))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = args.out or (raw.get("out") and Path(raw["out"]))
    if out:
        write_reports(report, Path(out))
    else:
        sys.stdout.write(report.to_json())
    print(f"wall_clock_seconds={report.wall_clock_seconds:.3f}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
