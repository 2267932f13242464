"""Desk-scale experiment runner over the chain-oracle backend.

Generates synthetic cloze tasks (sample a chain sequence, expose a prefix,
decode the rest), sweeps strategies across forward-step budgets with the
equal-budget discipline enforced by a call counter, and aggregates scores
into CSV / JSON reports. Wall-clock time is recorded but informational;
everything else in a report is bit-reproducible from the sweep spec.
"""

from __future__ import annotations

import io
import json
import math
import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .backends import CountingBackend
from .baselines import RemdmConfig, rcr_decode, remdm_decode
from .core import init_state
from .oracle import MarkovOracleSpec, chain_loglik, sample_chain
from .sampling import SamplerConfig
from .tolerator import ToleratorConfig, tolerator_decode
from .vanilla import AcceptanceSchedule, vanilla_decode

STRATEGIES = ("vanilla", "tolerator", "rcr", "remdm")
SCORERS = ("exact_match", "token_accuracy", "oracle_loglik")

CSV_HEADER = "strategy,T,seed,instance_id,score,calls,wall_ms"


class BudgetViolation(RuntimeError):
    """A decode consumed a number of forward calls different from its budget."""


@dataclass(frozen=True)
class TaskInstance:
    """One cloze task: decode the continuation of a chain-sampled sequence."""

    instance_id: int
    prompt: tuple
    target: tuple  # full true sequence, prompt included
    scorer: str = "oracle_loglik"

    def __post_init__(self):
        if self.scorer not in SCORERS:
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if len(self.target) <= len(self.prompt):
            raise ValueError("target must extend beyond the prompt")

    @property
    def gen_len(self) -> int:
        return len(self.target) - len(self.prompt)


def gen_cloze_suite(
    spec: MarkovOracleSpec,
    n: int,
    length: int,
    prompt_len: int,
    seed: int,
    scorer: str = "oracle_loglik",
):
    """Sample n chain sequences and expose their first prompt_len tokens."""
    if length <= prompt_len:
        raise ValueError("length must exceed prompt_len")
    rng = np.random.default_rng(seed)
    suite = []
    for i in range(n):
        seq = sample_chain(spec, length, rng)
        suite.append(
            TaskInstance(
                instance_id=i,
                prompt=tuple(int(t) for t in seq[:prompt_len]),
                target=tuple(int(t) for t in seq),
                scorer=scorer,
            )
        )
    return suite


def score_output(instance: TaskInstance, tokens, spec: MarkovOracleSpec) -> float:
    """Score a decoded sequence against the instance's target/scorer."""
    tokens = np.asarray(tokens, dtype=np.int64)
    target = np.asarray(instance.target, dtype=np.int64)
    gen = slice(len(instance.prompt), len(instance.target))
    if instance.scorer == "exact_match":
        return float(np.array_equal(tokens[gen], target[gen]))
    if instance.scorer == "token_accuracy":
        return float(np.mean(tokens[gen] == target[gen]))
    return chain_loglik(spec, tokens)


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from mixed components (run seed, instance id, ...)."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def run_decode(strategy: str, state, backend, total_steps: int, seed: int, overrides: dict | None = None):
    """Dispatch one decode; returns (final state, traces).

    Harness decodes default to categorical sampling at temperature 1.0;
    override via {"sampler": {...}} or strategy-specific keys.
    """
    overrides = dict(overrides or {})
    sampler_kw = {"temperature": 1.0, "mode": "categorical", "seed": seed}
    sampler_kw.update(overrides.pop("sampler", {}))
    sampler = SamplerConfig(**sampler_kw)
    metric = overrides.pop("metric", "maxprob")
    if strategy == "vanilla":
        sched = AcceptanceSchedule.build(state.gen_len, total_steps)
        return vanilla_decode(state, backend, sched, sampler, metric)
    if strategy == "tolerator":
        cfg = ToleratorConfig(
            total_steps=total_steps, seed=seed, sampler=sampler, metric=metric, **overrides
        )
        return tolerator_decode(state, backend, cfg)
    if strategy == "rcr":
        return rcr_decode(
            state, backend, total_steps, sampler, metric, max_remask=overrides.pop("max_remask", None)
        )
    if strategy == "remdm":
        cfg = RemdmConfig(seed=seed, **overrides)
        return remdm_decode(state, backend, total_steps, cfg, sampler, metric)
    raise ValueError(f"unknown strategy {strategy!r}")


@dataclass(frozen=True)
class SweepSpec:
    """What to run: strategies x budgets x seeds, with per-strategy overrides."""

    strategies: tuple
    T_values: tuple
    seeds: tuple
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.T_values:
            raise ValueError("T_values must be non-empty")
        if len(self.seeds) < 3:
            raise ValueError("sweeps need at least three seeds")
        for s in self.strategies:
            if s not in STRATEGIES and not s.startswith("tolerator"):
                raise ValueError(f"unknown strategy {s!r}")


@dataclass(frozen=True)
class DecodeRecord:
    strategy: str
    T: int
    seed: int
    instance_id: int
    score: float
    calls: int
    wall_ms: float


@dataclass(frozen=True)
class AggregateRow:
    strategy: str
    T: int
    mean: float
    stdev: float
    n: int
    tokens_per_forward: float


@dataclass
class ResultTable:
    records: list

    def aggregates(self):
        cells = {}
        for r in self.records:
            cells.setdefault((r.strategy, r.T), []).append(r)
        rows = []
        for (strategy, T), recs in sorted(cells.items()):
            scores = [r.score for r in recs]
            mean = statistics.fmean(scores)
            stdev = statistics.stdev(scores) if len(scores) > 1 else 0.0
            rows.append(
                AggregateRow(
                    strategy=strategy,
                    T=T,
                    mean=mean,
                    stdev=stdev,
                    n=len(recs),
                    tokens_per_forward=self._tokens_per_forward.get((strategy, T), float("nan")),
                )
            )
        return rows

    _tokens_per_forward: dict = field(default_factory=dict)

    def to_csv(self, fp=None) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.records:
            buf.write(
                f"{r.strategy},{r.T},{r.seed},{r.instance_id},{r.score!r},{r.calls},{r.wall_ms!r}\n"
            )
        text = buf.getvalue()
        if fp is not None:
            if isinstance(fp, str):
                with open(fp, "w", encoding="utf-8") as f:
                    f.write(text)
            else:
                fp.write(text)
        return text

    @classmethod
    def from_csv(cls, fp) -> "ResultTable":
        if isinstance(fp, str):
            with open(fp, "r", encoding="utf-8") as f:
                lines = f.read().splitlines()
        else:
            lines = fp.read().splitlines()
        if not lines or lines[0] != CSV_HEADER:
            raise ValueError("unrecognized results CSV header")
        records = []
        for line in lines[1:]:
            if not line:
                continue
            strategy, T, seed, instance_id, score, calls, wall_ms = line.split(",")
            records.append(
                DecodeRecord(
                    strategy=strategy,
                    T=int(T),
                    seed=int(seed),
                    instance_id=int(instance_id),
                    score=float(score),
                    calls=int(calls),
                    wall_ms=float(wall_ms),
                )
            )
        return cls(records=records)

    def to_json_report(self, fp=None) -> str:
        report = {
            "records": [vars(r) for r in self.records],
            "aggregates": [vars(a) for a in self.aggregates()],
        }
        text = json.dumps(report, indent=2) + "\n"
        if fp is not None:
            if isinstance(fp, str):
                with open(fp, "w", encoding="utf-8") as f:
                    f.write(text)
            else:
                fp.write(text)
        return text

    def deterministic_csv(self) -> str:
        """CSV with the informational wall_ms column zeroed, for byte comparisons."""
        zeroed = ResultTable(
            records=[replace(r, wall_ms=0.0) for r in self.records],
            _tokens_per_forward=self._tokens_per_forward,
        )
        return zeroed.to_csv()


def run_sweep(spec: SweepSpec, suite, backend, oracle_spec: MarkovOracleSpec) -> ResultTable:
    """Run every (strategy, T, seed, instance) cell and collect records.

    Each decode owns a fresh state and derived seed; the backend is wrapped
    in a call counter and any cell whose forward-call count differs from
    its budget aborts the sweep with a BudgetViolation.
    """
    records = []
    tpf = {}
    for strategy in spec.strategies:
        overrides = spec.overrides.get(strategy, {})
        for T in spec.T_values:
            for seed in spec.seeds:
                for inst in suite:
                    counting = CountingBackend(backend)
                    state = init_state(list(inst.prompt), inst.gen_len, backend.vocab)
                    decode_seed = derive_seed(seed, inst.instance_id)
                    start = time.perf_counter()
                    final, _ = run_decode(strategy, state, counting, T, decode_seed, overrides)
                    wall_ms = (time.perf_counter() - start) * 1e3
                    if counting.calls != T:
                        raise BudgetViolation(
                            f"{strategy} T={T} seed={seed} instance={inst.instance_id}: "
                            f"{counting.calls} backend calls, budget {T}"
                        )
                    records.append(
                        DecodeRecord(
                            strategy=strategy,
                            T=T,
                            seed=seed,
                            instance_id=inst.instance_id,
                            score=score_output(inst, final.tokens, oracle_spec),
                            calls=counting.calls,
                            wall_ms=wall_ms,
                        )
                    )
                    tpf[(strategy, T)] = inst.gen_len / T
    return ResultTable(records=records, _tokens_per_forward=tpf)


def ablation_refine_steps(
    fill_steps: int,
    R_values,
    suite,
    backend,
    oracle_spec: MarkovOracleSpec,
    seeds=(0, 1, 2),
    overrides: dict | None = None,
) -> ResultTable:
    """Hold the fill-up budget fixed and sweep the refinement step count.

    Rows are labeled tolerator_R{R} with T = fill_steps + R; R = 0 is the
    pure fill-up baseline (vanilla decoding under the EoT penalty).
    """
    if fill_steps < 1:
        raise ValueError(f"fill_steps must be >= 1, got {fill_steps}")
    overrides = dict(overrides or {})
    records = []
    tpf = {}
    for R in R_values:
        strategy = f"tolerator_R{R}"
        T = fill_steps + R
        for seed in seeds:
            for inst in suite:
                counting = CountingBackend(backend)
                state = init_state(list(inst.prompt), inst.gen_len, backend.vocab)
                decode_seed = derive_seed(seed, inst.instance_id)
                sampler_kw = {"temperature": 1.0, "mode": "categorical", "seed": decode_seed}
                sampler_kw.update(overrides.get("sampler", {}))
                cfg = ToleratorConfig(
                    total_steps=T,
                    fillup_steps_override=fill_steps,
                    seed=decode_seed,
                    sampler=SamplerConfig(**sampler_kw),
                    **{k: v for k, v in overrides.items() if k != "sampler"},
                )
                start = time.perf_counter()
                final, _ = tolerator_decode(state, counting, cfg)
                wall_ms = (time.perf_counter() - start) * 1e3
                if counting.calls != T:
                    raise BudgetViolation(
                        f"{strategy} seed={seed} instance={inst.instance_id}: "
                        f"{counting.calls} backend calls, budget {T}"
                    )
                records.append(
                    DecodeRecord(
                        strategy=strategy,
                        T=T,
                        seed=seed,
                        instance_id=inst.instance_id,
                        score=score_output(inst, final.tokens, oracle_spec),
                        calls=counting.calls,
                        wall_ms=wall_ms,
                    )
                )
                tpf[(strategy, T)] = inst.gen_len / T
    return ResultTable(records=records, _tokens_per_forward=tpf)
