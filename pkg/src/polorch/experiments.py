"""Experiment drivers behind the command-line interface.

Every driver returns its results as Python objects and, when given an output
directory, writes CSV files with pinned 9-significant-digit formatting.  The
directory is assembled in a temporary sibling and moved into place only when
complete, so an interrupted run leaves no partial files behind.
"""
from __future__ import annotations

import contextlib
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .adversarial import KINDS, Learner, default_poly_exponent, realized_regret, regret_bound, resolve_kind
from .estimation import (
    EstimationConfig,
    MdpSampler,
    estimate_bound,
    run_estimated_loop,
    sample_advantages,
)
from .matching import build_matching_mdp, expert_set
from .mdp import TabularMdp, policy_evaluation, q_and_advantage, random_mdp, random_policy, value_at, value_iteration
from .orchestration import (
    expert_advantages,
    mix_policy,
    optimal_orchestration,
    run_oracle_loop,
)
from .scenario import Scenario

OUTPUT_ROOT_ENV = "POLORCH_OUTPUT_ROOT"


def fmt(x) -> str:
    """Fixed 9-significant-digit positional formatting."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if not math.isfinite(x):
        return str(x)
    return np.format_float_positional(x, precision=9, unique=False, fractional=False, trim="-")


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def resolve_output_dir(path) -> Path:
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


@contextlib.contextmanager
def staged_directory(target):
    """Yield a scratch directory that replaces ``target`` on success only."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield scratch
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    os.replace(scratch, target)


def write_outputs(target, files: dict) -> Path:
    """Write ``{name: text}`` into ``target`` atomically."""
    with staged_directory(target) as scratch:
        for name, text in files.items():
            (scratch / name).write_text(text, encoding="utf-8")
    return Path(target)


def derive_seed(root_seed: int, index: int) -> int:
    """64-bit seed of repetition ``index``."""
    words = np.random.SeedSequence(int(root_seed), spawn_key=(int(index),)).generate_state(2, dtype=np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


# ---------------------------------------------------------------- solve


@dataclass
class SolveResult:
    expert_kinds: list
    expert_values: list
    orchestrated_value: float
    optimal_value: float
    approximation_error: float
    appearance_rates: list

    def header(self) -> list:
        return (
            [f"V_{k}" for k in self.expert_kinds]
            + ["V_qstar", "V_star", "approximation_error"]
            + [f"rate_{k}" for k in self.expert_kinds]
        )

    def row(self) -> list:
        return (
            list(self.expert_values)
            + [self.orchestrated_value, self.optimal_value, self.approximation_error]
            + list(self.appearance_rates)
        )

    def csv(self) -> str:
        return csv_text(self.header(), [self.row()])


def build_model(scenario: Scenario):
    cfg = scenario.matching_config()
    model = build_matching_mdp(cfg, scenario.section("matching")["max_states"])
    experts = expert_set(model, scenario.section("experts")["kinds"])
    return model, experts


def solve(scenario: Scenario, output_dir=None) -> SolveResult:
    model, experts = build_model(scenario)
    mdp, mu0 = model.mdp, model.mu0
    values = [value_at(policy_evaluation(mdp, pi), mu0) for pi in experts]
    orch = optimal_orchestration(mdp, experts)
    v_star = value_at(value_iteration(mdp)[0], mu0)
    v_orch = value_at(orch.values, mu0)
    result = SolveResult(
        list(scenario.section("experts")["kinds"]),
        values,
        v_orch,
        v_star,
        v_star - v_orch,
        orch.appearance_rates().tolist(),
    )
    if output_dir is not None:
        meta = metadata(scenario, command="solve", sigma=model.config.sigma.tolist())
        write_outputs(output_dir, {"table.csv": result.csv(), "metadata.json": meta})
    return result


def metadata(scenario: Scenario, **extra) -> str:
    doc = {"code_version": __version__, "scenario": scenario.doc}
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


# ---------------------------------------------------------------- learn


@dataclass
class LearnResult:
    mode: str
    strategy: str
    params: dict
    seeds: list
    curves: np.ndarray  # (N, T)
    initial_value: float
    target_value: float
    optimal_value: float
    best_expert_value: float
    decrease_frequency: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.curves.shape[0]

    @property
    def T(self) -> int:
        return self.curves.shape[1]

    def band(self) -> tuple[np.ndarray, np.ndarray]:
        mean = self.curves.mean(axis=0)
        if self.N > 1:
            se = self.curves.std(axis=0, ddof=1) / math.sqrt(self.N)
        else:
            se = np.zeros(self.T)
        return mean, se

    def tail_mean(self, fraction: float = 0.1) -> float:
        start = self.T - max(1, int(round(fraction * self.T)))
        return float(self.curves[:, start:].mean())

    def final_mean(self) -> float:
        return float(self.curves[:, -1].mean())

    def cesaro_regrets(self) -> np.ndarray:
        return self.target_value - self.curves.mean(axis=1)

    def curve_csv(self) -> str:
        rows = (
            (n, t + 1, self.curves[n, t]) for n in range(self.N) for t in range(self.T)
        )
        return csv_text(["run_index", "t", "value_at_mu0"], rows)

    def band_csv(self) -> str:
        mean, se = self.band()
        cesaro = np.cumsum(mean) / np.arange(1, self.T + 1)
        rows = (
            (t + 1, mean[t], se[t], mean[t] - 2 * se[t], mean[t] + 2 * se[t], cesaro[t])
            for t in range(self.T)
        )
        return csv_text(["t", "mean", "standard_error", "lower", "upper", "cesaro_mean"], rows)

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "strategy": self.strategy,
            "params": self.params,
            "N": self.N,
            "T": self.T,
            "seeds": self.seeds,
            "initial_value": self.initial_value,
            "target_value": self.target_value,
            "optimal_value": self.optimal_value,
            "best_expert_value": self.best_expert_value,
            "final_mean": self.final_mean(),
            "tail_mean": self.tail_mean(),
            "mean_cesaro_regret": float(self.cesaro_regrets().mean()),
            "decrease_frequency": self.decrease_frequency,
        }


def learn(
    scenario: Scenario,
    mode: str = "oracle",
    strategy: str | None = None,
    output_dir=None,
    progress=None,
) -> LearnResult:
    """N repetitions of the oracle or estimated loop on a matching scenario.

    The oracle loop is deterministic, so it runs once and its curve is
    repeated for each of the N seeds.
    """
    if mode not in ("oracle", "estimated"):
        raise ValueError("mode must be 'oracle' or 'estimated'")
    strategy, params = scenario.strategy_params(strategy)
    learn_cfg = scenario.section("learning")
    T, N, root = learn_cfg["T"], learn_cfg["N"], learn_cfg["root_seed"]
    model, experts = build_model(scenario)
    mdp, mu0 = model.mdp, model.mu0
    target = value_at(optimal_orchestration(mdp, experts).values, mu0)
    optimal = value_at(value_iteration(mdp)[0], mu0)
    best_expert = max(value_at(policy_evaluation(mdp, pi), mu0) for pi in experts)
    seeds = [derive_seed(root, n) for n in range(N)]
    gain_bound = learn_cfg["gain_bound"]
    curves = np.empty((N, T))
    freqs = []
    if mode == "oracle":
        rec = run_oracle_loop(mdp, experts, strategy, params, T, mu0, gain_bound=gain_bound, targets=(target, optimal))
        curves[:] = rec.values
        initial = rec.initial_value
        freqs = [rec.decreases() / T] * N
    else:
        est = scenario.estimation_config()
        sampler = MdpSampler(mdp)
        for n, seed in enumerate(seeds):
            rec = run_estimated_loop(
                mdp, experts, strategy, params, T, est, mu0, seed,
                gain_bound=gain_bound, targets=(target, optimal), sampler=sampler,
            )
            curves[n] = rec.values
            initial = rec.initial_value
            freqs.append(rec.decrease_frequency())
            if progress is not None:
                progress(n + 1, N, rec)
    result = LearnResult(mode, strategy, params, seeds, curves, initial, target, optimal, best_expert, freqs)
    if output_dir is not None:
        extra = {"command": "learn", "summary": result.summary(), "sigma": model.config.sigma.tolist()}
        if mode == "estimated":
            est = scenario.estimation_config()
            extra["estimation"] = {
                "epsilon": est.epsilon,
                "horizon": est.horizon,
                "kappa": est.kappa,
                "mode": est.mode,
                "repeats": est.repeats,
                "reward_scale_bias": est.epsilon * mdp.reward_max,
                "gain_bound": gain_bound if gain_bound is not None else estimate_bound(mdp, est),
            }
        write_outputs(
            output_dir,
            {"curve.csv": result.curve_csv(), "band.csv": result.band_csv(), "metadata.json": metadata(scenario, **extra)},
        )
    return result


# ---------------------------------------------------------------- regret harness

GENERATORS = ("iid_uniform", "adversarial_flip", "single_best")


def harness_params(kind: str, K: int, T: int, M: float) -> dict:
    """Strategy parameters used by the harness (the fixed rate is tuned to ``T``)."""
    kind = resolve_kind(kind)
    if kind == "exp_fixed":
        return {"eta": math.sqrt(2.0 * math.log(K) / T) / M}
    if kind == "poly_potential":
        return {"p": default_poly_exponent(K)}
    return {}


def _gains(generator: str, rng, K: int, M: float, weights: np.ndarray, best: int) -> np.ndarray:
    if generator == "iid_uniform":
        return rng.uniform(-M, M, size=K)
    if generator == "adversarial_flip":
        # reward the currently least-weighted expert, punish the rest
        g = np.full(K, -M)
        g[int(np.argmin(weights))] = M
        return g
    if generator == "single_best":
        g = rng.uniform(-M, 0.5 * M, size=K)
        g[best] = rng.uniform(0.5 * M, M)
        return g
    raise ValueError(f"unknown generator {generator!r}")


def checkpoint_grid(T: int, checkpoints: int = 10) -> list[int]:
    """Powers of two below ``T`` together with ``checkpoints`` evenly spaced rounds."""
    marks = {max(1, round(T * (i + 1) / checkpoints)) for i in range(checkpoints)}
    marks.update(2**j for j in range(int(math.log2(T)) + 1))
    return sorted(m for m in marks if m <= T)


@dataclass
class RegretRow:
    generator: str
    strategy: str
    seed: int
    K: int
    M: float
    t: int
    realized: float
    bound: float

    @property
    def violation(self) -> bool:
        return self.realized > self.bound + 1e-9 * max(1.0, self.bound)


REGRET_HEADER = ["generator", "strategy", "seed", "K", "M", "t", "realized_regret", "bound", "violation"]


def regret_harness(
    K: int,
    M: float,
    T: int,
    strategies=KINDS,
    seeds=range(5),
    generators=GENERATORS,
    checkpoints: int = 10,
    output_dir=None,
) -> list[RegretRow]:
    if K < 2 or T < 1 or not M > 0:
        raise ValueError("need K >= 2, T >= 1 and M > 0")
    marks = checkpoint_grid(T, checkpoints)
    rows = []
    for generator in generators:
        for kind in strategies:
            kind = resolve_kind(kind)
            params = harness_params(kind, K, T, M)
            for seed in seeds:
                rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(GENERATORS.index(generator),)))
                best = int(rng.integers(K))
                learner = Learner(kind, K, M, **params)
                G = np.empty((T, K))
                W = np.empty((T, K))
                for t in range(T):
                    W[t] = learner.weights[0]
                    G[t] = _gains(generator, rng, K, M, W[t], best)
                    learner.observe(G[t][None, :])
                    if t + 1 in marks:
                        rows.append(
                            RegretRow(
                                generator, kind, int(seed), K, M, t + 1,
                                realized_regret(G[: t + 1], W[: t + 1]),
                                regret_bound(kind, t + 1, K, M, **params),
                            )
                        )
    if output_dir is not None:
        text = csv_text(
            REGRET_HEADER,
            ([r.generator, r.strategy, r.seed, r.K, r.M, r.t, r.realized, r.bound, r.violation] for r in rows),
        )
        write_outputs(output_dir, {"regret.csv": text})
    return rows


# ---------------------------------------------------------------- estimator audit


@dataclass
class AuditCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class AuditPair:
    state: int
    expert: int
    exact: float
    mean: float
    standard_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.mean - self.exact) <= self.tolerance


@dataclass
class AuditReport:
    checks: list
    pairs: list
    samples: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def text(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in self.checks]
        for p in self.pairs:
            lo, hi = p.mean - 3 * p.standard_error, p.mean + 3 * p.standard_error
            lines.append(
                f"  pair s={p.state} k={p.expert}: exact {p.exact:.6g}, mean {p.mean:.6g} "
                f"[{lo:.6g}, {hi:.6g}], tolerance {p.tolerance:.3g} {'ok' if p.passed else 'FAIL'}"
            )
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        rows = ([p.state, p.expert, p.exact, p.mean, p.standard_error, p.tolerance, p.passed] for p in self.pairs)
        return csv_text(["state", "expert", "exact", "mean", "standard_error", "tolerance", "passed"], rows)


def small_audit_problem(seed: int = 7, num_states: int = 5, num_actions: int = 3, K: int = 3, gamma: float = 0.8):
    """Random normalised MDP, random experts and random weights from one seed."""
    rng = np.random.default_rng(seed)
    mdp = random_mdp(num_states, num_actions, gamma, rng)
    experts = np.stack([random_policy(mdp, rng) for _ in range(K)])
    weights = rng.dirichlet(np.ones(K), size=num_states)
    return mdp, experts, weights


def estimator_audit(
    mdp: TabularMdp,
    experts: np.ndarray,
    weights: np.ndarray,
    config: EstimationConfig,
    samples: int,
    seed: int = 0,
    num_pairs: int = 5,
    chunk: int = 20_000,
) -> AuditReport:
    """Empirical check of the boundedness, zero-sum and bias properties."""
    if samples < 1000:
        raise ValueError("the audit needs at least 1000 samples")
    rng = np.random.default_rng(seed)
    K, S, _ = experts.shape
    num_pairs = min(num_pairs, S * K)
    flat = rng.choice(S * K, size=num_pairs, replace=False)
    pairs = [(int(f // K), int(f % K)) for f in flat]
    states = np.array(sorted({s for s, _ in pairs}))
    V = policy_evaluation(mdp, mix_policy(weights, experts))
    _, A = q_and_advantage(mdp, V)
    abar = expert_advantages(A, experts)
    bound = estimate_bound(mdp, config)
    sampler = MdpSampler(mdp)
    total = np.zeros((states.size, K))
    total_sq = np.zeros((states.size, K))
    worst_abs, worst_sum = 0.0, 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        draws, _ = sample_advantages(sampler, weights, experts, config, states, n, rng)
        worst_abs = max(worst_abs, float(np.abs(draws).max()))
        zs = np.einsum("nsk,sk->ns", draws, weights[states])
        worst_sum = max(worst_sum, float(np.abs(zs).max()))
        total += draws.sum(axis=0)
        total_sq += (draws**2).sum(axis=0)
        done += n
    mean = total / samples
    var = np.maximum(total_sq / samples - mean**2, 0.0) * samples / (samples - 1)
    se = np.sqrt(var / samples)
    bias = config.epsilon * mdp.reward_max
    audited = []
    for s, k in pairs:
        i = int(np.searchsorted(states, s))
        audited.append(AuditPair(s, k, float(abar[s, k]), float(mean[i, k]), float(se[i, k]), bias + 3 * se[i, k]))
    checks = [
        AuditCheck("boundedness", worst_abs <= bound * (1 + 1e-12), f"max |atilde| = {worst_abs:.6g} <= {bound:.6g}"),
        AuditCheck("zero_sum", worst_sum <= 1e-9, f"max |sum_k q(k|s) atilde(s,k)| = {worst_sum:.3g}"),
        AuditCheck(
            "bias",
            all(p.passed for p in audited),
            f"{sum(p.passed for p in audited)}/{len(audited)} pairs within eps*reward_max + 3se",
        ),
    ]
    return AuditReport(checks, audited, samples)
