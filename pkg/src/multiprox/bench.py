"""Experiment harness: configs, presets, runs, aggregation, CSV emission.

Three experiment families are wired in:

* ``exp1``: smooth split quadratics, uniform singleton sampling against
  importance-weighted singleton sampling, measured by iterations to reach a
  target squared distance.
* ``exp2``: consistent hyperplanes with a small ridge; a stepsize grid for
  the single-index proximal baseline against the decreasing-stepsize
  schedule with its certified envelope.
* ``exp3``: strongly convex quadratics solved by the compressed federated
  variant across a grid of coordinate budgets k, with communication ledgers.

Determinism contract: the instance stream is spawned from the base seed,
replicate r uses the plain seed ``base_seed + r``, aggregation runs in
replicate order, and CSV bytes depend only on the config. The environment
variable ``MULTIPROX_THREADS`` sets the number of worker threads for
replicates (default 1); it changes wall time only, never bytes.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .federated import FedRng, derive_fed_params, fed_run
from .problems import ProblemInstance, generate_instance
from .rates import rate_report, uniform_minibatch_plan
from .rng import generator, seed_sequence
from .sampling import FullBatch, SamplingDistribution, SingletonWeighted, UniformMinibatch
from .solver import (
    ACCEL_NONEMPTY,
    LINEAR_SMOOTH,
    Adaptive,
    Constant,
    LyapunovSpec,
    SolverParams,
    derive_params,
    importance_plan,
    initial_state,
    lyapunov,
    make_lyapunov_spec,
    rate_inputs_from,
    sq_dist,
    step,
)

EXPERIMENTS = ("exp1", "exp2", "exp3")
SCALES = ("small", "paper")

CSV_HEADER = "t,sq_dist,lyapunov,theory_envelope,comm_parallel,comm_total,replicate"


def default_cadence(t: int) -> bool:
    """Log every iteration up to 1000, every tenth beyond."""
    return t <= 1000 or t % 10 == 0


# ---------------------------------------------------------------------------
# Configuration


_COMMON_KEYS = {"experiment", "scale", "seed", "replicates", "iterations",
                "target", "out", "n", "d"}
_EXTRA_KEYS = {
    "exp1": {"alpha", "l_max"},
    "exp2": {"mu", "a_offset", "grid"},
    "exp3": {"mu", "l_max", "k_values"},
}


@dataclass(frozen=True)
class RunConfig:
    """One experiment run. Unset fields resolve to per-experiment defaults."""

    experiment: str
    scale: str = "small"
    seed: int = 0
    replicates: int | None = None
    iterations: int | None = None
    target: float | None = None
    out: str | None = None
    n: int | None = None
    d: int | None = None
    alpha: float | None = None
    l_max: float | None = None
    mu: float | None = None
    a_offset: float | None = None
    grid: list[float] | None = None
    k_values: list[int] | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}")
        if self.scale not in SCALES:
            raise ConfigurationError(f"unknown scale {self.scale!r}")
        for name in ("replicates", "iterations"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigurationError(f"{name} must be positive, got {v}")

    def to_dict(self) -> dict:
        out = {}
        for key in sorted(self.__dataclass_fields__):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if "experiment" not in raw:
            raise ConfigurationError("config needs an 'experiment' key")
        exp = raw["experiment"]
        if exp not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {exp!r}")
        allowed = _COMMON_KEYS | _EXTRA_KEYS[exp]
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigurationError(
                f"unknown config keys for {exp}: {sorted(unknown)}"
            )
        return cls(**raw)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    return RunConfig.from_dict(raw)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


PRESETS: dict[str, RunConfig] = {
    "exp1-alpha095": RunConfig(experiment="exp1", alpha=0.95),
    "exp1-alpha05": RunConfig(experiment="exp1", alpha=0.5),
    "exp1-alpha005": RunConfig(experiment="exp1", alpha=0.05),
    "exp2": RunConfig(experiment="exp2"),
    "exp3-L50": RunConfig(experiment="exp3", l_max=50.0),
    "exp3-L500": RunConfig(experiment="exp3", l_max=500.0),
    "exp3-L5000": RunConfig(experiment="exp3", l_max=5000.0),
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}"
        )
    return PRESETS[name]


# ---------------------------------------------------------------------------
# Rows and aggregation


# Traces from large runs hold millions of rows; slots keep them cheap.
@dataclass(frozen=True, slots=True)
class TraceRow:
    t: int
    sq_dist: float
    lyapunov: float | None
    theory_envelope: float | None
    comm_parallel: int
    comm_total: int
    replicate: int


@dataclass(frozen=True, slots=True)
class AggregateRow:
    t: int
    sq_dist_mean: float
    sq_dist_stderr: float
    lyapunov_mean: float | None
    lyapunov_stderr: float | None
    theory_envelope: float | None
    comm_parallel_mean: float
    comm_total_mean: float
    replicates: int


def _mean_stderr(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size == 1:
        return mean, 0.0
    return mean, float(arr.std(ddof=1) / np.sqrt(arr.size))


def aggregate_replicates(rows: list[TraceRow]) -> list[AggregateRow]:
    """Replicate means and standard errors per logged iteration.

    The standard error is the ddof-1 sample deviation over the square root
    of the replicate count, zero for a single replicate. Iterations present
    in only some replicates (early-stopped runs) aggregate over the
    replicates that reached them.
    """
    by_t: dict[int, list[TraceRow]] = {}
    for row in rows:
        by_t.setdefault(row.t, []).append(row)
    out = []
    for t in sorted(by_t):
        group = sorted(by_t[t], key=lambda r: r.replicate)
        sq_mean, sq_se = _mean_stderr([r.sq_dist for r in group])
        lyap_vals = [r.lyapunov for r in group]
        if any(v is None for v in lyap_vals):
            lyap_mean, lyap_se = None, None
        else:
            lyap_mean, lyap_se = _mean_stderr(lyap_vals)
        envelope = next((r.theory_envelope for r in group if r.theory_envelope is not None), None)
        cp, _ = _mean_stderr([float(r.comm_parallel) for r in group])
        ct, _ = _mean_stderr([float(r.comm_total) for r in group])
        out.append(AggregateRow(
            t=t, sq_dist_mean=sq_mean, sq_dist_stderr=sq_se,
            lyapunov_mean=lyap_mean, lyapunov_stderr=lyap_se,
            theory_envelope=envelope,
            comm_parallel_mean=cp, comm_total_mean=ct, replicates=len(group),
        ))
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def emit_csv(rows: list[TraceRow], path) -> None:
    """Byte-deterministic trace CSV: fixed header, 17-digit floats, LF endings."""
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            str(r.t), _fmt(r.sq_dist), _fmt(r.lyapunov), _fmt(r.theory_envelope),
            str(r.comm_parallel), str(r.comm_total), str(r.replicate),
        ]))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode())


AGG_HEADER = ("t,sq_dist_mean,sq_dist_stderr,lyapunov_mean,lyapunov_stderr,"
              "theory_envelope,comm_parallel_mean,comm_total_mean,replicates")


def emit_aggregate_csv(rows: list[AggregateRow], path) -> None:
    lines = [AGG_HEADER]
    for r in rows:
        lines.append(",".join([
            str(r.t), _fmt(r.sq_dist_mean), _fmt(r.sq_dist_stderr),
            _fmt(r.lyapunov_mean), _fmt(r.lyapunov_stderr),
            _fmt(r.theory_envelope), _fmt(r.comm_parallel_mean),
            _fmt(r.comm_total_mean), str(r.replicates),
        ]))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode())


# ---------------------------------------------------------------------------
# Shared run machinery


@dataclass
class ArmResult:
    name: str
    rows: list[TraceRow]
    aggregate: list[AggregateRow]
    info: dict


@dataclass
class ExperimentResult:
    config: RunConfig
    arms: dict[str, ArmResult]
    summary: dict
    files: list[str] = field(default_factory=list)


def _thread_count() -> int:
    raw = os.environ.get("MULTIPROX_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"MULTIPROX_THREADS must be an integer, got {raw!r}")


def _map_replicates(fn, replicates: int):
    workers = _thread_count()
    if workers == 1:
        return [fn(r) for r in range(replicates)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(replicates)))


def _instance_rng(base_seed: int):
    return generator(seed_sequence(base_seed).spawn(1)[0])


def _solver_replicate(
    instance: ProblemInstance,
    params: SolverParams,
    dist: SamplingDistribution,
    seed: int,
    replicate: int,
    T: int,
    spec: LyapunovSpec | None,
    psi0: float | None,
    target: float | None = None,
    x0=None,
) -> tuple[list[TraceRow], int | None]:
    """One trace; stops early when the squared distance reaches the target.

    Returns the rows and the first logged-or-not iteration at which the
    target was met (None when it never was).
    """
    rng = generator(seed + replicate)
    state = initial_state(instance, x0=x0, track_z=params.track_z)
    rows: list[TraceRow] = []
    hit: int | None = None

    def record():
        psi = lyapunov(state, instance, params, spec) if spec is not None else None
        env = None
        if spec is not None and spec.envelope_ratio is not None and psi0 is not None:
            env = spec.envelope_ratio(state.t) * psi0
        rows.append(TraceRow(
            t=state.t, sq_dist=sq_dist(state, instance), lyapunov=psi,
            theory_envelope=env, comm_parallel=0, comm_total=0,
            replicate=replicate,
        ))

    record()
    for _ in range(T):
        step(state, instance, params, dist, rng)
        if target is not None and hit is None and sq_dist(state, instance) <= target:
            hit = state.t
            record()
            break
        if state.t == T or default_cadence(state.t):
            record()
    return rows, hit


def _run_solver_arm(
    name: str,
    instance: ProblemInstance,
    params: SolverParams,
    dist: SamplingDistribution,
    cfg_seed: int,
    replicates: int,
    T: int,
    variant: str | None,
    target: float | None = None,
    x0=None,
) -> ArmResult:
    spec = None
    psi0 = None
    if variant is not None:
        spec = make_lyapunov_spec(variant, instance, dist, params)
        psi0 = lyapunov(initial_state(instance, x0=x0, track_z=params.track_z),
                        instance, params, spec)
    results = _map_replicates(
        lambda r: _solver_replicate(instance, params, dist, cfg_seed, r, T,
                                    spec, psi0, target=target, x0=x0),
        replicates,
    )
    rows = [row for rep_rows, _ in results for row in rep_rows]
    hits = [hit for _, hit in results]
    info = {
        "law": dist.to_config(),
        "eta_max": float(np.max(params.eta)),
        "p_hat": params.p_hat,
    }
    if isinstance(params.schedule, Constant):
        info["gamma"] = params.schedule.gamma
    if spec is not None and spec.rho is not None:
        info["rho"] = spec.rho
    if target is not None:
        info["iterations_to_target"] = hits
        reached = [h for h in hits if h is not None]
        info["mean_iterations_to_target"] = (
            float(np.mean(reached)) if len(reached) == len(hits) else None
        )
    return ArmResult(name=name, rows=rows, aggregate=aggregate_replicates(rows), info=info)


def _run_fed_arm(
    name: str,
    instance: ProblemInstance,
    dist: SamplingDistribution,
    k: int,
    cfg_seed: int,
    replicates: int,
    T: int,
    x0=None,
) -> ArmResult:
    fed = derive_fed_params(instance, dist, k)
    psi0 = None
    rows: list[TraceRow] = []

    def one(r: int) -> list[TraceRow]:
        local: list[TraceRow] = []

        def sink(t, dist_sq, psi, comm):
            env = None
            if fed.rho is not None and psi0 is not None:
                env = fed.rho**t * psi0
            local.append(TraceRow(
                t=t, sq_dist=dist_sq, lyapunov=psi, theory_envelope=env,
                comm_parallel=comm[0], comm_total=comm[1], replicate=r,
            ))
        fed_run(instance, fed, dist, FedRng.from_seed(cfg_seed + r, instance.n),
                T, sink=sink, x0=x0, cadence=default_cadence)
        return local

    # The envelope anchor is the Lyapunov value at the shared initial state;
    # compute it from a throwaway sink at T=0.
    anchor: list[float] = []
    fed_run(instance, fed, dist, FedRng.from_seed(cfg_seed, instance.n), 0,
            sink=lambda t, d_, psi, c: anchor.append(psi), x0=x0)
    psi0 = anchor[0]
    for rep_rows in _map_replicates(one, replicates):
        rows.extend(rep_rows)
    info = {
        "law": dist.to_config(),
        "k": k,
        "gamma": fed.gamma,
        "p_check_empty": fed.p_check_empty,
        "rho": fed.rho,
        "iteration_complexity": fed.iteration_complexity,
        "final_uplink_total": max((r.comm_total for r in rows), default=0),
    }
    return ArmResult(name=name, rows=rows, aggregate=aggregate_replicates(rows), info=info)


def _write_arm_files(result: ExperimentResult, out: str | None) -> None:
    if out is None:
        return
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, arm in result.arms.items():
        base = f"{result.config.experiment}-{name}"
        trace_path = out_dir / f"{base}.csv"
        agg_path = out_dir / f"{base}-agg.csv"
        emit_csv(arm.rows, trace_path)
        emit_aggregate_csv(arm.aggregate, agg_path)
        result.files += [str(trace_path), str(agg_path)]
    summary_path = out_dir / f"{result.config.experiment}-summary.json"
    with open(summary_path, "w") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    result.files.append(str(summary_path))


# ---------------------------------------------------------------------------
# Experiment 1: uniform against importance sampling


def _exp1_defaults(cfg: RunConfig) -> dict:
    return {
        "n": cfg.n or 100,
        "d": cfg.d or 100,
        "alpha": cfg.alpha if cfg.alpha is not None else 0.05,
        "l_max": cfg.l_max or 1000.0,
        "replicates": cfg.replicates or 20,
        "T": cfg.iterations or 200_000,
        "target": cfg.target if cfg.target is not None else 1e-6,
    }


def exp1_arms(cfg: RunConfig):
    """Instance plus both configured arms (law, params) for one alpha."""
    p = _exp1_defaults(cfg)
    instance = generate_instance(
        "exp1", _instance_rng(cfg.seed),
        n=p["n"], d=p["d"], alpha=p["alpha"], l_max=p["l_max"],
    )
    mu_total = instance.f.mu
    uniform_dist = UniformMinibatch(instance.n, 1)
    plan = uniform_minibatch_plan(
        instance.n, 1, instance.f.L, max(float(L) for L in instance.L_h), mu_total
    )
    uniform_params = derive_params(instance, uniform_dist, Constant(plan.gamma))
    _, weights, gamma_imp = importance_plan(
        instance.L_h, mu_f=instance.f.mu, mu_g=instance.g.mu, L_f=instance.f.L
    )
    importance_dist = SingletonWeighted(weights)
    importance_params = derive_params(instance, importance_dist, Constant(gamma_imp))
    return instance, {
        "uniform": (uniform_dist, uniform_params),
        "importance": (importance_dist, importance_params),
    }


def _run_exp1(cfg: RunConfig) -> ExperimentResult:
    p = _exp1_defaults(cfg)
    instance, arms = exp1_arms(cfg)
    # far common start: keeps the target depth in the rate-dominated regime
    # and the initial error comparable across alpha values
    x0 = np.full(instance.d, 10.0)
    result_arms = {}
    for name, (dist, params) in arms.items():
        result_arms[name] = _run_solver_arm(
            name, instance, params, dist, cfg.seed, p["replicates"], p["T"],
            variant=LINEAR_SMOOTH, target=p["target"], x0=x0,
        )
    uni = result_arms["uniform"].info["mean_iterations_to_target"]
    imp = result_arms["importance"].info["mean_iterations_to_target"]
    summary = {
        "alpha": p["alpha"],
        "target": p["target"],
        "uniform_mean_iterations": uni,
        "importance_mean_iterations": imp,
        "gap": None if (uni is None or imp is None) else uni - imp,
    }
    result = ExperimentResult(config=cfg, arms=result_arms, summary=summary)
    _write_arm_files(result, cfg.out)
    return result


def exp1_sweep(
    scale: str = "small",
    seed: int = 0,
    out: str | None = None,
    alphas=(0.95, 0.5, 0.05),
    replicates: int | None = None,
    n: int | None = None,
    d: int | None = None,
    iterations: int | None = None,
) -> dict:
    """The full first experiment: one run per alpha, plus the gap summary."""
    gaps = []
    runs = {}
    for alpha in alphas:
        sub_out = None if out is None else str(Path(out) / f"alpha-{alpha:g}")
        cfg = RunConfig(experiment="exp1", scale=scale, seed=seed, alpha=alpha,
                        out=sub_out, replicates=replicates, n=n, d=d,
                        iterations=iterations)
        res = _run_exp1(cfg)
        runs[alpha] = res
        gaps.append(res.summary["gap"])
    widening = all(
        later is not None and earlier is not None and later > earlier
        for earlier, later in zip(gaps, gaps[1:])
    )
    return {"runs": runs, "gaps": gaps, "gap_widens_monotonically": widening}


# ---------------------------------------------------------------------------
# Experiment 2: stepsize grid against the decreasing schedule


def _exp2_defaults(cfg: RunConfig) -> dict:
    paper = cfg.scale == "paper"
    return {
        "d": cfg.d or (1000 if paper else 200),
        "mu": cfg.mu if cfg.mu is not None else 1e-5,
        "a_offset": cfg.a_offset if cfg.a_offset is not None else 5.5,
        "grid": cfg.grid or [10.0 * 0.5**i for i in range(12)],
        "replicates": cfg.replicates or (3 if paper else 10),
        "T": cfg.iterations or (300_000 if paper else 100_000),
    }


def _run_exp2(cfg: RunConfig) -> ExperimentResult:
    p = _exp2_defaults(cfg)
    instance = generate_instance("exp2", _instance_rng(cfg.seed), d=p["d"], mu=p["mu"])
    dist = UniformMinibatch(instance.n, 1)
    result_arms = {}
    for i, gamma in enumerate(p["grid"]):
        params = derive_params(instance, dist, Constant(gamma))
        result_arms[f"grid-{i:02d}"] = _run_solver_arm(
            f"grid-{i:02d}", instance, params, dist, cfg.seed,
            p["replicates"], p["T"], variant=None,
        )
    schedule = Adaptive(mu=p["mu"], a=p["a_offset"])
    adaptive_params = derive_params(instance, dist, schedule)
    result_arms["adaptive"] = _run_solver_arm(
        "adaptive", instance, adaptive_params, dist, cfg.seed,
        p["replicates"], p["T"], variant=ACCEL_NONEMPTY,
    )

    def final_mean(arm: ArmResult) -> float:
        last_t = max(r.t for r in arm.aggregate)
        return next(r.sq_dist_mean for r in arm.aggregate if r.t == last_t)

    grid_finals = {i: final_mean(result_arms[f"grid-{i:02d}"])
                   for i in range(len(p["grid"]))}
    best = min(grid_finals, key=grid_finals.get)
    adaptive_final = final_mean(result_arms["adaptive"])
    summary = {
        "grid": p["grid"],
        "grid_final_sq_dist": {str(i): grid_finals[i] for i in sorted(grid_finals)},
        "best_grid_index": best,
        "best_grid_final": grid_finals[best],
        "adaptive_final": adaptive_final,
        "adaptive_beats_best_grid": adaptive_final <= grid_finals[best],
    }
    result = ExperimentResult(config=cfg, arms=result_arms, summary=summary)
    _write_arm_files(result, cfg.out)
    return result


# ---------------------------------------------------------------------------
# Experiment 3: compressed federated runs over a coordinate-budget grid


def _exp3_defaults(cfg: RunConfig) -> dict:
    l_max = cfg.l_max or 50.0
    # Harder conditioning contracts slower; stretch the default horizon so
    # every budget k reaches visibly small error.
    default_T = 3000 if l_max <= 50 else (10_000 if l_max <= 500 else 30_000)
    return {
        "n": cfg.n or 100,
        "d": cfg.d or 100,
        "mu": cfg.mu if cfg.mu is not None else 1.0,
        "l_max": l_max,
        "k_values": cfg.k_values or [1, 10, 25, 50],
        "replicates": cfg.replicates or 3,
        "T": cfg.iterations or default_T,
    }


def _run_exp3(cfg: RunConfig) -> ExperimentResult:
    p = _exp3_defaults(cfg)
    instance = generate_instance(
        "exp3", _instance_rng(cfg.seed),
        n=p["n"], d=p["d"], mu=p["mu"], l_max=p["l_max"],
    )
    for k in p["k_values"]:
        if not 1 <= k <= instance.d:
            raise ConfigurationError(f"coordinate budget {k} outside [1, {instance.d}]")
    dist = FullBatch(instance.n)
    x0 = np.full(instance.d, 10.0)
    result_arms = {}
    for k in p["k_values"]:
        name = f"k-{k}"
        result_arms[name] = _run_fed_arm(
            name, instance, dist, k, cfg.seed, p["replicates"], p["T"], x0=x0,
        )

    def final_mean(arm: ArmResult) -> float:
        last_t = max(r.t for r in arm.aggregate)
        return next(r.sq_dist_mean for r in arm.aggregate if r.t == last_t)

    summary = {
        "k_values": p["k_values"],
        "final_sq_dist": {str(k): final_mean(result_arms[f"k-{k}"])
                          for k in p["k_values"]},
        "rho": {str(k): result_arms[f"k-{k}"].info["rho"] for k in p["k_values"]},
        "uplink_total": {str(k): result_arms[f"k-{k}"].info["final_uplink_total"]
                         for k in p["k_values"]},
    }
    result = ExperimentResult(config=cfg, arms=result_arms, summary=summary)
    _write_arm_files(result, cfg.out)
    return result


# ---------------------------------------------------------------------------
# Entry points


def run_experiment(cfg: RunConfig) -> ExperimentResult:
    """Run one configured experiment end to end."""
    if cfg.experiment == "exp1":
        return _run_exp1(cfg)
    if cfg.experiment == "exp2":
        return _run_exp2(cfg)
    return _run_exp3(cfg)


def rate_summaries(cfg: RunConfig) -> dict[str, dict | str]:
    """Certified-rate reports for every arm of a config that has one."""
    out: dict[str, dict | str] = {}
    if cfg.experiment == "exp1":
        instance, arms = exp1_arms(cfg)
        for name, (dist, params) in arms.items():
            out[name] = rate_report("theorem", rate_inputs_from(instance, dist, params))
    elif cfg.experiment == "exp2":
        p = _exp2_defaults(cfg)
        out["grid"] = ("no certified linear rate: components have no finite "
                       "smoothness constant")
        out["adaptive"] = {
            "kind": "decreasing-stepsize envelope",
            "mu": p["mu"],
            "a": p["a_offset"],
            "envelope": "((a - 1) / (a + t - 1))^2 of the initial Lyapunov value",
        }
    else:
        p = _exp3_defaults(cfg)
        instance = generate_instance(
            "exp3", _instance_rng(cfg.seed),
            n=p["n"], d=p["d"], mu=p["mu"], l_max=p["l_max"],
        )
        dist = FullBatch(instance.n)
        for k in p["k_values"]:
            fed = derive_fed_params(instance, dist, k)
            out[f"k-{k}"] = {
                "kind": "federated",
                "rho": fed.rho,
                "gamma": fed.gamma,
                "p_check_empty": fed.p_check_empty,
                "iteration_complexity": fed.iteration_complexity,
            }
    return out