"""Compressed federated variant of the multi-proximal iteration.

Clients hold their dual vectors; the server holds the primal point and the
dual average. Each round, participating clients send their proximal
correction through an unscaled rand-k mask (k coordinates, no 1/probability
inflation), and the server rebuilds the next point coordinate by
coordinate: covered coordinates average the received corrections, uncovered
ones fall back to the acceptance coin between the forward-backward point
and the previous point.

Per coordinate this reproduces the uncompressed iteration under a thinned
participation law, which is exactly how the certified rate is derived: the
rate inputs are those of the effective law from
:func:`multiprox.sampling.compressed_view`.

Stream discipline: subsets come from one generator, client masks from one
generator per client, and the server's per-coordinate coins from a server
generator in increasing coordinate order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, HypothesisViolation, NumericalDivergence
from .problems import ProblemInstance, is_infinite
from .rates import RateInputs, rho_theorem1
from .rng import SeedLike, seed_sequence
from .sampling import SamplingDistribution, UniformMinibatch, compressed_view
from .solver import (
    LINEAR_SMOOTH,
    Constant,
    LyapunovSpec,
    SolverParams,
    SolverState,
    TRUST_RADIUS,
    derive_params,
    gamma_at,
    lyapunov,
    make_lyapunov_spec,
)

Array = np.ndarray


@dataclass(frozen=True)
class RandKMask:
    """Sorted coordinate subset kept by one compression draw."""

    kept: Array

    def __len__(self) -> int:
        return self.kept.size


@dataclass(frozen=True)
class CompressedMessage:
    """Exactly the k surviving values of one client's correction, nothing else."""

    indices: Array
    values: Array

    def payload_reals(self) -> int:
        return int(self.values.size)

    def index_bits(self, d: int) -> int:
        # Index overhead: k addresses of ceil(log2 d) bits each.
        if d <= 1:
            return 0
        return int(self.indices.size) * math.ceil(math.log2(d))


@dataclass
class ServerState:
    t: int
    x: Array
    u_bar: Array


@dataclass
class ClientState:
    u: Array


@dataclass
class CommLedger:
    """Cumulative communication counts, in float64 reals.

    ``uplink_parallel_reals`` counts one client's worth per round (clients
    transmit simultaneously); ``uplink_total_reals`` counts every client.
    Downlink (the broadcast point) is tracked separately and excluded from
    headline numbers. All counters are nondecreasing.
    """

    rounds: int = 0
    uplink_parallel_reals: int = 0
    uplink_total_reals: int = 0
    downlink_total_reals: int = 0


@dataclass
class FedRng:
    """The generator bundle for one federated run; see the module docstring."""

    omega: np.random.Generator
    server: np.random.Generator
    clients: list[np.random.Generator]

    @classmethod
    def from_seed(cls, seed: SeedLike, n: int) -> "FedRng":
        children = seed_sequence(seed).spawn(n + 2)
        make = lambda c: np.random.Generator(np.random.Philox(c))
        return cls(
            omega=make(children[0]),
            server=make(children[1]),
            clients=[make(c) for c in children[2:]],
        )


def compress(v: Array, k: int, rng: np.random.Generator) -> tuple[CompressedMessage, RandKMask]:
    """Unscaled rand-k: keep k uniformly random coordinates of v as they are."""
    d = v.size
    if not 1 <= k <= d:
        raise ConfigurationError(f"need 1 <= k <= d, got k={k}, d={d}")
    kept = np.sort(rng.choice(d, size=k, replace=False))
    return CompressedMessage(indices=kept, values=v[kept].copy()), RandKMask(kept=kept)


def rescale(
    messages: list[CompressedMessage],
    x_hat: Array,
    x_prev: Array,
    p_hat: float,
    rng: np.random.Generator,
) -> Array:
    """Per-coordinate server reconstruction of the next point.

    A coordinate covered by m > 0 messages takes the forward-backward value
    plus the mean of the m received corrections. Uncovered coordinates flip
    the acceptance coin, one uniform per coordinate in increasing order.
    """
    d = x_hat.size
    sums = np.zeros(d)
    counts = np.zeros(d)
    for msg in messages:
        sums[msg.indices] += msg.values
        counts[msg.indices] += 1.0
    covered = counts > 0
    x_next = np.empty(d)
    x_next[covered] = x_hat[covered] + sums[covered] / counts[covered]
    open_idx = np.flatnonzero(~covered)
    if open_idx.size:
        coins = rng.random(open_idx.size)
        x_next[open_idx] = np.where(
            coins < p_hat, x_hat[open_idx], x_prev[open_idx]
        )
    return x_next


# ---------------------------------------------------------------------------
# Parameter derivation


@dataclass(frozen=True)
class FedParams:
    """Derived configuration of one federated run."""

    solver: SolverParams
    k: int
    effective: SamplingDistribution
    p_check_empty: float
    gamma: float
    rho: float | None = None
    iteration_complexity: float | None = None


def derive_fed_params(
    instance: ProblemInstance,
    dist: SamplingDistribution,
    k: int,
    gamma: float | None = None,
) -> FedParams:
    """Parameters for compressed federated runs.

    The theorem-exact path (no smooth term, no simple-term curvature,
    identical strongly convex smooth components, uniform size-s
    participation) certifies a rate and, when ``gamma`` is omitted, fills in
    the planned stepsize. Anything else takes the generic path through the
    effective law and needs an explicit ``gamma``.
    """
    if not 1 <= k <= instance.d:
        raise ConfigurationError(f"need 1 <= k <= d, got k={k}, d={instance.d}")
    effective = compressed_view(dist, k, instance.d)
    exact = (
        instance.f.L == 0.0
        and instance.f.mu == 0.0
        and instance.g.mu == 0.0
        and isinstance(dist, UniformMinibatch)
        and not any(is_infinite(L) for L in instance.L_h)
        and len({float(L) for L in instance.L_h}) == 1
        and len(set(instance.mu_h.tolist())) == 1
        and float(instance.mu_h[0]) > 0.0
    )
    if not exact:
        if gamma is None:
            raise HypothesisViolation(
                "a planned stepsize exists only on the theorem-exact path; "
                "pass gamma explicitly for this configuration"
            )
        solver_params = derive_params(instance, effective, Constant(gamma))
        ri = _effective_rate_inputs(instance, effective, solver_params, gamma)
        try:
            rho = rho_theorem1(ri)
        except HypothesisViolation:
            rho = None
        return FedParams(
            solver=solver_params,
            k=k,
            effective=effective,
            p_check_empty=effective.empty_prob(),
            gamma=gamma,
            rho=rho,
        )

    n, d, s = instance.n, instance.d, dist.s
    L = float(instance.L_h[0])
    mu = float(instance.mu_h[0])
    p_check = (1.0 - k / d) ** s
    active = 1.0 - p_check
    if gamma is None:
        gamma = math.sqrt(k * s * active / (d * n * L * mu))
    eta = np.full(n, 1.0 / active)
    mu_hat = 2.0 * mu * L / (active * (L + mu))
    params = SolverParams(
        eta=eta,
        p_hat=1.0 / (1.0 + gamma * mu_hat),
        p_bar=p_check,
        mu_hat_h=mu_hat,
        schedule=Constant(gamma),
    )
    rho = rho_theorem1(_effective_rate_inputs(instance, effective, params, gamma))
    iteration = (
        1.0 / (gamma * mu)
        + 1.0 / active
        + d * n / (k * s)
        + d * n * gamma * L / (k * s * active)
    )
    return FedParams(
        solver=params,
        k=k,
        effective=effective,
        p_check_empty=p_check,
        gamma=gamma,
        rho=rho,
        iteration_complexity=iteration,
    )


def _effective_rate_inputs(instance, effective, params, gamma) -> RateInputs:
    return RateInputs(
        gamma=gamma,
        p=effective.inclusion_probs(),
        eta=params.eta,
        L_h=tuple(instance.L_h),
        mu_h=instance.mu_h,
        L_f=instance.f.L,
        mu_f=instance.f.mu,
        mu_g=instance.g.mu,
        mu_hat_h=params.mu_hat_h,
        p_empty=effective.empty_prob(),
        p_hat=params.p_hat,
        p_bar=params.p_bar,
    )


# ---------------------------------------------------------------------------
# The round


def initial_fed_state(
    instance: ProblemInstance, x0: Array | None = None
) -> tuple[ServerState, list[ClientState]]:
    x = np.zeros(instance.d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    if x.shape != (instance.d,):
        raise ConfigurationError(f"initial point has shape {x.shape}, needs ({instance.d},)")
    clients = [
        ClientState(u=o.grad_at(x) if o.grad_at is not None else np.zeros(instance.d))
        for o in instance.h
    ]
    u_bar = np.stack([c.u for c in clients]).mean(axis=0)
    return ServerState(t=0, x=x, u_bar=u_bar), clients


def fed_step(
    server: ServerState,
    clients: list[ClientState],
    instance: ProblemInstance,
    fed: FedParams,
    dist: SamplingDistribution,
    rngs: FedRng,
    ledger: CommLedger,
) -> None:
    """One federated round, in place, with communication accounting."""
    params = fed.solver
    gamma = gamma_at(params.schedule, server.t)
    x = server.x
    xhat = instance.g.prox(gamma, x - gamma * (instance.f.grad(x) + server.u_bar))
    subset = dist.sample(rngs.omega)
    messages: list[CompressedMessage] = []
    scaled_sum = np.zeros(instance.d)
    for i in subset.members:
        ge = gamma * float(params.eta[i])
        u_i = clients[i].u
        y = instance.h[i].prox(ge, xhat + ge * u_i)
        msg, _ = compress(y - xhat, fed.k, rngs.clients[i])
        # Only the coordinates that survived compression move; the rest of
        # the dual vector stays, so u_i generally leaves the subgradient set.
        u_i[msg.indices] -= msg.values / ge
        scaled_sum[msg.indices] += msg.values / float(params.eta[i])
        messages.append(msg)
    server.x = rescale(messages, xhat, x, params.p_hat, rngs.server)
    server.u_bar = server.u_bar - scaled_sum / (instance.n * gamma)
    server.t += 1
    ledger.rounds += 1
    if messages:
        ledger.uplink_parallel_reals += fed.k
        ledger.uplink_total_reals += fed.k * len(messages)
        ledger.downlink_total_reals += instance.d * len(messages)
    if not np.all(np.isfinite(server.x)) or float(np.linalg.norm(server.x)) > TRUST_RADIUS:
        raise NumericalDivergence("server iterate left the trust region", server.t)


def _stacked_state(server: ServerState, clients: list[ClientState]) -> SolverState:
    u = np.stack([c.u for c in clients])
    return SolverState(t=server.t, x=server.x, u=u, u_bar=server.u_bar)


def fed_run(
    instance: ProblemInstance,
    fed: FedParams,
    dist: SamplingDistribution,
    rngs: FedRng | SeedLike,
    T: int,
    sink: Callable[[int, float, float | None, tuple[int, int]], None] | None = None,
    x0: Array | None = None,
    cadence: int | Callable[[int], bool] = 1,
) -> tuple[ServerState, list[ClientState], CommLedger]:
    """Run T rounds; the sink receives (t, squared distance, Lyapunov, comm).

    ``comm`` is the cumulative (parallel, total) uplink real count. The
    Lyapunov value uses the general linear-rate function under the effective
    law when that rate is certified, and is absent otherwise.
    """
    if T < 0:
        raise ConfigurationError(f"negative round count {T}")
    if not isinstance(rngs, FedRng):
        rngs = FedRng.from_seed(rngs, instance.n)
    server, clients = initial_fed_state(instance, x0=x0)
    ledger = CommLedger()
    spec: LyapunovSpec | None = None
    if fed.rho is not None:
        spec = make_lyapunov_spec(LINEAR_SMOOTH, instance, fed.effective, fed.solver)
    if isinstance(cadence, int):
        every = max(1, cadence)
        selected = lambda t: t % every == 0
    else:
        selected = cadence

    def emit():
        if sink is None:
            return
        psi = None
        if spec is not None:
            state = _stacked_state(server, clients)
            psi = lyapunov(state, instance, fed.solver, spec)
        diff = server.x - instance.x_star
        sink(
            server.t,
            float(diff @ diff),
            psi,
            (ledger.uplink_parallel_reals, ledger.uplink_total_reals),
        )

    emit()
    for _ in range(T):
        fed_step(server, clients, instance, fed, dist, rngs, ledger)
        if server.t == T or selected(server.t):
            emit()
    return server, clients, ledger