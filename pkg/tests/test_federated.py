"""Federated rounds: compression, reconstruction, and the thinning reduction.

The reduction argument is checked twice over. First, the exact conditional
mean of one federated round (enumerating subsets, per-client coordinate
masks, and server coins) is compared against the exact conditional mean of
the uncompressed iteration under the effective thinned law; these agree as a
pure identity. Second, Monte-Carlo one-round averages of fed_step itself are
compared against that enumeration, which exercises the real stream plumbing.
"""

import numpy as np
import pytest

from multiprox import (
    CommLedger,
    ConfigurationError,
    Constant,
    ExplicitSupport,
    FedRng,
    FullBatch,
    HypothesisViolation,
    SingletonWeighted,
    UniformMinibatch,
    compress,
    derive_fed_params,
    derive_params,
    fed_run,
    fed_step,
    generate_instance,
    generator,
    initial_fed_state,
    initial_state,
    rescale,
    step,
)
from multiprox.federated import ClientState, CompressedMessage, ServerState
from multiprox.rates import fed_plan, rho_theorem1, RateInputs
from multiprox.sampling import compressed_view


def fed_rngs(omega_seed, server_seed, client_seeds):
    return FedRng(
        omega=generator(omega_seed),
        server=generator(server_seed),
        clients=[generator(s) for s in client_seeds],
    )


def small_exact_instance(seed=3, n=4, d=4, mu=1.0, l_max=3.0):
    return generate_instance("exp3", seed, n=n, d=d, mu=mu, l_max=l_max)


# ---------------------------------------------------------------------------
# Compression


class TestCompress:
    def test_message_holds_exactly_the_surviving_values(self):
        v = np.array([10.0, 20.0, 30.0, 40.0])
        msg, mask = compress(v, 2, generator(0))
        assert msg.indices.size == 2
        assert np.array_equal(msg.indices, np.sort(msg.indices))
        assert np.unique(msg.indices).size == 2
        # unscaled: the kept values ship as they are, no 1/probability factor
        assert np.array_equal(msg.values, v[msg.indices])
        assert np.array_equal(mask.kept, msg.indices)
        assert len(mask) == 2

    def test_each_coordinate_kept_with_ratio_k_over_d(self):
        rng = generator(1)
        draws = 100_000
        counts = np.zeros(4)
        v = np.arange(4.0)
        for _ in range(draws):
            msg, _ = compress(v, 2, rng)
            counts[msg.indices] += 1.0
        freq = counts / draws
        # 4 sigma for a Bernoulli(1/2) mean over 1e5 draws is about 0.0063
        assert np.abs(freq - 0.5).max() <= 0.01

    def test_payload_accounting(self):
        v = np.zeros(8)
        msg, _ = compress(v, 3, generator(2))
        assert msg.payload_reals() == 3
        assert msg.index_bits(8) == 3 * 3
        assert msg.index_bits(1) == 0
        assert CompressedMessage(np.array([0]), np.array([1.0])).index_bits(5) == 3

    def test_rejects_bad_k(self):
        with pytest.raises(ConfigurationError):
            compress(np.zeros(4), 0, generator(0))
        with pytest.raises(ConfigurationError):
            compress(np.zeros(4), 5, generator(0))


class TestRescale:
    def test_covered_and_open_coordinates(self):
        x_hat = np.array([1.0, 2.0, 3.0])
        x_prev = np.array([-1.0, -2.0, -3.0])
        messages = [
            CompressedMessage(np.array([0, 1]), np.array([0.5, 4.0])),
            CompressedMessage(np.array([1]), np.array([6.0])),
        ]
        keep = rescale(messages, x_hat, x_prev, 1.0, generator(0))
        assert abs(keep[0] - 1.5) <= 1e-15
        assert abs(keep[1] - (2.0 + 5.0)) <= 1e-15
        assert keep[2] == 3.0
        drop = rescale(messages, x_hat, x_prev, 0.0, generator(0))
        assert drop[2] == -3.0

    def test_no_messages_with_certain_acceptance_gives_forward_point(self):
        x_hat = np.array([1.0, 2.0])
        out = rescale([], x_hat, np.zeros(2), 1.0, generator(0))
        assert np.array_equal(out, x_hat)

    def test_open_coins_drawn_in_one_block_of_increasing_coordinates(self):
        x_hat = np.ones(5)
        x_prev = np.zeros(5)
        seed = 9
        out = rescale([], x_hat, x_prev, 0.5, generator(seed))
        coins = generator(seed).random(5)
        assert np.array_equal(out, np.where(coins < 0.5, x_hat, x_prev))


# ---------------------------------------------------------------------------
# Parameter derivation


class TestDeriveFedParams:
    def test_exact_path_closed_forms(self):
        inst = small_exact_instance(n=4, d=4, mu=1.0, l_max=3.0)
        dist = UniformMinibatch(4, 2)
        for k in (1, 2, 4):
            fed = derive_fed_params(inst, dist, k)
            p_check = (1.0 - k / 4.0) ** 2
            active = 1.0 - p_check
            gamma = np.sqrt(k * 2 * active / (4 * 4 * 3.0 * 1.0))
            assert abs(fed.p_check_empty - p_check) <= 1e-15
            assert abs(fed.gamma - gamma) <= 1e-15
            assert np.allclose(fed.solver.eta, 1.0 / active, atol=1e-15)
            mu_hat = 2.0 * 1.0 * 3.0 / (active * 4.0)
            assert abs(fed.solver.mu_hat_h - mu_hat) <= 1e-14
            assert abs(fed.solver.p_hat - 1.0 / (1.0 + gamma * mu_hat)) <= 1e-14
            assert abs(fed.solver.p_bar - p_check) <= 1e-15
            complexity = (1.0 / (gamma * 1.0) + 1.0 / active
                          + 4 * 4 / (k * 2) + 4 * 4 * gamma * 3.0 / (k * 2 * active))
            assert abs(fed.iteration_complexity - complexity) <= 1e-10

    def test_exact_rate_agrees_with_general_formula_on_effective_inputs(self):
        inst = small_exact_instance(n=4, d=4, mu=1.0, l_max=3.0)
        dist = UniformMinibatch(4, 2)
        for k in (1, 3):
            fed = derive_fed_params(inst, dist, k)
            eff = compressed_view(dist, k, 4)
            p_check = eff.empty_prob()
            # rebuild every rate input from the stated closed forms alone
            ri = RateInputs(
                gamma=fed.gamma,
                p=eff.inclusion_probs(),
                eta=np.full(4, 1.0 / (1.0 - p_check)),
                L_h=tuple(inst.L_h),
                mu_h=inst.mu_h,
                L_f=0.0, mu_f=0.0, mu_g=0.0,
                mu_hat_h=2.0 * 1.0 * 3.0 / ((1.0 - p_check) * 4.0),
                p_empty=p_check,
                p_hat=1.0 / (1.0 + fed.gamma * fed.solver.mu_hat_h),
                p_bar=p_check,
            )
            assert abs(fed.rho - rho_theorem1(ri)) <= 1e-12
            assert 0.0 < fed.rho < 1.0

    def test_planned_stepsize_matches_the_rates_module(self):
        inst = small_exact_instance(n=4, d=4, mu=1.0, l_max=3.0)
        for k, s in ((1, 2), (2, 3), (4, 4)):
            fed = derive_fed_params(inst, UniformMinibatch(4, s), k)
            plan = fed_plan(4, 4, k, s, 3.0, 1.0)
            assert abs(fed.gamma - plan.gamma) <= 1e-15

    def test_generic_path_delegates_to_the_effective_law(self):
        inst = small_exact_instance(n=3, d=5, mu=0.5, l_max=6.0)
        dist = SingletonWeighted([0.2, 0.3, 0.5])
        fed = derive_fed_params(inst, dist, 2, gamma=0.05)
        eff = compressed_view(dist, 2, 5)
        reference = derive_params(inst, eff, Constant(0.05))
        assert np.allclose(fed.solver.eta, reference.eta, atol=1e-15)
        assert fed.solver.p_hat == reference.p_hat
        assert fed.solver.p_bar == reference.p_bar
        assert fed.solver.mu_hat_h == reference.mu_hat_h
        assert fed.p_check_empty == eff.empty_prob()
        assert fed.iteration_complexity is None
        assert fed.rho is not None and 0.0 < fed.rho < 1.0

    def test_generic_path_requires_an_explicit_stepsize(self):
        inst = small_exact_instance(n=3, d=5, mu=0.5, l_max=6.0)
        with pytest.raises(HypothesisViolation):
            derive_fed_params(inst, SingletonWeighted([0.2, 0.3, 0.5]), 2)

    def test_uncertifiable_rate_is_reported_as_absent(self):
        inst = generate_instance("exp2", 5, d=4)
        fed = derive_fed_params(inst, UniformMinibatch(4, 2), 2, gamma=0.05)
        assert fed.rho is None

    def test_rejects_bad_k(self):
        inst = small_exact_instance()
        with pytest.raises(ConfigurationError):
            derive_fed_params(inst, UniformMinibatch(4, 2), 0)
        with pytest.raises(ConfigurationError):
            derive_fed_params(inst, UniformMinibatch(4, 2), 5)


# ---------------------------------------------------------------------------
# Round mechanics


class TestFedStep:
    def test_full_compression_window_equals_solver_step(self):
        # k = d ships every coordinate, so the round must reproduce the
        # uncompressed iteration exactly when the subset streams agree
        inst = small_exact_instance(n=6, d=5, mu=1.0, l_max=3.0)
        dist = UniformMinibatch(6, 2)
        fed = derive_fed_params(inst, dist, 5)
        assert fed.p_check_empty == 0.0
        x0 = generator(40).standard_normal(5)
        server, clients = initial_fed_state(inst, x0=x0)
        ledger = CommLedger()
        rngs = fed_rngs(123, 7, range(1000, 1006))
        state = initial_state(inst, x0=x0)
        solo = generator(123)
        for _ in range(300):
            fed_step(server, clients, inst, fed, dist, rngs, ledger)
            step(state, inst, fed.solver, dist, solo)
            assert np.abs(server.x - state.x).max() <= 1e-12
            assert np.abs(server.u_bar - state.u_bar).max() <= 1e-12
            for i in range(6):
                assert np.abs(clients[i].u - state.u[i]).max() <= 1e-12

    def test_solution_is_a_fixed_point(self):
        inst = small_exact_instance(n=4, d=4, mu=1.0, l_max=3.0)
        dist = UniformMinibatch(4, 2)
        fed = derive_fed_params(inst, dist, 2)
        server, clients = initial_fed_state(inst, x0=inst.x_star)
        assert np.abs(np.stack([c.u for c in clients]) - inst.u_star).max() <= 1e-12
        ledger = CommLedger()
        rngs = FedRng.from_seed(11, 4)
        for _ in range(100):
            fed_step(server, clients, inst, fed, dist, rngs, ledger)
        assert np.linalg.norm(server.x - inst.x_star) <= 1e-10
        assert np.abs(np.stack([c.u for c in clients]) - inst.u_star).max() <= 1e-10

    def test_average_cache_tracks_client_duals(self):
        inst = small_exact_instance(n=4, d=4, mu=1.0, l_max=3.0)
        dist = UniformMinibatch(4, 2)
        fed = derive_fed_params(inst, dist, 2)
        server, clients = initial_fed_state(inst, x0=generator(41).standard_normal(4))
        ledger = CommLedger()
        rngs = FedRng.from_seed(12, 4)
        for _ in range(200):
            fed_step(server, clients, inst, fed, dist, rngs, ledger)
            mean = np.stack([c.u for c in clients]).mean(axis=0)
            assert np.abs(server.u_bar - mean).max() <= 1e-12

    def test_dual_updates_touch_only_the_masked_coordinates(self):
        inst = small_exact_instance(n=2, d=4, mu=1.0, l_max=3.0)
        dist = FullBatch(2)
        fed = derive_fed_params(inst, dist, 1, gamma=0.1)
        server, clients = initial_fed_state(inst, x0=generator(42).standard_normal(4))
        before = np.stack([c.u for c in clients])
        rngs = fed_rngs(0, 1, [50, 51])
        fed_step(server, clients, inst, fed, dist, rngs, CommLedger())
        for i, seed in enumerate((50, 51)):
            kept = np.sort(generator(seed).choice(4, size=1, replace=False))
            changed = np.flatnonzero(np.abs(clients[i].u - before[i]) > 0)
            assert np.array_equal(changed, kept)

    def test_ledger_counts_every_participant(self):
        inst = small_exact_instance(n=4, d=5, mu=1.0, l_max=3.0)
        dist = UniformMinibatch(4, 2)
        fed = derive_fed_params(inst, dist, 2, gamma=0.05)
        _, _, ledger = fed_run(inst, fed, dist, 21, 30)
        assert ledger.rounds == 30
        assert ledger.uplink_parallel_reals == 30 * 2
        assert ledger.uplink_total_reals == 30 * 2 * 2
        assert ledger.downlink_total_reals == 30 * 5 * 2

    def test_ledger_skips_empty_rounds(self):
        inst = small_exact_instance(n=2, d=4, mu=1.0, l_max=3.0)
        dist = ExplicitSupport(2, [((), 0.7), ((0,), 0.15), ((0, 1), 0.15)])
        fed = derive_fed_params(inst, dist, 2, gamma=0.05)
        T = 200
        rngs = fed_rngs(60, 61, [62, 63])
        server, clients = initial_fed_state(inst)
        ledger = CommLedger()
        for _ in range(T):
            fed_step(server, clients, inst, fed, dist, rngs, ledger)
        replay = generator(60)
        active_rounds = 0
        participants = 0
        for _ in range(T):
            members = dist.sample(replay).members
            active_rounds += bool(members)
            participants += len(members)
        assert ledger.rounds == T
        assert ledger.uplink_parallel_reals == 2 * active_rounds
        assert ledger.uplink_total_reals == 2 * participants
        assert ledger.downlink_total_reals == 4 * participants


# ---------------------------------------------------------------------------
# The thinning reduction, exactly and empirically


def one_round_branches(instance, fed, x, u):
    """Forward-backward point and full per-client corrections at (x, u)."""
    params = fed.solver
    gamma = params.schedule.gamma
    xhat = instance.g.prox(gamma, x - gamma * (instance.f.grad(x) + u.mean(axis=0)))
    corrections = []
    for i in range(instance.n):
        ge = gamma * float(params.eta[i])
        y = instance.h[i].prox(ge, xhat + ge * u[i])
        corrections.append(y - xhat)
    return xhat, corrections


def exact_fed_mean(instance, fed, dist, x, u):
    """E[x^+ | x, u] of one federated round, enumerated coordinate-wise."""
    params = fed.solver
    xhat, corr = one_round_branches(instance, fed, x, u)
    r = fed.k / instance.d
    expected = np.zeros(instance.d)
    for members, prob in dist.enumerate_support():
        m = len(members)
        for j in range(instance.d):
            acc = 0.0
            for pattern in range(1 << m):
                covering = [members[b] for b in range(m) if pattern >> b & 1]
                w = r ** len(covering) * (1.0 - r) ** (m - len(covering))
                if covering:
                    val = xhat[j] + np.mean([corr[i][j] for i in covering])
                else:
                    val = params.p_hat * xhat[j] + (1.0 - params.p_hat) * x[j]
                acc += w * val
            expected[j] += prob * acc
    return expected


def exact_effective_mean(instance, fed, x, u):
    """E[x^+ | x, u] of the uncompressed iteration under the effective law."""
    params = fed.solver
    xhat, corr = one_round_branches(instance, fed, x, u)
    expected = np.zeros(instance.d)
    for members, prob in fed.effective.enumerate_support():
        if members:
            val = xhat + np.mean([corr[i] for i in members], axis=0)
        else:
            val = params.p_hat * xhat + (1.0 - params.p_hat) * x
        expected += prob * val
    return expected


class TestThinningReduction:
    def setup_method(self):
        self.inst = small_exact_instance(seed=8, n=3, d=3, mu=1.0, l_max=3.0)
        self.dist = UniformMinibatch(3, 2)
        self.fed = derive_fed_params(self.inst, self.dist, 1)
        rng = generator(70)
        self.x = self.inst.x_star + rng.standard_normal(3)
        self.u = self.inst.u_star + rng.standard_normal((3, 3))

    def test_enumeration_matches_the_effective_law_identity(self):
        direct = exact_fed_mean(self.inst, self.fed, self.dist, self.x, self.u)
        via_law = exact_effective_mean(self.inst, self.fed, self.x, self.u)
        assert np.abs(direct - via_law).max() <= 1e-12

    def test_fed_step_realizes_the_enumerated_mean(self):
        exact = exact_fed_mean(self.inst, self.fed, self.dist, self.x, self.u)
        u_bar = self.u.mean(axis=0)
        draws = 20_000
        samples = np.empty((draws, 3))
        for s in range(draws):
            server = ServerState(t=0, x=self.x.copy(), u_bar=u_bar.copy())
            clients = [ClientState(u=self.u[i].copy()) for i in range(3)]
            fed_step(server, clients, self.inst, self.fed, self.dist,
                     FedRng.from_seed(10_000 + s, 3), CommLedger())
            samples[s] = server.x
        mean = samples.mean(axis=0)
        stderr = samples.std(axis=0, ddof=1) / np.sqrt(draws)
        assert np.all(np.abs(mean - exact) <= 4.5 * stderr + 1e-12)


# ---------------------------------------------------------------------------
# fed_run


class TestFedRun:
    def test_zero_rounds_reports_once(self):
        inst = small_exact_instance()
        dist = UniformMinibatch(4, 2)
        fed = derive_fed_params(inst, dist, 2)
        rows = []
        fed_run(inst, fed, dist, 5, 0,
                sink=lambda t, sqd, psi, comm: rows.append((t, sqd, psi, comm)))
        assert len(rows) == 1
        assert rows[0][0] == 0
        assert rows[0][3] == (0, 0)
        assert rows[0][2] is not None

    def test_negative_round_count_rejected(self):
        inst = small_exact_instance()
        fed = derive_fed_params(inst, UniformMinibatch(4, 2), 2)
        with pytest.raises(ConfigurationError):
            fed_run(inst, fed, UniformMinibatch(4, 2), 5, -1)

    def test_cadence_and_cumulative_communication(self):
        inst = small_exact_instance(n=4, d=4, mu=1.0, l_max=3.0)
        dist = UniformMinibatch(4, 2)
        fed = derive_fed_params(inst, dist, 2)
        rows = []
        fed_run(inst, fed, dist, 9, 20, cadence=7,
                sink=lambda t, sqd, psi, comm: rows.append((t, comm)))
        assert [t for t, _ in rows] == [0, 7, 14, 20]
        # never-empty uniform participation: 2 clients times k=2 per round
        assert [c for _, c in rows] == [(0, 0), (14, 28), (28, 56), (40, 80)]

    def test_same_seed_gives_identical_runs(self):
        inst = small_exact_instance(n=4, d=4, mu=1.0, l_max=3.0)
        dist = UniformMinibatch(4, 2)
        fed = derive_fed_params(inst, dist, 2)
        out = []
        for _ in range(2):
            rows = []
            server, clients, ledger = fed_run(
                inst, fed, dist, 99, 80,
                sink=lambda t, sqd, psi, comm: rows.append((t, sqd, psi, comm)),
            )
            out.append((rows, server.x.copy(), np.stack([c.u for c in clients])))
        assert out[0][0] == out[1][0]
        assert np.array_equal(out[0][1], out[1][1])
        assert np.array_equal(out[0][2], out[1][2])

    def test_lyapunov_column_absent_without_a_certified_rate(self):
        inst = generate_instance("exp2", 5, d=4)
        fed = derive_fed_params(inst, UniformMinibatch(4, 2), 2, gamma=0.05)
        rows = []
        fed_run(inst, fed, UniformMinibatch(4, 2), 3, 5,
                sink=lambda t, sqd, psi, comm: rows.append(psi))
        assert all(p is None for p in rows)

    def test_certified_configuration_converges(self):
        inst = small_exact_instance(n=4, d=4, mu=1.0, l_max=3.0)
        dist = UniformMinibatch(4, 2)
        fed = derive_fed_params(inst, dist, 2)
        server, clients, ledger = fed_run(inst, fed, dist, 77, 400)
        assert float((server.x - inst.x_star) @ (server.x - inst.x_star)) <= 1e-10
        assert ledger.rounds == 400

    def test_initial_state_shapes(self):
        inst = small_exact_instance()
        with pytest.raises(ConfigurationError):
            initial_fed_state(inst, x0=np.zeros(3))
        server, clients = initial_fed_state(inst)
        assert server.t == 0
        assert np.array_equal(
            server.u_bar, np.stack([c.u for c in clients]).mean(axis=0)
        )
