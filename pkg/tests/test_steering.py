"""Tests for the payment schemes, hyperparameter schedules, and steering loops."""

import itertools

import numpy as np
import pytest

from gamesteer.benchmarks import BenchmarkSpec, build_named, target_equilibrium
from gamesteer.games import (
    SequenceFormStrategy,
    build_game,
    decide,
    leaf,
    pure_strategy_from_choices,
    random_strategy,
    reach_products,
    terminal_distribution,
    uniform_strategy,
)
from gamesteer.learners import (
    CfrPlus,
    Mwu,
    StubbornEquilibriumAdversary,
    measured_regret,
    normal_form_tensors,
)
from gamesteer.steering import (
    HorizonTooShortError,
    Hyperparams,
    TargetNotEquilibriumError,
    deviation_mass,
    directness_gap,
    dynamic_alpha,
    ff_payment,
    guarantee_bounds,
    nf_payment,
    run_full_feedback_steer,
    run_normal_form_steer,
    run_trajectory_steer,
    schedule,
    traj_payment,
    traj_payment_vectors,
    verify_target,
)


def _game_and_target(tag, **params):
    spec = BenchmarkSpec(name=tag, params=params)
    game = build_named(tag, **params)
    return game, target_equilibrium(spec, game)


def _three_player_match_game():
    """One-shot three-player game: everyone earns 1 iff all pick action A."""

    def third(i, j):
        def pay(k):
            return leaf(*((1.0, 1.0, 1.0) if (i, j, k) == (0, 0, 0) else (0.0, 0.0, 0.0)))

        return decide(2, "p2-move", [("A", pay(0)), ("B", pay(1))])

    def second(i):
        return decide(1, "p1-move", [("A", third(i, 0)), ("B", third(i, 1))])

    root = decide(0, "p0-move", [("A", second(0)), ("B", second(1))])
    game = build_game(root, 3, name="three-way match")
    target = [pure_strategy_from_choices(game, p, [0]) for p in range(3)]
    return game, target


class _FixedStrategyLearner:
    """A learner stub that plays one strategy forever and ignores feedback."""

    def __init__(self, strategy):
        self._strategy = strategy

    def strategy(self):
        return self._strategy

    def observe(self, utility):
        pass


# ---------------------------------------------------------------------------
# One-shot payments
# ---------------------------------------------------------------------------


def test_one_shot_payment_is_alpha_for_every_player_when_all_are_direct():
    game, d = _game_and_target("coordination")
    for alpha in (0.0, 0.1, 1.0):
        for i in range(2):
            assert nf_payment(d, d, i, alpha, game=game) == pytest.approx(alpha)


def test_one_shot_payment_insures_the_direct_player_against_a_deviator():
    game, d = _game_and_target("coordination")
    x = [d[0], pure_strategy_from_choices(game, 1, [0])]  # second player plays A
    assert nf_payment(d, x, 0, 0.1) == pytest.approx(1.1)
    assert nf_payment(d, x, 1, 0.1) == pytest.approx(0.0)


def test_one_shot_payment_with_uniform_opponent_averages_bonus_and_insurance():
    game, d = _game_and_target("coordination")
    for alpha in (0.05, 0.3):
        x = [d[0], uniform_strategy(game, 1)]
        assert nf_payment(d, x, 0, alpha) == pytest.approx(alpha + 0.5)


def test_one_shot_payment_validates_alpha_and_rejects_multistage_games():
    game, d = _game_and_target("coordination")
    with pytest.raises(ValueError):
        nf_payment(d, d, 0, 1.5)
    with pytest.raises(ValueError):
        nf_payment(d, d, 0, -0.1)
    sheriff = build_named("sheriff")
    pures = [pure_strategy_from_choices(sheriff, p, [0] * sheriff.seq[p].n_infosets) for p in range(2)]
    with pytest.raises(ValueError):
        nf_payment(pures, pures, 0, 0.1, game=sheriff)


def test_one_shot_direct_action_dominates_every_alternative_by_the_bonus():
    """With payments added, the target action beats any other action by at
    least alpha against every pure opponent profile."""
    alpha = 0.25
    for tag, d_choices in (("coordination", None), ("matching", (0, 0))):
        game = build_named(tag)
        if d_choices is None:
            spec = BenchmarkSpec(name=tag)
            d = target_equilibrium(spec, game)
        else:
            d = [pure_strategy_from_choices(game, p, [c]) for p, c in enumerate(d_choices)]
        tensors = normal_form_tensors(game)
        n_act = [int(game.seq[p].infoset_n_actions[0]) for p in range(2)]
        for i in range(2):
            j = 1 - i
            for b in range(n_act[j]):
                x_j = pure_strategy_from_choices(game, j, [b])
                values = []
                for a in range(n_act[i]):
                    x_i = pure_strategy_from_choices(game, i, [a])
                    x = [x_i, x_j] if i == 0 else [x_j, x_i]
                    idx = (a, b) if i == 0 else (b, a)
                    values.append(tensors[i][idx] + nf_payment(d, x, i, alpha))
                d_action = int(np.argmax(d[i].mass[1:]))
                others = np.delete(np.asarray(values), d_action)
                assert values[d_action] >= others.max() + alpha - 1e-12


# ---------------------------------------------------------------------------
# Observed-strategy payments
# ---------------------------------------------------------------------------


def test_observed_strategy_payment_at_the_target_counts_target_sequences():
    game, d = _game_and_target("stag_hunt")
    for alpha in (0.05, 0.2):
        for i in range(2):
            ones = float(np.sum(d[i].mass == 1.0))
            assert ones == 2.0
            assert ff_payment(game, d, d, i, alpha) == pytest.approx(alpha * ones)


def test_observed_strategy_payment_compensates_direct_player_for_opponent_deviation():
    # Second player defects to the risky action while the first stays direct:
    # the first player's lost utility (0.5) is refunded on top of the bonus.
    game, d = _game_and_target("stag_hunt")
    x = [d[0], pure_strategy_from_choices(game, 1, [0])]
    assert ff_payment(game, d, x, 0, 0.1) == pytest.approx(0.5 + 2 * 0.1)
    assert ff_payment(game, d, x, 1, 0.1) == pytest.approx(0.1)


def test_observed_strategy_payment_requires_equilibrium_target_and_small_alpha():
    game, d = _game_and_target("stag_hunt")
    bad = [pure_strategy_from_choices(game, 0, [1]), pure_strategy_from_choices(game, 1, [0])]
    with pytest.raises(TargetNotEquilibriumError):
        ff_payment(game, bad, bad, 0, 0.1)
    with pytest.raises(ValueError):
        ff_payment(game, d, d, 0, 0.21)  # above 1/|Z| = 1/5


def test_payment_schemes_are_nonnegative_capped_and_linear_in_own_strategy():
    rng = np.random.default_rng(7)
    alpha_nf, alpha_ff, P = 0.3, 0.05, 2.5
    cases = []
    for tag in ("stag_hunt", "coordination"):
        game, d = _game_and_target(tag)
        cases.append((tag, game, d))
    game, d = _game_and_target("lower_bound", n=3)
    cases.append(("lower_bound", game, d))
    for tag, game, d in cases:
        one_shot = all(game.seq[p].n_infosets == 1 for p in range(game.n_players)) and tag != "stag_hunt"
        a_ff = min(alpha_ff, 1.0 / game.n_terminals)
        q = traj_payment_vectors(game, d, a_ff, P)
        assert q.min() >= 0 and q.max() <= P + 1e-12
        for trial in range(40):
            x = [random_strategy(game, p, rng) for p in range(game.n_players)]
            y = [random_strategy(game, p, rng) for p in range(game.n_players)]
            theta = rng.random()
            for i in range(game.n_players):
                mix = [s.copy() for s in x]
                mix[i] = SequenceFormStrategy(
                    i, theta * x[i].mass + (1 - theta) * y[i].mass
                )
                alt = [s.copy() for s in x]
                alt[i] = y[i]
                if one_shot:
                    p_x = nf_payment(d, x, i, alpha_nf)
                    p_y = nf_payment(d, alt, i, alpha_nf)
                    p_mix = nf_payment(d, mix, i, alpha_nf)
                    assert 0.0 <= p_x <= 1.0 + alpha_nf + 1e-12
                    assert p_mix == pytest.approx(theta * p_x + (1 - theta) * p_y, abs=1e-9)
                f_x = ff_payment(game, d, x, i, a_ff)
                f_y = ff_payment(game, d, alt, i, a_ff)
                f_mix = ff_payment(game, d, mix, i, a_ff)
                assert 0.0 <= f_x <= 3.0 + 1e-12
                assert f_mix == pytest.approx(theta * f_x + (1 - theta) * f_y, abs=1e-9)
                e_x = float(np.dot(terminal_distribution(game, x).probs, q[i]))
                e_y = float(np.dot(terminal_distribution(game, alt).probs, q[i]))
                e_mix = float(np.dot(terminal_distribution(game, mix).probs, q[i]))
                assert 0.0 <= e_x <= P + 1e-12
                assert e_mix == pytest.approx(theta * e_x + (1 - theta) * e_y, abs=1e-9)


# ---------------------------------------------------------------------------
# Trajectory payments
# ---------------------------------------------------------------------------


def test_trajectory_payment_indicator_cases():
    game, d = _three_player_match_game()
    alpha, P = 0.4, 3.0
    q = traj_payment_vectors(game, d, alpha, P)

    def terminal_for(actions):
        want = np.array([a + 1 for a in actions])
        hits = np.nonzero((game.terminal_seq.T == want).all(axis=1))[0]
        assert hits.size == 1
        return int(hits[0])

    z_all_direct = terminal_for((0, 0, 0))
    assert np.allclose(q[:, z_all_direct], alpha)
    z_one_dev = terminal_for((1, 0, 0))
    assert np.allclose(q[:, z_one_dev], [0.0, P, P])
    z_two_dev = terminal_for((1, 1, 0))
    assert np.allclose(q[:, z_two_dev], [0.0, 0.0, P])
    z_all_dev = terminal_for((1, 1, 1))
    assert np.allclose(q[:, z_all_dev], 0.0)
    for i in range(3):
        assert traj_payment(game, d, i, z_two_dev, alpha, P) == q[i, z_two_dev]
    with pytest.raises(ValueError):
        traj_payment_vectors(game, d, alpha, 0.5)
    with pytest.raises(ValueError):
        traj_payment_vectors(game, d, -0.1, P)


def test_trajectory_expected_payment_matches_closed_form():
    rng = np.random.default_rng(11)
    game, d = _game_and_target("stag_hunt")
    alpha, P = 0.15, 4.0
    q = traj_payment_vectors(game, d, alpha, P)
    d_hat = reach_products(game, d)
    for trial in range(20):
        x = [random_strategy(game, p, rng) for p in range(2)]
        probs = terminal_distribution(game, x).probs
        for i in range(2):
            direct_i = d[i].mass[game.terminal_seq[i]]
            closed = alpha * float(np.dot(probs, d_hat)) + P * float(
                np.dot(probs, direct_i * (1.0 - d_hat))
            )
            assert float(np.dot(probs, q[i])) == pytest.approx(closed, abs=1e-9)


def test_obedience_union_inequality_bounds_subset_reach_gaps():
    """The average L1 gap of any player subset's joint reach is at most |Z|
    times the total per-player overlap deficit with the target."""
    rng = np.random.default_rng(3)
    for tag in ("stag_hunt", "coordination"):
        game, d = _game_and_target(tag)
        n, Z = game.n_players, game.n_terminals
        history = [
            [random_strategy(game, p, rng) for p in range(n)] for _ in range(25)
        ]
        mean_mass = [
            np.mean([x[p].mass for x in history], axis=0) for p in range(n)
        ]
        delta = sum(
            float(np.dot(d[p].mass, d[p].mass - mean_mass[p])) for p in range(n)
        )
        for r in range(1, n + 1):
            for subset in itertools.combinations(range(n), r):
                d_sub = np.ones(Z)
                for p in subset:
                    d_sub *= d[p].mass[game.terminal_seq[p]]
                total = 0.0
                for x in history:
                    x_sub = np.ones(Z)
                    for p in subset:
                        x_sub *= x[p].mass[game.terminal_seq[p]]
                    total += float(np.abs(x_sub - d_sub).sum())
                assert total / len(history) <= Z * delta + 1e-9


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


def test_schedule_one_shot_alpha_is_the_square_root_of_epsilon():
    hyper = schedule("normal_form", 0.8, 1000, n=2, Z=4)
    assert hyper.epsilon == pytest.approx(0.0064)
    assert hyper.alpha == pytest.approx(0.08)
    assert hyper.cap == pytest.approx(1.08)


def test_schedule_trajectory_example_rates():
    hyper = schedule("trajectory", lambda T: 1e-4 * T, 1000, n=2, Z=5)
    assert hyper.alpha == pytest.approx(4 * np.sqrt(5) * 0.1, rel=1e-12)
    assert hyper.alpha == pytest.approx(0.894427, abs=1e-6)
    assert hyper.cap == pytest.approx(44.721360, abs=1e-6)
    assert hyper.epsilon == pytest.approx(1e-4)


def test_schedule_errors_when_the_horizon_is_too_short():
    with pytest.raises(HorizonTooShortError) as info:
        schedule("full_feedback", 1.125, 100, n=2, Z=5)
    assert info.value.minimal_T == 225
    ok = schedule("full_feedback", 1.125, 225, n=2, Z=5)
    assert ok.alpha <= 0.2 + 1e-12
    with pytest.raises(HorizonTooShortError):
        schedule("full_feedback", 1.125, 224, n=2, Z=5)


def test_schedule_clamps_alpha_when_not_enforcing():
    hyper = schedule("full_feedback", 1.125, 100, n=2, Z=5, enforce=False)
    assert hyper.alpha == pytest.approx(0.2)
    assert hyper.clamped is True
    untouched = schedule("full_feedback", 1.125, 225, n=2, Z=5, enforce=False)
    assert untouched.clamped is False


def test_schedule_online_variants_compute_multipliers():
    hyper = schedule("online", 1.0, 1000, n=2, Z=5, mediator_regret=2.0)
    eps = (2.0 + 4 * 2 * 1.0) / 1000
    assert hyper.epsilon == pytest.approx(eps)
    assert hyper.alpha == pytest.approx(eps ** (2 / 3) * 5 ** (-1 / 3))
    assert hyper.lam == pytest.approx(5 ** (2 / 3) * eps ** (-1 / 3))
    nf = schedule("nf_online", 1.0, 1000, n=2, Z=4, mediator_regret=2.0, max_actions=3)
    assert nf.alpha == pytest.approx(3 ** (1 / 3) * 0.01 ** (2 / 3))
    assert nf.lam == pytest.approx(24 ** (1 / 3) * 0.01 ** (-1 / 3))
    with pytest.raises(ValueError):
        schedule("online", 1.0, 1000, n=2, Z=5)
    with pytest.raises(ValueError):
        schedule("nf_online", 1.0, 1000, n=2, Z=4, mediator_regret=2.0)
    with pytest.raises(ValueError):
        schedule("mystery", 1.0, 1000, n=2, Z=4)
    with pytest.raises(ValueError):
        schedule("normal_form", 1.0, 0, n=2, Z=4)


def test_guarantee_bounds_report_the_stated_rates():
    nf = guarantee_bounds("normal_form", Hyperparams(0.2, 1.2, 0.04, 100), Z=4)
    assert nf["payment"] == pytest.approx(0.4)
    traj = guarantee_bounds("trajectory", Hyperparams(0.89, 44.7, 1e-4, 100), Z=5)
    assert traj["payment"] == pytest.approx(8 * np.sqrt(5) * 0.1)
    assert traj["gap"] == pytest.approx(0.02)
    with pytest.raises(ValueError):
        guarantee_bounds("online", Hyperparams(0.1, 3.0, 1e-3, 100, lam=2.0), Z=5)
    online = guarantee_bounds(
        "online", Hyperparams(0.1, 3.0, 1e-3, 100, lam=2.0), Z=5, lam_star=2.0
    )
    assert online["payment"] == pytest.approx(7 * 2.0 * 5 ** (4 / 3) * 0.1)


# ---------------------------------------------------------------------------
# Metric primitives
# ---------------------------------------------------------------------------


def test_dynamic_alpha_scales_with_the_recent_gap_up_to_the_cap():
    assert dynamic_alpha(0.0, base=0.1, cap=1.0) == 0.0
    assert dynamic_alpha(2.0, base=0.1, cap=0.15) == pytest.approx(0.15)
    assert dynamic_alpha(0.5, base=0.1, cap=1.0) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        dynamic_alpha(-0.01, base=0.1, cap=1.0)


def test_directness_gap_matches_brute_force_and_validates_input():
    rng = np.random.default_rng(5)
    game, d = _game_and_target("stag_hunt")
    d_hat = reach_products(game, d)
    history = []
    for _ in range(7):
        x = [random_strategy(game, p, rng) for p in range(2)]
        history.append(reach_products(game, x))
    brute = np.abs(np.mean(history, axis=0) - d_hat).sum()
    assert directness_gap(history, d_hat) == pytest.approx(brute, abs=1e-12)
    assert directness_gap([d_hat, d_hat], d_hat) == 0.0
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    assert directness_gap([a], b) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        directness_gap([], d_hat)
    with pytest.raises(ValueError):
        directness_gap([np.ones(3)], np.ones(4))


def test_verify_target_accepts_pure_equilibria_and_rejects_the_rest():
    game, d = _game_and_target("stag_hunt")
    verify_target(game, d)
    all_hare = [pure_strategy_from_choices(game, p, [0]) for p in range(2)]
    verify_target(game, all_hare)  # risk-dominant equilibrium is also pure Nash
    lopsided = [d[0], all_hare[1]]
    with pytest.raises(TargetNotEquilibriumError):
        verify_target(game, lopsided)
    with pytest.raises(TargetNotEquilibriumError):
        verify_target(game, [d[0], uniform_strategy(game, 1)])
    with pytest.raises(TargetNotEquilibriumError):
        verify_target(game, [d[0]])


def test_deviation_mass_is_zero_at_the_target_and_counts_stray_reach():
    game, d = _game_and_target("stag_hunt")
    assert np.allclose(deviation_mass(game, d, d), 0.0)
    x = [d[0], pure_strategy_from_choices(game, 1, [0])]
    assert np.allclose(deviation_mass(game, d, x), [0.0, 1.0])


# ---------------------------------------------------------------------------
# Steering runs
# ---------------------------------------------------------------------------


def test_burn_in_rounds_issue_no_payments_across_all_runners():
    game, d = _game_and_target("stag_hunt")
    coord, cd = _game_and_target("coordination")
    rng = np.random.default_rng(2)
    runs = [
        run_normal_form_steer(
            coord, cd, [Mwu(n_actions=2), Mwu(n_actions=2)], 15,
            Hyperparams(alpha=0.2, cap=1.2, epsilon=0.04, T=15),
        ),
        run_full_feedback_steer(
            game, d, [CfrPlus.create(game, p) for p in range(2)], 15,
            Hyperparams(alpha=0.2, cap=3.0, epsilon=0.04, T=15),
        ),
        run_trajectory_steer(
            game, d, [CfrPlus.create(game, p) for p in range(2)], 15,
            Hyperparams(alpha=0.5, cap=2.0, epsilon=0.1, T=15), rng,
        ),
    ]
    for metrics in runs:
        assert metrics.burn_in == 10
        assert np.all(metrics.realized_payments[:10] == 0.0)
        assert np.all(metrics.expected_payments[:10] == 0.0)
        assert np.all(metrics.alpha_used[:10] == 0.0)
        assert np.all(metrics.alpha_used[10:] > 0.0)


def test_full_feedback_run_with_always_direct_players_is_a_fixed_point():
    game, d = _game_and_target("stag_hunt")
    learners = [_FixedStrategyLearner(d[p]) for p in range(2)]
    alpha = 0.1
    metrics = run_full_feedback_steer(
        game, d, learners, 40, Hyperparams(alpha=alpha, cap=3.0, epsilon=0.01, T=40)
    )
    assert np.allclose(metrics.directness_gap, 0.0)
    assert np.allclose(metrics.realized_payments[10:], 2 * alpha)
    assert np.allclose(metrics.realized_payments[:10], 0.0)
    assert np.allclose(metrics.welfare, 4.0)
    assert np.allclose(metrics.deviation_mass, 0.0)
    assert metrics.final_gap() == 0.0
    assert np.allclose(metrics.average_expected_payments(), metrics.average_payments())


def test_full_feedback_run_steers_cfr_learners_to_the_stag_target():
    game, d = _game_and_target("stag_hunt")
    learners = [CfrPlus.create(game, p) for p in range(2)]
    hyper = Hyperparams(alpha=0.2, cap=3.0, epsilon=0.04, T=1500)
    metrics = run_full_feedback_steer(game, d, learners, 1500, hyper)
    assert metrics.final_gap() < 0.05
    assert metrics.directness_gap[-1] <= metrics.directness_gap[20]
    assert metrics.realized_payments.min() >= 0.0
    assert metrics.realized_payments.max() <= 3.0 + 1e-9
    assert np.all(metrics.alpha_used[10:] == 0.2)
    assert metrics.welfare[-1] > 3.5  # close to the cooperative welfare of 4
    for p, record in enumerate(metrics.regret_records):
        assert len(record.realized) == 1500
        assert measured_regret(record, (game, p)) / 1500 < 0.05


def test_full_feedback_run_with_zero_bonus_still_produces_well_formed_metrics():
    game, d = _game_and_target("stag_hunt")
    learners = [CfrPlus.create(game, p) for p in range(2)]
    metrics = run_full_feedback_steer(
        game, d, learners, 60, Hyperparams(alpha=0.0, cap=3.0, epsilon=0.0, T=60)
    )
    assert np.all(np.isfinite(metrics.welfare))
    assert metrics.directness_gap.min() >= 0.0
    assert metrics.directness_gap.max() <= 2.0 + 1e-9
    assert metrics.realized_payments.min() >= 0.0


def test_trajectory_run_with_always_direct_players_realizes_the_bonus_every_round():
    game, d = _game_and_target("stag_hunt")
    learners = [_FixedStrategyLearner(d[p]) for p in range(2)]
    alpha = 0.4
    metrics = run_trajectory_steer(
        game, d, learners, 50,
        Hyperparams(alpha=alpha, cap=2.0, epsilon=0.01, T=50),
        np.random.default_rng(9),
    )
    assert np.allclose(metrics.realized_payments[10:], alpha)
    assert np.allclose(metrics.expected_payments[10:], alpha)
    d_hat = reach_products(game, d)
    assert np.all(d_hat[metrics.sampled_terminals] == 1.0)
    assert np.allclose(metrics.directness_gap, 0.0)


def test_trajectory_run_realized_payments_come_from_the_sampled_terminal():
    game, d = _game_and_target("stag_hunt")
    learners = [CfrPlus.create(game, p) for p in range(2)]
    alpha, P = 0.5, 2.0
    metrics = run_trajectory_steer(
        game, d, learners, 80, Hyperparams(alpha=alpha, cap=P, epsilon=0.1, T=80),
        np.random.default_rng(4),
    )
    for t in range(80):
        z = int(metrics.sampled_terminals[t])
        for i in range(2):
            if t < 10:
                assert metrics.realized_payments[t, i] == 0.0
            else:
                want = traj_payment(game, d, i, z, alpha, P)
                assert metrics.realized_payments[t, i] == pytest.approx(want)
    assert metrics.expected_payments.min() >= 0.0
    assert metrics.expected_payments.max() <= P + 1e-9


def test_trajectory_run_steers_cfr_learners_on_the_stag_hunt():
    game, d = _game_and_target("stag_hunt")
    learners = [CfrPlus.create(game, p) for p in range(2)]
    hyper = Hyperparams(alpha=1.0, cap=6.0, epsilon=0.02, T=2500)
    metrics = run_trajectory_steer(
        game, d, learners, 2500, hyper, np.random.default_rng(12)
    )
    assert metrics.final_gap() < 0.15
    assert metrics.realized_payments.max() <= 6.0 + 1e-9
    assert metrics.average_welfare() > 3.0


def test_trajectory_run_with_stubborn_adversary_and_small_cap_never_reaches_target():
    """With the per-round cap capped at 1 (below n/2), players replaying a
    surviving equilibrium can sit at the all-hare profile forever."""
    game, d = _game_and_target("lower_bound", n=3)
    adversary = StubbornEquilibriumAdversary(
        base_tensors=normal_form_tensors(game), incumbent=(0, 0, 0)
    )
    metrics = run_trajectory_steer(
        game, d, None, 50, Hyperparams(alpha=0.05, cap=1.0, epsilon=0.01, T=50),
        np.random.default_rng(1), adversary=adversary,
    )
    assert metrics.directness_gap.min() >= 0.5
    assert metrics.realized_payments.max() <= 1.0 + 1e-9


def test_normal_form_run_steers_multiplicative_weights_to_the_target():
    game, d = _game_and_target("coordination")
    learners = [Mwu(n_actions=2), Mwu(n_actions=2)]
    hyper = Hyperparams(alpha=0.1, cap=1.1, epsilon=0.01, T=2000)
    metrics = run_normal_form_steer(game, d, learners, 2000, hyper)
    assert metrics.final_gap() < 0.1
    assert metrics.realized_payments.max() <= 1.1 + 1e-9
    assert metrics.realized_payments.min() >= 0.0
    for record in metrics.regret_records:
        assert measured_regret(record, "simplex") / 2000 < 0.05


def test_runner_input_validation_rejects_bad_targets_learners_and_caps():
    game, d = _game_and_target("stag_hunt")
    coord, cd = _game_and_target("coordination")
    rng = np.random.default_rng(0)
    bad = [pure_strategy_from_choices(game, 0, [1]), pure_strategy_from_choices(game, 1, [0])]
    with pytest.raises(TargetNotEquilibriumError):
        run_full_feedback_steer(
            game, bad, [CfrPlus.create(game, p) for p in range(2)], 20,
            Hyperparams(alpha=0.1, cap=3.0, epsilon=0.01, T=20),
        )
    with pytest.raises(ValueError):
        run_full_feedback_steer(
            game, d, [CfrPlus.create(game, 0)], 20,
            Hyperparams(alpha=0.1, cap=3.0, epsilon=0.01, T=20),
        )
    with pytest.raises(ValueError):
        run_full_feedback_steer(
            game, d, [CfrPlus.create(game, p) for p in range(2)], 20,
            Hyperparams(alpha=0.5, cap=3.0, epsilon=0.01, T=20),  # above 1/|Z|
        )
    with pytest.raises(ValueError):
        run_trajectory_steer(
            game, d, [CfrPlus.create(game, p) for p in range(2)], 20,
            Hyperparams(alpha=0.5, cap=0.5, epsilon=0.01, T=20), rng,
        )
    sheriff = build_named("sheriff")
    pures = [
        pure_strategy_from_choices(sheriff, p, [0] * sheriff.seq[p].n_infosets)
        for p in range(2)
    ]
    with pytest.raises(ValueError):
        run_normal_form_steer(
            sheriff, pures, [Mwu(n_actions=2), Mwu(n_actions=2)], 20,
            Hyperparams(alpha=0.1, cap=1.1, epsilon=0.01, T=20),
        )


def test_dynamic_alpha_run_spends_less_once_the_players_are_direct():
    game, d = _game_and_target("stag_hunt")
    fixed = run_full_feedback_steer(
        game, d, [CfrPlus.create(game, p) for p in range(2)], 800,
        Hyperparams(alpha=0.2, cap=3.0, epsilon=0.04, T=800),
    )
    adaptive = run_full_feedback_steer(
        game, d, [CfrPlus.create(game, p) for p in range(2)], 800,
        Hyperparams(alpha=0.2, cap=3.0, epsilon=0.04, T=800),
        dynamic_base=0.5, dynamic_cap=0.2, window=50,
    )
    assert adaptive.final_gap() < 0.1
    assert adaptive.realized_payments.sum() < fixed.realized_payments.sum()
    assert adaptive.alpha_used[10:].max() <= 0.2 + 1e-12
    # once converged, the recent gap shrinks and so does the bonus scale
    assert adaptive.alpha_used[-1] < adaptive.alpha_used[11]
