"""Tests for the recommendation mediator: tree augmentation, direct play,
fixing the mediator into chance, the penalized saddle objective, the
obedient-recommendation solver, and the steering drivers built on them.

Expected augmented-tree sizes come from an independent recursive oracle
(`_oracle_augmented_counts`) written against the construction rules alone:
a recommender node is inserted immediately before every decision node,
one branch per recommendable action, and recommendations stop for good
once two distinct players have disobeyed.  Expected solver values are
derived in closed form in the individual tests.
"""

import numpy as np
import pytest

from gamesteer.benchmarks import (
    BenchmarkSpec,
    build_named,
    default_objective,
    target_equilibrium,
)
from gamesteer.games import (
    CHANCE,
    DECISION,
    TERMINAL,
    SequenceFormStrategy,
    best_response,
    build_game,
    check_strategy,
    decide,
    expected_utility,
    game_to_dict,
    leaf,
    load_game_dict,
    nash_gap,
    random_strategy,
    terminal_distribution,
    uniform_strategy,
    validate,
)
from gamesteer.learners import CfrPlus
from gamesteer.mediator import (
    AugmentedGame,
    BceSolution,
    NonCertifiedEquilibriumError,
    augment,
    build_lagrangian,
    compute_then_steer,
    direct_profile,
    direct_strategy,
    fix_mediator,
    lagrangian_value,
    mediator_env_reach,
    nf_online_steer,
    nf_rec_exploration_payment,
    nf_rec_mediator_reward,
    nf_rec_payment,
    online_steer,
    recommendation_strategy,
    solve_optimal_bce,
)


def _oracle_augmented_counts(game):
    """Independent (terminals, nodes) count for the recommendation-augmented
    tree, tracking the set of distinct players that have disobeyed so far."""

    def walk(v, deviators):
        kind = game.node_kind[v]
        if kind == TERMINAL:
            return 1, 1
        first = game.node_first_child[v]
        kids = game.children[first : first + game.node_n_children[v]]
        if kind == CHANCE or bin(deviators).count("1") >= 2:
            terms, nodes = 0, 1
            for c in kids:
                ct, cn = walk(c, deviators)
                terms += ct
                nodes += cn
            return terms, nodes
        p = game.node_owner[v]
        k = len(kids)
        terms, nodes = 0, 1 + k  # the recommender node plus one player node per advice
        for c in kids:
            obey_t, obey_n = walk(c, deviators)
            dev_t, dev_n = walk(c, deviators | (1 << p))
            terms += obey_t + (k - 1) * dev_t
            nodes += obey_n + (k - 1) * dev_n
        return terms, nodes

    return walk(0, 0)


def _single_decision_game(k):
    """One player, one decision node with k actions and distinct payoffs."""
    branches = [(f"a{j}", leaf(float(j))) for j in range(k)]
    return build_game(decide(0, "only-move", branches), 1, name=f"one-shot-{k}")


def _prisoners_game():
    """One-shot defection game: mutual cooperation pays (3,3), defecting
    against a cooperator pays 4, mutual defection pays (1,1)."""
    root = decide(
        0,
        "p0-move",
        [
            (
                "C",
                decide(1, "p1-move", [("C", leaf(3.0, 3.0)), ("D", leaf(0.0, 4.0))]),
            ),
            (
                "D",
                decide(1, "p1-move", [("C", leaf(4.0, 0.0)), ("D", leaf(1.0, 1.0))]),
            ),
        ],
    )
    return build_game(root, 2, name="defection")


def _temptation_game():
    """One-shot 2x2 game used for the restricted-deviator drill.

    Raw payoffs (row = first player's action L/R, column = second player's):
    u1 = [[1, 0], [0, 1]], u2 = [[0.6, 1.0], [0.0, 0.5]].  The first player
    just wants to match; the second — who moves last, out of reach of any
    advice-conditioned punishment — is tempted to play R whenever told L.
    """
    root = decide(
        0,
        "p0-move",
        [
            (
                "L",
                decide(1, "p1-move", [("L", leaf(1.0, 0.6)), ("R", leaf(0.0, 1.0))]),
            ),
            (
                "R",
                decide(1, "p1-move", [("L", leaf(0.0, 0.0)), ("R", leaf(1.0, 0.5))]),
            ),
        ],
    )
    return build_game(root, 2, name="temptation")


def _aug(tag, **params):
    return augment(build_named(tag, **params))


def _spec(tag, **params):
    return BenchmarkSpec(name=tag, params=params)


class _FixedStrategyLearner:
    """Plays one strategy forever and ignores all feedback."""

    def __init__(self, strategy):
        self._strategy = strategy

    def strategy(self):
        return self._strategy

    def observe(self, utility):
        pass


class _PlanMixLearner:
    """Multiplicative-weights learner over an explicit list of pure plans.

    Used to model players whose deviation set is a strict subset of their
    pure plans; the played strategy is the weight-mix of the plan masses.
    """

    def __init__(self, plans, eta=0.5):
        self._player = plans[0].player
        self._masses = [p.mass for p in plans]
        self._eta = eta
        self._log_w = np.zeros(len(plans))

    def strategy(self):
        w = np.exp(self._log_w - self._log_w.max())
        w /= w.sum()
        mix = np.zeros_like(self._masses[0])
        for weight, mass in zip(w, self._masses):
            mix += weight * mass
        return SequenceFormStrategy(self._player, mix)

    def observe(self, utility):
        payoffs = np.array([float(np.dot(utility, m)) for m in self._masses])
        self._log_w += self._eta * payoffs


# ---------------------------------------------------------------------------
# augmentation structure
# ---------------------------------------------------------------------------


def test_augmenting_a_single_decision_squares_the_terminal_count():
    for k in (2, 3, 5):
        aug = augment(_single_decision_game(k))
        assert aug.game.n_terminals == k * k
        assert validate(aug.game) == []


def test_augmented_terminal_counts_match_the_independent_recursive_oracle():
    cases = [
        ("stag_hunt", {}, 14),
        ("coordination", {}, 16),
        ("matching", {}, 16),
        ("lower_bound", {"n": 3}, 72),
        ("kuhn3", {}, 3528),
    ]
    for tag, params, frozen in cases:
        base = build_named(tag, **params)
        aug = augment(base)
        oracle_terms, oracle_nodes = _oracle_augmented_counts(base)
        assert aug.game.n_terminals == oracle_terms == frozen
        assert len(aug.game.node_kind) == oracle_nodes
        assert aug.game.n_terminals <= base.n_terminals**3


def test_augmented_inline_games_match_the_oracle_too():
    for base in (_prisoners_game(), _temptation_game(), _single_decision_game(4)):
        aug = augment(base)
        oracle_terms, oracle_nodes = _oracle_augmented_counts(base)
        assert aug.game.n_terminals == oracle_terms
        assert len(aug.game.node_kind) == oracle_nodes


def test_augmentation_preserves_base_payoffs_and_passes_validation():
    for tag, params in (("stag_hunt", {}), ("lower_bound", {"n": 3})):
        base = build_named(tag, **params)
        aug = augment(base)
        assert validate(aug.game) == []
        assert aug.game.build_violations == []
        n = base.n_players
        assert aug.game.n_players == n + 1
        assert aug.mediator == n
        np.testing.assert_allclose(
            aug.game.raw_payoffs[:n], base.raw_payoffs[:, aug.aug_to_base], atol=0
        )
        # The recommender's own payoff row is a constant pinned to the base
        # minimum so normalization matches the base game exactly.
        assert np.all(aug.game.raw_payoffs[n] == base.raw_payoffs.min())
        assert aug.game.scale == base.scale
        assert aug.game.offset == base.offset
        np.testing.assert_allclose(
            aug.game.utilities[:n], base.utilities[:, aug.aug_to_base], atol=1e-12
        )


def test_the_recommender_moves_with_perfect_information_singleton_infosets():
    aug = _aug("stag_hunt")
    g = aug.game
    med = aug.mediator
    owned = [v for v in range(len(g.node_kind)) if g.node_kind[v] == DECISION and g.node_owner[v] == med]
    # Perfect information: one node per infoset.
    assert len(owned) == len(g.seq[med].infoset_key)
    infosets = [g.node_infoset[v] for v in owned]
    assert len(set(infosets)) == len(owned)
    # Each recommender node immediately precedes the advised player's node,
    # and its advice labels coincide with that player's action labels.
    for v in owned:
        first = g.node_first_child[v]
        nc = g.node_n_children[v]
        labels = sorted(g.child_label[first : first + nc])
        for child in g.children[first : first + nc]:
            assert g.node_kind[child] == DECISION
            assert g.node_owner[child] != med
            cfirst = g.node_first_child[child]
            cnc = g.node_n_children[child]
            assert sorted(g.child_label[cfirst : cfirst + cnc]) == labels
    # Structure pin for this game: 4 recommender nodes, 5 sequences per player.
    assert g.seq[med].n_seqs == 9
    assert g.seq[0].n_seqs == 5 and g.seq[1].n_seqs == 5


def test_zero_deviation_terminals_biject_with_base_terminals():
    for tag, params in (("stag_hunt", {}), ("lower_bound", {"n": 3})):
        base = build_named(tag, **params)
        aug = augment(base)
        on_path = [z for z, (_, d1, d2) in enumerate(aug.terminal_tuples) if d1 is None]
        assert len(on_path) == base.n_terminals
        assert sorted(aug.aug_to_base[z] for z in on_path) == list(range(base.n_terminals))
        for _, d1, d2 in aug.terminal_tuples:
            if d1 is None:
                assert d2 is None


def test_direct_profile_reaches_exactly_the_zero_deviation_terminals():
    for tag, params in (("stag_hunt", {}), ("lower_bound", {"n": 3})):
        base = build_named(tag, **params)
        aug = augment(base)
        mu = uniform_strategy(aug.game, aug.mediator)
        dist = terminal_distribution(aug.game, direct_profile(aug) + [mu]).probs
        mask = np.array([d1 is None for _, d1, _ in aug.terminal_tuples])
        assert np.all(dist[~mask] == 0.0)
        assert np.all(dist[mask] > 0.0)
        # Following uniform advice plays the base game uniformly.
        base_dist = terminal_distribution(
            base, [uniform_strategy(base, i) for i in range(base.n_players)]
        ).probs
        np.testing.assert_allclose(
            np.bincount(aug.aug_to_base, weights=dist, minlength=base.n_terminals),
            base_dist,
            atol=1e-12,
        )


def test_direct_strategies_are_pure_and_follow_every_recommendation():
    aug = _aug("lower_bound", n=3)
    for i in range(aug.n_base_players):
        d = direct_strategy(aug, i)
        assert check_strategy(aug.game, d, pure=True) == []
        ix = aug.game.seq[i]
        for j in range(len(ix.infoset_key)):
            rec = aug.recommended_action(i, j)
            first = ix.infoset_first_seq[j]
            actions = list(ix.infoset_actions[j])
            parent_mass = d.mass[ix.infoset_parent_seq[j]]
            chosen = actions.index(rec) if rec is not None else 0
            assert d.mass[first + chosen] == parent_mass


def test_recommending_a_base_equilibrium_gives_each_player_their_base_value():
    for tag in ("stag_hunt", "coordination"):
        base = build_named(tag)
        aug = augment(base)
        target = target_equilibrium(_spec(tag), base)
        mu = recommendation_strategy(aug, target)
        strategies = direct_profile(aug) + [mu]
        for i in range(base.n_players):
            assert expected_utility(aug.game, strategies, i) == pytest.approx(
                expected_utility(base, target, i), abs=1e-12
            )


def test_recommending_a_base_equilibrium_makes_direct_play_an_equilibrium():
    base = build_named("stag_hunt")
    aug = augment(base)
    mu = recommendation_strategy(aug, target_equilibrium(_spec("stag_hunt"), base))
    profile = direct_profile(aug)
    # Membership in the augmented game: no player gains by deviating.
    for i in range(base.n_players):
        _, br_value = best_response(aug.game, i, profile + [mu])
        assert br_value - expected_utility(aug.game, profile + [mu], i) <= 1e-9
    # And direct play is a Nash equilibrium of the game with the advice
    # folded into chance.
    fixed = fix_mediator(aug, mu)
    assert nash_gap(fixed, profile) <= 1e-9


def test_fixing_the_mediator_preserves_utilities_on_random_pairs():
    aug = _aug("stag_hunt")
    rng = np.random.default_rng(0)
    for _ in range(100):
        mu = random_strategy(aug.game, aug.mediator, rng)
        xs = [random_strategy(aug.game, i, rng) for i in range(aug.n_base_players)]
        fixed = fix_mediator(aug, mu)
        for i in range(aug.n_base_players):
            assert expected_utility(fixed, xs, i) == pytest.approx(
                expected_utility(aug.game, xs + [mu], i), abs=1e-9
            )


def test_fixing_the_mediator_keeps_the_player_tree_structure():
    aug = _aug("lower_bound", n=3)
    mu = uniform_strategy(aug.game, aug.mediator)
    fixed = fix_mediator(aug, mu)
    assert validate(fixed) == []
    assert fixed.n_players == aug.n_base_players
    assert fixed.n_terminals == aug.game.n_terminals
    for i in range(aug.n_base_players):
        assert list(fixed.seq[i].infoset_key) == list(aug.game.seq[i].infoset_key)
        assert fixed.seq[i].n_seqs == aug.game.seq[i].n_seqs
    np.testing.assert_allclose(
        fixed.raw_payoffs, aug.game.raw_payoffs[: aug.n_base_players], atol=0
    )


def test_fixing_a_uniform_mediator_turns_the_gadget_into_uniform_chance():
    aug = augment(_single_decision_game(3))
    fixed = fix_mediator(aug, uniform_strategy(aug.game, aug.mediator))
    assert fixed.node_kind[0] == CHANCE
    first = fixed.node_first_child[0]
    np.testing.assert_allclose(fixed.child_prob[first : first + 3], 1.0 / 3.0)


def test_the_environment_reach_folding_matches_fixing_the_mediator():
    aug = _aug("stag_hunt")
    rng = np.random.default_rng(3)
    mu = random_strategy(aug.game, aug.mediator, rng)
    env = mediator_env_reach(aug, mu)
    fixed = fix_mediator(aug, mu)
    xs = [random_strategy(aug.game, i, rng) for i in range(aug.n_base_players)]
    for i in range(aug.n_base_players):
        ones = SequenceFormStrategy(
            aug.mediator, np.ones(aug.game.seq[aug.mediator].n_seqs)
        )
        # env folding: replace chance reach by chance x advice reach
        from gamesteer.games import utility_weights

        w = utility_weights(aug.game, i, xs + [ones], env_reach=env)
        assert float(np.dot(w, xs[i].mass)) == pytest.approx(
            expected_utility(fixed, xs, i), abs=1e-9
        )


def test_augmented_games_round_trip_through_the_file_format():
    aug = _aug("stag_hunt")
    reloaded = load_game_dict(game_to_dict(aug.game))
    assert validate(reloaded) == []
    assert reloaded.n_terminals == aug.game.n_terminals
    np.testing.assert_allclose(reloaded.raw_payoffs, aug.game.raw_payoffs)
    for p in range(aug.game.n_players):
        assert list(reloaded.seq[p].infoset_key) == list(aug.game.seq[p].infoset_key)


def test_augmenting_an_invalid_base_is_rejected():
    # Imperfect recall: the second player forgets the first player's move
    # after observing it once.  validate() flags it, augment() must refuse.
    root = decide(
        0,
        "top",
        [
            ("A", decide(1, "seen-A", [("x", leaf(0, 0)), ("y", leaf(1, 1))])),
            ("B", decide(1, "seen-B", [("x", decide(1, "seen-A", [("x", leaf(0, 0)), ("y", leaf(1, 1))])), ("y", leaf(0, 0))])),
        ],
    )
    bad = build_game(root, 2, name="forgetful")
    assert validate(bad) != []
    with pytest.raises(ValueError):
        augment(bad)


# ---------------------------------------------------------------------------
# penalized objective
# ---------------------------------------------------------------------------


def _lifted_objective(aug, tag, **params):
    base = aug.base
    return aug.lift(default_objective(_spec(tag, **params), base))


def test_penalized_value_with_direct_deviators_is_the_advice_objective():
    aug = _aug("stag_hunt")
    u0 = _lifted_objective(aug, "stag_hunt")
    rng = np.random.default_rng(7)
    mu = random_strategy(aug.game, aug.mediator, rng)
    d = direct_profile(aug)
    for lam in (1.0, 3.0):
        lag = build_lagrangian(aug, u0, lam)
        want = expected_utility(aug.game, d + [mu], 0, values=u0)
        assert lagrangian_value(lag, mu, d) == pytest.approx(want, abs=1e-12)
        assert lag.scaled_value(mu, d) == pytest.approx(want / lam, abs=1e-12)


def test_penalized_value_with_zero_weight_ignores_deviations():
    aug = _aug("stag_hunt")
    u0 = _lifted_objective(aug, "stag_hunt")
    lag = build_lagrangian(aug, u0, 0.0)
    rng = np.random.default_rng(11)
    mu = random_strategy(aug.game, aug.mediator, rng)
    xs = [random_strategy(aug.game, i, rng) for i in range(2)]
    want = expected_utility(aug.game, direct_profile(aug) + [mu], 0, values=u0)
    assert lagrangian_value(lag, mu, xs) == pytest.approx(want, abs=1e-12)


def test_penalized_value_matches_brute_force_terminal_expansion():
    aug = _aug("coordination")
    u0 = _lifted_objective(aug, "coordination")
    lam = 2.5
    lag = build_lagrangian(aug, u0, lam)
    rng = np.random.default_rng(13)
    mu = random_strategy(aug.game, aug.mediator, rng)
    xs = [random_strategy(aug.game, i, rng) for i in range(2)]
    d = direct_profile(aug)
    g = aug.game
    med = aug.mediator

    def mass_product(strategies, z):
        prod = g.chance_reach[z]
        for p in range(g.n_players):
            prod *= strategies[p].mass[g.terminal_seq[p][z]]
        return prod

    def expand(values, strategies):
        return sum(mass_product(strategies, z) * values[z] for z in range(g.n_terminals))

    direct_slots = d + [mu]
    want = expand(u0, direct_slots)
    for i in range(2):
        dev = list(direct_slots)
        dev[i] = xs[i]
        want -= lam * (expand(g.utilities[i], dev) - expand(g.utilities[i], direct_slots))
    assert lagrangian_value(lag, mu, xs) == pytest.approx(want, abs=1e-9)


def test_penalized_value_is_bilinear_in_the_advice_and_each_deviation():
    aug = _aug("coordination")
    u0 = _lifted_objective(aug, "coordination")
    lag = build_lagrangian(aug, u0, 1.5)
    rng = np.random.default_rng(17)
    mu1 = random_strategy(aug.game, aug.mediator, rng)
    mu2 = random_strategy(aug.game, aug.mediator, rng)
    xs = [random_strategy(aug.game, i, rng) for i in range(2)]
    ys = [random_strategy(aug.game, i, rng) for i in range(2)]
    a = 0.3
    mix_mu = SequenceFormStrategy(aug.mediator, a * mu1.mass + (1 - a) * mu2.mass)
    assert lagrangian_value(lag, mix_mu, xs) == pytest.approx(
        a * lagrangian_value(lag, mu1, xs) + (1 - a) * lagrangian_value(lag, mu2, xs),
        abs=1e-9,
    )
    for i in range(2):
        mixed = list(xs)
        mixed[i] = SequenceFormStrategy(i, a * xs[i].mass + (1 - a) * ys[i].mass)
        swapped = list(xs)
        swapped[i] = ys[i]
        assert lagrangian_value(lag, mu1, mixed) == pytest.approx(
            a * lagrangian_value(lag, mu1, xs) + (1 - a) * lagrangian_value(lag, mu1, swapped),
            abs=1e-9,
        )


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


def test_solver_finds_the_chance_aware_optimum_on_the_stag_hunt():
    # The advice-giver observes the chance coin.  On the side where the
    # second player moves alone it recommends H (payoff 3 beats 0, so the
    # advice is obeyed, normalized mean welfare 0.375); on the other side it
    # recommends S to both (welfare 1.0).  That is the pointwise welfare
    # maximum and it is obedient, so the optimum is
    # 0.5 * 0.375 + 0.5 * 1.0 = 0.6875.
    aug = _aug("stag_hunt")
    u0 = _lifted_objective(aug, "stag_hunt")
    sol = solve_optimal_bce(aug, u0, iterations=4000)
    assert sol.certified
    assert sol.value == pytest.approx(0.6875, abs=1e-3)
    assert max(sol.deviation_benefits) <= 1e-4
    assert sol.lam >= 1.0


def test_solver_certificates_are_confirmed_by_fresh_best_responses():
    aug = _aug("stag_hunt")
    u0 = _lifted_objective(aug, "stag_hunt")
    sol = solve_optimal_bce(aug, u0, iterations=4000)
    d = direct_profile(aug)
    for i in range(aug.n_base_players):
        _, br = best_response(aug.game, i, d + [sol.mediator_strategy])
        assert br - expected_utility(aug.game, d + [sol.mediator_strategy], i) <= 1.1e-4


def test_solver_finds_the_half_mismatch_optimum_on_matching():
    # Both players win on matches while the objective rewards mismatches.
    # The second mover moves last, so no advice scheme can make it accept a
    # conditional match probability below 1/2: obeying advice r must be at
    # least as good as switching, so P(first mover played r | advised r) is
    # at least 1/2 and the mismatch probability is at most 1/2.  That bound
    # is met by advising the first mover uniformly and the second mover an
    # independent fair coin (deviations by the first mover get mismatched on
    # purpose, so it complies), hence the optimum is exactly 1/2.
    aug = _aug("matching")
    u0 = _lifted_objective(aug, "matching")
    sol = solve_optimal_bce(aug, u0, iterations=8000)
    assert sol.certified
    assert sol.value == pytest.approx(0.5, abs=1e-3)
    assert max(sol.deviation_benefits) <= 1e-4


def test_solver_value_is_stable_across_larger_penalty_weights():
    aug = _aug("matching")
    u0 = _lifted_objective(aug, "matching")
    low = solve_optimal_bce(aug, u0, iterations=8000, lam=2.0)
    high = solve_optimal_bce(aug, u0, iterations=8000, lam=4.0)
    assert low.certified and high.certified
    assert low.value == pytest.approx(high.value, abs=5e-3)


def test_solver_exploits_chance_information_on_the_three_player_game():
    # A recommender that sees which branch chance picked tells a lone mover
    # to take the safe action (1/2 beats 0, obedient) and recommends the
    # joint action to everyone in the all-together branch (1 each).  Mean
    # normalized welfare: 3/4 * (1/2)/3 + 1/4 * 1 = 0.375, i.e. raw welfare
    # 9/8 -- strictly above any advice that cannot separate the branches.
    aug = _aug("lower_bound", n=3)
    u0 = _lifted_objective(aug, "lower_bound", n=3)
    sol = solve_optimal_bce(aug, u0, iterations=6000)
    assert sol.certified
    assert sol.value == pytest.approx(0.375, abs=1e-3)
    assert 3.0 * sol.value == pytest.approx(1.125, abs=3e-3)


def test_uniform_profile_advice_is_certified_at_its_known_value_on_the_three_player_game():
    # Recommending the joint action everywhere (the base equilibrium) is
    # obedient with mean normalized welfare 1/4, raw welfare 3/4.  The
    # solver's optimum must weakly beat it.
    base = build_named("lower_bound", n=3)
    aug = augment(base)
    u0 = _lifted_objective(aug, "lower_bound", n=3)
    target = target_equilibrium(_spec("lower_bound", n=3), base)
    mu = recommendation_strategy(aug, target)
    d = direct_profile(aug)
    value = expected_utility(aug.game, d + [mu], 0, values=u0)
    assert value == pytest.approx(0.25, abs=1e-12)
    for i in range(3):
        _, br = best_response(aug.game, i, d + [mu])
        assert br - expected_utility(aug.game, d + [mu], i) <= 1e-9
    sol = solve_optimal_bce(aug, u0, iterations=6000)
    assert sol.value >= value - 1e-6


def test_solver_doubles_the_penalty_weight_until_the_certificate_binds():
    # In the defection game the only obedient advice is mutual defection
    # (value 0.25 under mean normalized welfare): the second mover moves
    # last, so its defection gain cannot be punished away.  At penalty
    # weight 1 the saddle objective still increases toward cooperative
    # advice (welfare gain 0.5 versus penalized gain 0.25 per unit), so
    # doubling has to kick in before the certificate binds.
    aug = augment(_prisoners_game())
    u0 = aug.lift(aug.base.utilities.mean(axis=0))
    sol = solve_optimal_bce(aug, u0, iterations=20000)
    assert sol.certified
    assert sol.value == pytest.approx(0.25, abs=1e-3)
    assert max(sol.deviation_benefits) <= 1e-4


def test_solver_flags_an_exhausted_budget_as_non_certified():
    aug = augment(_prisoners_game())
    u0 = aug.lift(aug.base.utilities.mean(axis=0))
    sol = solve_optimal_bce(aug, u0, iterations=2, max_stages=1)
    assert not sol.certified
    assert sol.mediator_strategy is not None
    assert np.isfinite(sol.value)


def test_solution_summary_exposes_the_certificate_record():
    aug = _aug("stag_hunt")
    u0 = _lifted_objective(aug, "stag_hunt")
    sol = solve_optimal_bce(aug, u0, iterations=2000)
    record = sol.summary()
    assert set(record) >= {"lam", "value", "certified", "deviation_benefits"}
    assert record["lam"] == sol.lam
    assert len(record["deviation_benefits"]) == aug.n_base_players


# ---------------------------------------------------------------------------
# compute-then-steer
# ---------------------------------------------------------------------------


def test_compute_then_steer_with_always_direct_learners_has_zero_gap():
    aug = _aug("stag_hunt")
    u0 = _lifted_objective(aug, "stag_hunt")
    sol = solve_optimal_bce(aug, u0, iterations=4000)
    d = direct_profile(aug)
    learners = [_FixedStrategyLearner(d[i]) for i in range(2)]
    metrics = compute_then_steer(
        aug,
        u0,
        scheme="full_feedback",
        T=40,
        solution=sol,
        learners=learners,
        burn_in=5,
    )
    np.testing.assert_allclose(metrics.optimality_gap, 0.0, atol=1e-9)
    np.testing.assert_allclose(metrics.realized_payments[:5], 0.0, atol=0)
    assert np.all(metrics.realized_payments >= 0.0)


def test_compute_then_steer_refuses_a_non_certified_solution_unless_forced():
    aug = augment(_prisoners_game())
    u0 = aug.lift(aug.base.utilities.mean(axis=0))
    bad = solve_optimal_bce(aug, u0, iterations=2, max_stages=1)
    assert not bad.certified
    with pytest.raises(NonCertifiedEquilibriumError):
        compute_then_steer(aug, u0, scheme="full_feedback", T=5, solution=bad)
    d = direct_profile(aug)
    metrics = compute_then_steer(
        aug,
        u0,
        scheme="full_feedback",
        T=5,
        solution=bad,
        learners=[_FixedStrategyLearner(d[i]) for i in range(2)],
        force=True,
        burn_in=0,
    )
    assert metrics.T == 5


def test_compute_then_steer_trajectory_converges_on_the_stag_hunt():
    aug = _aug("stag_hunt")
    u0 = _lifted_objective(aug, "stag_hunt")
    sol = solve_optimal_bce(aug, u0, iterations=4000)
    metrics = compute_then_steer(
        aug,
        u0,
        scheme="trajectory",
        T=2500,
        solution=sol,
        P=4.0,
        dynamic_base=0.1,
        dynamic_cap=1.0,
        rng=np.random.default_rng(5),
        burn_in=10,
    )
    assert metrics.optimality_gap is not None
    assert metrics.optimality_gap[-1] <= 0.15
    tail = metrics.objective_values[-500:]
    assert tail.mean() >= sol.value - 0.05
    np.testing.assert_allclose(metrics.realized_payments[:10], 0.0, atol=0)


# ---------------------------------------------------------------------------
# online steering
# ---------------------------------------------------------------------------


def test_online_steering_with_direct_players_approaches_the_optimal_value():
    aug = _aug("stag_hunt")
    u0 = _lifted_objective(aug, "stag_hunt")
    sol = solve_optimal_bce(aug, u0, iterations=4000)
    d = direct_profile(aug)
    learners = [_FixedStrategyLearner(d[i]) for i in range(2)]
    metrics = online_steer(
        aug,
        u0,
        lam=32.0,
        alpha=0.5 / aug.game.n_terminals,
        T=3000,
        learners=learners,
        optimal_value=sol.value,
    )
    assert metrics.optimality_gap[-1] <= 0.05
    np.testing.assert_allclose(metrics.directness_gap, 0.0, atol=1e-9)
    assert np.all(metrics.realized_payments >= 0.0)
    assert np.all(metrics.realized_payments <= 3.0 + 1e-9)


def test_online_steering_validates_its_preconditions():
    aug = _aug("stag_hunt")
    u0 = _lifted_objective(aug, "stag_hunt")
    with pytest.raises(ValueError):
        online_steer(aug, u0, lam=2.0, alpha=1.5 / aug.game.n_terminals, T=5)
    with pytest.raises(ValueError):
        online_steer(aug, u0, lam=0.5, alpha=0.5 / aug.game.n_terminals, T=5)
    with pytest.raises(ValueError):
        online_steer(aug, u0, lam=2.0, alpha=0.01, T=5, learners=[None])


def test_online_steering_learns_to_recommend_the_optimum_against_cfr_players():
    aug = _aug("stag_hunt")
    u0 = _lifted_objective(aug, "stag_hunt")
    sol = solve_optimal_bce(aug, u0, iterations=4000)
    learners = [CfrPlus.create(aug.game, i) for i in range(2)]
    metrics = online_steer(
        aug,
        u0,
        lam=8.0,
        alpha=1.0 / aug.game.n_terminals,
        T=4000,
        learners=learners,
        optimal_value=sol.value,
    )
    assert metrics.optimality_gap[-1] <= 0.1
    assert metrics.directness_gap[-1] <= 0.1


def test_online_steering_with_restricted_deviators_converges_to_the_restricted_optimum():
    # The tempted player moves last, so observed-deviation punishments cannot
    # touch it and its obedience constraints are the static ones.  Its
    # deviation set here: direct play, always-L, and the swap plan (the
    # always-R plan is dropped).  With correlated advice p*(L,L) +
    # (1-p)*(R,R) and a direct first mover, the swap plan earns
    # p*u2(L,R) + (1-p)*u2(R,L) = p versus 0.5 + 0.1p for obedience, so
    # obedience holds iff 0.9p - 0.5 <= 0, i.e. p <= 5/9.  Always-L earns
    # 0.6p and never helps.  The objective P(both play L) therefore has
    # restricted optimum 5/9, while with the full deviation set (always-R
    # present, gain 0.4p) the optimum is 0.
    base = _temptation_game()
    aug = augment(base)
    u0 = aug.lift(np.array([1.0, 0.0, 0.0, 0.0]))
    ix = aug.game.seq[1]
    keys = list(ix.infoset_key)

    def plan(choose):
        from gamesteer.games import pure_strategy_from_labels

        return pure_strategy_from_labels(aug.game, 1, choose)

    d1 = direct_strategy(aug, 1)
    always_l = plan(lambda key, labels: "L")
    rec_of = {j: aug.recommended_action(1, j) for j in range(len(keys))}

    def swap_chooser(key, labels):
        j = {k: idx for idx, k in enumerate(keys)}[key]
        rec = rec_of[j]
        if rec is None:
            return labels[0]
        return "L" if rec == "R" else "R"

    swap = plan(swap_chooser)
    restricted = _PlanMixLearner([d1, always_l, swap], eta=2.0)
    direct_first = _FixedStrategyLearner(direct_strategy(aug, 0))
    # The obedience bonus is what pins the learner at the binding swap
    # constraint, so run it at its admissible maximum alpha = 1/|Z|.
    metrics = online_steer(
        aug,
        u0,
        lam=4.0,
        alpha=1.0 / aug.game.n_terminals,
        T=8000,
        learners=[direct_first, restricted],
    )
    tail = metrics.objective_values[-2000:]
    assert abs(tail.mean() - 5.0 / 9.0) <= 0.08


# ---------------------------------------------------------------------------
# normal-form online steering
# ---------------------------------------------------------------------------


def test_normal_form_advice_payment_examples():
    base = build_named("matching")
    from gamesteer.learners import normal_form_tensors

    tensors = normal_form_tensors(base)
    # Exploration branch: obeying with utility 1 pays 1 - 1 + 1 = 1.
    assert nf_rec_exploration_payment(1.0, True) == pytest.approx(1.0)
    assert nf_rec_exploration_payment(0.0, False) == pytest.approx(1.0)
    # Exploitation branch: at the recommended profile all payments vanish.
    for recs in ((0, 0), (0, 1), (1, 0), (1, 1)):
        for i in range(2):
            assert nf_rec_payment(tensors, i, recs, recs) == pytest.approx(0.0, abs=1e-12)
    # Payments stay within [0, 2] for every profile/advice pair.
    for game_tag in ("matching", "coordination"):
        tensors = normal_form_tensors(build_named(game_tag))
        for recs in ((0, 0), (0, 1), (1, 0), (1, 1)):
            for actions in ((0, 0), (0, 1), (1, 0), (1, 1)):
                for i in range(2):
                    q = nf_rec_payment(tensors, i, actions, recs)
                    assert -1e-12 <= q <= 2.0 + 1e-12
                    u = tensors[i][actions]
                    qx = nf_rec_exploration_payment(u, actions[i] == recs[i])
                    assert -1e-12 <= qx <= 2.0 + 1e-12


def test_normal_form_advice_mediator_reward_is_welfare_minus_disobedience():
    base = build_named("matching")
    from gamesteer.learners import normal_form_tensors

    tensors = normal_form_tensors(base)
    u0 = np.array([[0.0, 1.0], [1.0, 0.0]])  # dislikes matches
    lam = 2.0
    # Obedient round: reward is u0(d)/lam.
    assert nf_rec_mediator_reward(tensors, u0, lam, (0, 1), (0, 1)) == pytest.approx(0.5)
    # A disobedient player costs the mediator its sandboxed gain.
    reward = nf_rec_mediator_reward(tensors, u0, lam, (1, 1), (0, 1))
    want = u0[0, 1] / lam - ((tensors[0][(1, 1)] - tensors[0][(0, 1)]))
    assert reward == pytest.approx(want)


def test_nf_online_steer_rejects_extensive_form_bases():
    base = build_named("stag_hunt")
    u0 = default_objective(_spec("stag_hunt"), base)
    with pytest.raises(ValueError, match="normal-form"):
        nf_online_steer(base, u0, alpha=0.1, lam=2.0, T=10, rng=np.random.default_rng(0))


def test_nf_online_steer_validates_its_preconditions():
    base = build_named("matching")
    u0 = default_objective(_spec("matching"), base)
    with pytest.raises(ValueError):
        nf_online_steer(base, u0, alpha=0.3, lam=2.0, T=10, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        nf_online_steer(base, u0, alpha=0.1, lam=0.5, T=10, rng=np.random.default_rng(0))


def test_nf_online_steer_drives_obedience_on_the_matching_game():
    base = build_named("matching")
    u0 = default_objective(_spec("matching"), base)
    metrics = nf_online_steer(
        base,
        u0,
        alpha=0.05,
        lam=2.0,
        T=20000,
        rng=np.random.default_rng(42),
    )
    assert metrics.realized_payments.shape == (20000, 2)
    assert np.all(metrics.realized_payments >= -1e-12)
    assert np.all(metrics.realized_payments <= 2.0 + 1e-9)
    # Obedience improves: the running directness gap shrinks markedly.
    assert metrics.directness_gap[-1] <= 0.5 * metrics.directness_gap[200] + 0.05
    assert metrics.sampled_terminals is not None


def test_nf_online_steer_is_deterministic_under_a_fixed_seed():
    base = build_named("matching")
    u0 = default_objective(_spec("matching"), base)
    runs = [
        nf_online_steer(base, u0, alpha=0.1, lam=2.0, T=500, rng=np.random.default_rng(9))
        for _ in range(2)
    ]
    np.testing.assert_array_equal(runs[0].realized_payments, runs[1].realized_payments)
    np.testing.assert_array_equal(runs[0].sampled_terminals, runs[1].sampled_terminals)
    np.testing.assert_array_equal(runs[0].welfare, runs[1].welfare)
