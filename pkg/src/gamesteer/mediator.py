"""Advice augmentation and optimal-equilibrium steering through a recommender.

This module adds a recommender (the "mediator") to a finite extensive-form
game: immediately before every decision node a recommender node is inserted
whose actions are private advice — one branch per action available to the
player about to move.  Players observe only the advice addressed to them, so
an augmented information set is a base information set paired with the full
sequence of advice its owner has received.  The recommender itself moves with
perfect information (every recommender node is its own singleton information
set).  Once two distinct players have disobeyed their advice the recommender
stops advising and the remainder of the game is played unadvised.

On top of the augmented game the module provides:

* ``solve_optimal_bce`` — finds advice maximizing a bounded per-terminal
  objective among *obedient* (self-enforcing) advice policies, i.e. an
  optimal Bayes-correlated equilibrium of the base game.  It runs regret
  minimization for the recommender against best-responding deviators on a
  penalized saddle objective, doubling the penalty weight until fresh best
  responses certify obedience.
* ``compute_then_steer`` — freezes solved advice into the chance layer and
  pays no-regret players vanishing nonnegative bonuses until they follow it.
* ``online_steer`` — learns the advice and steers simultaneously: each round
  the recommender refines its advice with regret feedback while players are
  paid to stay obedient.
* ``nf_online_steer`` — a bandit variant for one-shot (normal-form) games
  where everyone observes only realized payoffs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .games import (
    CHANCE,
    DECISION,
    TERMINAL,
    GameTree,
    SequenceFormStrategy,
    best_response,
    best_response_to_weights,
    build_game,
    chance,
    check_strategy,
    decide,
    expected_utility,
    leaf,
    pure_strategy_from_labels,
    reach_products,
    sequence_to_behavior,
    utility_weights,
    validate,
)
from .learners import CfrPlus, Exp3, cfr_step, exp3_step, normal_form_tensors
from .steering import (
    Hyperparams,
    RegretRecord,
    SteeringMetrics,
    _feed,
    deviation_mass,
    run_full_feedback_steer,
    run_trajectory_steer,
)

__all__ = [
    "AugmentedGame",
    "BceSolution",
    "LagrangianGame",
    "NonCertifiedEquilibriumError",
    "RecommendationBandit",
    "augment",
    "build_lagrangian",
    "compute_then_steer",
    "direct_profile",
    "direct_strategy",
    "fix_mediator",
    "lagrangian_value",
    "mediator_env_reach",
    "nf_online_steer",
    "nf_rec_exploration_payment",
    "nf_rec_mediator_reward",
    "nf_rec_payment",
    "online_steer",
    "recommendation_strategy",
    "solve_optimal_bce",
]


class NonCertifiedEquilibriumError(RuntimeError):
    """Raised when steering is asked to enforce advice whose obedience
    certificate never bound within the solver's budget."""


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


@dataclass
class AugmentedGame:
    """A base game together with its advice-augmented version.

    The recommender is the last player index of ``game``.  ``aug_to_base``
    maps each augmented terminal to the base terminal it copies, and
    ``terminal_tuples`` records, per augmented terminal, the base terminal
    plus the first disobedience event of each of the (up to two) distinct
    deviators on the path — ``(player, base infoset key, advised label,
    played label)`` or ``None``.  These tuples exist for debugging and
    analysis only; no game logic reads them.
    """

    base: GameTree
    game: GameTree
    mediator: int
    aug_to_base: np.ndarray
    terminal_tuples: list
    _advice: list  # per base player, per augmented infoset: advised label | None
    _base_infoset: list  # per base player, per augmented infoset: base infoset id
    _gadget: list  # per recommender infoset: (player, base infoset id) advised

    @property
    def n_base_players(self) -> int:
        return self.base.n_players

    def lift(self, values) -> np.ndarray:
        """Spread per-base-terminal values onto the augmented terminals."""
        vals = np.asarray(values, dtype=float)
        if vals.shape != (self.base.n_terminals,):
            raise ValueError(
                f"expected one value per base terminal ({self.base.n_terminals}), "
                f"got shape {vals.shape}"
            )
        return vals[self.aug_to_base]

    def recommended_action(self, player: int, infoset: int):
        """Advised label at a player's augmented infoset (None once advice
        has ceased)."""
        return self._advice[player][infoset]

    def base_infoset(self, player: int, infoset: int) -> int:
        """Base infoset underlying a player's augmented infoset."""
        return self._base_infoset[player][infoset]

    def gadget_target(self, infoset: int):
        """(player, base infoset) advised at a recommender infoset."""
        return self._gadget[infoset]


def augment(base: GameTree) -> AugmentedGame:
    """Insert a perfect-information recommender before every decision node.

    Each recommender node offers one advice branch per action of the node's
    owner; the owner then moves knowing only their own advice history.
    Advice stops for good once two distinct players have disobeyed.  The
    recommender's payoff row is pinned to the base minimum payoff so the
    normalization of every base player's utilities is unchanged.
    """
    problems = validate(base)
    if problems:
        raise ValueError("cannot augment an invalid base game: " + "; ".join(problems))
    med = base.n_players
    floor = float(base.raw_payoffs.min())
    player_records: dict = {}  # (player, augmented infoset key) -> (base infoset, advice)
    gadget_records: dict = {}  # recommender infoset key -> (player, base infoset)
    base_order: list[int] = []
    tuples: list[tuple] = []
    gadget_serial = itertools.count()

    def walk(v: int, deviators: frozenset, histories: dict, events: tuple):
        kind = base.node_kind[v]
        if kind == TERMINAL:
            zb = int(base.node_terminal[v])
            base_order.append(zb)
            tuples.append((zb, events[0], events[1]))
            payoffs = [float(x) for x in base.raw_payoffs[:, zb]]
            return leaf(*payoffs, floor)
        first = int(base.node_first_child[v])
        nc = int(base.node_n_children[v])
        kids = [int(c) for c in base.children[first : first + nc]]
        labels = [base.child_label[first + j] for j in range(nc)]
        if kind == CHANCE:
            probs = base.child_prob[first : first + nc]
            return chance(
                [
                    (float(probs[j]), labels[j], walk(kids[j], deviators, histories, events))
                    for j in range(nc)
                ]
            )
        p = int(base.node_owner[v])
        binfoset = int(base.node_infoset[v])
        past = histories.get(p, ())

        def acting_node(advice):
            history = past + (advice,)
            key = f"adv{p}:{binfoset}:{history!r}"
            player_records[(p, key)] = (binfoset, advice)
            branches = []
            for j in range(nc):
                label = labels[j]
                if advice is None or label == advice or p in deviators:
                    next_devs, next_events = deviators, events
                else:
                    next_devs = deviators | {p}
                    event = (p, base.seq[p].infoset_key[binfoset], advice, label)
                    next_events = (
                        (event, events[1]) if events[0] is None else (events[0], event)
                    )
                next_hist = dict(histories)
                next_hist[p] = history
                branches.append((label, walk(kids[j], next_devs, next_hist, next_events)))
            return decide(p, key, branches)

        if len(deviators) >= 2:
            return acting_node(None)
        gkey = f"advice#{next(gadget_serial)}"
        gadget_records[gkey] = (p, binfoset)
        return decide(med, gkey, [(labels[j], acting_node(labels[j])) for j in range(nc)])

    root = walk(0, frozenset(), {}, (None, None))
    name = f"{base.name}+advice" if base.name else "advised"
    game = build_game(root, med + 1, name=name)
    if game.build_violations:
        raise AssertionError(
            "augmented tree failed structural checks: " + "; ".join(game.build_violations)
        )
    aug_to_base = np.asarray(base_order, dtype=np.int64)
    if game.n_terminals > base.n_terminals**3:
        raise AssertionError("augmented terminal count exceeds the cubic bound")
    if not np.array_equal(game.raw_payoffs[:med], base.raw_payoffs[:, aug_to_base]):
        raise AssertionError("augmented payoffs do not replicate the base payoffs")

    advice, base_infoset = [], []
    for p in range(med):
        advice_p, infosets_p = [], []
        for key in game.seq[p].infoset_key:
            binf, rec = player_records[(p, key)]
            advice_p.append(rec)
            infosets_p.append(binf)
        advice.append(advice_p)
        base_infoset.append(infosets_p)
    gadget = [gadget_records[key] for key in game.seq[med].infoset_key]

    return AugmentedGame(
        base=base,
        game=game,
        mediator=med,
        aug_to_base=aug_to_base,
        terminal_tuples=tuples,
        _advice=advice,
        _base_infoset=base_infoset,
        _gadget=gadget,
    )


def direct_strategy(aug: AugmentedGame, player: int) -> SequenceFormStrategy:
    """The pure strategy that follows every piece of advice (and plays the
    first listed action where advice has ceased)."""
    recs = dict(zip(aug.game.seq[player].infoset_key, aug._advice[player]))

    def chooser(key, labels):
        rec = recs[key]
        return rec if rec is not None else labels[0]

    return pure_strategy_from_labels(aug.game, player, chooser)


def direct_profile(aug: AugmentedGame) -> list:
    """Always-obedient strategies for every base player."""
    return [direct_strategy(aug, i) for i in range(aug.n_base_players)]


def recommendation_strategy(aug: AugmentedGame, base_profile) -> SequenceFormStrategy:
    """Recommender strategy that advises the action a base profile plays.

    At each recommender infoset the advised label is the highest-mass action
    of ``base_profile`` at the underlying base infoset (first listed action
    if the infoset is unreached).
    """
    base = aug.base
    chosen = []
    for p in range(base.n_players):
        ix = base.seq[p]
        mass = base_profile[p].mass
        labels_p = []
        for j in range(len(ix.infoset_key)):
            first = int(ix.infoset_first_seq[j])
            actions = list(ix.infoset_actions[j])
            seg = mass[first : first + len(actions)]
            top = int(np.argmax(seg))
            labels_p.append(actions[top] if seg[top] > 0 else actions[0])
        chosen.append(labels_p)
    advice_of = dict(zip(aug.game.seq[aug.mediator].infoset_key, aug._gadget))

    def chooser(key, labels):
        p, binfoset = advice_of[key]
        return chosen[p][binfoset]

    return pure_strategy_from_labels(aug.game, aug.mediator, chooser)


def fix_mediator(aug: AugmentedGame, mu: SequenceFormStrategy) -> GameTree:
    """Fold a recommender strategy into the chance layer.

    Returns a game over the base players only, identical to the augmented
    game except that every recommender node became a chance node with that
    node's conditional advice probabilities under ``mu``.  Player infosets,
    sequence indexing, terminal order, and payoffs are all preserved.
    """
    g = aug.game
    med = aug.mediator
    problems = check_strategy(g, mu)
    if problems:
        raise ValueError("advice strategy is not playable: " + "; ".join(problems))
    cond = sequence_to_behavior(g, mu)
    med_ix = g.seq[med]

    def rebuild(v: int):
        kind = g.node_kind[v]
        if kind == TERMINAL:
            z = int(g.node_terminal[v])
            return leaf(*[float(x) for x in g.raw_payoffs[:med, z]])
        first = int(g.node_first_child[v])
        nc = int(g.node_n_children[v])
        kids = [int(c) for c in g.children[first : first + nc]]
        labels = [g.child_label[first + j] for j in range(nc)]
        if kind == CHANCE:
            return chance(
                [
                    (float(g.child_prob[first + j]), labels[j], rebuild(kids[j]))
                    for j in range(nc)
                ]
            )
        p = int(g.node_owner[v])
        if p == med:
            jloc = int(g.node_infoset[v])
            s0 = int(med_ix.infoset_first_seq[jloc])
            actions = list(med_ix.infoset_actions[jloc])
            return chance(
                [
                    (float(cond[s0 + actions.index(labels[j])]), labels[j], rebuild(kids[j]))
                    for j in range(nc)
                ]
            )
        key = g.seq[p].infoset_key[g.node_infoset[v]]
        return decide(p, key, [(labels[j], rebuild(kids[j])) for j in range(nc)])

    name = f"{g.name}@fixed" if g.name else "fixed-advice"
    fixed = build_game(rebuild(0), med, name=name)
    if fixed.n_terminals != g.n_terminals:
        raise AssertionError("folding advice into chance changed the terminal count")
    return fixed


def mediator_env_reach(aug: AugmentedGame, mu: SequenceFormStrategy) -> np.ndarray:
    """Per-terminal chance reach with the advice probabilities folded in.

    Feeding this as ``env_reach`` is equivalent to playing against
    ``fix_mediator(aug, mu)`` without rebuilding the tree.
    """
    g = aug.game
    return g.chance_reach * mu.mass[g.terminal_seq[aug.mediator]]


# ---------------------------------------------------------------------------
# penalized saddle objective
# ---------------------------------------------------------------------------


def _aug_objective(aug: AugmentedGame, objective) -> np.ndarray:
    """Accept an objective per base terminal or per augmented terminal."""
    vals = np.asarray(objective, dtype=float)
    if vals.shape == (aug.game.n_terminals,):
        return vals
    if vals.shape == (aug.base.n_terminals,):
        return vals[aug.aug_to_base]
    raise ValueError(
        "objective must give one value per base or augmented terminal; "
        f"got shape {vals.shape}"
    )


@dataclass
class LagrangianGame:
    """The recommender's penalized objective.

    ``value(mu, strategies)`` is the advice objective at obedient play minus
    ``lam`` times the summed gain each deviation strategy earns over obedient
    play against ``mu`` — linear in ``mu`` and in each deviation separately.
    """

    aug: AugmentedGame
    objective: np.ndarray
    lam: float
    direct: list
    objective_weights: np.ndarray  # objective gradient over advice sequences

    def value(self, mu: SequenceFormStrategy, strategies) -> float:
        g = self.aug.game
        slots = list(self.direct) + [mu]
        total = expected_utility(g, slots, self.aug.mediator, values=self.objective)
        for i, x in enumerate(strategies):
            dev = list(slots)
            dev[i] = x
            total -= self.lam * (
                expected_utility(g, dev, i) - expected_utility(g, slots, i)
            )
        return float(total)

    def scaled_value(self, mu: SequenceFormStrategy, strategies) -> float:
        if self.lam <= 0:
            raise ValueError("scaled value needs a positive penalty weight")
        return self.value(mu, strategies) / self.lam


def build_lagrangian(aug: AugmentedGame, objective, lam: float) -> LagrangianGame:
    """Assemble the penalized objective for a given penalty weight."""
    if lam < 0:
        raise ValueError("the penalty weight must be nonnegative")
    u0 = _aug_objective(aug, objective)
    d = direct_profile(aug)
    weights = utility_weights(aug.game, aug.mediator, d + [None], values=u0)
    return LagrangianGame(
        aug=aug, objective=u0, lam=float(lam), direct=d, objective_weights=weights
    )


def lagrangian_value(lag: LagrangianGame, mu: SequenceFormStrategy, strategies) -> float:
    """Penalized objective value at advice ``mu`` against given deviations."""
    return lag.value(mu, strategies)


# ---------------------------------------------------------------------------
# optimal obedient advice
# ---------------------------------------------------------------------------


@dataclass
class BceSolution:
    """Solved advice with its obedience certificate.

    ``deviation_benefits[i]`` is how much player ``i``'s best response gains
    over obedience against the solved advice; ``certified`` means every
    benefit stayed within the solver's tolerance.
    """

    mediator_strategy: SequenceFormStrategy
    value: float
    lam: float
    deviation_benefits: np.ndarray
    certified: bool
    iterations: int
    stages: int

    def summary(self) -> dict:
        return {
            "lam": self.lam,
            "value": self.value,
            "certified": self.certified,
            "deviation_benefits": [float(b) for b in self.deviation_benefits],
            "iterations": self.iterations,
            "stages": self.stages,
        }


def solve_optimal_bce(
    aug: AugmentedGame,
    objective,
    iterations: int = 2000,
    lam: float = 1.0,
    tol: float = 1e-4,
    max_stages: int = 12,
) -> BceSolution:
    """Find objective-maximizing obedient advice by penalized self-play.

    Per round the recommender's regret minimizer faces the objective (scaled
    by ``1/lam``) minus the gain each player's own regret-minimizing deviator
    currently earns over obedience; after ``iterations`` rounds the averaged
    advice is certified with fresh exact best responses.  If some certified
    benefit exceeds ``tol`` the penalty weight doubles and the stage repeats,
    up to ``max_stages`` stages; an exhausted budget returns the best attempt
    flagged ``certified=False``.

    The objective must be bounded to [0, 1] per terminal (given per base or
    per augmented terminal).
    """
    g = aug.game
    med = aug.mediator
    n = aug.n_base_players
    u0 = _aug_objective(aug, objective)
    if u0.min() < -1e-9 or u0.max() > 1.0 + 1e-9:
        raise ValueError("objective values must lie in [0, 1]")
    if lam < 1.0:
        raise ValueError("the starting penalty weight must be at least 1")
    if iterations < 1:
        raise ValueError("need at least one round per stage")

    d = direct_profile(aug)
    med_ts = g.terminal_seq[med]
    n_med = g.seq[med].n_seqs
    player_ts = [g.terminal_seq[i] for i in range(n)]
    n_seqs = [g.seq[i].n_seqs for i in range(n)]
    d_at = [d[i].mass[player_ts[i]] for i in range(n)]
    utils = [np.asarray(g.utilities[i], dtype=float) for i in range(n)]
    # Per-terminal reach of chance plus every obedient player except the
    # focal one; multiplying in one strategy's terminal mass then bucketing
    # by a player's terminal sequences gives that player's utility gradient.
    rival = []
    for i in range(n):
        r = g.chance_reach.copy()
        for q in range(n):
            if q != i:
                r = r * d_at[q]
        rival.append(r)
    all_direct = rival[0] * d_at[0] if n else g.chance_reach
    w_objective = np.bincount(med_ts, weights=all_direct * u0, minlength=n_med)
    w_direct = [
        np.bincount(med_ts, weights=rival[i] * d_at[i] * utils[i], minlength=n_med)
        for i in range(n)
    ]

    best = None
    cur_lam = float(lam)
    total = 0
    for stage in range(1, max_stages + 1):
        learner = CfrPlus.create(g, med)
        deviators = [CfrPlus.create(g, i) for i in range(n)]
        for _ in range(iterations):
            mu = learner.strategy()
            mu_at = mu.mass[med_ts]
            w = w_objective / cur_lam
            for i in range(n):
                dev_w = np.bincount(
                    player_ts[i], weights=rival[i] * mu_at * utils[i], minlength=n_seqs[i]
                )
                cfr_step(deviators[i], dev_w)
                x_at = deviators[i].strategy().mass[player_ts[i]]
                w = w - (
                    np.bincount(med_ts, weights=rival[i] * x_at * utils[i], minlength=n_med)
                    - w_direct[i]
                )
            cfr_step(learner, w)
        total += iterations
        mu_bar = learner.average_strategy()
        slots = d + [mu_bar]
        value = float(expected_utility(g, slots, med, values=u0))
        benefits = np.zeros(max(n, 1))
        for i in range(n):
            _, br_val = best_response(g, i, slots)
            benefits[i] = br_val - expected_utility(g, slots, i)
        candidate = BceSolution(
            mediator_strategy=mu_bar,
            value=value,
            lam=cur_lam,
            deviation_benefits=np.maximum(benefits[:n], 0.0) if n else benefits[:0],
            certified=bool(n == 0 or benefits[:n].max() <= tol),
            iterations=total,
            stages=stage,
        )
        if candidate.certified:
            return candidate
        if best is None or candidate.deviation_benefits.max() < best.deviation_benefits.max():
            best = candidate
        cur_lam *= 2.0
    return best


# ---------------------------------------------------------------------------
# steering with precomputed advice
# ---------------------------------------------------------------------------


def compute_then_steer(
    aug: AugmentedGame,
    objective,
    scheme: str = "trajectory",
    T: int = 1000,
    solution: BceSolution | None = None,
    learners=None,
    learner_factory=None,
    hyper: Hyperparams | None = None,
    P: float | None = None,
    dynamic_base: float | None = None,
    dynamic_cap: float | None = None,
    burn_in: int = 10,
    rng: np.random.Generator | None = None,
    window: int = 50,
    force: bool = False,
    iterations: int = 2000,
    target_tol: float | None = None,
) -> SteeringMetrics:
    """Solve for optimal obedient advice, freeze it into chance, then steer.

    The solved advice is folded into the chance layer and the always-obedient
    profile becomes the steering target for the chosen payment scheme
    (``"full_feedback"`` or ``"trajectory"``).  A solution whose certificate
    did not bind is refused unless ``force=True``.  The returned metrics gain
    an ``optimality_gap`` series: solved value minus the running average of
    the realized objective.
    """
    u0 = _aug_objective(aug, objective)
    if solution is None:
        solution = solve_optimal_bce(aug, u0, iterations=iterations)
    if not solution.certified and not force:
        raise NonCertifiedEquilibriumError(
            "advice is not certified obedient (max deviation benefit "
            f"{float(np.max(solution.deviation_benefits, initial=0.0)):.3g}); "
            "pass force=True to steer toward it anyway"
        )
    fixed = fix_mediator(aug, solution.mediator_strategy)
    target = direct_profile(aug)
    if learners is None:
        factory = learner_factory or CfrPlus.create
        learners = [factory(fixed, i) for i in range(fixed.n_players)]
    if len(learners) != fixed.n_players:
        raise ValueError(f"need one learner per player ({fixed.n_players})")
    if target_tol is None:
        slack = float(np.max(solution.deviation_benefits, initial=0.0))
        target_tol = max(1e-6, 2.0 * slack + 1e-9)

    if scheme == "full_feedback":
        if hyper is None:
            hyper = Hyperparams(alpha=1.0 / fixed.n_terminals, cap=3.0, epsilon=0.0, T=T)
        metrics = run_full_feedback_steer(
            fixed,
            target,
            learners,
            T,
            hyper,
            burn_in=burn_in,
            dynamic_base=dynamic_base,
            dynamic_cap=dynamic_cap,
            window=window,
            objective=u0,
            target_tol=target_tol,
        )
    elif scheme == "trajectory":
        if rng is None:
            raise ValueError("trajectory steering needs an rng")
        if hyper is None:
            cap = float(P) if P is not None else 2.0
            if cap < 1.0:
                raise ValueError("the bonus cap must be at least 1")
            alpha0 = float(dynamic_cap) if dynamic_cap is not None else 1.0
            hyper = Hyperparams(alpha=alpha0, cap=cap, epsilon=0.0, T=T)
        metrics = run_trajectory_steer(
            fixed,
            target,
            learners,
            T,
            hyper,
            rng,
            burn_in=burn_in,
            dynamic_base=dynamic_base,
            dynamic_cap=dynamic_cap,
            window=window,
            objective=u0,
            target_tol=target_tol,
        )
    else:
        raise ValueError(f"unknown steering scheme {scheme!r}")

    running = np.cumsum(metrics.objective_values) / np.arange(1, T + 1)
    metrics.optimality_gap = solution.value - running
    metrics.scheme = f"compute_then_steer:{scheme}"
    return metrics


# ---------------------------------------------------------------------------
# online steering (advice learned while steering)
# ---------------------------------------------------------------------------


def online_steer(
    aug: AugmentedGame,
    objective,
    lam: float,
    alpha: float,
    T: int,
    learners=None,
    burn_in: int = 0,
    optimal_value: float | None = None,
) -> SteeringMetrics:
    """Steer players while the recommender is still learning its advice.

    Each round the recommender's regret minimizer plays advice ``mu_t``; each
    player is paid, in the advice-augmented game, a bonus of ``alpha`` per
    obedient sequence plus exactly the utility shortfall of obedience against
    the current opponents (shifted to be nonnegative and zero under full
    obedience).  The recommender's own feedback is the penalized objective
    against the players' current strategies.  Requires ``alpha`` at most one
    over the number of augmented terminals and ``lam >= 1``; per-round
    payments then stay within [0, 3].
    """
    g = aug.game
    med = aug.mediator
    n = aug.n_base_players
    u0 = _aug_objective(aug, objective)
    n_terms = g.n_terminals
    if not 0.0 <= alpha <= 1.0 / n_terms + 1e-12:
        raise ValueError(
            f"alpha must lie in [0, 1/{n_terms}] for the augmented game"
        )
    if lam < 1.0:
        raise ValueError("the penalty weight must be at least 1")
    if learners is None:
        learners = [CfrPlus.create(g, i) for i in range(n)]
    if len(learners) != n:
        raise ValueError(f"need one learner per base player ({n})")

    target = direct_profile(aug)
    ones = SequenceFormStrategy(med, np.ones(g.seq[med].n_seqs))
    target_slots = target + [ones]
    med_ts = g.terminal_seq[med]
    n_med = g.seq[med].n_seqs
    player_ts = [g.terminal_seq[i] for i in range(n)]
    n_seqs = [g.seq[i].n_seqs for i in range(n)]
    d_at = [target[i].mass[player_ts[i]] for i in range(n)]
    utils = [np.asarray(g.utilities[i], dtype=float) for i in range(n)]
    rival = []
    for i in range(n):
        r = g.chance_reach.copy()
        for q in range(n):
            if q != i:
                r = r * d_at[q]
        rival.append(r)
    all_direct = rival[0] * d_at[0] if n else g.chance_reach
    w_objective = np.bincount(med_ts, weights=all_direct * u0, minlength=n_med)
    w_direct_med = [
        np.bincount(med_ts, weights=rival[i] * d_at[i] * utils[i], minlength=n_med)
        for i in range(n)
    ]
    welfare_values = g.raw_payoffs[:med].sum(axis=0)

    recommender = CfrPlus.create(g, med)
    records = [RegretRecord.create(n_seqs[i], payment_cap=3.0) for i in range(n)]
    realized = np.zeros((T, n))
    welfare = np.zeros(T)
    gaps = np.zeros(T)
    alphas = np.zeros(T)
    dev_mass = np.zeros((T, n))
    objective_values = np.zeros(T)
    cum_play = np.zeros(n_terms)
    cum_target = np.zeros(n_terms)

    for t in range(T):
        mu = recommender.strategy()
        env = g.chance_reach * mu.mass[med_ts]
        profile = [learner.strategy() for learner in learners]
        slots = profile + [ones]
        play_dist = env * reach_products(g, slots)
        target_dist = env * reach_products(g, target_slots)
        cum_play += play_dist
        cum_target += target_dist
        gaps[t] = float(np.abs(cum_play / (t + 1) - cum_target / (t + 1)).sum())
        welfare[t] = float(np.dot(play_dist, welfare_values))
        objective_values[t] = float(np.dot(play_dist, u0))
        dev_mass[t] = deviation_mass(g, target_slots, slots, env_reach=env)[:n]
        steering_on = t >= burn_in
        a_t = alpha if steering_on else 0.0
        alphas[t] = a_t

        for i in range(n):
            w_play = utility_weights(g, i, slots, env_reach=env)
            if steering_on:
                w_target = utility_weights(g, i, target_slots, env_reach=env)
                bracket = w_target - w_play
                _, negated_best = best_response_to_weights(g, i, -bracket)
                shift = -negated_best
                pay = (
                    a_t * float(np.dot(target[i].mass, profile[i].mass))
                    + float(np.dot(bracket, profile[i].mass))
                    - shift
                )
                realized[t, i] = max(pay, 0.0)
                fed = a_t * target[i].mass + w_target
                fed[0] -= shift
            else:
                fed = w_play
            records[i].add(fed, float(np.dot(fed, profile[i].mass)))
            _feed(learners[i], fed)

        mu_at = mu.mass[med_ts]
        w_med = w_objective / lam
        for i in range(n):
            x_at = profile[i].mass[player_ts[i]]
            w_med = w_med - (
                np.bincount(med_ts, weights=rival[i] * x_at * utils[i], minlength=n_med)
                - w_direct_med[i]
            )
        cfr_step(recommender, w_med)

    optimality_gap = None
    if optimal_value is not None:
        optimality_gap = optimal_value - np.cumsum(objective_values) / np.arange(1, T + 1)
    return SteeringMetrics(
        scheme="online",
        T=T,
        burn_in=burn_in,
        cap=3.0,
        realized_payments=realized,
        expected_payments=realized.copy(),
        welfare=welfare,
        directness_gap=gaps,
        alpha_used=alphas,
        deviation_mass=dev_mass,
        regret_records=records,
        objective_values=objective_values,
        optimality_gap=optimality_gap,
    )


# ---------------------------------------------------------------------------
# bandit steering for one-shot games
# ---------------------------------------------------------------------------


def _require_normal_form(game: GameTree) -> list:
    """Action counts per player if the game is one-shot; raise otherwise."""
    reasons = []
    if np.any(game.node_kind == CHANCE):
        reasons.append("it has chance nodes")
    counts = []
    for p in range(game.n_players):
        ix = game.seq[p]
        if len(ix.infoset_key) != 1:
            reasons.append(f"player {p} has {len(ix.infoset_key)} infosets")
            counts.append(0)
        else:
            counts.append(len(ix.infoset_actions[0]))
    if not reasons:
        expected = int(np.prod(counts))
        if game.n_terminals != expected:
            reasons.append(
                f"it has {game.n_terminals} terminals, not one per action profile"
            )
    if reasons:
        raise ValueError(
            "a one-shot normal-form game is required: " + "; ".join(reasons)
        )
    return counts


def nf_rec_exploration_payment(utility: float, obeyed: bool) -> float:
    """Payment on an exploration round: tops utility up to 1, plus 1 for
    obeying the exploratory advice."""
    return 1.0 - float(utility) + (1.0 if obeyed else 0.0)


def nf_rec_payment(tensors, player: int, actions, recs) -> float:
    """Payment on an exploitation round.

    The player keeps what they would have earned had everyone else obeyed,
    minus realized utility, sandboxed by the best such margin any action
    could have earned — zero at full obedience, always within [0, 2].
    """
    u = tensors[player]
    actions = tuple(int(a) for a in actions)
    recs = tuple(int(r) for r in recs)
    vs_recs = list(recs)
    vs_recs[player] = actions[player]
    selfish = float(u[tuple(vs_recs)])
    played = float(u[actions])
    margin = np.inf
    for alt in range(u.shape[player]):
        alt_recs = list(recs)
        alt_recs[player] = alt
        alt_play = list(actions)
        alt_play[player] = alt
        margin = min(margin, float(u[tuple(alt_recs)]) - float(u[tuple(alt_play)]))
    return selfish - played - margin


def nf_rec_mediator_reward(tensors, objective_tensor, lam: float, actions, recs) -> float:
    """Recommender reward: the advised profile's objective over ``lam`` minus
    every player's unilateral gain from their played action against obedient
    opponents."""
    actions = tuple(int(a) for a in actions)
    recs = tuple(int(r) for r in recs)
    reward = float(np.asarray(objective_tensor)[recs]) / lam
    for i, u in enumerate(tensors):
        vs = list(recs)
        vs[i] = actions[i]
        reward -= float(u[tuple(vs)]) - float(u[recs])
    return reward


class RecommendationBandit:
    """Per-advice contextual bandit: one independent arm-chooser per possible
    advice, so obedience can be learned advice by advice."""

    def __init__(self, n_actions: int, explore: float = 0.05, payoff_cap: float = 3.0):
        self.n_actions = n_actions
        self._cells = [
            Exp3(n_actions, explore=explore, payoff_cap=payoff_cap)
            for _ in range(n_actions)
        ]

    def policy(self, context: int) -> np.ndarray:
        return self._cells[context].strategy()

    def learn(self, context: int, arm: int, payoff: float) -> None:
        exp3_step(self._cells[context], arm, float(payoff))


def nf_online_steer(
    base: GameTree,
    objective,
    alpha: float,
    lam: float,
    T: int,
    rng: np.random.Generator,
    learners=None,
    mediator_bandit=None,
    burn_in: int = 0,
) -> SteeringMetrics:
    """Bandit-feedback steering of a one-shot game toward learned advice.

    With probability ``alpha`` a round explores: advice is uniform and every
    player is paid ``1 - utility + 1{obeyed}``, making obedience strictly
    best regardless of play.  Otherwise the recommender's bandit picks the
    advice profile and players receive the sandboxed obedience payment (zero
    under full obedience).  The recommender's bandit reward is the advised
    profile's objective over ``lam`` minus realized disobedience gains,
    shifted into [0, 1].  Requires ``alpha <= 1/(2n)`` and ``lam >= 1``.
    """
    counts = _require_normal_form(base)
    n = base.n_players
    if not 0.0 <= alpha <= 1.0 / (2 * n) + 1e-12:
        raise ValueError(f"alpha must lie in [0, 1/{2 * n}] for {n} players")
    if lam < 1.0:
        raise ValueError("the penalty weight must be at least 1")
    u0 = np.asarray(objective, dtype=float)
    if u0.shape != (base.n_terminals,):
        raise ValueError("objective must give one value per terminal")

    tensors = normal_form_tensors(base)
    first_seq = [int(base.seq[p].infoset_first_seq[0]) for p in range(n)]
    profile_terminal = np.full(counts, -1, dtype=np.int64)
    objective_tensor = np.zeros(counts)
    for z in range(base.n_terminals):
        idx = tuple(int(base.terminal_seq[p][z]) - first_seq[p] for p in range(n))
        profile_terminal[idx] = z
        objective_tensor[idx] = u0[z]
    arms = list(itertools.product(*[range(k) for k in counts]))
    arm_index = {a: j for j, a in enumerate(arms)}
    recommender = mediator_bandit or Exp3(len(arms), explore=0.05, payoff_cap=1.0)
    if learners is None:
        learners = [RecommendationBandit(counts[i]) for i in range(n)]
    if len(learners) != n:
        raise ValueError(f"need one learner per player ({n})")
    welfare_values = base.raw_payoffs.sum(axis=0)
    reward_span = 2 * n + 1  # objective/lam in [0,1], each disobedience gain in [-1,1]

    realized = np.zeros((T, n))
    welfare = np.zeros(T)
    gaps = np.zeros(T)
    alphas = np.zeros(T)
    dev_mass = np.zeros((T, n))
    objective_values = np.zeros(T)
    sampled = np.zeros(T, dtype=np.int64)
    cum_mismatch = np.zeros(n)

    for t in range(T):
        steering_on = t >= burn_in
        advised_arm = int(rng.choice(len(arms), p=recommender.strategy()))
        exploring = steering_on and bool(rng.random() < alpha)
        if exploring:
            recs = tuple(int(rng.integers(counts[i])) for i in range(n))
        else:
            recs = arms[advised_arm]
        actions = tuple(
            int(rng.choice(counts[i], p=learners[i].policy(recs[i]))) for i in range(n)
        )
        z = int(profile_terminal[actions])
        sampled[t] = z
        welfare[t] = float(welfare_values[z])
        objective_values[t] = float(u0[z])
        mismatch = np.array([float(actions[i] != recs[i]) for i in range(n)])
        cum_mismatch += mismatch
        dev_mass[t] = mismatch
        gaps[t] = float(2.0 * np.mean(cum_mismatch / (t + 1)))
        alphas[t] = alpha if steering_on else 0.0

        if exploring:
            payments = [
                nf_rec_exploration_payment(
                    float(tensors[i][actions]), actions[i] == recs[i]
                )
                for i in range(n)
            ]
            reward = 0.0
        else:
            payments = [
                nf_rec_payment(tensors, i, actions, recs) if steering_on else 0.0
                for i in range(n)
            ]
            reward = nf_rec_mediator_reward(
                tensors, objective_tensor, lam, actions, recs
            )
        realized[t] = payments
        for i in range(n):
            payoff = float(tensors[i][actions]) + payments[i]
            learners[i].learn(recs[i], actions[i], payoff)
        if not exploring:
            exp3_step(recommender, advised_arm, (reward + n) / reward_span)
        else:
            exp3_step(recommender, advised_arm, float(n) / reward_span)

    return SteeringMetrics(
        scheme="nf_online",
        T=T,
        burn_in=burn_in,
        cap=2.0,
        realized_payments=realized,
        expected_payments=realized.copy(),
        welfare=welfare,
        directness_gap=gaps,
        alpha_used=alphas,
        deviation_mass=dev_mass,
        regret_records=None,
        sampled_terminals=sampled,
        objective_values=objective_values,
        optimality_gap=None,
    )
