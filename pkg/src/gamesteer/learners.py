"""No-regret learners and the adversarial strategy rules used as negative tests.

Learners consume per-round utility — a gradient vector over their own
sequences (full feedback) or a realized payoff (bandit) — and emit valid
sequence-form strategies.  ``measured_regret`` evaluates the
payment-normalized regret of a recorded run exactly, as a best response
against the summed utility vectors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .games import (
    GameTree,
    SequenceFormStrategy,
    behavior_to_sequence,
    best_response_to_weights,
    enumerate_pure_strategies,
    sequence_to_behavior,
    uniform_strategy,
)


# ---------------------------------------------------------------------------
# CFR+ (full feedback, sequence form)
# ---------------------------------------------------------------------------


@dataclass
class CfrPlus:
    """Regret-matching+ at every information set.

    Simultaneous updates, plain (unweighted) strategy averaging.  Cumulative
    regrets stay nonnegative by construction; the emitted strategy is always
    a valid sequence-form strategy.
    """

    game: GameTree
    player: int
    regret: np.ndarray
    strategy_sum: np.ndarray
    current: SequenceFormStrategy
    # Behavioral view of ``current``, carried between rounds: sequence mass
    # cannot encode the regret-matched policy at zero-reach infosets, and
    # re-deriving it from mass would silently reset those infosets to uniform.
    cond: np.ndarray = None
    t: int = 0

    @classmethod
    def create(cls, game: GameTree, player: int) -> "CfrPlus":
        ix = game.seq[player]
        return cls(
            game=game,
            player=player,
            regret=np.zeros(ix.n_seqs),
            strategy_sum=np.zeros(ix.n_seqs),
            current=uniform_strategy(game, player),
        )

    def strategy(self) -> SequenceFormStrategy:
        return self.current

    def average_strategy(self) -> SequenceFormStrategy:
        if self.t == 0:
            return self.current.copy()
        return SequenceFormStrategy(self.player, self.strategy_sum / self.t)

    def regret_bound(self, T: int, value_range: float = 1.0) -> float:
        """Standard counterfactual-regret bound for T rounds of utilities
        spanning ``value_range``."""
        ix = self.game.seq[self.player]
        if ix.n_infosets == 0:
            return 0.0
        max_actions = int(ix.infoset_n_actions.max())
        return value_range * ix.n_infosets * math.sqrt(max_actions) * math.sqrt(T)


def cfr_step(state: CfrPlus, utility: np.ndarray) -> SequenceFormStrategy:
    """One full-feedback update.

    ``utility`` is the gradient of the round's (payment-inclusive) expected
    utility in the player's own sequence mass.  Accumulates the strategy that
    *was* played this round into the average, then returns the next strategy.
    """
    ix = state.game.seq[state.player]
    w = np.asarray(utility, dtype=np.float64)
    if w.shape != (ix.n_seqs,):
        raise ValueError(f"utility has shape {w.shape}, expected ({ix.n_seqs},)")
    if not np.all(np.isfinite(w)):
        raise ValueError("utility vector contains non-finite entries")

    state.strategy_sum += state.current.mass
    state.t += 1

    if state.cond is None:
        state.cond = sequence_to_behavior(state.game, state.current)
    cond = state.cond
    val = w.copy()
    for lvl in ix.levels:  # deepest first
        v = val[lvl.seqs]
        iso = np.zeros(len(lvl.infosets))
        np.add.at(iso, lvl.grp, cond[lvl.seqs] * v)
        state.regret[lvl.seqs] = np.maximum(
            0.0, state.regret[lvl.seqs] + v - iso[lvl.grp]
        )
        np.add.at(val, lvl.parent_seq, iso)

    new_cond = np.ones(ix.n_seqs)
    for lvl in ix.levels:
        r = state.regret[lvl.seqs]
        tot = np.zeros(len(lvl.infosets))
        np.add.at(tot, lvl.grp, r)
        denom = tot[lvl.grp]
        uniform = 1.0 / lvl.n_actions[lvl.grp]
        with np.errstate(invalid="ignore", divide="ignore"):
            new_cond[lvl.seqs] = np.where(denom > 0, r / np.where(denom > 0, denom, 1.0), uniform)
    state.cond = new_cond
    state.current = behavior_to_sequence(state.game, state.player, new_cond)
    return state.current


# ---------------------------------------------------------------------------
# Multiplicative weights (normal form, full feedback)
# ---------------------------------------------------------------------------


@dataclass
class Mwu:
    """Multiplicative-weights learner over one action set."""

    n_actions: int
    eta: float = 0.1
    log_weights: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        if self.log_weights is None:
            self.log_weights = np.zeros(self.n_actions)

    def strategy(self) -> np.ndarray:
        z = self.log_weights - self.log_weights.max()
        w = np.exp(z)
        return w / w.sum()

    def regret_bound(self, T: int, value_range: float = 1.0) -> float:
        """ln(K)/η + η·c²·T/8 for utilities spanning c = value_range."""
        return (
            math.log(self.n_actions) / self.eta
            + self.eta * value_range**2 * T / 8.0
        )


def mwu_step(state: Mwu, utility: np.ndarray) -> np.ndarray:
    """Multiplicative-weights update; returns the next mixed action."""
    u = np.asarray(utility, dtype=np.float64)
    if u.shape != (state.n_actions,):
        raise ValueError(f"utility has shape {u.shape}, expected ({state.n_actions},)")
    if not np.all(np.isfinite(u)):
        raise ValueError("utility vector contains non-finite entries")
    state.log_weights = state.log_weights + state.eta * u
    state.t += 1
    return state.strategy()


# ---------------------------------------------------------------------------
# EXP3 (bandit)
# ---------------------------------------------------------------------------


@dataclass
class Exp3:
    """EXP3 with an explicit uniform-exploration floor.

    Play probabilities are (1−ε)·softmax(weights) + ε/K, so every action
    keeps probability at least ε/K.  Realized payoffs must lie in
    [0, payoff_cap]; updates are importance-weighted.
    """

    n_actions: int
    explore: float = 0.05
    payoff_cap: float = 1.0
    log_weights: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        if self.log_weights is None:
            self.log_weights = np.zeros(self.n_actions)

    def strategy(self) -> np.ndarray:
        z = self.log_weights - self.log_weights.max()
        w = np.exp(z)
        return (1.0 - self.explore) * (w / w.sum()) + self.explore / self.n_actions

    def regret_bound(self, T: int, value_range: float | None = None) -> float:
        """Fixed-exploration EXP3 bound (linear floor from ε plus log term)."""
        c = self.payoff_cap if value_range is None else value_range
        k = self.n_actions
        return c * ((math.e - 1.0) * self.explore * T + k * math.log(k) / self.explore)


def exp3_step(state: Exp3, played: int, payoff: float) -> np.ndarray:
    """Importance-weighted EXP3 update for the sampled action.

    ``payoff`` must lie in [0, payoff_cap].  Returns the next mixed action.
    """
    if not 0 <= played < state.n_actions:
        raise ValueError(f"played action {played} out of range")
    if not np.isfinite(payoff) or payoff < -1e-9 or payoff > state.payoff_cap + 1e-9:
        raise ValueError(
            f"payoff {payoff!r} outside declared range [0, {state.payoff_cap}]"
        )
    probs = state.strategy()
    eta = state.explore / state.n_actions
    state.log_weights[played] += eta * (payoff / state.payoff_cap) / probs[played]
    state.log_weights -= state.log_weights.max()
    state.t += 1
    return state.strategy()


class GameTooLargeError(ValueError):
    """Raised when a plan-enumeration learner is asked for too many plans."""


class Exp3OverPlans:
    """Bandit learner whose arms are a player's reduced pure plans.

    Only valid for games with at most ``limit`` plans; larger games should
    use :class:`OutcomeSamplingCfr` instead.
    """

    def __init__(self, game, player, payoff_cap, rng, explore=0.05, limit=10**4):
        plans = enumerate_pure_strategies(game, player, limit=limit)
        if plans is None:
            raise GameTooLargeError(
                f"player {player} has more than {limit} pure plans"
            )
        self.game = game
        self.player = player
        self.plans = plans
        self.rng = rng
        self.inner = Exp3(
            n_actions=len(plans), explore=explore, payoff_cap=payoff_cap
        )
        self._plan_matrix = np.stack([p.mass for p in plans])

    def strategy(self) -> SequenceFormStrategy:
        mix = self.inner.strategy()
        return SequenceFormStrategy(self.player, mix @ self._plan_matrix)

    def sample_plan(self):
        mix = self.inner.strategy()
        k = int(self.rng.choice(len(self.plans), p=mix))
        return k, self.plans[k]

    def update(self, arm: int, payoff: float) -> None:
        exp3_step(self.inner, arm, payoff)


class OutcomeSamplingCfr:
    """Outcome-sampling counterfactual regret minimizer (bandit feedback).

    Plays regret-matching+ behavioral strategies floored with ``explore``
    uniform mass per information set; updates use importance-weighted
    estimates from the single sampled terminal.  Used as the bandit learner
    for games too large for plan enumeration; its regret guarantee is
    probabilistic rather than the deterministic CFR bound.
    """

    def __init__(self, game, player, payoff_cap, rng, explore=0.1):
        self.game = game
        self.player = player
        self.payoff_cap = payoff_cap
        self.rng = rng
        self.explore = explore
        ix = game.seq[player]
        self.regret = np.zeros(ix.n_seqs)
        self.t = 0
        self._cond = self._behavior()

    def _behavior(self) -> np.ndarray:
        ix = self.game.seq[self.player]
        cond = np.ones(ix.n_seqs)
        for lvl in ix.levels:
            r = self.regret[lvl.seqs]
            tot = np.zeros(len(lvl.infosets))
            np.add.at(tot, lvl.grp, r)
            denom = tot[lvl.grp]
            uniform = 1.0 / lvl.n_actions[lvl.grp]
            with np.errstate(invalid="ignore", divide="ignore"):
                base = np.where(denom > 0, r / np.where(denom > 0, denom, 1.0), uniform)
            cond[lvl.seqs] = (1 - self.explore) * base + self.explore * uniform
        return cond

    def strategy(self) -> SequenceFormStrategy:
        return behavior_to_sequence(self.game, self.player, self._cond)

    def update_from_terminal(self, terminal: int, payoff: float) -> None:
        """Credit the sampled playout's payoff to the path taken."""
        ix = self.game.seq[self.player]
        # reconstruct the player's sequence path to the terminal
        path = []
        s = int(self.game.terminal_seq[self.player][terminal])
        while s != 0:
            path.append(s)
            j = ix.seq_infoset[s]
            s = int(ix.infoset_parent_seq[j])
        path.reverse()
        if path:
            probs = self._cond[path]
            pi = float(np.prod(probs))
            w = payoff / max(pi, 1e-12)
            tail = 1.0
            for k in range(len(path) - 1, -1, -1):
                s_k = path[k]
                j = ix.seq_infoset[s_k]
                f = ix.infoset_first_seq[j]
                nact = ix.infoset_n_actions[j]
                v_hat = w * tail
                block = slice(f, f + nact)
                self.regret[block] -= probs[k] * v_hat
                self.regret[s_k] += v_hat
                self.regret[block] = np.maximum(0.0, self.regret[block])
                tail *= probs[k]
        self.t += 1
        self._cond = self._behavior()


# ---------------------------------------------------------------------------
# Regret records
# ---------------------------------------------------------------------------


@dataclass
class RegretRecord:
    """Everything needed to evaluate a run's payment-normalized regret.

    Stores the running sum of per-round utility vectors (over the player's
    sequences or actions) and the realized per-round values; the regret is
    ``(best fixed response to the sum − realized total) / (payment cap + 1)``.
    """

    payment_cap: float
    summed: np.ndarray
    realized: list = field(default_factory=list)

    @classmethod
    def create(cls, n_weights: int, payment_cap: float = 0.0) -> "RegretRecord":
        return cls(payment_cap=payment_cap, summed=np.zeros(n_weights))

    def add(self, utility: np.ndarray, realized_value: float) -> None:
        self.summed += utility
        self.realized.append(float(realized_value))


def measured_regret(record: RegretRecord, strategy_space) -> float:
    """Exact payment-normalized regret of a recorded run.

    ``strategy_space`` selects the benchmark class: a ``(game, player)`` pair
    maximizes over sequence-form strategies by best-response dynamic
    programming; the string ``"simplex"`` maximizes over single actions.
    """
    if not record.realized:
        raise ValueError("empty record")
    if strategy_space == "simplex":
        best = float(record.summed.max())
    else:
        game, player = strategy_space
        _, best = best_response_to_weights(game, player, record.summed)
    return (best - sum(record.realized)) / (record.payment_cap + 1.0)


# ---------------------------------------------------------------------------
# One-shot (normal-form) views and Nash support enumeration
# ---------------------------------------------------------------------------


def normal_form_tensors(game: GameTree, values: np.ndarray | None = None) -> list:
    """Per-player expected-value tensors for games where every player has
    exactly one information set (chance folded in).

    Entry ``[a_0, ..., a_{n-1}]`` of tensor i is player i's normalized
    expected utility under that pure profile.  Passing ``values`` (one row
    of per-terminal values per player) replaces the game utilities, e.g. to
    tabulate expected payments instead.
    """
    shape = []
    for p in range(game.n_players):
        ix = game.seq[p]
        if ix.n_infosets != 1:
            raise ValueError(
                f"player {p} has {ix.n_infosets} information sets; need exactly 1"
            )
        shape.append(int(ix.infoset_n_actions[0]))
    if values is None:
        values = game.utilities
    tensors = [np.zeros(shape) for _ in range(game.n_players)]
    # terminal seq id s > 0 corresponds to action s-1; s == 0 means the player
    # never acts on that path, which is consistent with every action.
    dist_base = game.chance_reach
    for profile in itertools.product(*[range(k) for k in shape]):
        mask = np.ones(game.n_terminals, dtype=bool)
        for p, a in enumerate(profile):
            ts = game.terminal_seq[p]
            mask &= (ts == 0) | (ts == a + 1)
        w = dist_base * mask
        for p in range(game.n_players):
            tensors[p][profile] = float(np.dot(w, values[p]))
    return tensors


class NoEquilibriumError(RuntimeError):
    """Support enumeration failed to locate any Nash equilibrium."""


def _own_payoff_vector(tensors, i, profile):
    """Player i's payoff per own action, given the other players' mixes.

    Contracts the other players' axes from the highest index downward so
    axis numbering stays valid throughout.
    """
    u = tensors[i]
    for p in range(len(profile) - 1, -1, -1):
        if p != i:
            u = np.tensordot(u, profile[p], axes=(p, 0))
    return u


def _deviation_benefit(tensors, profile) -> float:
    worst = 0.0
    for i in range(len(tensors)):
        payoff = _own_payoff_vector(tensors, i, profile)
        have = float(np.dot(payoff, profile[i]))
        worst = max(worst, float(payoff.max()) - have)
    return worst


def support_enumeration_nash(tensors, tol: float = 1e-9) -> list:
    """All Nash equilibria found by support enumeration, smallest supports
    first (so pure equilibria lead, in lexicographic order).

    Handles two-player games with up to a few actions exactly, and
    three-player two-action games via partial-support reduction plus a grid
    scan for the fully mixed case.
    """
    n = len(tensors)
    shape = tensors[0].shape
    found = []

    def push(profile):
        profile = tuple(np.asarray(m, dtype=np.float64) for m in profile)
        if any(m.min() < -1e-7 for m in profile):
            return
        profile = tuple(np.clip(m, 0, None) / np.clip(m, 0, None).sum() for m in profile)
        if _deviation_benefit(tensors, profile) > 1e-7:
            return
        key = tuple(np.round(np.concatenate(profile), 6))
        if key not in {f[0] for f in found}:
            found.append((key, profile))

    # pure profiles first, in lexicographic order
    for pure in itertools.product(*[range(k) for k in shape]):
        profile = []
        for p, a in enumerate(pure):
            m = np.zeros(shape[p])
            m[a] = 1.0
            profile.append(m)
        push(profile)

    if n == 2:
        _support_enum_two_player(tensors, push)
    elif n == 3 and all(k == 2 for k in shape):
        _mixed_three_player_two_action(tensors, push)
    elif found:
        pass
    else:
        raise NoEquilibriumError(
            f"no pure equilibrium and no mixed-solver for shape {shape}"
        )

    if not found:
        raise NoEquilibriumError("support enumeration found no equilibrium")
    return [profile for _, profile in found]


def _support_enum_two_player(tensors, push):
    u0, u1 = tensors
    a0, a1 = u0.shape
    supports0 = [s for r in range(1, a0 + 1) for s in itertools.combinations(range(a0), r)]
    supports1 = [s for r in range(1, a1 + 1) for s in itertools.combinations(range(a1), r)]
    for s0, s1 in sorted(
        itertools.product(supports0, supports1),
        key=lambda pair: (len(pair[0]) + len(pair[1]), pair),
    ):
        if len(s0) == 1 and len(s1) == 1:
            continue  # pure handled already
        # unknowns: q over s1 and value v0 (player 0 indifference), and
        # p over s0 with v1; solve each side by least squares and verify.
        q = _solve_indifference(u0[list(s0), :][:, list(s1)], len(s1))
        p = _solve_indifference(u1[list(s0), :][:, list(s1)].T, len(s0))
        if q is None or p is None:
            continue
        mix0 = np.zeros(a0)
        mix0[list(s0)] = p
        mix1 = np.zeros(a1)
        mix1[list(s1)] = q
        push((mix0, mix1))


def _solve_indifference(block, k):
    """Find a distribution q (length k) equalizing all rows of ``block``."""
    rows = block.shape[0]
    # equations: block @ q - v = 0 for each row; sum(q) = 1
    a = np.zeros((rows + 1, k + 1))
    b = np.zeros(rows + 1)
    a[:rows, :k] = block
    a[:rows, k] = -1.0
    a[rows, :k] = 1.0
    b[rows] = 1.0
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    if np.linalg.norm(a @ sol - b) > 1e-7:
        return None
    q = sol[:k]
    if q.min() < -1e-7:
        return None
    return np.clip(q, 0, None) / max(np.clip(q, 0, None).sum(), 1e-12)


def _mixed_three_player_two_action(tensors, push):
    """Find interior and one-player-pure equilibria of 2×2×2 games.

    For one player pinned to a pure action, the remaining two players form a
    2×2 game solved by support enumeration.  For the fully mixed case, each
    player's indifference is bilinear in the other two mixing probabilities:
    given player 0's probability, players 1 and 2's indifference conditions
    pin the other two, and player 0's own indifference is the scanned
    residual.
    """

    def diff(i, p):
        """u_i(action 0) − u_i(action 1) given mixing probs ``p`` (own slot
        ignored)."""
        mixes = [np.array([x, 1 - x]) for x in p]
        payoff = _own_payoff_vector(tensors, i, mixes)
        return payoff[0] - payoff[1]

    # one player pure, other two solved as an induced 2x2 game
    for q in range(3):
        others = [p for p in range(3) if p != q]
        for a_q in range(2):
            pin = np.zeros(2)
            pin[a_q] = 1.0

            def induced(i):
                # removing axis q leaves axes ordered (others[0], others[1])
                return np.tensordot(tensors[i], pin, axes=(q, 0))

            sub = [induced(others[0]), induced(others[1])]

            def sub_push(pair):
                profile = [None, None, None]
                profile[q] = pin
                profile[others[0]], profile[others[1]] = pair
                push(tuple(profile))

            _support_enum_two_player(sub, sub_push)

    def full_resid(p0_val):
        # player 1's diff depends on (p0, p2): solve for p2
        lo = diff(1, [p0_val, 0.0, 0.0])
        hi = diff(1, [p0_val, 0.0, 1.0])
        if abs(hi - lo) < 1e-12:
            return None
        p2v = -lo / (hi - lo)
        # player 2's diff depends on (p0, p1): solve for p1
        lo2 = diff(2, [p0_val, 0.0, 0.0])
        hi2 = diff(2, [p0_val, 1.0, 0.0])
        if abs(hi2 - lo2) < 1e-12:
            return None
        p1v = -lo2 / (hi2 - lo2)
        if not (-1e-9 <= p1v <= 1 + 1e-9 and -1e-9 <= p2v <= 1 + 1e-9):
            return None
        return diff(0, [0.0, p1v, p2v]), p1v, p2v

    grid = np.linspace(0.0, 1.0, 201)
    vals = [full_resid(x) for x in grid]
    for a, b in zip(range(len(grid) - 1), range(1, len(grid))):
        va, vb = vals[a], vals[b]
        if va is None or vb is None:
            continue
        if va[0] == 0.0 or va[0] * vb[0] < 0:
            lo_x, hi_x = grid[a], grid[b]
            flo = va[0]
            for _ in range(60):  # bisection
                mid = 0.5 * (lo_x + hi_x)
                fm = full_resid(mid)
                if fm is None:
                    break
                if flo * fm[0] <= 0:
                    hi_x = mid
                else:
                    lo_x, flo = mid, fm[0]
            sol = full_resid(0.5 * (lo_x + hi_x))
            if sol is not None:
                _, p1v, p2v = sol
                p0v = 0.5 * (lo_x + hi_x)
                push(
                    (
                        np.array([p0v, 1 - p0v]),
                        np.array([p1v, 1 - p1v]),
                        np.array([p2v, 1 - p2v]),
                    )
                )


def equilibrium_adversary(tensors, prefer=None):
    """One Nash equilibrium of the payment-augmented one-shot game.

    ``prefer`` may name a pure profile (tuple of action indices); it is
    returned whenever it remains an equilibrium.  Otherwise the first
    equilibrium from support enumeration — pure ones first — is returned.
    """
    if prefer is not None:
        profile = []
        for p, a in enumerate(prefer):
            m = np.zeros(tensors[p].shape[p])
            m[a] = 1.0
            profile.append(m)
        if _deviation_benefit(tensors, tuple(profile)) <= 1e-9:
            return tuple(profile)
    return support_enumeration_nash(tensors)[0]


@dataclass
class BudgetDrainAdversary:
    """The bounded-budget impossibility strategy rule.

    For the first ``horizon_sq`` rounds the players jointly play an arbitrary
    Nash equilibrium of the current payment-augmented game (deterministically
    the first found, preferring pure).  Afterwards they play the bad profile
    whenever it is an equilibrium of the current augmented game, and
    otherwise the profile maximizing the mediator's total payment, draining
    the remaining budget.
    """

    base_tensors: list
    bad_profile: tuple
    horizon_sq: int
    t: int = 0
    _cache: dict = field(default_factory=dict)

    def act(self, payment_tensors) -> tuple:
        self.t += 1
        aug = [u + p for u, p in zip(self.base_tensors, payment_tensors)]
        key = np.round(np.concatenate([a.ravel() for a in aug]), 12).tobytes()
        if self.t <= self.horizon_sq:
            if key not in self._cache:
                self._cache[key] = support_enumeration_nash(aug)[0]
            return self._cache[key]
        bad = []
        for p, a in enumerate(self.bad_profile):
            m = np.zeros(aug[p].shape[p])
            m[a] = 1.0
            bad.append(m)
        if _deviation_benefit(aug, tuple(bad)) <= 1e-9:
            return tuple(bad)
        total = np.zeros(payment_tensors[0].shape)
        for p in payment_tensors:
            total = total + p
        flat = int(np.argmax(total))
        pure = np.unravel_index(flat, total.shape)
        out = []
        for p, a in enumerate(pure):
            m = np.zeros(aug[p].shape[p])
            m[a] = 1.0
            out.append(m)
        return tuple(out)


@dataclass
class StubbornEquilibriumAdversary:
    """Players who re-play the incumbent equilibrium while it survives.

    Each round they check the sticky profile against the current
    payment-augmented game; while it remains an equilibrium they play it,
    otherwise they move to the first equilibrium found by support
    enumeration (preferring pure) and make that the new incumbent.
    """

    base_tensors: list
    incumbent: tuple

    def act(self, payment_tensors) -> tuple:
        aug = [u + p for u, p in zip(self.base_tensors, payment_tensors)]
        profile = []
        for p, a in enumerate(self.incumbent):
            m = np.zeros(aug[p].shape[p])
            m[a] = 1.0
            profile.append(m)
        if _deviation_benefit(aug, tuple(profile)) <= 1e-9:
            return tuple(profile)
        result = support_enumeration_nash(aug)[0]
        if all(m.max() > 1 - 1e-9 for m in result):
            self.incumbent = tuple(int(np.argmax(m)) for m in result)
        return result
