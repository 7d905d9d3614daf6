"""Payment schemes and steering loops for driving no-regret learners to a
fixed target profile.

Three payment schemes share an interface: each is nonnegative, capped, and
linear in the paid player's own strategy.

* ``nf_payment`` — one-shot games: a direct player earns a small bonus plus
  full insurance against the others' deviations.
* ``ff_payment`` — extensive-form games with observed strategies: a
  per-sequence directness bonus, a sandboxing term that makes opponents
  look direct, and a shift that keeps the result nonnegative.
* ``traj_payment`` — per-terminal payments for the sampled-trajectory
  setting: a small bonus when everyone was direct, a large bonus ``P`` for
  direct players when somebody else deviated.

``schedule`` turns a learner regret bound into the hyperparameters each
scheme's guarantee prescribes, ``run_normal_form_steer`` /
``run_full_feedback_steer`` / ``run_trajectory_steer`` execute the loops,
and ``directness_gap`` / ``deviation_mass`` compute the convergence
metrics.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .games import (
    GameTree,
    SequenceFormStrategy,
    best_response_to_weights,
    check_strategy,
    nash_gap,
    reach_products,
    sample_playout,
    utility_weights,
)
from .learners import (
    CfrPlus,
    Exp3OverPlans,
    Mwu,
    OutcomeSamplingCfr,
    RegretRecord,
    cfr_step,
    mwu_step,
    normal_form_tensors,
)

SCHEMES = ("normal_form", "full_feedback", "trajectory", "online", "nf_online")


class TargetNotEquilibriumError(ValueError):
    """The steering target is not a (pure) Nash equilibrium of the game."""


class HorizonTooShortError(ValueError):
    """The schedule's precondition on alpha fails at this horizon."""

    def __init__(self, message: str, minimal_T: int | None = None):
        super().__init__(message)
        self.minimal_T = minimal_T


@dataclass
class Hyperparams:
    """Scheme hyperparameters: bonus scale, per-round cap, schedule inputs."""

    alpha: float
    cap: float
    epsilon: float
    T: int
    lam: float | None = None
    clamped: bool = False


@dataclass
class PaymentSchedule:
    """A payment scheme bound to its target profile and hyperparameters."""

    scheme: str
    target: list
    hyper: Hyperparams

    def cap_value(self) -> float:
        if self.scheme == "normal_form":
            return 1.0 + self.hyper.alpha
        if self.scheme == "full_feedback":
            return 3.0
        return self.hyper.cap


@dataclass
class SteeringMetrics:
    """Per-round records of one steering run.

    ``realized_payments`` come from the sampled playout (equal to the
    expected ones in deterministic full-feedback runs); ``directness_gap``
    is the running L1 distance between the time-averaged terminal reach of
    play and that of the target, chance excluded; ``welfare`` is the raw
    (denormalized) expected social welfare of the round's strategy
    profile; ``deviation_mass`` is the per-player probability mass on
    terminals their target strategy avoids.
    """

    scheme: str
    T: int
    burn_in: int
    cap: float
    realized_payments: np.ndarray
    expected_payments: np.ndarray
    welfare: np.ndarray
    directness_gap: np.ndarray
    alpha_used: np.ndarray
    deviation_mass: np.ndarray
    regret_records: list | None = None
    sampled_terminals: np.ndarray | None = None
    objective_values: np.ndarray | None = None
    optimality_gap: np.ndarray | None = None

    def average_payments(self) -> np.ndarray:
        return self.realized_payments.mean(axis=0)

    def average_expected_payments(self) -> np.ndarray:
        return self.expected_payments.mean(axis=0)

    def final_gap(self) -> float:
        return float(self.directness_gap[-1])

    def average_welfare(self) -> float:
        return float(self.welfare.mean())


# ---------------------------------------------------------------------------
# Target verification and metric primitives
# ---------------------------------------------------------------------------


def verify_target(
    game: GameTree,
    target,
    tol: float = 1e-9,
    env_reach: np.ndarray | None = None,
) -> None:
    """Reject targets that are not pure Nash equilibria.

    ``tol`` is the maximum tolerated best-response improvement; loosen it
    for targets certified only to a solver tolerance.
    """
    if len(target) != game.n_players:
        raise TargetNotEquilibriumError(
            f"target has {len(target)} strategies for {game.n_players} players"
        )
    for i, s in enumerate(target):
        problems = check_strategy(game, s, pure=True)
        if problems:
            raise TargetNotEquilibriumError(
                f"target strategy for player {i} invalid: {problems[0]}"
            )
    gap = nash_gap(game, target, env_reach=env_reach)
    if gap > tol:
        raise TargetNotEquilibriumError(
            f"target is not an equilibrium: best-response benefit {gap:.3e} > {tol:.1e}"
        )


def directness_gap(history, target_reach: np.ndarray) -> float:
    """L1 distance between the average of per-round terminal-reach vectors
    (players only, chance excluded) and the target's reach vector."""
    arr = np.asarray(history, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.size == 0:
        raise ValueError("directness gap needs a nonempty history")
    t = np.asarray(target_reach, dtype=np.float64)
    if arr.shape[1] != t.shape[0]:
        raise ValueError(
            f"history vectors have length {arr.shape[1]}, target has {t.shape[0]}"
        )
    return float(np.abs(arr.mean(axis=0) - t).sum())


def dynamic_alpha(recent_gap: float, base: float, cap: float) -> float:
    """Bonus scale proportional to the recently observed directness gap."""
    if recent_gap < 0 or not np.isfinite(recent_gap):
        raise ValueError(f"recent gap must be a nonnegative number, got {recent_gap!r}")
    if base < 0 or cap < 0:
        raise ValueError("base and cap must be nonnegative")
    return min(cap, base * recent_gap)


def deviation_mass(
    game: GameTree,
    target,
    strategies,
    env_reach: np.ndarray | None = None,
) -> np.ndarray:
    """Per-player probability of reaching a terminal the player's target
    strategy gives zero mass (chance included)."""
    env = game.chance_reach if env_reach is None else env_reach
    full = env * reach_products(game, strategies)
    out = np.zeros(game.n_players)
    for i in range(game.n_players):
        off_target = target[i].mass[game.terminal_seq[i]] <= 0.0
        out[i] = float(full[off_target].sum())
    return out


def _raw_welfare(game: GameTree, full_reach: np.ndarray) -> float:
    norm_sum = float(np.dot(full_reach, game.utilities.sum(axis=0)))
    return game.n_players * game.offset + game.scale * norm_sum


# ---------------------------------------------------------------------------
# Payment schemes
# ---------------------------------------------------------------------------


def nf_payment(target, strategies, i: int, alpha: float, game: GameTree | None = None) -> float:
    """One-shot-game payment: (target overlap) x (bonus + others' deviation).

    With pure strategies this is alpha when everyone is direct, 1 + alpha
    when player i alone is direct, and 0 when player i deviates.
    """
    if not 0.0 <= alpha <= 1.0 + 1e-12:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if game is not None:
        for p in range(game.n_players):
            if game.seq[p].n_infosets != 1:
                raise ValueError(
                    "this payment scheme needs a one-shot game "
                    f"(player {p} has {game.seq[p].n_infosets} information sets)"
                )
    own = float(np.dot(target[i].mass[1:], strategies[i].mass[1:]))
    others = 1.0
    for j in range(len(target)):
        if j != i:
            others *= float(np.dot(target[j].mass[1:], strategies[j].mass[1:]))
    return own * (alpha + 1.0 - others)


def ff_payment(
    game: GameTree,
    target,
    strategies,
    i: int,
    alpha: float,
    env_reach: np.ndarray | None = None,
    direct_weights: np.ndarray | None = None,
    skip_target_check: bool = False,
    target_tol: float = 1e-9,
) -> float:
    """Observed-strategy payment: directness bonus + sandboxing + shift.

    bonus  = alpha * (target_i . x_i) over terminal-relevant sequences
    sandbox= u_i(x_i, d_-i) - u_i(x_i, x_-i)
    shift  = -min over own strategies of the same bracket

    ``direct_weights`` may carry a cached gradient of u_i(., d_-i); the
    bracket against the current opponents is always recomputed.
    """
    if not 0.0 <= alpha <= 1.0 / game.n_terminals + 1e-12:
        raise ValueError(
            f"alpha must lie in [0, 1/{game.n_terminals}], got {alpha}"
        )
    if not skip_target_check:
        verify_target(game, target, tol=target_tol, env_reach=env_reach)
    if direct_weights is None:
        direct_weights = utility_weights(game, i, target, env_reach=env_reach)
    current_weights = utility_weights(game, i, strategies, env_reach=env_reach)
    bracket = direct_weights - current_weights
    sandbox = float(np.dot(bracket, strategies[i].mass))
    _, negated_best = best_response_to_weights(game, i, -bracket)
    shift = -negated_best  # min of the bracket over own strategies
    bonus = alpha * float(np.dot(target[i].mass, strategies[i].mass))
    return max(0.0, bonus + sandbox - shift)


def traj_payment_vectors(
    game: GameTree, target, alpha: float, cap: float
) -> np.ndarray:
    """Per-player, per-terminal trajectory payments, shape (players, Z).

    q_i(z) = alpha * [everyone direct at z] + cap * [i direct, someone not].
    """
    if cap < 1.0:
        raise ValueError(f"per-round cap must be at least 1, got {cap}")
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    target_reach = reach_products(game, target)
    own = np.stack(
        [target[i].mass[game.terminal_seq[i]] for i in range(game.n_players)]
    )
    return alpha * target_reach + cap * own * (1.0 - target_reach)


def traj_payment(
    game: GameTree, target, i: int, z: int, alpha: float, cap: float
) -> float:
    """Trajectory payment to player ``i`` at sampled terminal ``z``."""
    q = traj_payment_vectors(game, target, alpha, cap)
    return float(q[i, z])


# ---------------------------------------------------------------------------
# Hyperparameter schedules
# ---------------------------------------------------------------------------

_ALPHA_CAPS: dict[str, Callable] = {
    "normal_form": lambda n, Z: 1.0,
    "full_feedback": lambda n, Z: 1.0 / Z,
    "trajectory": lambda n, Z: 1.0,
    "online": lambda n, Z: 1.0 / Z,
    "nf_online": lambda n, Z: 1.0 / (2.0 * n),
}


def alpha_cap(scheme: str, n: int, Z: int) -> float:
    """The largest admissible bonus scale for a scheme's payment bounds."""
    if scheme not in _ALPHA_CAPS:
        raise ValueError(f"unknown scheme {scheme!r}; known: {', '.join(SCHEMES)}")
    return float(_ALPHA_CAPS[scheme](n, Z))


def _regret_at(regret, T: int) -> float:
    value = regret(T) if callable(regret) else regret
    value = float(value)
    if value < 0:
        raise ValueError(f"regret bound must be nonnegative, got {value}")
    return value


def _schedule_raw(
    scheme: str,
    regret,
    T: int,
    n: int,
    Z: int,
    mediator_regret,
    max_actions: int | None,
) -> Hyperparams:
    R = _regret_at(regret, T)
    if scheme in ("normal_form", "full_feedback"):
        eps = 4.0 * n * R / T
        alpha = math.sqrt(eps)
        cap = (1.0 + alpha) if scheme == "normal_form" else 3.0
        return Hyperparams(alpha=alpha, cap=cap, epsilon=eps, T=T)
    if scheme == "trajectory":
        eps = R / T
        if eps <= 0:
            raise ValueError("the trajectory schedule needs a positive regret bound")
        alpha = 4.0 * math.sqrt(Z) * eps**0.25
        cap = 2.0 * math.sqrt(Z) / eps**0.25
        return Hyperparams(alpha=alpha, cap=cap, epsilon=eps, T=T)
    if scheme in ("online", "nf_online"):
        if mediator_regret is None:
            raise ValueError(f"the {scheme} schedule needs the mediator regret bound")
        R0 = _regret_at(mediator_regret, T)
        eps = (R0 + 4.0 * n * R) / T
        if eps <= 0:
            raise ValueError(f"the {scheme} schedule needs a positive regret bound")
        if scheme == "online":
            alpha = eps ** (2.0 / 3.0) * Z ** (-1.0 / 3.0)
            lam = Z ** (2.0 / 3.0) * eps ** (-1.0 / 3.0)
            cap = 3.0
        else:
            if max_actions is None:
                raise ValueError(
                    "the nf_online schedule needs the largest action count"
                )
            b = float(max_actions)
            alpha = Z ** (1.0 / 3.0) * n ** (-2.0 / 3.0) * b ** (1.0 / 3.0) * eps ** (2.0 / 3.0)
            lam = Z ** (1.0 / 3.0) * n ** (1.0 / 3.0) * b ** (1.0 / 3.0) * eps ** (-1.0 / 3.0)
            cap = 2.0
        return Hyperparams(alpha=alpha, cap=cap, epsilon=eps, T=T, lam=lam)
    raise ValueError(f"unknown schedule {scheme!r}; known: {', '.join(SCHEMES)}")


def _minimal_admissible_T(scheme, regret, n, Z, mediator_regret, max_actions, start_T):
    cap = _ALPHA_CAPS[scheme](n, Z)

    def ok(T):
        h = _schedule_raw(scheme, regret, T, n, Z, mediator_regret, max_actions)
        return h.alpha <= cap + 1e-15

    hi = max(int(start_T), 1)
    for _ in range(80):
        if ok(hi):
            break
        hi *= 2
    else:
        return None
    lo = max(hi // 2, 1)
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return hi


def schedule(
    scheme: str,
    regret,
    T: int,
    n: int,
    Z: int,
    mediator_regret=None,
    max_actions: int | None = None,
    enforce: bool = True,
) -> Hyperparams:
    """Hyperparameters for a steering scheme from a learner regret bound.

    ``regret`` (and ``mediator_regret`` for the online schedules) may be a
    number or a callable of the horizon.  The bonus scale has a
    scheme-specific admissibility cap; when the horizon is too short for
    the computed alpha, ``enforce=True`` raises ``HorizonTooShortError``
    carrying the minimal admissible horizon (computed by treating a
    numeric regret bound as horizon-independent), while ``enforce=False``
    clamps alpha to the cap and flags the result.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown schedule {scheme!r}; known: {', '.join(SCHEMES)}")
    if T < 1:
        raise ValueError("horizon must be at least 1")
    hyper = _schedule_raw(scheme, regret, T, n, Z, mediator_regret, max_actions)
    cap = _ALPHA_CAPS[scheme](n, Z)
    if hyper.alpha > cap + 1e-15:
        if enforce:
            minimal = _minimal_admissible_T(
                scheme, regret, n, Z, mediator_regret, max_actions, T
            )
            detail = f"; minimal admissible horizon is {minimal}" if minimal else ""
            raise HorizonTooShortError(
                f"horizon too short: alpha={hyper.alpha:.6g} exceeds its cap "
                f"{cap:.6g} for the {scheme} schedule{detail}",
                minimal_T=minimal,
            )
        hyper.alpha = cap
        hyper.clamped = True
        if scheme == "normal_form":
            hyper.cap = 1.0 + hyper.alpha
    return hyper


def guarantee_bounds(
    scheme: str, hyper: Hyperparams, Z: int, lam_star: float | None = None
) -> dict:
    """The stated payment/gap guarantees for a schedule's hyperparameters."""
    eps = hyper.epsilon
    if scheme == "normal_form":
        b = 2.0 * math.sqrt(eps)
        return {"payment": b, "gap": b}
    if scheme == "full_feedback":
        b = 3.0 * Z * math.sqrt(eps)
        return {"payment": b, "gap": b}
    if scheme == "trajectory":
        return {"payment": 8.0 * math.sqrt(Z) * eps**0.25, "gap": 2.0 * math.sqrt(eps)}
    if scheme in ("online", "nf_online"):
        if lam_star is None:
            raise ValueError("online guarantees need the certified multiplier")
        c = 7.0 if scheme == "online" else 10.0
        b = c * lam_star * Z ** (4.0 / 3.0) * eps ** (1.0 / 3.0)
        return {"payment": b, "gap": b, "optimality": b}
    raise ValueError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Steering loops
# ---------------------------------------------------------------------------


def _alpha_for_round(steering_on, hyper, dynamic_base, dynamic_cap, recent_gap):
    if not steering_on:
        return 0.0
    if dynamic_base is None:
        return hyper.alpha
    cap = hyper.alpha if dynamic_cap is None else dynamic_cap
    return dynamic_alpha(recent_gap, dynamic_base, cap)


def _mix_of(learner) -> np.ndarray:
    """A learner's current mixture over one-shot actions."""
    s = learner.strategy()
    if isinstance(s, SequenceFormStrategy):
        return s.mass[1:]
    return np.asarray(s, dtype=np.float64)


def _feed(learner, utility: np.ndarray) -> None:
    """Hand a learner its utility vector through whichever hook it has."""
    if isinstance(learner, Mwu):
        mwu_step(learner, utility)
    elif isinstance(learner, CfrPlus):
        cfr_step(learner, utility)
    else:
        learner.observe(utility)


def run_normal_form_steer(
    game: GameTree,
    target,
    learners,
    T: int,
    hyper: Hyperparams,
    burn_in: int = 10,
    dynamic_base: float | None = None,
    dynamic_cap: float | None = None,
    window: int = 50,
    objective: np.ndarray | None = None,
    target_tol: float = 1e-9,
) -> SteeringMetrics:
    """Steer multiplicative-weights learners in a one-shot game.

    Each round, every learner is fed its per-action utility against the
    others' current mixtures plus the per-action payment; the direct
    action's net advantage is then at least alpha.
    """
    n = game.n_players
    for p in range(n):
        if game.seq[p].n_infosets != 1:
            raise ValueError("one-shot steering needs a single information set per player")
    if len(learners) != n:
        raise ValueError(f"need {n} learners, got {len(learners)}")
    verify_target(game, target, tol=target_tol)
    target_actions = [int(np.argmax(target[i].mass[1:])) for i in range(n)]
    target_reach = reach_products(game, target)

    target_dist = game.chance_reach * target_reach

    n_actions = [int(game.seq[i].infoset_n_actions[0]) for i in range(n)]
    realized = np.zeros((T, n))
    welfare = np.zeros(T)
    gaps = np.zeros(T)
    alphas = np.zeros(T)
    dev = np.zeros((T, n))
    objective_values = np.zeros(T) if objective is not None else None
    records = [
        RegretRecord.create(n_actions[i], payment_cap=1.0 + hyper.alpha)
        for i in range(n)
    ]
    cum_dist = np.zeros(game.n_terminals)
    recent = deque(maxlen=window)

    for t in range(T):
        mixes = [_mix_of(l) for l in learners]
        profile = [
            SequenceFormStrategy(i, np.concatenate(([1.0], mixes[i])))
            for i in range(n)
        ]
        x_reach = reach_products(game, profile)
        full = game.chance_reach * x_reach
        cum_dist += full
        gaps[t] = float(np.abs(cum_dist / (t + 1) - target_dist).sum())
        welfare[t] = _raw_welfare(game, full)
        dev[t] = deviation_mass(game, target, profile)
        if objective is not None:
            objective_values[t] = float(np.dot(full, objective))
        recent.append(full)

        steering_on = t >= burn_in
        recent_gap = directness_gap(list(recent), target_dist) if recent else 2.0
        a_t = _alpha_for_round(steering_on, hyper, dynamic_base, dynamic_cap, recent_gap)
        alphas[t] = a_t

        for i in range(n):
            w = utility_weights(game, i, profile)
            action_utility = w[0] + w[1:]
            if steering_on:
                others_direct = 1.0
                for j in range(n):
                    if j != i:
                        others_direct *= mixes[j][target_actions[j]]
                pay_direct = a_t + 1.0 - others_direct
                pay_vec = np.zeros(n_actions[i])
                pay_vec[target_actions[i]] = pay_direct
                realized[t, i] = mixes[i][target_actions[i]] * pay_direct
            else:
                pay_vec = 0.0
            fed = action_utility + pay_vec
            records[i].add(fed, float(np.dot(fed, mixes[i])))
            _feed(learners[i], fed)

    return SteeringMetrics(
        scheme="normal_form",
        T=T,
        burn_in=burn_in,
        cap=1.0 + hyper.alpha,
        realized_payments=realized,
        expected_payments=realized.copy(),
        welfare=welfare,
        directness_gap=gaps,
        alpha_used=alphas,
        deviation_mass=dev,
        regret_records=records,
        objective_values=objective_values,
    )


def run_full_feedback_steer(
    game: GameTree,
    target,
    learners,
    T: int,
    hyper: Hyperparams,
    burn_in: int = 10,
    env_reach: np.ndarray | None = None,
    dynamic_base: float | None = None,
    dynamic_cap: float | None = None,
    window: int = 50,
    objective: np.ndarray | None = None,
    target_tol: float = 1e-9,
) -> SteeringMetrics:
    """Steer full-feedback learners whose entire strategies are observed.

    The payment's sandboxing term cancels the opponent-dependence of each
    learner's utility, so after burn-in every learner faces the stationary
    game against direct opponents plus the directness bonus (shifted to
    keep payments nonnegative).
    """
    n = game.n_players
    if len(learners) != n:
        raise ValueError(f"need {n} learners, got {len(learners)}")
    env = game.chance_reach if env_reach is None else env_reach
    verify_target(game, target, tol=target_tol, env_reach=env_reach)
    if dynamic_base is None or dynamic_cap is None:
        alpha_max = hyper.alpha
    else:
        alpha_max = dynamic_cap
    if alpha_max > 1.0 / game.n_terminals + 1e-12:
        raise ValueError(
            f"alpha {alpha_max} exceeds 1/{game.n_terminals} for observed-strategy payments"
        )
    target_reach = reach_products(game, target)
    direct_w = [utility_weights(game, i, target, env_reach=env) for i in range(n)]
    bonus_vec = [target[i].mass.copy() for i in range(n)]

    realized = np.zeros((T, n))
    welfare = np.zeros(T)
    gaps = np.zeros(T)
    alphas = np.zeros(T)
    dev = np.zeros((T, n))
    objective_values = np.zeros(T) if objective is not None else None
    records = [
        RegretRecord.create(game.seq[i].n_seqs, payment_cap=3.0) for i in range(n)
    ]
    target_dist = env * target_reach
    cum_dist = np.zeros(game.n_terminals)
    recent = deque(maxlen=window) if dynamic_base is not None else None

    for t in range(T):
        profile = [l.strategy() for l in learners]
        x_reach = reach_products(game, profile)
        full = env * x_reach
        cum_dist += full
        gaps[t] = float(np.abs(cum_dist / (t + 1) - target_dist).sum())
        welfare[t] = _raw_welfare(game, full)
        dev[t] = deviation_mass(game, target, profile, env_reach=env)
        if objective is not None:
            objective_values[t] = float(np.dot(full, objective))

        steering_on = t >= burn_in
        if recent is not None:
            recent.append(full)
            recent_gap = directness_gap(list(recent), target_dist)
        else:
            recent_gap = 0.0
        a_t = _alpha_for_round(steering_on, hyper, dynamic_base, dynamic_cap, recent_gap)
        alphas[t] = a_t

        for i in range(n):
            w_x = utility_weights(game, i, profile, env_reach=env)
            if steering_on:
                bracket = direct_w[i] - w_x
                _, negated_best = best_response_to_weights(game, i, -bracket)
                shift = -negated_best
                pay = (
                    a_t * float(np.dot(bonus_vec[i], profile[i].mass))
                    + float(np.dot(bracket, profile[i].mass))
                    - shift
                )
                realized[t, i] = max(0.0, pay)
                fed = a_t * bonus_vec[i] + direct_w[i]
                fed[0] -= shift
            else:
                fed = w_x
            records[i].add(fed, float(np.dot(fed, profile[i].mass)))
            _feed(learners[i], fed)

    return SteeringMetrics(
        scheme="full_feedback",
        T=T,
        burn_in=burn_in,
        cap=3.0,
        realized_payments=realized,
        expected_payments=realized.copy(),
        welfare=welfare,
        directness_gap=gaps,
        alpha_used=alphas,
        deviation_mass=dev,
        regret_records=records,
        objective_values=objective_values,
    )


def run_trajectory_steer(
    game: GameTree,
    target,
    learners,
    T: int,
    hyper: Hyperparams,
    rng: np.random.Generator,
    burn_in: int = 10,
    dynamic_base: float | None = None,
    dynamic_cap: float | None = None,
    window: int = 50,
    adversary=None,
    objective: np.ndarray | None = None,
    target_tol: float = 1e-9,
) -> SteeringMetrics:
    """Steer learners when only the sampled playout is observed.

    Payments are the per-terminal trajectory scheme; full-feedback
    learners receive the exact expected payment gradient (the payments
    are a fixed function of the terminal, so their expectation is linear
    in the learner's own strategy), bandit learners receive the realized
    payoff at the sampled terminal.  An ``adversary`` replaces all
    learners with a joint strategy rule that sees the payment tensors
    (one-shot games only).
    """
    n = game.n_players
    verify_target(game, target, tol=target_tol)
    P = hyper.cap
    if P < 1.0:
        raise ValueError(f"per-round cap must be at least 1, got {P}")
    if adversary is None and len(learners) != n:
        raise ValueError(f"need {n} learners, got {len(learners)}")
    target_reach = reach_products(game, target)
    own_direct = np.stack(
        [target[i].mass[game.terminal_seq[i]] for i in range(n)]
    )
    deviated = own_direct * (1.0 - target_reach)  # P-bonus indicator rows

    realized = np.zeros((T, n))
    expected = np.zeros((T, n))
    welfare = np.zeros(T)
    gaps = np.zeros(T)
    alphas = np.zeros(T)
    dev = np.zeros((T, n))
    sampled = np.zeros(T, dtype=np.int64)
    objective_values = np.zeros(T) if objective is not None else None
    records = [
        RegretRecord.create(game.seq[i].n_seqs, payment_cap=P) for i in range(n)
    ]
    target_dist = game.chance_reach * target_reach
    cum_dist = np.zeros(game.n_terminals)
    on_target = deque(maxlen=window)

    for t in range(T):
        steering_on = t >= burn_in
        if on_target:
            recent_gap = 2.0 * (1.0 - sum(on_target) / len(on_target))
        else:
            recent_gap = 2.0
        a_t = _alpha_for_round(steering_on, hyper, dynamic_base, dynamic_cap, recent_gap)
        alphas[t] = a_t
        q = (a_t * target_reach + P * deviated) if steering_on else np.zeros((n, game.n_terminals))

        plan_arms = [None] * n
        if adversary is not None:
            payment_tensors = normal_form_tensors(game, values=q)
            mix = adversary.act(payment_tensors)
            profile = [
                SequenceFormStrategy(i, np.concatenate(([1.0], np.asarray(m, float))))
                for i, m in enumerate(mix)
            ]
        else:
            profile = []
            for i, learner in enumerate(learners):
                if isinstance(learner, Exp3OverPlans):
                    arm, plan = learner.sample_plan()
                    plan_arms[i] = arm
                    profile.append(plan)
                else:
                    profile.append(learner.strategy())

        x_reach = reach_products(game, profile)
        full = game.chance_reach * x_reach
        cum_dist += full
        gaps[t] = float(np.abs(cum_dist / (t + 1) - target_dist).sum())
        welfare[t] = _raw_welfare(game, full)
        dev[t] = deviation_mass(game, target, profile)
        if objective is not None:
            objective_values[t] = float(np.dot(full, objective))

        z = sample_playout(game, profile, rng)
        sampled[t] = z
        realized[t] = q[:, z]
        expected[t] = q @ full
        on_target.append(1.0 if target_reach[z] >= 1.0 - 1e-12 else 0.0)

        if adversary is not None:
            for i in range(n):
                w = utility_weights(game, i, profile, bonus=q[i])
                records[i].add(w, float(np.dot(w, profile[i].mass)))
            continue
        for i, learner in enumerate(learners):
            if isinstance(learner, CfrPlus):
                w = utility_weights(game, i, profile, bonus=q[i])
                records[i].add(w, float(np.dot(w, profile[i].mass)))
                cfr_step(learner, w)
            elif isinstance(learner, Exp3OverPlans):
                w = utility_weights(game, i, profile, bonus=q[i])
                records[i].add(w, float(np.dot(w, profile[i].mass)))
                learner.update(plan_arms[i], float(game.utilities[i][z] + q[i][z]))
            elif isinstance(learner, OutcomeSamplingCfr):
                w = utility_weights(game, i, profile, bonus=q[i])
                records[i].add(w, float(np.dot(w, profile[i].mass)))
                learner.update_from_terminal(z, float(game.utilities[i][z] + q[i][z]))
            elif hasattr(learner, "observe"):
                w = utility_weights(game, i, profile, bonus=q[i])
                records[i].add(w, float(np.dot(w, profile[i].mass)))
                learner.observe(w)
            else:
                raise TypeError(f"unsupported learner type {type(learner).__name__}")

    return SteeringMetrics(
        scheme="trajectory",
        T=T,
        burn_in=burn_in,
        cap=P,
        realized_payments=realized,
        expected_payments=expected,
        welfare=welfare,
        directness_gap=gaps,
        alpha_used=alphas,
        deviation_mass=dev,
        regret_records=records,
        sampled_terminals=sampled,
        objective_values=objective_values,
    )
