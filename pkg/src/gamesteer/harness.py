"""Config-driven experiment runner.

``parse_config`` turns an INI text into an :class:`ExperimentConfig`,
``run`` executes one experiment (steered run plus a paired unsteered
baseline under the same seed) and writes a per-round CSV and a JSON
summary, and ``sweep`` fans a config out over a grid of overrides with
one process per run.

Everything is deterministic for a fixed config: the run seed is split
into per-role substreams by fixed labels, never by spawn order, so the
CSV bytes are reproducible even when the config is extended.
"""

from __future__ import annotations

import configparser
import io
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .benchmarks import GAME_TAGS, BenchmarkSpec, build, default_objective, target_equilibrium
from .games import SequenceFormStrategy, reach_products, sample_playout, utility_weights
from .learners import (
    CfrPlus,
    Exp3,
    Exp3OverPlans,
    Mwu,
    OutcomeSamplingCfr,
    cfr_step,
    exp3_step,
    mwu_step,
)
from .mediator import (
    NonCertifiedEquilibriumError,
    RecommendationBandit,
    augment,
    compute_then_steer,
    nf_online_steer,
    online_steer,
    solve_optimal_bce,
)
from .steering import (
    Hyperparams,
    alpha_cap,
    deviation_mass,
    run_full_feedback_steer,
    run_normal_form_steer,
    run_trajectory_steer,
    schedule,
    _raw_welfare,
)

ALGORITHMS = (
    "none",
    "nf",
    "full_feedback",
    "trajectory",
    "compute_then_steer",
    "online",
    "nf_online",
)
LEARNER_KINDS = ("mwu", "cfr_plus", "exp3_plans", "outcome_sampling", "exp3", "bandit")
_ALLOWED_LEARNERS = {
    "none": ("cfr_plus", "mwu", "exp3_plans", "outcome_sampling", "exp3"),
    "nf": ("mwu",),
    "full_feedback": ("cfr_plus",),
    "trajectory": ("cfr_plus", "exp3_plans", "outcome_sampling"),
    "compute_then_steer": ("cfr_plus", "exp3_plans", "outcome_sampling"),
    "online": ("cfr_plus",),
    "nf_online": ("bandit",),
}
_DEFAULT_LEARNER = {
    "none": "cfr_plus",
    "nf": "mwu",
    "full_feedback": "cfr_plus",
    "trajectory": "cfr_plus",
    "compute_then_steer": "cfr_plus",
    "online": "cfr_plus",
    "nf_online": "bandit",
}
_DEFAULT_ALPHA_MODE = {
    "none": "fixed",
    "nf": "schedule",
    "full_feedback": "schedule",
    "trajectory": "dynamic",
    "compute_then_steer": "dynamic",
    "online": "schedule",
    "nf_online": "schedule",
}
_SCHEME_OF = {
    "nf": "normal_form",
    "full_feedback": "full_feedback",
    "trajectory": "trajectory",
    "online": "online",
    "nf_online": "nf_online",
}

# fixed substream labels: reproducibility must not depend on creation order
_ROLE_MEDIATOR = 0
_ROLE_PLAYER = 1  # player i gets label 1 + i
_ROLE_PLAYOUT = 101
_ROLE_BASELINE_PLAYER = 201
_ROLE_BASELINE_PLAYOUT = 301

CSV_COLUMNS = (
    "round",
    "alpha",
    "payment",
    "expected_payment",
    "paid_player",
    "welfare",
    "baseline_welfare",
    "directness_gap",
    "deviation_mass",
    "objective",
    "optimality_gap",
)


class ConfigError(ValueError):
    """A config problem: the message names the offending key and reason."""


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """One experiment: a game, a steering algorithm, and its knobs.

    ``P`` and any fixed/dynamic alpha values are in normalized payoff
    units (each game's payoffs are affinely rescaled to [0, 1], so its
    normalized reward range is exactly 1 and ``P = P_mult`` holds
    literally in those units; the CSV's welfare columns stay raw).
    """

    game: str
    algorithm: str
    T: int
    game_params: dict = field(default_factory=dict)
    scheme: str = "trajectory"  # compute_then_steer only
    target: str | None = None  # "profile" | "solve"; default per algorithm
    learner: str | None = None  # default per algorithm
    learner_params: dict = field(default_factory=dict)
    burn_in: int = 10
    P: float | None = None
    P_mult: float | None = None
    alpha_mode: str | None = None  # "schedule" | "dynamic" | "fixed"
    alpha: float | None = None
    alpha_base: float = 0.1
    alpha_cap: float | None = None
    lam: float | None = None
    iterations: int = 2000
    tol: float = 1e-4
    force: bool = False
    window: int = 50
    seed: int = 0
    output: str | None = None
    log_strategies: bool = False

    def resolved_target(self) -> str:
        if self.target is not None:
            return self.target
        if self.algorithm in ("compute_then_steer", "online", "nf_online"):
            return "solve"
        return "profile"

    def resolved_learner(self) -> str:
        return self.learner if self.learner is not None else _DEFAULT_LEARNER[self.algorithm]

    def resolved_alpha_mode(self) -> str:
        if self.alpha_mode is not None:
            return self.alpha_mode
        return _DEFAULT_ALPHA_MODE[self.algorithm]

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"algorithm: unknown tag {self.algorithm!r}; known: {', '.join(ALGORITHMS)}"
            )
        if self.game not in GAME_TAGS:
            raise ConfigError(f"game: unknown tag {self.game!r}; known: {', '.join(GAME_TAGS)}")
        if self.T < 1:
            raise ConfigError(f"T: must be at least 1, got {self.T}")
        if self.burn_in < 0:
            raise ConfigError(f"burn_in: must be nonnegative, got {self.burn_in}")
        if self.burn_in >= self.T:
            raise ConfigError(f"burn_in: must be smaller than T ({self.burn_in} >= {self.T})")
        if self.seed < 0:
            raise ConfigError(f"seed: must be nonnegative, got {self.seed}")
        if self.scheme not in ("trajectory", "full_feedback"):
            raise ConfigError(
                f"scheme: must be 'trajectory' or 'full_feedback', got {self.scheme!r}"
            )
        if self.scheme != "trajectory" and self.algorithm != "compute_then_steer":
            raise ConfigError("scheme: only applies to algorithm = compute_then_steer")

        target = self.resolved_target()
        if target not in ("profile", "solve"):
            raise ConfigError(f"target: must be 'profile' or 'solve', got {target!r}")
        if target == "solve" and self.algorithm in ("none", "nf"):
            raise ConfigError(
                f"target: algorithm {self.algorithm!r} steers toward a fixed profile; "
                "use nf_online or compute_then_steer for solved advice"
            )
        if target == "profile" and self.algorithm == "compute_then_steer":
            raise ConfigError("target: compute_then_steer always solves for its advice")

        learner = self.resolved_learner()
        if learner not in LEARNER_KINDS:
            raise ConfigError(
                f"learner: unknown kind {learner!r}; known: {', '.join(LEARNER_KINDS)}"
            )
        if learner not in _ALLOWED_LEARNERS[self.algorithm]:
            raise ConfigError(
                f"learner: kind {learner!r} does not apply to algorithm "
                f"{self.algorithm!r} (allowed: {', '.join(_ALLOWED_LEARNERS[self.algorithm])})"
            )
        for key, value in self.learner_params.items():
            if key == "eta":
                if learner != "mwu":
                    raise ConfigError(f"eta: only applies to the mwu learner, not {learner!r}")
                if not value > 0:
                    raise ConfigError(f"eta: must be positive, got {value}")
            elif key == "explore":
                if learner in ("mwu", "cfr_plus"):
                    raise ConfigError(f"explore: does not apply to the {learner!r} learner")
                if not 0 < value < 1:
                    raise ConfigError(f"explore: must lie in (0, 1), got {value}")
            else:
                raise ConfigError(f"learner: unknown parameter {key!r}")

        if self.P is not None and self.P_mult is not None:
            raise ConfigError("P: give either P or P_mult, not both")
        if (self.P is not None or self.P_mult is not None) and self.algorithm not in (
            "trajectory",
            "compute_then_steer",
        ):
            raise ConfigError(
                "P: the per-round cap only applies to trajectory-style steering "
                f"(algorithm is {self.algorithm!r})"
            )
        if (
            (self.P is not None or self.P_mult is not None)
            and self.algorithm == "compute_then_steer"
            and self.scheme == "full_feedback"
        ):
            raise ConfigError("P: the full-feedback scheme pays under a fixed cap of 3")
        if self.P is not None and self.P < 1:
            raise ConfigError(f"P: the per-round cap must be at least 1, got {self.P}")
        if self.P_mult is not None and not self.P_mult > 0:
            raise ConfigError(f"P_mult: must be positive, got {self.P_mult}")

        mode = self.resolved_alpha_mode()
        if mode not in ("schedule", "dynamic", "fixed"):
            raise ConfigError(
                f"alpha_mode: must be 'schedule', 'dynamic' or 'fixed', got {mode!r}"
            )
        if self.algorithm == "none" and self.alpha_mode not in (None, "fixed"):
            raise ConfigError("alpha_mode: algorithm 'none' pays nothing; leave alpha keys unset")
        if self.alpha is not None:
            if mode != "fixed":
                raise ConfigError(f"alpha: only applies when alpha_mode = fixed (mode is {mode!r})")
            if not self.alpha > 0:
                raise ConfigError(f"alpha: must be positive, got {self.alpha}")
        if mode == "fixed" and self.alpha is None and self.algorithm != "none":
            raise ConfigError("alpha: alpha_mode = fixed needs an explicit alpha")
        if mode == "dynamic" and self.algorithm in ("online", "nf_online"):
            raise ConfigError(
                f"alpha_mode: the {self.algorithm!r} protocol has no dynamic bonus mode"
            )
        if not self.alpha_base > 0:
            raise ConfigError(f"alpha_base: must be positive, got {self.alpha_base}")
        if self.alpha_cap is not None and not self.alpha_cap > 0:
            raise ConfigError(f"alpha_cap: must be positive, got {self.alpha_cap}")

        if self.lam is not None:
            if self.algorithm not in ("online", "nf_online", "compute_then_steer"):
                raise ConfigError(
                    f"lam: only applies to solver-backed algorithms, not {self.algorithm!r}"
                )
            if self.lam < 1:
                raise ConfigError(f"lam: must be at least 1, got {self.lam}")
        if self.iterations < 1:
            raise ConfigError(f"iterations: must be at least 1, got {self.iterations}")
        if not self.tol > 0:
            raise ConfigError(f"tol: must be positive, got {self.tol}")
        if self.window < 1:
            raise ConfigError(f"window: must be at least 1, got {self.window}")
        if self.log_strategies and self.algorithm in ("online", "nf_online"):
            raise ConfigError(
                "log_strategies: per-round strategy logging is not supported for "
                "the online protocols"
            )

    def echo(self) -> dict:
        d = {
            "game": self.game,
            "game_params": dict(self.game_params),
            "algorithm": self.algorithm,
            "target": self.resolved_target(),
            "learner": self.resolved_learner(),
            "learner_params": dict(self.learner_params),
            "T": self.T,
            "burn_in": self.burn_in,
            "P": self.P,
            "P_mult": self.P_mult,
            "alpha_mode": self.resolved_alpha_mode(),
            "alpha": self.alpha,
            "alpha_base": self.alpha_base,
            "alpha_cap": self.alpha_cap,
            "lam": self.lam,
            "iterations": self.iterations,
            "tol": self.tol,
            "force": self.force,
            "window": self.window,
            "seed": self.seed,
            "output": self.output,
            "log_strategies": self.log_strategies,
        }
        if self.algorithm == "compute_then_steer":
            d["scheme"] = self.scheme
        return d


@dataclass
class RunSummary:
    """What one run produced, echoing the config that produced it.

    All numeric fields are reproduced bit-exactly by re-running the same
    config, except ``wall_clock_seconds``.
    """

    config: dict
    seed: int
    final_directness_gap: float | None
    average_payments: list
    average_welfare_steered: float
    average_welfare_baseline: float
    optimality_gap: float | None
    solved_value: float | None
    certified_lam: float | None
    wall_clock_seconds: float
    csv_path: str
    summary_path: str

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "final_directness_gap": self.final_directness_gap,
            "average_payments": list(self.average_payments),
            "average_welfare_steered": self.average_welfare_steered,
            "average_welfare_baseline": self.average_welfare_baseline,
            "optimality_gap": self.optimality_gap,
            "solved_value": self.solved_value,
            "certified_lam": self.certified_lam,
            "wall_clock_seconds": self.wall_clock_seconds,
            "csv_path": self.csv_path,
            "summary_path": self.summary_path,
        }


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

_RUN_KEYS = {
    "game": str,
    "algorithm": str,
    "t": int,
    "burn_in": int,
    "seed": int,
    "output": str,
    "scheme": str,
    "target": str,
    "log_strategies": bool,
}
_STEERING_KEYS = {
    "p": float,
    "p_mult": float,
    "alpha_mode": str,
    "alpha": float,
    "alpha_base": float,
    "alpha_cap": float,
    "lam": float,
    "iterations": int,
    "tol": float,
    "force": bool,
    "window": int,
}
_LEARNER_KEYS = {"kind": str, "eta": float, "explore": float}
_BOOL_WORDS = {
    "1": True,
    "true": True,
    "yes": True,
    "on": True,
    "0": False,
    "false": False,
    "no": False,
    "off": False,
}


def _coerce(section: str, key: str, value: str, kind):
    value = value.strip()
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        if kind is bool:
            try:
                return _BOOL_WORDS[value.lower()]
            except KeyError:
                raise ValueError(value)
        return value
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: expected {kind.__name__}, got {value!r}"
        ) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse an INI experiment description; unknown keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep the raw key for error messages
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    known_sections = {"run", "game", "steering", "learner"}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(
                f"unknown section [{section}]; known: {', '.join(sorted(known_sections))}"
            )
    if not parser.has_section("run"):
        raise ConfigError("missing required section [run]")

    fields: dict = {"game_params": {}, "learner_params": {}}
    for raw_key, raw_value in parser.items("run"):
        key = raw_key.lower()
        if key not in _RUN_KEYS:
            raise ConfigError(f"[run] unknown key {raw_key!r}")
        fields[key] = _coerce("run", raw_key, raw_value, _RUN_KEYS[key])
    for required in ("game", "algorithm", "t"):
        if required not in fields:
            pretty = "T" if required == "t" else required
            raise ConfigError(f"[run] missing required key {pretty!r}")

    if parser.has_section("game"):
        for raw_key, raw_value in parser.items("game"):
            value = raw_value.strip()
            try:
                parsed = int(value)
            except ValueError:
                try:
                    parsed = float(value)
                except ValueError:
                    raise ConfigError(
                        f"[game] {raw_key}: expected a number, got {value!r}"
                    ) from None
            fields["game_params"][raw_key.lower()] = parsed

    if parser.has_section("steering"):
        for raw_key, raw_value in parser.items("steering"):
            key = raw_key.lower()
            if key not in _STEERING_KEYS:
                raise ConfigError(f"[steering] unknown key {raw_key!r}")
            fields[key] = _coerce("steering", raw_key, raw_value, _STEERING_KEYS[key])

    if parser.has_section("learner"):
        for raw_key, raw_value in parser.items("learner"):
            key = raw_key.lower()
            if key not in _LEARNER_KEYS:
                raise ConfigError(f"[learner] unknown key {raw_key!r}")
            value = _coerce("learner", raw_key, raw_value, _LEARNER_KEYS[key])
            if key == "kind":
                fields["learner"] = value
            else:
                fields["learner_params"][key] = value

    config = ExperimentConfig(
        game=fields["game"],
        algorithm=fields["algorithm"],
        T=fields["t"],
        game_params=fields["game_params"],
        scheme=fields.get("scheme", "trajectory"),
        target=fields.get("target"),
        learner=fields.get("learner"),
        learner_params=fields["learner_params"],
        burn_in=fields.get("burn_in", 10),
        P=fields.get("p"),
        P_mult=fields.get("p_mult"),
        alpha_mode=fields.get("alpha_mode"),
        alpha=fields.get("alpha"),
        alpha_base=fields.get("alpha_base", 0.1),
        alpha_cap=fields.get("alpha_cap"),
        lam=fields.get("lam"),
        iterations=fields.get("iterations", 2000),
        tol=fields.get("tol", 1e-4),
        force=fields.get("force", False),
        window=fields.get("window", 50),
        seed=fields.get("seed", 0),
        output=fields.get("output"),
        log_strategies=fields.get("log_strategies", False),
    )
    config.validate()
    return config


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(text)


# ---------------------------------------------------------------------------
# RNG and learner construction
# ---------------------------------------------------------------------------


def _rng(seed: int, role: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(role,)))


class _LoggedCfrPlus(CfrPlus):
    def strategy(self):
        s = super().strategy()
        self.__dict__.setdefault("_mass_log", []).append(s.mass.copy())
        return s


class _LoggedMwu(Mwu):
    def strategy(self):
        mix = super().strategy()
        self.__dict__.setdefault("_mass_log", []).append(np.concatenate(([1.0], mix)))
        return mix


class _LoggedExp3OverPlans(Exp3OverPlans):
    def sample_plan(self):
        arm, plan = super().sample_plan()
        self.__dict__.setdefault("_mass_log", []).append(plan.mass.copy())
        return arm, plan


class _LoggedOutcomeSamplingCfr(OutcomeSamplingCfr):
    def strategy(self):
        s = super().strategy()
        self.__dict__.setdefault("_mass_log", []).append(s.mass.copy())
        return s


def _one_shot_action_counts(game) -> list:
    counts = []
    for p in range(game.n_players):
        if game.seq[p].n_infosets != 1:
            raise ConfigError(
                f"learner: a one-shot game is required, but player {p} of "
                f"{game.name!r} has {game.seq[p].n_infosets} information sets"
            )
        counts.append(int(game.seq[p].infoset_n_actions[0]))
    return counts


def _make_learners(game, kind, params, seed, role_base, payoff_cap, logged=False):
    eta = float(params.get("eta", 0.1))
    explore = float(params.get("explore", 0.05))
    if kind == "mwu":
        counts = _one_shot_action_counts(game)
        cls = _LoggedMwu if logged else Mwu
        return [cls(n_actions=k, eta=eta) for k in counts]
    if kind == "exp3":
        counts = _one_shot_action_counts(game)
        return [Exp3(n_actions=k, explore=explore, payoff_cap=payoff_cap) for k in counts]
    if kind == "cfr_plus":
        cls = _LoggedCfrPlus if logged else CfrPlus
        return [cls.create(game, i) for i in range(game.n_players)]
    if kind == "exp3_plans":
        cls = _LoggedExp3OverPlans if logged else Exp3OverPlans
        return [
            cls(game, i, payoff_cap, _rng(seed, role_base + i), explore=explore)
            for i in range(game.n_players)
        ]
    if kind == "outcome_sampling":
        cls = _LoggedOutcomeSamplingCfr if logged else OutcomeSamplingCfr
        return [
            cls(game, i, payoff_cap, _rng(seed, role_base + i), explore=explore)
            for i in range(game.n_players)
        ]
    if kind == "bandit":
        counts = _one_shot_action_counts(game)
        return [RecommendationBandit(k, explore=explore) for k in counts]
    raise ConfigError(f"learner: unknown kind {kind!r}")


def _collect_mass_log(learner, T: int) -> np.ndarray:
    log = learner.__dict__.get("_mass_log")
    if log is None:
        raise RuntimeError("strategy logging was requested but nothing was recorded")
    if len(log) == 2 * T:  # learners whose update step re-reads the strategy
        log = log[::2]
    if len(log) != T:
        raise RuntimeError(f"strategy log has {len(log)} entries for {T} rounds")
    return np.stack(log)


def _regret_bound_of(learner, kind):
    if hasattr(learner, "regret_bound"):
        return learner.regret_bound
    inner = getattr(learner, "inner", None)
    if inner is not None and hasattr(inner, "regret_bound"):
        return inner.regret_bound
    raise ConfigError(
        f"alpha_mode: the schedule mode needs a learner with a regret bound, "
        f"but {kind!r} has none; use alpha_mode = fixed or dynamic"
    )


# ---------------------------------------------------------------------------
# The unsteered baseline loop
# ---------------------------------------------------------------------------


def _unsteered_run(game, kind, params, T, seed, objective=None, target=None, log=False):
    """Run the learners with plain utility feedback and no payments.

    Returns per-round raw welfare, plus (when requested) per-round
    objective values, directness gaps against ``target``, per-round
    deviation masses, and the per-player strategy logs.
    """
    learners = _make_learners(
        game, kind, params, seed, _ROLE_BASELINE_PLAYER, payoff_cap=1.0
    )
    rng = _rng(seed, _ROLE_BASELINE_PLAYOUT)
    n = game.n_players
    needs_sample = kind in ("exp3_plans", "outcome_sampling", "exp3")
    welfare = np.zeros(T)
    objective_values = np.zeros(T) if objective is not None else None
    gaps = np.zeros(T) if target is not None else None
    dev = np.zeros((T, n)) if target is not None else None
    logs = [[] for _ in range(n)] if log else None
    target_dist = (
        game.chance_reach * reach_products(game, target) if target is not None else None
    )
    cum_dist = np.zeros(game.n_terminals)

    for t in range(T):
        profile = []
        arms = [None] * n
        for i, learner in enumerate(learners):
            if isinstance(learner, Exp3OverPlans):
                arm, plan = learner.sample_plan()
                arms[i] = arm
                profile.append(plan)
            elif isinstance(learner, (Mwu, Exp3)):
                mix = learner.strategy()
                profile.append(SequenceFormStrategy(i, np.concatenate(([1.0], mix))))
            else:
                profile.append(learner.strategy())
        full = game.chance_reach * reach_products(game, profile)
        welfare[t] = _raw_welfare(game, full)
        if objective is not None:
            objective_values[t] = float(np.dot(full, objective))
        if target is not None:
            cum_dist += full
            gaps[t] = float(np.abs(cum_dist / (t + 1) - target_dist).sum())
            dev[t] = deviation_mass(game, target, profile)
        if logs is not None:
            for i in range(n):
                logs[i].append(profile[i].mass.copy())

        z = sample_playout(game, profile, rng) if needs_sample else None
        for i, learner in enumerate(learners):
            if isinstance(learner, Mwu):
                w = utility_weights(game, i, profile)
                mwu_step(learner, w[0] + w[1:])
            elif isinstance(learner, CfrPlus):
                cfr_step(learner, utility_weights(game, i, profile))
            elif isinstance(learner, Exp3OverPlans):
                learner.update(arms[i], float(game.utilities[i][z]))
            elif isinstance(learner, OutcomeSamplingCfr):
                learner.update_from_terminal(z, float(game.utilities[i][z]))
            elif isinstance(learner, Exp3):
                played = int(game.terminal_seq[i][z]) - 1
                exp3_step(learner, played, float(game.utilities[i][z]))
    mass_logs = [np.stack(rows) for rows in logs] if logs is not None else None
    return welfare, objective_values, gaps, dev, mass_logs


# ---------------------------------------------------------------------------
# Hyperparameter resolution
# ---------------------------------------------------------------------------


def _resolve_P(config: ExperimentConfig) -> float:
    # normalized reward range is 1 by construction, so P = P_mult literally
    if config.P is not None:
        return float(config.P)
    mult = config.P_mult if config.P_mult is not None else 4.0
    return float(mult)


def _build_hyper(config, scheme, game, regret, mediator_regret=None, max_actions=None):
    """Hyperparams plus the dynamic-bonus arguments for one steering run."""
    n = game.n_players
    Z = game.n_terminals
    mode = config.resolved_alpha_mode()
    cap_a = alpha_cap(scheme, n, Z)
    if mode == "schedule":
        if (config.P is not None or config.P_mult is not None) and scheme == "trajectory":
            raise ConfigError(
                "P: the schedule mode derives the cap from the regret bound; "
                "drop P/P_mult or use alpha_mode = dynamic"
            )
        hyper = schedule(
            scheme,
            regret,
            config.T,
            n,
            Z,
            mediator_regret=mediator_regret,
            max_actions=max_actions,
            enforce=False,
        )
        return hyper, None, None
    if mode == "fixed":
        a = float(config.alpha)
        if a > cap_a + 1e-12:
            raise ConfigError(
                f"alpha: {a:.6g} exceeds the admissible cap {cap_a:.6g} for the "
                f"{scheme} scheme on this game"
            )
        if scheme == "normal_form":
            cap = 1.0 + a
        elif scheme == "full_feedback":
            cap = 3.0
        else:
            cap = _resolve_P(config)
        return Hyperparams(alpha=a, cap=cap, epsilon=0.0, T=config.T), None, None
    # dynamic: the bonus tracks the recent gap, capped by the scheme's precondition
    dyn_cap = min(cap_a, config.alpha_cap if config.alpha_cap is not None else 1.0)
    base = min(config.alpha_base, dyn_cap)
    if scheme == "normal_form":
        cap = 1.0 + dyn_cap
    elif scheme == "full_feedback":
        cap = 3.0
    else:
        cap = _resolve_P(config)
    hyper = Hyperparams(alpha=dyn_cap, cap=cap, epsilon=0.0, T=config.T)
    return hyper, base, dyn_cap


# ---------------------------------------------------------------------------
# run()
# ---------------------------------------------------------------------------


def _output_stem(config: ExperimentConfig) -> str:
    if config.output:
        return config.output
    return os.path.join("runs", f"{config.game}_{config.algorithm}_seed{config.seed}")


def _metric_columns(metrics, T):
    cols = {
        "alpha": metrics.alpha_used,
        "payment": metrics.realized_payments.max(axis=1),
        "expected_payment": metrics.expected_payments.max(axis=1),
        "paid_player": metrics.realized_payments.argmax(axis=1),
        "welfare": metrics.welfare,
        "directness_gap": metrics.directness_gap,
        "deviation_mass": metrics.deviation_mass.max(axis=1)
        if metrics.deviation_mass is not None
        else None,
        "objective": metrics.objective_values,
        "optimality_gap": metrics.optimality_gap,
    }
    return cols


def _write_csv(path, T, cols):
    buffer = io.StringIO()
    buffer.write(",".join(CSV_COLUMNS) + "\n")
    for t in range(T):
        row = [str(t + 1)]
        for name in CSV_COLUMNS[1:]:
            series = cols.get(name)
            if series is None:
                row.append("")
            elif name == "paid_player":
                row.append(str(int(series[t])))
            else:
                row.append(f"{float(series[t]):.17g}")
        buffer.write(",".join(row) + "\n")
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(buffer.getvalue())


def _game_arrays(game, prefix):
    arrays = {
        f"{prefix}chance_reach": game.chance_reach,
        f"{prefix}raw_payoffs": game.raw_payoffs,
    }
    for i in range(game.n_players):
        arrays[f"{prefix}terminal_seq{i}"] = game.terminal_seq[i]
    return arrays


def run(config: ExperimentConfig) -> RunSummary:
    """Execute one experiment and write its CSV, summary, and optional logs."""
    start = time.perf_counter()
    config.validate()
    spec = BenchmarkSpec(config.game, dict(config.game_params))
    try:
        game = build(spec)
    except ValueError as exc:
        raise ConfigError(f"game: {exc}") from exc
    objective = default_objective(spec, game)
    T = config.T
    kind = config.resolved_learner()
    stem = _output_stem(config)
    directory = os.path.dirname(stem)
    if directory:
        os.makedirs(directory, exist_ok=True)

    solved_value = None
    certified_lam = None
    steered_logs = None
    steered_game = game

    if config.algorithm == "none":
        target = None
        try:
            target = target_equilibrium(spec, game)
        except ValueError:
            target = None
        welfare, objective_values, gaps, dev, logs = _unsteered_run(
            game,
            kind,
            config.learner_params,
            T,
            config.seed,
            objective=objective,
            target=target,
            log=config.log_strategies,
        )
        cols = {
            "alpha": np.zeros(T),
            "payment": np.zeros(T),
            "expected_payment": np.zeros(T),
            "paid_player": np.zeros(T, dtype=int),
            "welfare": welfare,
            "directness_gap": gaps,
            "deviation_mass": dev.max(axis=1) if dev is not None else None,
            "objective": objective_values,
            "optimality_gap": None,
        }
        baseline_welfare = welfare
        baseline_logs = logs
        steered_logs = logs
        avg_payments = [0.0] * game.n_players
        final_gap = float(gaps[-1]) if gaps is not None else None
        optimality = None
    else:
        metrics, solved, steered_game, steered_logs = _run_steered(config, spec, game, objective)
        if solved is not None:
            solved_value = float(solved.value)
            certified_lam = float(solved.lam)
            if metrics.optimality_gap is None and metrics.objective_values is not None:
                running = np.cumsum(metrics.objective_values) / np.arange(1, T + 1)
                metrics.optimality_gap = solved_value - running
        baseline_kind = "exp3" if kind == "bandit" else kind
        baseline_welfare, _, _, _, baseline_logs = _unsteered_run(
            game,
            baseline_kind,
            config.learner_params,
            T,
            config.seed,
            log=config.log_strategies,
        )
        cols = _metric_columns(metrics, T)
        avg_payments = [float(v) for v in metrics.realized_payments.mean(axis=0)]
        final_gap = float(metrics.directness_gap[-1])
        optimality = (
            float(metrics.optimality_gap[-1]) if metrics.optimality_gap is not None else None
        )

    cols["baseline_welfare"] = baseline_welfare
    csv_path = stem + ".csv"
    _write_csv(csv_path, T, cols)

    if config.log_strategies:
        arrays = _game_arrays(steered_game, "")
        arrays.update(_game_arrays(game, "baseline_"))
        for i, mass in enumerate(steered_logs):
            arrays[f"steered_player{i}"] = mass
        for i, mass in enumerate(baseline_logs):
            arrays[f"baseline_player{i}"] = mass
        np.savez_compressed(stem + "_strategies.npz", **arrays)

    summary = RunSummary(
        config=config.echo(),
        seed=config.seed,
        final_directness_gap=final_gap,
        average_payments=avg_payments,
        average_welfare_steered=float(np.mean(cols["welfare"])),
        average_welfare_baseline=float(np.mean(baseline_welfare)),
        optimality_gap=optimality,
        solved_value=solved_value,
        certified_lam=certified_lam,
        wall_clock_seconds=time.perf_counter() - start,
        csv_path=csv_path,
        summary_path=stem + "_summary.json",
    )
    with open(summary.summary_path, "w", encoding="utf-8") as handle:
        json.dump(summary.to_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    return summary


def _run_steered(config, spec, game, objective):
    """Dispatch to the configured steering pipeline.

    Returns (metrics, solution-or-None, the game the steered learners ran
    in, and their strategy logs when requested).
    """
    T = config.T
    kind = config.resolved_learner()
    params = config.learner_params
    log = config.log_strategies
    target_source = config.resolved_target()

    if config.algorithm in ("nf", "full_feedback", "trajectory") and target_source == "profile":
        try:
            target = target_equilibrium(spec, game)
        except ValueError as exc:
            raise ConfigError(f"target: {exc}") from exc
        scheme = _SCHEME_OF[config.algorithm]
        payoff_cap = 1.0
        if scheme == "trajectory":
            payoff_cap = 1.0 + _resolve_P(config)
        learners = _make_learners(
            game, kind, params, config.seed, _ROLE_PLAYER, payoff_cap, logged=log
        )
        regret = _regret_bound_of(learners[0], kind) if config.resolved_alpha_mode() == "schedule" else 0.0
        hyper, dyn_base, dyn_cap = _build_hyper(config, scheme, game, regret)
        common = dict(
            burn_in=config.burn_in,
            dynamic_base=dyn_base,
            dynamic_cap=dyn_cap,
            window=config.window,
            objective=objective,
        )
        if scheme == "normal_form":
            metrics = run_normal_form_steer(game, target, learners, T, hyper, **common)
        elif scheme == "full_feedback":
            metrics = run_full_feedback_steer(game, target, learners, T, hyper, **common)
        else:
            metrics = run_trajectory_steer(
                game, target, learners, T, hyper, _rng(config.seed, _ROLE_PLAYOUT), **common
            )
        logs = [_collect_mass_log(l, T) for l in learners] if log else None
        return metrics, None, game, logs

    if config.algorithm in ("full_feedback", "trajectory") and target_source == "solve":
        # solved advice + a fixed scheme is exactly compute_then_steer
        config = replace(config, algorithm="compute_then_steer", scheme=config.algorithm)
        return _run_compute_then_steer(config, game, objective)

    if config.algorithm == "compute_then_steer":
        return _run_compute_then_steer(config, game, objective)

    if config.algorithm == "online":
        return _run_online(config, game, objective)

    if config.algorithm == "nf_online":
        return _run_nf_online(config, game, objective)

    raise ConfigError(f"algorithm: unknown tag {config.algorithm!r}")


def _run_compute_then_steer(config, game, objective):
    aug = augment(game)
    solution = solve_optimal_bce(
        aug,
        objective,
        iterations=config.iterations,
        lam=config.lam if config.lam is not None else 1.0,
        tol=config.tol,
    )
    kind = config.resolved_learner()
    scheme = config.scheme
    payoff_cap = 3.0 if scheme == "full_feedback" else 1.0 + _resolve_P(config)
    seen = {}

    def factory(fixed_game, i):
        seen["game"] = fixed_game
        if "learners" not in seen:
            seen["learners"] = _make_learners(
                fixed_game,
                kind,
                config.learner_params,
                config.seed,
                _ROLE_PLAYER,
                payoff_cap,
                logged=config.log_strategies,
            )
        return seen["learners"][i]

    if config.resolved_alpha_mode() == "schedule":
        probe = CfrPlus.create(aug.game, 0)
        regret = probe.regret_bound
    else:
        regret = 0.0
    hyper, dyn_base, dyn_cap = _build_hyper(config, scheme, aug.game, regret)
    metrics = compute_then_steer(
        aug,
        objective,
        scheme=scheme,
        T=config.T,
        solution=solution,
        learner_factory=factory,
        hyper=hyper,
        dynamic_base=dyn_base,
        dynamic_cap=dyn_cap,
        burn_in=config.burn_in,
        rng=_rng(config.seed, _ROLE_PLAYOUT),
        window=config.window,
        force=config.force,
    )
    logs = (
        [_collect_mass_log(l, config.T) for l in seen["learners"]]
        if config.log_strategies
        else None
    )
    return metrics, solution, seen["game"], logs


def _run_online(config, game, objective):
    aug = augment(game)
    solution = None
    if config.resolved_target() == "solve":
        solution = solve_optimal_bce(
            aug,
            objective,
            iterations=config.iterations,
            lam=config.lam if config.lam is not None else 1.0,
            tol=config.tol,
        )
        if not solution.certified and not config.force:
            raise NonCertifiedEquilibriumError(
                "the optimality reference did not certify; pass force = true "
                "to run against the best uncertified value"
            )
    n = aug.n_base_players
    learners = [CfrPlus.create(aug.game, i) for i in range(n)]
    if config.resolved_alpha_mode() == "schedule":
        player_bounds = [l.regret_bound for l in learners]
        regret = lambda t: max(b(t) for b in player_bounds)
        med_probe = CfrPlus.create(aug.game, aug.mediator)
        mediator_regret = lambda t: med_probe.regret_bound(t, value_range=2.0 * n + 1.0)
        hyper = schedule(
            "online",
            regret,
            config.T,
            n,
            aug.game.n_terminals,
            mediator_regret=mediator_regret,
            enforce=False,
        )
        alpha = hyper.alpha
        lam = config.lam if config.lam is not None else max(1.0, hyper.lam)
    else:
        alpha = float(config.alpha)
        cap_a = alpha_cap("online", n, aug.game.n_terminals)
        if alpha > cap_a + 1e-12:
            raise ConfigError(
                f"alpha: {alpha:.6g} exceeds the online cap {cap_a:.6g} "
                f"(one over the augmented terminal count)"
            )
        lam = config.lam if config.lam is not None else 1.0
    if solution is not None and config.lam is None:
        lam = max(lam, float(solution.lam))
    metrics = online_steer(
        aug,
        objective,
        lam=lam,
        alpha=alpha,
        T=config.T,
        learners=learners,
        burn_in=config.burn_in,
        optimal_value=float(solution.value) if solution is not None else None,
    )
    return metrics, solution, aug.game, None


def _run_nf_online(config, game, objective):
    solution = None
    if config.resolved_target() == "solve":
        aug = augment(game)
        solution = solve_optimal_bce(
            aug,
            objective,
            iterations=config.iterations,
            lam=config.lam if config.lam is not None else 1.0,
            tol=config.tol,
        )
        if not solution.certified and not config.force:
            raise NonCertifiedEquilibriumError(
                "the optimality reference did not certify; pass force = true "
                "to run against the best uncertified value"
            )
    counts = _one_shot_action_counts(game)
    n = game.n_players
    n_arms = int(np.prod(counts))
    explore = float(config.learner_params.get("explore", 0.05))
    learners = _make_learners(
        game, "bandit", config.learner_params, config.seed, _ROLE_PLAYER, payoff_cap=3.0
    )
    if config.resolved_alpha_mode() == "schedule":
        probe = Exp3(n_actions=max(counts), explore=explore, payoff_cap=3.0)
        regret = lambda t: max(counts) * probe.regret_bound(t)
        med_probe = Exp3(n_actions=n_arms, explore=explore, payoff_cap=1.0)
        hyper = schedule(
            "nf_online",
            regret,
            config.T,
            n,
            game.n_terminals,
            mediator_regret=med_probe.regret_bound,
            max_actions=max(counts),
            enforce=False,
        )
        alpha = hyper.alpha
        lam = config.lam if config.lam is not None else max(1.0, hyper.lam)
    else:
        alpha = float(config.alpha)
        cap_a = alpha_cap("nf_online", n, game.n_terminals)
        if alpha > cap_a + 1e-12:
            raise ConfigError(
                f"alpha: {alpha:.6g} exceeds the protocol cap {cap_a:.6g} (one over 2n)"
            )
        lam = config.lam if config.lam is not None else 1.0
    metrics = nf_online_steer(
        game,
        objective,
        alpha=alpha,
        lam=lam,
        T=config.T,
        rng=_rng(config.seed, _ROLE_PLAYOUT),
        learners=learners,
        burn_in=config.burn_in,
    )
    return metrics, solution, game, None


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

_SWEEP_FIELDS = {
    "p": ("P", float),
    "p_mult": ("P_mult", float),
    "t": ("T", int),
    "seed": ("seed", int),
    "burn_in": ("burn_in", int),
    "lam": ("lam", float),
    "alpha": ("alpha", float),
    "alpha_base": ("alpha_base", float),
    "alpha_cap": ("alpha_cap", float),
    "iterations": ("iterations", int),
    "window": ("window", int),
}


def _apply_override(config: ExperimentConfig, key: str, value) -> ExperimentConfig:
    lowered = key.lower()
    if lowered in _SWEEP_FIELDS:
        attr, kind = _SWEEP_FIELDS[lowered]
        try:
            coerced = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"sweep: {key}={value!r} is not a {kind.__name__}") from None
        return replace(config, **{attr: coerced})
    if lowered in ("eta", "explore"):
        try:
            coerced = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"sweep: {key}={value!r} is not a float") from None
        params = dict(config.learner_params)
        params[lowered] = coerced
        return replace(config, learner_params=params)
    if lowered.startswith("game."):
        name = lowered[len("game."):]
        try:
            coerced = int(value)
        except (TypeError, ValueError):
            try:
                coerced = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"sweep: {key}={value!r} is not a number") from None
        params = dict(config.game_params)
        params[name] = coerced
        return replace(config, game_params=params)
    raise ConfigError(
        f"sweep: unknown key {key!r}; known: "
        + ", ".join(sorted(_SWEEP_FIELDS) + ["eta", "explore", "game.<param>"])
    )


def _suffix_token(value) -> str:
    return str(value).replace("/", "_").replace(os.sep, "_")


def sweep(config: ExperimentConfig, vary: dict) -> list:
    """Run the cartesian product of overrides, one process per run."""
    if not vary:
        raise ConfigError("sweep: at least one varied key is required")
    keys = list(vary)
    stem = _output_stem(config)
    configs = []
    for combo in itertools.product(*(vary[k] for k in keys)):
        cfg = replace(
            config,
            game_params=dict(config.game_params),
            learner_params=dict(config.learner_params),
        )
        tokens = []
        for key, value in zip(keys, combo):
            cfg = _apply_override(cfg, key, value)
            tokens.append(f"{key.lower()}={_suffix_token(value)}")
        cfg.output = stem + "__" + "_".join(tokens)
        cfg.validate()
        configs.append(cfg)
    if len(configs) == 1:
        return [run(configs[0])]
    workers = min(len(configs), os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(run, configs))


def convergence_round(gap_series, threshold: float = 0.1) -> int | None:
    """First 1-based round after which the gap stays below ``threshold``.

    ``None`` when the series never settles below it.
    """
    gaps = np.asarray(gap_series, dtype=np.float64)
    above = np.nonzero(gaps >= threshold)[0]
    if len(above) == 0:
        return 1
    last = int(above[-1])
    if last == len(gaps) - 1:
        return None
    return last + 2
