"""Builders for the benchmark games used throughout the steering experiments.

Catalog
-------
``stag_hunt``
    Two-player extensive-form stag hunt: chance flips a fair coin; on one
    side only the second player moves, on the other the first player either
    takes a safe payoff or lets the second player decide between the risky
    and the cooperative outcome.  The second player cannot tell the two
    contexts apart.  Raw payoffs (0,3),(0,0),(3,0),(0,0),(4,4).

``lower_bound``
    The n-player stag-hunt family with one information set and two actions
    ("H" for hare, "S" for stag) per player.  Chance either singles out one
    player, who earns 1/2 for playing hare, or starts a round-robin in a
    random order where any hare ends the game at zero and unanimous stag
    pays everyone 1.  Both all-stag and all-hare are Nash equilibria; the
    all-stag profile is welfare-optimal.

``coordination``
    One-shot 2x2 coordination game with payoff rows (0.5,0.5 | 0,0) and
    (0,0 | 1,1).

``matching``
    One-shot 2x2 agreement game: both players earn +1 for choosing the same
    action and -1 otherwise.  Its welfare-minimizing equilibrium is the
    fully mixed one.

``kuhn3``
    Three-player one-bet poker with a four-card deck.  Everyone antes one
    chip and receives one private card.  In seat order players check or
    bet one chip; once somebody bets, the other two players in cyclic
    order call or fold.  If nobody bets, the showdown is among all three;
    otherwise among the bettor and the callers, with the highest card
    winning the pot.

``sheriff``
    Smuggler-versus-sheriff bargaining.  The smuggler secretly loads
    n in {0,1} illegal items, then proposes a bribe in {0,1,2} over two
    bargaining rounds; the sheriff accepts or declines each.  Only the
    final round binds: an accepted final bribe b is paid (smuggler 5n-b,
    sheriff b) and the cargo passes.  If the final bribe is declined the
    sheriff chooses whether to inspect: finding items costs the smuggler
    n (paid to the sheriff), inspecting clean cargo costs the sheriff a
    compensation of 1, and waving the cargo through yields 5n to the
    smuggler.

``battleship``
    Each player hides a single unit-value ship on one cell of a 2x2 grid,
    then the players alternate shots (two each).  The first hit ends the
    game: the shooter scores the ship's value and the owner loses twice
    the ship count.  Shots and their results are public; placements are
    not.  Grid size, shots, ship value, and the loss multiplier are
    parameters.

``ridesharing``
    Two drivers on a seven-vertex road map (unit edge cost) compete for
    one ride request per vertex over a two-round horizon.  The first
    driver to arrive at a vertex collects its reward; simultaneous
    arrivals collect nothing and consume the request.  Both drivers start
    on the central hub, whose request is therefore consumed at the start.
    Drivers observe their own position and which requests remain open,
    but not the opponent's position.

All payoffs are stored twice on the built tree: raw (as listed above) and
rescaled to [0,1] by the affine normalization recorded on the spec.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .games import (
    GameTree,
    build_game,
    chance,
    decide,
    leaf,
    nash_gap,
    pure_strategy_from_choices,
)

GAME_TAGS = (
    "stag_hunt",
    "lower_bound",
    "coordination",
    "matching",
    "kuhn3",
    "sheriff",
    "battleship",
    "ridesharing",
)

_ALIASES = {"stag_hunt_efg": "stag_hunt"}


@dataclass
class BenchmarkSpec:
    """A named benchmark instance plus its parameters.

    After ``build`` the affine normalization (raw = offset + scale * unit)
    is recorded here so raw payoffs stay recoverable from any downstream
    normalized quantity.
    """

    name: str
    params: dict = field(default_factory=dict)
    scale: float | None = None
    offset: float | None = None


def _params(spec: BenchmarkSpec, defaults: dict) -> dict:
    merged = dict(defaults)
    for key, value in spec.params.items():
        if key not in defaults:
            raise ValueError(f"unknown parameter {key!r} for game {spec.name!r}")
        merged[key] = value
    return merged


# ---------------------------------------------------------------------------
# Small matrix games
# ---------------------------------------------------------------------------


def _one_shot_root(rows):
    """Simultaneous 2x2 game: first mover's choice is hidden from the second."""
    labels = ("A", "B")

    def second(i):
        return decide(
            1, "p1-move", [(labels[j], leaf(*rows[i][j])) for j in range(2)]
        )

    return decide(0, "p0-move", [(labels[i], second(i)) for i in range(2)])


def _stag_hunt_root():
    def p2(risky, cooperative):
        return decide(1, "p2-move", [("H", risky), ("S", cooperative)])

    right = decide(
        0,
        "p1-move",
        [("H", leaf(3.0, 0.0)), ("S", p2(leaf(0.0, 0.0), leaf(4.0, 4.0)))],
    )
    return chance(
        [
            (0.5, "left", p2(leaf(0.0, 3.0), leaf(0.0, 0.0))),
            (0.5, "right", right),
        ]
    )


def _lower_bound_root(n: int):
    def solo(j):
        half = [0.0] * n
        half[j] = 0.5
        return decide(
            j, f"p{j}-move", [("H", leaf(*half)), ("S", leaf(*([0.0] * n)))]
        )

    def round_robin(order, idx):
        if idx == len(order):
            return leaf(*([1.0] * n))
        p = order[idx]
        return decide(
            p,
            f"p{p}-move",
            [("H", leaf(*([0.0] * n))), ("S", round_robin(order, idx + 1))],
        )

    p_branch = 1.0 / (n + 1)
    branches = [
        (p_branch, f"solo{j}", solo(j)) for j in range(n)
    ]
    starts = [
        (1.0 / n, f"first{k}", round_robin([(k + i) % n for i in range(n)], 0))
        for k in range(n)
    ]
    branches.append((p_branch, "joint", chance(starts)))
    return chance(branches)


# ---------------------------------------------------------------------------
# Card and board games
# ---------------------------------------------------------------------------


def _kuhn3_root():
    move_name = {"c": "check", "b": "bet", "k": "call", "f": "fold"}

    def settle(cards, line):
        contrib = [1, 1, 1]
        live = [True, True, True]
        bettor = line.find("b")
        if bettor >= 0:
            contrib[bettor] += 1
            responders = ((bettor + 1) % 3, (bettor + 2) % 3)
            for seat, move in zip(responders, line[bettor + 1 :]):
                if move == "k":
                    contrib[seat] += 1
                else:
                    live[seat] = False
        pot = sum(contrib)
        winner = max((p for p in range(3) if live[p]), key=lambda p: cards[p])
        return leaf(
            *[float(pot - contrib[p]) if p == winner else -float(contrib[p]) for p in range(3)]
        )

    def node(cards, line):
        bettor = line.find("b")
        if bettor < 0:
            if len(line) == 3:
                return settle(cards, line)
            seat, moves = len(line), ("c", "b")
        else:
            responses = len(line) - bettor - 1
            if responses == 2:
                return settle(cards, line)
            seat, moves = (bettor + 1 + responses) % 3, ("k", "f")
        return decide(
            seat,
            f"p{seat}|card{cards[seat]}|{line}",
            [(move_name[m], node(cards, line + m)) for m in moves],
        )

    deals = list(itertools.permutations(range(4), 3))
    return chance(
        [
            (1.0 / len(deals), "".join(str(c) for c in cards), node(cards, ""))
            for cards in deals
        ]
    )


def _sheriff_root():
    def inspection(n, pub):
        found = leaf(-float(n), float(n)) if n >= 1 else leaf(1.0, -1.0)
        return decide(
            1,
            f"sh|{pub}|inspect?",
            [("inspect", found), ("pass", leaf(5.0 * n, 0.0))],
        )

    def final_round(n, pub):
        def response(b2):
            return decide(
                1,
                f"sh|{pub}|b2:{b2}",
                [
                    ("accept", leaf(5.0 * n - b2, float(b2))),
                    ("decline", inspection(n, f"{pub}|b2:{b2}")),
                ],
            )

        return decide(
            0,
            f"sm|n{n}|{pub}",
            [(f"bribe{b2}", response(b2)) for b2 in (0, 1, 2)],
        )

    def first_round(n):
        def response(b1):
            return decide(
                1,
                f"sh|b1:{b1}",
                [
                    ("accept", final_round(n, f"b1:{b1}|r1:a")),
                    ("decline", final_round(n, f"b1:{b1}|r1:d")),
                ],
            )

        return decide(0, f"sm|n{n}", [(f"bribe{b1}", response(b1)) for b1 in (0, 1, 2)])

    return decide(0, "sm|load", [("none", first_round(0)), ("contraband", first_round(1))])


def _battleship_root(cells: int, shots_each: int, ship_value: float, loss_mult: float):
    total_turns = 2 * shots_each

    def shots(c0, c1, hist):
        turn = len(hist)
        if turn == total_turns:
            return leaf(0.0, 0.0)
        shooter = turn % 2
        own = c0 if shooter == 0 else c1
        target = c1 if shooter == 0 else c0
        key = f"bs{shooter}|ship{own}|" + ",".join(str(h) for h in hist)

        def outcome(cell):
            if cell == target:
                gain, loss = ship_value, -loss_mult
                return leaf(gain, loss) if shooter == 0 else leaf(loss, gain)
            return shots(c0, c1, hist + (cell,))

        return decide(shooter, key, [(str(cell), outcome(cell)) for cell in range(cells)])

    def second_placement(c0):
        return decide(
            1, "bs1|place", [(str(c1), shots(c0, c1, ())) for c1 in range(cells)]
        )

    return decide(0, "bs0|place", [(str(c0), second_placement(c0)) for c0 in range(cells)])


_RIDE_REWARDS = (1.0, 0.5, 0.5, 1.5, 4.5, 2.0, 1.5)
_RIDE_EDGES = ((0, 1), (0, 3), (1, 2), (2, 3), (2, 4), (3, 6), (5, 6), (1, 5), (2, 5), (2, 6))


def _ride_neighbors():
    nb = {v: set() for v in range(len(_RIDE_REWARDS))}
    for a, b in _RIDE_EDGES:
        nb[a].add(b)
        nb[b].add(a)
    return {v: tuple(sorted(s)) for v, s in nb.items()}


def _ridesharing_root(horizon: int, start: int):
    nb = _ride_neighbors()
    n_vertices = len(_RIDE_REWARDS)

    def open_bits(open_set):
        return "".join("1" if v in open_set else "0" for v in range(n_vertices))

    def round_node(t, pos0, pos1, open_set, score0, score1):
        if t > horizon or not open_set:
            return leaf(score0, score1)
        bits = open_bits(open_set)

        def resolve(m0, m1):
            remaining = set(open_set)
            s0, s1 = score0, score1
            if m0 == m1:
                remaining.discard(m0)
            else:
                if m0 in remaining:
                    s0 += _RIDE_REWARDS[m0]
                    remaining.discard(m0)
                if m1 in remaining:
                    s1 += _RIDE_REWARDS[m1]
                    remaining.discard(m1)
            return round_node(t + 1, m0, m1, frozenset(remaining), s0, s1)

        def second_driver(m0):
            return decide(
                1,
                f"d1|t{t}|at{pos1}|open{bits}",
                [(str(m1), resolve(m0, m1)) for m1 in nb[pos1]],
            )

        return decide(
            0,
            f"d0|t{t}|at{pos0}|open{bits}",
            [(str(m0), second_driver(m0)) for m0 in nb[pos0]],
        )

    # both drivers begin on the start vertex: simultaneous arrival, no reward
    initial_open = frozenset(range(n_vertices)) - {start}
    return round_node(1, start, start, initial_open, 0.0, 0.0)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def build(spec: BenchmarkSpec) -> GameTree:
    """Construct the benchmark game described by ``spec``.

    Records the normalization (scale, offset) back onto the spec.  Raises
    ``ValueError`` for unknown tags or out-of-range parameters.
    """
    name = _ALIASES.get(spec.name, spec.name)
    if name == "stag_hunt":
        game = build_game(_stag_hunt_root(), 2, name="stag_hunt")
    elif name == "lower_bound":
        opts = _params(spec, {"n": 3})
        n = int(opts["n"])
        if n < 2:
            raise ValueError("lower_bound requires at least 2 players")
        game = build_game(_lower_bound_root(n), n, name=f"lower_bound_{n}")
    elif name == "coordination":
        rows = (((0.5, 0.5), (0.0, 0.0)), ((0.0, 0.0), (1.0, 1.0)))
        game = build_game(_one_shot_root(rows), 2, name="coordination")
    elif name == "matching":
        rows = (((1.0, 1.0), (-1.0, -1.0)), ((-1.0, -1.0), (1.0, 1.0)))
        game = build_game(_one_shot_root(rows), 2, name="matching")
    elif name == "kuhn3":
        game = build_game(_kuhn3_root(), 3, name="kuhn3")
    elif name == "sheriff":
        game = build_game(_sheriff_root(), 2, name="sheriff")
    elif name == "battleship":
        opts = _params(
            spec,
            {"cells": 4, "shots_each": 2, "ship_value": 1.0, "loss_mult": 2.0},
        )
        cells, shots_each = int(opts["cells"]), int(opts["shots_each"])
        if cells < 2 or shots_each < 1:
            raise ValueError("battleship needs at least 2 cells and 1 shot each")
        game = build_game(
            _battleship_root(cells, shots_each, float(opts["ship_value"]), float(opts["loss_mult"])),
            2,
            name="battleship",
        )
    elif name == "ridesharing":
        opts = _params(spec, {"horizon": 2, "start": 2})
        horizon, start = int(opts["horizon"]), int(opts["start"])
        if horizon < 1 or not (0 <= start < len(_RIDE_REWARDS)):
            raise ValueError("ridesharing needs horizon >= 1 and a start vertex on the map")
        game = build_game(_ridesharing_root(horizon, start), 2, name="ridesharing")
    else:
        raise ValueError(f"unknown game tag {spec.name!r}; known tags: {', '.join(GAME_TAGS)}")
    spec.scale = game.scale
    spec.offset = game.offset
    return game


def build_named(name: str, **params) -> GameTree:
    """Convenience wrapper: ``build(BenchmarkSpec(name, params))``."""
    return build(BenchmarkSpec(name, dict(params)))


_PURE_TARGETS = {
    # action index per information set, per player ("S"/"B" are second)
    "stag_hunt": lambda game: [[1]] * 2,
    "lower_bound": lambda game: [[1]] * game.n_players,
    "coordination": lambda game: [[1]] * 2,
}


def target_equilibrium(spec: BenchmarkSpec, game: GameTree | None = None):
    """The documented pure-strategy Nash equilibrium for specs that have one.

    Returns one sequence-form pure strategy per player, re-verified via
    best response before returning.  Games whose interesting equilibria
    are mixed or correlated have no canonical pure target and raise
    ``ValueError``.
    """
    name = _ALIASES.get(spec.name, spec.name)
    if name not in _PURE_TARGETS:
        raise ValueError(
            f"game {spec.name!r} has no canonical pure target; compute an "
            "optimal correlated target with the mediator tools instead"
        )
    if game is None:
        game = build(spec)
    choice_lists = _PURE_TARGETS[name](game)
    profile = [
        pure_strategy_from_choices(game, p, choice_lists[p])
        for p in range(game.n_players)
    ]
    gap = nash_gap(game, profile)
    if gap > 1e-9:
        raise AssertionError(f"target profile for {name!r} failed the Nash check: gap={gap}")
    return profile


def default_objective(spec: BenchmarkSpec, game: GameTree) -> np.ndarray:
    """Per-terminal mediator objective in [0,1] for a benchmark game.

    Mean normalized welfare for general-sum games; the first player's
    normalized utility for three-player poker (a zero-sum game, where
    welfare is meaningless); inverted welfare for the agreement game,
    whose documented target is its welfare-minimizing equilibrium.
    """
    name = _ALIASES.get(spec.name, spec.name)
    welfare = game.utilities.mean(axis=0)
    if name == "kuhn3":
        return game.utilities[0].copy()
    if name == "matching":
        return 1.0 - welfare
    return welfare
