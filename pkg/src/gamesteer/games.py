"""Flat-array extensive-form games with sequence-form strategies.

Trees are described with nested ``leaf`` / ``chance`` / ``decide`` specs and
compiled once into numpy arrays (DFS preorder, terminals numbered in DFS
order).  Hot paths — strategy evaluation, best response, regret updates —
never walk the tree node by node; they run on per-depth index arrays over
each player's sequences.

A *sequence* of a player is an (information set, action) pair, plus the
distinguished empty sequence 0.  A sequence-form strategy assigns each
sequence the probability that the player plays every action on the path to
it; mass conservation ties an information set's action masses to the mass
of the sequence leading to it.
"""

from __future__ import annotations

import itertools
import json
from array import array
from dataclasses import dataclass, field

import numpy as np

DECISION, CHANCE, TERMINAL = 0, 1, 2


# ---------------------------------------------------------------------------
# Tree specs.  A spec node is one of:
#   ("leaf", (payoff_0, ..., payoff_{n-1}))
#   ("chance", ((prob, label, child), ...))
#   ("decide", player, infoset_key, ((label, child), ...))
# A child may also be a zero-argument callable returning a spec node; the
# compiler expands these lazily so synthesized trees (e.g. recommendation
# gadgets) never need to be materialized in full.
# ---------------------------------------------------------------------------


def leaf(*payoffs):
    """Terminal spec holding one raw payoff per player."""
    return ("leaf", tuple(float(p) for p in payoffs))


def chance(branches):
    """Chance spec; ``branches`` is an iterable of (prob, label, child)."""
    return ("chance", tuple((float(p), lab, ch) for p, lab, ch in branches))


def decide(player, infoset, branches):
    """Decision spec for ``player``; ``infoset`` is any hashable key."""
    return ("decide", int(player), infoset, tuple(branches))


def _expand(spec):
    while callable(spec):
        spec = spec()
    return spec


# ---------------------------------------------------------------------------
# Sequence index
# ---------------------------------------------------------------------------


@dataclass
class Level:
    """All information sets of one player at one depth, flattened for numpy.

    ``seqs`` concatenates the sequence ids of every infoset at this depth in
    infoset order; ``grp[k]`` is the position within ``infosets`` of the
    infoset owning ``seqs[k]``.  ``parent_seq`` is per infoset.
    """

    depth: int
    infosets: np.ndarray
    parent_seq: np.ndarray
    first_seq: np.ndarray
    n_actions: np.ndarray
    seqs: np.ndarray
    grp: np.ndarray


@dataclass
class SeqIndex:
    """Sequence-form index for one player."""

    player: int
    n_seqs: int
    infoset_key: list
    infoset_actions: list
    infoset_first_seq: np.ndarray
    infoset_n_actions: np.ndarray
    infoset_parent_seq: np.ndarray
    infoset_depth: np.ndarray
    seq_infoset: np.ndarray
    seq_action_index: np.ndarray
    key_to_local: dict
    levels: list = field(default_factory=list)
    terminal_relevant: np.ndarray | None = None

    @property
    def n_infosets(self) -> int:
        return len(self.infoset_key)

    def child_infosets_of_seq(self) -> list:
        """List, per sequence id, of infosets whose parent sequence it is."""
        out = [[] for _ in range(self.n_seqs)]
        for j, p in enumerate(self.infoset_parent_seq):
            out[int(p)].append(j)
        return out


def _build_levels(ix: SeqIndex) -> None:
    order = np.argsort(ix.infoset_depth, kind="stable")
    levels = []
    if len(order):
        depths = ix.infoset_depth[order]
        for d in np.unique(depths)[::-1]:
            infosets = order[depths == d].astype(np.int32)
            first = ix.infoset_first_seq[infosets]
            nact = ix.infoset_n_actions[infosets]
            seqs = np.concatenate(
                [np.arange(f, f + k, dtype=np.int32) for f, k in zip(first, nact)]
            )
            grp = np.repeat(np.arange(len(infosets), dtype=np.int32), nact)
            levels.append(
                Level(
                    depth=int(d),
                    infosets=infosets,
                    parent_seq=ix.infoset_parent_seq[infosets],
                    first_seq=first,
                    n_actions=nact,
                    seqs=seqs,
                    grp=grp,
                )
            )
    ix.levels = levels


# ---------------------------------------------------------------------------
# Game container
# ---------------------------------------------------------------------------


class GameFormatError(ValueError):
    """Raised by the game-file loader on malformed input."""


@dataclass
class GameTree:
    """Compiled extensive-form game.

    Node arrays are indexed by DFS-preorder node id; ``children`` holds all
    child node ids concatenated, with per-node ``first_child``/``n_children``
    slices.  ``utilities`` are affinely normalized to [0, 1] with one shared
    ``scale``/``offset`` pair across players, so welfare comparisons between
    players stay meaningful; ``raw_payoffs`` keeps the original values.
    """

    name: str
    n_players: int
    node_kind: np.ndarray
    node_owner: np.ndarray
    node_infoset: np.ndarray
    node_ctx_seq: np.ndarray
    node_first_child: np.ndarray
    node_n_children: np.ndarray
    node_parent: np.ndarray
    node_parent_branch: np.ndarray
    node_terminal: np.ndarray
    children: np.ndarray
    child_label: list
    child_prob: np.ndarray
    terminal_node: np.ndarray
    terminal_seq: np.ndarray
    chance_reach: np.ndarray
    raw_payoffs: np.ndarray
    utilities: np.ndarray
    scale: float
    offset: float
    seq: list
    build_violations: list

    @property
    def n_nodes(self) -> int:
        return len(self.node_kind)

    @property
    def n_terminals(self) -> int:
        return len(self.terminal_node)

    def node_children(self, node: int) -> np.ndarray:
        f = self.node_first_child[node]
        return self.children[f : f + self.node_n_children[node]]

    def node_labels(self, node: int) -> list:
        f = self.node_first_child[node]
        return self.child_label[f : f + self.node_n_children[node]]

    def node_probs(self, node: int) -> np.ndarray:
        f = self.node_first_child[node]
        return self.child_prob[f : f + self.node_n_children[node]]

    def raw_value(self, normalized: float) -> float:
        """Map a normalized utility back to the original payoff scale."""
        return self.offset + self.scale * normalized


def build_game(root, n_players: int, name: str = "") -> GameTree:
    """Compile a spec tree into a :class:`GameTree`.

    Structural problems that a later :func:`validate` call should report
    (unnormalized chance nodes, inconsistent information sets, imperfect
    recall) are recorded on ``build_violations`` instead of raising, so that
    deliberately broken games can still be constructed and inspected.
    """
    node_kind = array("b")
    node_owner = array("i")
    node_infoset = array("i")
    node_ctx = array("i")
    node_first_child = array("i")
    node_n_children = array("i")
    node_parent = array("i")
    node_parent_branch = array("i")
    node_terminal = array("i")
    children = array("i")
    child_label: list = []
    child_prob = array("d")
    terminal_node = array("i")
    chance_reach = array("d")
    raw_cols = [array("d") for _ in range(n_players)]
    term_seq_cols = [array("i") for _ in range(n_players)]

    key_to_local = [dict() for _ in range(n_players)]
    iso_key = [[] for _ in range(n_players)]
    iso_actions = [[] for _ in range(n_players)]
    iso_first_seq = [array("i") for _ in range(n_players)]
    iso_n_actions = [array("i") for _ in range(n_players)]
    iso_parent_seq = [array("i") for _ in range(n_players)]
    iso_depth = [array("i") for _ in range(n_players)]
    n_seqs = [1 for _ in range(n_players)]
    violations: list = []

    def new_node(kind, owner, infoset, ctx, parent, pbranch):
        nid = len(node_kind)
        node_kind.append(kind)
        node_owner.append(owner)
        node_infoset.append(infoset)
        node_ctx.append(ctx)
        node_first_child.append(0)
        node_n_children.append(0)
        node_parent.append(parent)
        node_parent_branch.append(pbranch)
        node_terminal.append(-1)
        return nid

    # Iterative DFS with an explicit stack; frames are (spec, parent node id,
    # branch index in parent, chance reach, per-player context seq tuple).
    # Children must occupy a contiguous slice of `children`, so a node's
    # child-id slots are reserved before its subtrees are visited and frames
    # are pushed in reverse branch order to keep DFS-preorder numbering.
    stack = [(root, -1, -1, 1.0, (0,) * n_players)]
    while stack:
        spec, parent, pbranch, reach, ctx = stack.pop()
        spec = _expand(spec)
        tag = spec[0]
        if tag == "leaf":
            payoffs = spec[1]
            if len(payoffs) != n_players:
                raise ValueError(
                    f"terminal has {len(payoffs)} payoffs, expected {n_players}"
                )
            nid = new_node(TERMINAL, -1, -1, -1, parent, pbranch)
            tid = len(terminal_node)
            node_terminal[nid] = tid
            terminal_node.append(nid)
            chance_reach.append(reach)
            for p in range(n_players):
                raw_cols[p].append(payoffs[p])
                term_seq_cols[p].append(ctx[p])
        elif tag == "chance":
            branches = spec[1]
            if not branches:
                raise ValueError("chance node with no branches")
            nid = new_node(CHANCE, -1, -1, -1, parent, pbranch)
            probs = [b[0] for b in branches]
            total = sum(probs)
            if abs(total - 1.0) > 1e-9 or min(probs) < 0:
                violations.append(
                    f"chance node {nid}: branch probabilities sum to {total:.12g}"
                )
            first = len(children)
            node_first_child[nid] = first
            node_n_children[nid] = len(branches)
            for prob, lab, _ in branches:
                children.append(-1)
                child_label.append(lab)
                child_prob.append(prob)
            for k in range(len(branches) - 1, -1, -1):
                prob, _, ch = branches[k]
                stack.append((ch, nid, k, reach * prob, ctx))
        elif tag == "decide":
            _, player, key, branches = spec
            if not 0 <= player < n_players:
                raise ValueError(f"decision node owned by unknown player {player}")
            if not branches:
                raise ValueError("decision node with no branches")
            labels = tuple(lab for lab, _ in branches)
            local = key_to_local[player].get(key)
            if local is None:
                local = len(iso_key[player])
                key_to_local[player][key] = local
                iso_key[player].append(key)
                iso_actions[player].append(labels)
                iso_first_seq[player].append(n_seqs[player])
                iso_n_actions[player].append(len(branches))
                iso_parent_seq[player].append(ctx[player])
                parent_seq = ctx[player]
                if parent_seq == 0:
                    depth = 0
                else:
                    # The parent sequence's infoset was registered earlier on
                    # this same root-to-node path, so its depth is known.
                    parent_iso = _seq_owner(iso_first_seq[player], parent_seq)
                    depth = iso_depth[player][parent_iso] + 1
                iso_depth[player].append(depth)
                n_seqs[player] += len(branches)
            else:
                if iso_actions[player][local] != labels:
                    violations.append(
                        f"infoset {key!r} of player {player}: action labels differ "
                        f"across nodes ({iso_actions[player][local]} vs {labels})"
                    )
                if iso_parent_seq[player][local] != ctx[player]:
                    violations.append(
                        f"infoset {key!r} of player {player}: imperfect recall "
                        "(nodes reached with different own histories)"
                    )
            nid = new_node(DECISION, player, local, ctx[player], parent, pbranch)
            first = len(children)
            node_first_child[nid] = first
            node_n_children[nid] = len(branches)
            for lab, _ in branches:
                children.append(-1)
                child_label.append(lab)
                child_prob.append(np.nan)
            base_seq = iso_first_seq[player][local]
            n_reg = iso_n_actions[player][local]
            for k in range(len(branches) - 1, -1, -1):
                _, ch = branches[k]
                child_seq = base_seq + min(k, n_reg - 1)
                new_ctx = ctx[:player] + (child_seq,) + ctx[player + 1 :]
                stack.append((ch, nid, k, reach, new_ctx))
        else:
            raise ValueError(f"unknown spec tag {tag!r}")
        if parent >= 0:
            children[node_first_child[parent] + pbranch] = nid

    raw = np.array([np.frombuffer(c, dtype=np.float64) for c in raw_cols])
    if raw.size == 0:
        raise ValueError("game has no terminals")
    lo, hi = float(raw.min()), float(raw.max())
    scale = (hi - lo) if hi > lo else 1.0
    utilities = (raw - lo) / scale

    seq_indexes = []
    for p in range(n_players):
        first = np.frombuffer(iso_first_seq[p], dtype=np.int32).copy()
        nact = np.frombuffer(iso_n_actions[p], dtype=np.int32).copy()
        seq_infoset = np.full(n_seqs[p], -1, dtype=np.int32)
        seq_action = np.full(n_seqs[p], -1, dtype=np.int32)
        for j, (f, k) in enumerate(zip(first, nact)):
            seq_infoset[f : f + k] = j
            seq_action[f : f + k] = np.arange(k)
        ix = SeqIndex(
            player=p,
            n_seqs=n_seqs[p],
            infoset_key=iso_key[p],
            infoset_actions=iso_actions[p],
            infoset_first_seq=first,
            infoset_n_actions=nact,
            infoset_parent_seq=np.frombuffer(iso_parent_seq[p], dtype=np.int32).copy(),
            infoset_depth=np.frombuffer(iso_depth[p], dtype=np.int32).copy(),
            seq_infoset=seq_infoset,
            seq_action_index=seq_action,
            key_to_local=key_to_local[p],
        )
        _build_levels(ix)
        ts = np.frombuffer(term_seq_cols[p], dtype=np.int32).copy()
        relevant = np.zeros(n_seqs[p], dtype=bool)
        relevant[ts] = True
        ix.terminal_relevant = relevant
        seq_indexes.append(ix)

    return GameTree(
        name=name,
        n_players=n_players,
        node_kind=np.frombuffer(node_kind, dtype=np.int8).copy(),
        node_owner=np.frombuffer(node_owner, dtype=np.int32).copy(),
        node_infoset=np.frombuffer(node_infoset, dtype=np.int32).copy(),
        node_ctx_seq=np.frombuffer(node_ctx, dtype=np.int32).copy(),
        node_first_child=np.frombuffer(node_first_child, dtype=np.int32).copy(),
        node_n_children=np.frombuffer(node_n_children, dtype=np.int32).copy(),
        node_parent=np.frombuffer(node_parent, dtype=np.int32).copy(),
        node_parent_branch=np.frombuffer(node_parent_branch, dtype=np.int32).copy(),
        node_terminal=np.frombuffer(node_terminal, dtype=np.int32).copy(),
        children=np.frombuffer(children, dtype=np.int32).copy(),
        child_label=child_label,
        child_prob=np.frombuffer(child_prob, dtype=np.float64).copy(),
        terminal_node=np.frombuffer(terminal_node, dtype=np.int32).copy(),
        terminal_seq=np.array(
            [np.frombuffer(c, dtype=np.int32) for c in term_seq_cols]
        ),
        chance_reach=np.frombuffer(chance_reach, dtype=np.float64).copy(),
        raw_payoffs=raw,
        utilities=utilities,
        scale=scale,
        offset=lo,
        seq=seq_indexes,
        build_violations=violations,
    )


def _seq_owner(first_seq_col, seq: int) -> int:
    """Locate the infoset owning ``seq`` during construction (bisect on the
    sorted-by-construction first-sequence column)."""
    import bisect

    pos = bisect.bisect_right(first_seq_col, seq) - 1
    return pos


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate(game: GameTree) -> list:
    """Structural soundness checks.

    Returns a list of human-readable violations (empty when the game is
    sound): chance branch probabilities summing to one, consistent action
    counts and labels within each information set, perfect recall, and
    normalized utilities inside [0, 1].
    """
    out = list(game.build_violations)
    for nid in np.nonzero(game.node_kind == CHANCE)[0]:
        total = game.node_probs(nid).sum()
        if abs(total - 1.0) > 1e-9 or game.node_probs(nid).min() < 0:
            msg = f"chance node {nid}: branch probabilities sum to {total:.12g}"
            if msg not in out:
                out.append(msg)
    for p in range(game.n_players):
        ix = game.seq[p]
        mask = (game.node_kind == DECISION) & (game.node_owner == p)
        nodes = np.nonzero(mask)[0]
        for nid in nodes:
            j = game.node_infoset[nid]
            if game.node_n_children[nid] != ix.infoset_n_actions[j]:
                out.append(
                    f"infoset {ix.infoset_key[j]!r} of player {p}: nodes disagree "
                    "on the number of actions"
                )
            if game.node_ctx_seq[nid] != ix.infoset_parent_seq[j]:
                out.append(
                    f"infoset {ix.infoset_key[j]!r} of player {p}: imperfect recall "
                    "(nodes reached with different own histories)"
                )
    if game.utilities.size and (
        game.utilities.min() < -1e-12 or game.utilities.max() > 1 + 1e-12
    ):
        out.append("normalized utilities fall outside [0, 1]")
    return out


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


@dataclass
class SequenceFormStrategy:
    """A player's strategy as a mass vector over their sequences.

    ``mass[0]`` is always 1 (empty sequence); for every information set the
    action masses sum to the mass of the sequence leading to it.
    """

    player: int
    mass: np.ndarray

    def copy(self) -> "SequenceFormStrategy":
        return SequenceFormStrategy(self.player, self.mass.copy())


def check_strategy(
    game: GameTree, strategy: SequenceFormStrategy, tol: float = 1e-9, pure: bool = False
) -> list:
    """Return violations of the sequence-form invariants (empty = valid)."""
    ix = game.seq[strategy.player]
    m = strategy.mass
    out = []
    if m.shape != (ix.n_seqs,):
        return [f"mass vector has shape {m.shape}, expected ({ix.n_seqs},)"]
    if abs(m[0] - 1.0) > tol:
        out.append(f"empty sequence has mass {m[0]!r}, expected 1")
    if m.min() < -tol:
        out.append("negative sequence mass")
    for lvl in ix.levels:
        sums = np.zeros(len(lvl.infosets))
        np.add.at(sums, lvl.grp, m[lvl.seqs])
        bad = np.nonzero(np.abs(sums - m[lvl.parent_seq]) > tol)[0]
        for b in bad:
            j = lvl.infosets[b]
            out.append(
                f"infoset {ix.infoset_key[j]!r}: action masses sum to "
                f"{sums[b]:.12g} but parent sequence has mass {m[lvl.parent_seq[b]]:.12g}"
            )
    if pure:
        if not np.all((np.abs(m) <= tol) | (np.abs(m - 1) <= tol)):
            out.append("pure strategy has fractional sequence mass")
    return out


def behavior_to_sequence(game: GameTree, player: int, cond: np.ndarray) -> SequenceFormStrategy:
    """Convert per-sequence conditional action probabilities into mass form.

    ``cond[s]`` is the probability of the action leading to sequence ``s``
    given its information set is reached; ``cond[0]`` is ignored.
    """
    ix = game.seq[player]
    mass = np.zeros(ix.n_seqs)
    mass[0] = 1.0
    for lvl in reversed(ix.levels):  # shallowest first
        mass[lvl.seqs] = cond[lvl.seqs] * mass[lvl.parent_seq][lvl.grp]
    return SequenceFormStrategy(player, mass)


def uniform_strategy(game: GameTree, player: int) -> SequenceFormStrategy:
    """Uniformly random action at every information set."""
    ix = game.seq[player]
    cond = np.ones(ix.n_seqs)
    for lvl in ix.levels:
        cond[lvl.seqs] = 1.0 / lvl.n_actions[lvl.grp]
    return behavior_to_sequence(game, player, cond)


def random_strategy(game: GameTree, player: int, rng: np.random.Generator) -> SequenceFormStrategy:
    """Dirichlet(1) action distribution at every information set."""
    ix = game.seq[player]
    cond = np.ones(ix.n_seqs)
    for lvl in ix.levels:
        draws = -np.log(rng.random(len(lvl.seqs)))
        sums = np.zeros(len(lvl.infosets))
        np.add.at(sums, lvl.grp, draws)
        cond[lvl.seqs] = draws / sums[lvl.grp]
    return behavior_to_sequence(game, player, cond)


def pure_strategy_from_choices(
    game: GameTree, player: int, choices
) -> SequenceFormStrategy:
    """Pure strategy picking ``choices[j]`` (an action index) at infoset j.

    The result is in reduced form: sequences under information sets that the
    player's own choices make unreachable carry zero mass.
    """
    ix = game.seq[player]
    cond = np.zeros(ix.n_seqs)
    cond[0] = 1.0
    for j in range(ix.n_infosets):
        cond[ix.infoset_first_seq[j] + int(choices[j])] = 1.0
    return behavior_to_sequence(game, player, cond)


def random_pure_strategy(
    game: GameTree, player: int, rng: np.random.Generator
) -> SequenceFormStrategy:
    ix = game.seq[player]
    choices = [int(rng.integers(k)) for k in ix.infoset_n_actions]
    return pure_strategy_from_choices(game, player, choices)


def pure_strategy_from_labels(game: GameTree, player: int, chooser) -> SequenceFormStrategy:
    """Pure strategy built by asking ``chooser(infoset_key, action_labels)``
    for the label to play at each information set."""
    ix = game.seq[player]
    choices = []
    for j in range(ix.n_infosets):
        labels = ix.infoset_actions[j]
        pick = chooser(ix.infoset_key[j], labels)
        choices.append(labels.index(pick))
    return pure_strategy_from_choices(game, player, choices)


def sequence_to_behavior(game: GameTree, strategy: SequenceFormStrategy) -> np.ndarray:
    """Per-sequence conditional probabilities; uniform where mass vanishes."""
    ix = game.seq[strategy.player]
    m = strategy.mass
    cond = np.ones(ix.n_seqs)
    for lvl in ix.levels:
        parent = m[lvl.parent_seq][lvl.grp]
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(parent > 0, m[lvl.seqs] / np.where(parent > 0, parent, 1.0), np.nan)
        c = np.where(np.isnan(c), 1.0 / lvl.n_actions[lvl.grp], c)
        cond[lvl.seqs] = c
    return cond


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------


def _masses(strategies) -> list:
    return [s.mass if isinstance(s, SequenceFormStrategy) else s for s in strategies]


def reach_products(game: GameTree, strategies, players=None) -> np.ndarray:
    """Per-terminal product of the selected players' sequence masses.

    Chance is excluded; ``players`` defaults to all players.  With all
    players selected, multiplying by ``game.chance_reach`` gives the terminal
    distribution.
    """
    if players is None:
        players = range(game.n_players)
    mass = _masses(strategies)
    out = np.ones(game.n_terminals)
    for p in players:
        out *= mass[p][game.terminal_seq[p]]
    return out


@dataclass
class TerminalDistribution:
    """A probability distribution over terminal ids."""

    probs: np.ndarray

    def check(self, tol: float = 1e-9) -> list:
        out = []
        if self.probs.min() < -tol:
            out.append("negative terminal probability")
        if abs(self.probs.sum() - 1.0) > max(tol, 1e-9):
            out.append(f"terminal probabilities sum to {self.probs.sum():.12g}")
        return out


def terminal_distribution(game: GameTree, strategies) -> TerminalDistribution:
    return TerminalDistribution(game.chance_reach * reach_products(game, strategies))


def expected_utility(
    game: GameTree,
    strategies,
    player: int,
    bonus: np.ndarray | None = None,
    values: np.ndarray | None = None,
) -> float:
    """Expected normalized utility of ``player``, plus an optional per-terminal
    bonus (used for payment-augmented games).

    ``values`` replaces the player's own utility column with an arbitrary
    per-terminal value vector, e.g. an external objective.
    """
    u = game.utilities[player] if values is None else np.asarray(values, float)
    if bonus is not None:
        u = u + bonus
    return float(np.dot(terminal_distribution(game, strategies).probs, u))


def utility_weights(
    game: GameTree,
    player: int,
    strategies,
    bonus: np.ndarray | None = None,
    env_reach: np.ndarray | None = None,
    values: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of ``player``'s expected utility in their own sequence mass.

    ``strategies[player]`` is ignored (may be None).  ``env_reach`` overrides
    the chance reach vector, which lets a fixed mediator strategy be folded
    into the environment without rebuilding the game.  ``values`` replaces the
    player's utility column with an arbitrary per-terminal value vector, so
    the same routine can take gradients of objectives other than the player's
    own payoff.
    """
    env = game.chance_reach if env_reach is None else env_reach
    mass = [s.mass if isinstance(s, SequenceFormStrategy) else s for s in strategies]
    other = np.ones(game.n_terminals)
    for q in range(game.n_players):
        if q != player:
            other *= mass[q][game.terminal_seq[q]]
    u = game.utilities[player] if values is None else np.asarray(values, float)
    if bonus is not None:
        u = u + bonus
    return np.bincount(
        game.terminal_seq[player],
        weights=env * other * u,
        minlength=game.seq[player].n_seqs,
    ).astype(np.float64)


def best_response_to_weights(game: GameTree, player: int, weights: np.ndarray):
    """Pure maximizer of ``dot(mass, weights)`` over sequence-form strategies.

    Ties at an information set break toward the lowest sequence id (i.e. the
    first-listed action).  Returns ``(strategy, value)``.
    """
    ix = game.seq[player]
    val = np.asarray(weights, dtype=np.float64).copy()
    choice = np.zeros(max(ix.n_infosets, 1), dtype=np.int64)
    for lvl in ix.levels:  # deepest first
        v = val[lvl.seqs]
        best = np.full(len(lvl.infosets), -np.inf)
        np.maximum.at(best, lvl.grp, v)
        hit = np.nonzero(v == best[lvl.grp])[0]
        _, firsts = np.unique(lvl.grp[hit], return_index=True)
        sel = lvl.seqs[hit[firsts]]
        choice[lvl.infosets] = sel
        np.add.at(val, lvl.parent_seq, best)
    mass = np.zeros(ix.n_seqs)
    mass[0] = 1.0
    for lvl in reversed(ix.levels):  # shallowest first
        sel = choice[lvl.infosets]
        mass[sel] = mass[ix.infoset_parent_seq[lvl.infosets]]
    return SequenceFormStrategy(player, mass), float(val[0])


def best_response(
    game: GameTree,
    player: int,
    strategies,
    bonus: np.ndarray | None = None,
    env_reach: np.ndarray | None = None,
):
    """Pure best response of ``player`` against the others' strategies.

    Returns ``(strategy, value)``; the value equals the expected utility of
    the returned strategy against ``strategies`` to numerical precision.
    """
    w = utility_weights(game, player, strategies, bonus=bonus, env_reach=env_reach)
    return best_response_to_weights(game, player, w)


def sample_playout(game: GameTree, strategies, rng: np.random.Generator) -> int:
    """Sample one play of the game; returns the terminal id reached."""
    mass = _masses(strategies)
    node = 0
    while game.node_kind[node] != TERMINAL:
        if game.node_kind[node] == CHANCE:
            probs = game.node_probs(node)
        else:
            p = game.node_owner[node]
            ix = game.seq[p]
            j = game.node_infoset[node]
            f = ix.infoset_first_seq[j]
            block = mass[p][f : f + ix.infoset_n_actions[j]]
            denom = block.sum()
            if denom <= 0:
                probs = np.full(len(block), 1.0 / len(block))
            else:
                probs = block / denom
        r = rng.random()
        k = int(np.searchsorted(np.cumsum(probs), r, side="right"))
        k = min(k, game.node_n_children[node] - 1)
        node = game.node_children(node)[k]
    return int(game.node_terminal[node])


def nash_gap(game: GameTree, strategies, env_reach: np.ndarray | None = None) -> float:
    """Largest unilateral improvement any player can gain by deviating.

    Zero (up to tolerance) exactly when ``strategies`` form a Nash
    equilibrium.
    """
    worst = 0.0
    for p in range(game.n_players):
        _, value = best_response(game, p, strategies, env_reach=env_reach)
        env = game.chance_reach if env_reach is None else env_reach
        have = float(
            np.dot(env * reach_products(game, strategies), game.utilities[p])
        )
        worst = max(worst, value - have)
    return worst


# ---------------------------------------------------------------------------
# Pure-plan enumeration (reduced plans)
# ---------------------------------------------------------------------------


def count_pure_strategies(game: GameTree, player: int) -> int:
    """Number of reduced pure plans of ``player`` (exact, arbitrary precision)."""
    ix = game.seq[player]
    kids = ix.child_infosets_of_seq()
    at = [0] * ix.n_infosets
    order = np.argsort(ix.infoset_depth, kind="stable")[::-1]
    for j in order:  # deepest first, so child infosets are already counted
        f = int(ix.infoset_first_seq[j])
        total = 0
        for a in range(int(ix.infoset_n_actions[j])):
            prod = 1
            for c in kids[f + a]:
                prod *= at[c]
            total += prod
        at[j] = total
    result = 1
    for c in kids[0]:
        result *= at[c]
    return result


def enumerate_pure_strategies(game: GameTree, player: int, limit: int | None = None):
    """All reduced pure plans of ``player`` as strategies, in a deterministic
    order (action indices increase, deepest infosets fastest).

    Returns None when the count exceeds ``limit``.
    """
    if limit is not None and count_pure_strategies(game, player) > limit:
        return None
    ix = game.seq[player]
    kids = ix.child_infosets_of_seq()

    def plans_below_seq(s):
        parts = [plans_at(j) for j in kids[s]]
        if not parts:
            return [()]
        return [sum(combo, ()) for combo in itertools.product(*parts)]

    memo = {}

    def plans_at(j):
        if j not in memo:
            f = ix.infoset_first_seq[j]
            out = []
            for a in range(ix.infoset_n_actions[j]):
                for tail in plans_below_seq(f + a):
                    out.append(((j, a),) + tail)
            memo[j] = out
        return memo[j]

    plans = plans_below_seq(0)
    result = []
    for plan in plans:
        cond = np.zeros(ix.n_seqs)
        cond[0] = 1.0
        for j, a in plan:
            cond[ix.infoset_first_seq[j] + a] = 1.0
        result.append(behavior_to_sequence(game, player, cond))
    return result


# ---------------------------------------------------------------------------
# Game files (JSON)
# ---------------------------------------------------------------------------


def game_to_dict(game: GameTree) -> dict:
    """Serializable nested description of the game (raw payoffs)."""

    def walk(node):
        kind = game.node_kind[node]
        if kind == TERMINAL:
            t = game.node_terminal[node]
            return {"kind": "terminal", "payoffs": list(game.raw_payoffs[:, t])}
        if kind == CHANCE:
            return {
                "kind": "chance",
                "branches": [
                    {"prob": float(p), "label": str(lab), "node": walk(ch)}
                    for p, lab, ch in zip(
                        game.node_probs(node),
                        game.node_labels(node),
                        game.node_children(node),
                    )
                ],
            }
        p = int(game.node_owner[node])
        j = int(game.node_infoset[node])
        return {
            "kind": "decision",
            "player": p,
            "infoset": str(game.seq[p].infoset_key[j]),
            "branches": [
                {"label": str(lab), "node": walk(ch)}
                for lab, ch in zip(game.node_labels(node), game.node_children(node))
            ],
        }

    import sys

    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, game.n_nodes + 100))
    try:
        return {"name": game.name, "players": game.n_players, "root": walk(0)}
    finally:
        sys.setrecursionlimit(old)


def save_game(game: GameTree, path) -> None:
    with open(path, "w") as fh:
        json.dump(game_to_dict(game), fh, indent=1)
        fh.write("\n")


def load_game_dict(data: dict) -> GameTree:
    """Build a game from its nested-dict form, rejecting malformed input."""
    if not isinstance(data, dict):
        raise GameFormatError("top level must be an object")
    for req in ("players", "root"):
        if req not in data:
            raise GameFormatError(f"missing top-level key {req!r}")
    n = data["players"]
    if not isinstance(n, int) or n < 1:
        raise GameFormatError("'players' must be a positive integer")
    infoset_owner: dict = {}

    def parse(node, path):
        if not isinstance(node, dict) or "kind" not in node:
            raise GameFormatError(f"{path}: node must be an object with a 'kind'")
        kind = node["kind"]
        if kind == "terminal":
            pay = node.get("payoffs")
            if (
                not isinstance(pay, list)
                or len(pay) != n
                or not all(isinstance(v, (int, float)) for v in pay)
            ):
                raise GameFormatError(f"{path}: terminal needs {n} numeric payoffs")
            return leaf(*pay)
        if kind == "chance":
            branches = node.get("branches")
            if not isinstance(branches, list) or not branches:
                raise GameFormatError(f"{path}: chance needs a nonempty branch list")
            labels = []
            parsed = []
            total = 0.0
            for k, b in enumerate(branches):
                if not isinstance(b, dict) or not {"prob", "label", "node"} <= set(b):
                    raise GameFormatError(
                        f"{path}/branch {k}: chance branch needs prob, label, node"
                    )
                prob = b["prob"]
                if not isinstance(prob, (int, float)) or prob < 0:
                    raise GameFormatError(f"{path}/branch {k}: bad probability {prob!r}")
                labels.append(b["label"])
                total += prob
                parsed.append((prob, b["label"], parse(b["node"], f"{path}/{b['label']}")))
            if len(set(labels)) != len(labels):
                raise GameFormatError(f"{path}: duplicate branch labels")
            if abs(total - 1.0) > 1e-9:
                raise GameFormatError(
                    f"{path}: chance probabilities sum to {total:.12g}, expected 1"
                )
            return chance(parsed)
        if kind == "decision":
            player = node.get("player")
            if not isinstance(player, int) or not 0 <= player < n:
                raise GameFormatError(f"{path}: bad player {player!r}")
            key = node.get("infoset")
            if not isinstance(key, str) or not key:
                raise GameFormatError(f"{path}: infoset must be a nonempty string")
            prev = infoset_owner.setdefault(key, player)
            if prev != player:
                raise GameFormatError(
                    f"{path}: infoset {key!r} used by players {prev} and {player}"
                )
            branches = node.get("branches")
            if not isinstance(branches, list) or not branches:
                raise GameFormatError(f"{path}: decision needs a nonempty branch list")
            labels = []
            parsed = []
            for k, b in enumerate(branches):
                if not isinstance(b, dict) or not {"label", "node"} <= set(b):
                    raise GameFormatError(
                        f"{path}/branch {k}: decision branch needs label and node"
                    )
                labels.append(b["label"])
                parsed.append((b["label"], parse(b["node"], f"{path}/{b['label']}")))
            if len(set(labels)) != len(labels):
                raise GameFormatError(f"{path}: duplicate action labels")
            return decide(player, key, parsed)
        raise GameFormatError(f"{path}: unknown node kind {kind!r}")

    spec = parse(data["root"], "root")
    game = build_game(spec, n, name=str(data.get("name", "")))
    problems = validate(game)
    if problems:
        raise GameFormatError("; ".join(problems))
    return game


def load_game(path) -> GameTree:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GameFormatError(f"not valid JSON: {exc}") from exc
    return load_game_dict(data)
