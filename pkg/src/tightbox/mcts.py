"""Monte Carlo tree search over the box-refinement MDP.

Each node holds a refinement state. One iteration selects a leaf (expanding
a random untried action, or descending by UCB), evaluates it with a greedy
soft-objective rollout, and backs the rollout's score up the path with
``Q <- max(Q, r)``. Scores are improvements of ``Tgt - alpha * Cov`` over the
initial boxes, so the root scores 0.

Optional accelerations:

* EE saves greedy work on the tree. Each node keeps its per-box action
  evaluations, so a child's rollout re-evaluates only the boxes its action
  affected, and the states visited by a rollout become a chain of
  single-child nodes ending at the greedy fixpoint, where later iterations
  continue instead of recomputing the rollout. Chain steps do not count
  toward the horizon, which bounds the number of searched actions on a path.
* PNS samples untried actions with weight ``1 + pns_scale * gain`` where
  gain is the summed positive score improvement previously attributed to
  that (box, kind) action, and lets nodes on the best path skip expansion.
* Box pruning drops a box from rollout evaluation once none of its 13
  actions improves the objective, for the rest of that rollout.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .coverage import DEFAULT_ALPHA, samples_for, soft_objective
from .errors import UnvisitedNode
from .refine import (STRICT_TOL, Action, ActionEvaluator, BoxSet, OutcomeCache, SearchState,
                     enumerate_actions, pick_min, soft_value)
from .tetmesh import TetMesh

logger = logging.getLogger(__name__)

DEFAULT_C = 0.001


@dataclass
class MctsConfig:
    iterations: int = 500
    horizon: int = 16
    c: float = DEFAULT_C
    alpha: float = DEFAULT_ALPHA
    pns_skip_probability: float = 0.9
    ee: bool = False
    pns: bool = False
    prune: bool = True
    pns_scale: float = 1.0
    seed: int = 0
    root_rollout: bool = True  # score the plain greedy rollout from the root first
    time_limit: float | None = None
    subdivide: bool = False

    def __post_init__(self):
        if self.iterations < 1 or self.horizon < 1:
            raise ValueError("iterations and horizon must be >= 1")
        if self.c < 0:
            raise ValueError("c must be non-negative")
        if not 0.0 <= self.pns_skip_probability <= 1.0:
            raise ValueError("pns_skip_probability must lie in [0, 1]")


@dataclass(eq=False)
class SearchNode:
    state: SearchState | None  # None on interior EE chain nodes
    parent: "SearchNode | None" = None
    action: Action | None = None
    depth: int = 0
    decisions: int = 0  # actions picked by the search; EE chain steps do not count
    Q: float = -math.inf
    N: int = 0
    children: dict = field(default_factory=dict)
    untried: list = field(default_factory=list)
    rollout: float | None = None  # cached rollout reward of this node
    entries: dict | None = None  # EE: per-box outcomes valid at ``state``

    def path(self) -> list:
        out, n = [], self
        while n is not None:
            out.append(n)
            n = n.parent
        return out[::-1]

    def actions(self) -> list:
        return [n.action for n in self.path()[1:]]


@dataclass
class MctsResult:
    boxes: BoxSet
    actions: list
    score: float
    log: list  # (iteration, best_score, elapsed)
    rewards: list
    n_nodes: int = 0

    def __iter__(self):
        return iter((self.boxes, self.actions))

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "best_score", "elapsed"])
            w.writerows(self.log)


def score(mesh: TetMesh, initial, current, alpha: float = DEFAULT_ALPHA, subdivide: bool = False) -> float:
    """Improvement of the soft objective from ``initial`` to ``current``."""
    if current is initial:
        return 0.0
    return (soft_objective(mesh, initial, alpha, subdivide)
            - soft_objective(mesh, current, alpha, subdivide))


def ucb(node: SearchNode, c: float = DEFAULT_C) -> float:
    if node.N < 1:
        raise UnvisitedNode("UCB of an unvisited node")
    if node.parent is None:
        raise UnvisitedNode("UCB needs a parent")
    return node.Q + c * math.sqrt(2.0 * math.log(node.parent.N) / node.N)


def greedy_rollout(state: SearchState, evaluator: ActionEvaluator, alpha: float, prune: bool = True,
                   cache: OutcomeCache | None = None) -> list:
    """Apply best soft-objective actions until none strictly improves.

    Mutates ``state`` (through ``cache`` when given) and returns the applied actions.
    """
    actions = []
    oc = cache if cache is not None else OutcomeCache(state, evaluator)
    active = state.live()
    current = state.objective(alpha)
    while active:
        best_out, best_val = None, math.inf
        still = []
        outs, owners = [], []
        for i in active:
            box_outs = oc.outcomes(i)
            vals = [soft_value(state, o, alpha) for o in box_outs]
            if not prune or (vals and min(vals) < current - STRICT_TOL):
                still.append(i)
            outs.extend(box_outs)
            owners.extend(vals)
        if not outs:
            break
        k = pick_min(owners)
        best_out, best_val = outs[k], owners[k]
        if not best_val < current - STRICT_TOL:
            break
        oc.commit(best_out)
        current = state.objective(alpha)
        actions.append(best_out.action)
        if prune:
            active = [i for i in still if not state.boxes[i].deleted]
        else:
            active = state.live()
    return actions


class Mcts:
    def __init__(self, mesh: TetMesh, initial: BoxSet, cfg: MctsConfig):
        self.mesh = mesh
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.evaluator = ActionEvaluator()
        root_state = SearchState(samples_for(mesh, cfg.subdivide), initial.boxes, initial.unit)
        self.obj0 = root_state.objective(cfg.alpha)
        self.root = self._node(root_state, None, None)
        self.best_score = 0.0
        self.best_state = root_state
        self.best_actions = []
        self.best_node = self.root
        self.gain = defaultdict(float)
        self.rewards = []
        self.log = []
        self.n_nodes = 1

    def _node(self, state, parent, action) -> SearchNode:
        depth = 0 if parent is None else parent.depth + 1
        decisions = 0 if parent is None else parent.decisions + 1
        untried = enumerate_actions(state.boxes)
        if action is not None:
            inv = action.inverse()
            untried = [a for a in untried if a != inv]
        return SearchNode(state, parent, action, depth, decisions, untried=untried)

    def _score(self, state: SearchState) -> float:
        return self.obj0 - state.objective(self.cfg.alpha)

    def _child(self, node: SearchNode, a: Action) -> SearchNode:
        st = node.state.copy()
        out = self.evaluator.evaluate(st, a)
        entries = None
        if node.entries is not None:
            oc = OutcomeCache(st, self.evaluator, node.entries)
            oc.commit(out)
            entries = oc.snapshot()
            if not node.untried:
                node.entries = None
        else:
            st.commit(out)
        child = self._node(st, node, a)
        child.entries = entries
        node.children[a] = child
        self.n_nodes += 1
        return child

    def _on_best_path(self, node: SearchNode) -> bool:
        n = self.best_node
        while n is not None:
            if n is node:
                return True
            n = n.parent
        return False

    def _pick_untried(self, node: SearchNode) -> Action:
        if self.cfg.pns:
            w = np.array([1.0 + self.cfg.pns_scale * self.gain[(a.box_index, a.kind)] for a in node.untried])
            k = int(self.rng.choice(len(node.untried), p=w / w.sum()))
        else:
            k = int(self.rng.integers(len(node.untried)))
        return node.untried.pop(k)

    def select(self) -> SearchNode:
        node = self.root
        while node.decisions < self.cfg.horizon:
            if node.untried:
                skip = (self.cfg.pns and node.children and self._on_best_path(node)
                        and self.rng.random() < self.cfg.pns_skip_probability)
                if not skip:
                    a = self._pick_untried(node)
                    return self._child(node, a)
            if not node.children:
                break
            kids = list(node.children.values())
            visited = [k for k in kids if k.N > 0]
            if len(visited) < len(kids):
                node = next(k for k in kids if k.N == 0)
                continue
            vals = [ucb(k, self.cfg.c) for k in kids]
            node = kids[int(np.argmax(vals))]
        return node

    def evaluate(self, node: SearchNode):
        """Greedy rollout from ``node``.

        Returns (reward, leaf, end_state, actions_from_root); ``end_state`` is
        None when the node's rollout was already cached.
        """
        if node.rollout is not None:
            return node.rollout, node, None, None
        end = node.state.copy()
        cache = None
        if self.cfg.ee:
            # save the node's greedy evaluations so its children start from them
            cache = OutcomeCache(end, self.evaluator, node.entries)
            cache.fill()
            node.entries = cache.snapshot() if node.untried else None
        acts = greedy_rollout(end, self.evaluator, self.cfg.alpha, self.cfg.prune, cache)
        reward = self._score(end)
        node.rollout = reward
        full = node.actions() + acts
        leaf = node
        if self.cfg.ee and acts:
            # the greedy chain becomes single-child nodes below ``node``, which keeps
            # its other untried actions; the chain's last node stays expandable.
            # Interior chain nodes are never expanded, so only the last one keeps a state.
            for j, a in enumerate(acts):
                st = end if j == len(acts) - 1 else None
                child = SearchNode(st, leaf, a, leaf.depth + 1, leaf.decisions, rollout=reward)
                if st is not None:
                    child.entries = cache.snapshot()
                leaf.children[a] = child
                self.n_nodes += 1
                leaf = child
            node.untried = [u for u in node.untried if u != acts[0]]
            if leaf is not node:
                inv = leaf.action.inverse()
                leaf.untried = [u for u in enumerate_actions(leaf.state.boxes) if u != inv]
        return reward, leaf, end, full

    def backup(self, leaf: SearchNode, reward: float) -> None:
        for n in leaf.path():
            n.N += 1
            n.Q = max(n.Q, reward)

    def run(self) -> MctsResult:
        cfg = self.cfg
        t0 = time.perf_counter()
        cache = None
        if cfg.ee:
            cache = OutcomeCache(self.root.state.copy(), self.evaluator)
            cache.fill()
            self.root.entries = cache.snapshot()
        if cfg.root_rollout:
            end = cache.state if cache is not None else self.root.state.copy()
            acts = greedy_rollout(end, self.evaluator, cfg.alpha, cfg.prune, cache)
            r = self._score(end)
            self.rewards.append(r)
            if r > self.best_score:
                self.best_score, self.best_state, self.best_actions = r, end, acts
        self.log.append((0, self.best_score, time.perf_counter() - t0))
        for it in range(1, cfg.iterations + 1):
            node = self.select()
            reward, leaf, end, full = self.evaluate(node)
            if end is not None and node.action is not None:
                g = reward - self._score(node.parent.state)
                if g > 0:
                    self.gain[(node.action.box_index, node.action.kind)] += g
            self.backup(leaf, reward)
            self.rewards.append(reward)
            if end is not None and reward > self.best_score:
                self.best_score, self.best_state, self.best_actions = reward, end, full
                self.best_node = leaf
            self.log.append((it, self.best_score, time.perf_counter() - t0))
            if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
                break
        return MctsResult(self.best_state.boxset(), self.best_actions, self.best_score, self.log,
                          self.rewards, self.n_nodes)


def run_mcts(mesh: TetMesh, initial: BoxSet, cfg: MctsConfig | None = None) -> MctsResult:
    """Search for a state maximizing the score over ``initial``."""
    res = Mcts(mesh, initial, cfg or MctsConfig()).run()
    logger.info("mcts best score %.6f after %d iterations (%d nodes)", res.score, len(res.log) - 1, res.n_nodes)
    return res
