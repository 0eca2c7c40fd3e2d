"""Dominator and post-dominator trees."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

from .cfg import EXIT, Cfg


def _postorder(root, succ: Callable[[str], Iterable[str]]) -> list:
    order, seen = [], {root}
    stack = [(root, iter(succ(root)))]
    while stack:
        node, it = stack[-1]
        for s in it:
            if s not in seen:
                seen.add(s)
                stack.append((s, iter(succ(s))))
                break
        else:
            order.append(node)
            stack.pop()
    return order


def immediate_dominators(root, succ: Callable[[str], Iterable[str]],
                         pred: Callable[[str], Iterable[str]]) -> dict:
    """Immediate dominators of the nodes reachable from ``root`` (the root maps
    to itself), by the iterative algorithm of Cooper, Harvey and Kennedy."""
    post = _postorder(root, succ)
    rank = {n: i for i, n in enumerate(post)}
    rpo = post[::-1]
    idom = {root: root}

    def meet(a, b):
        while a != b:
            while rank[a] < rank[b]:
                a = idom[a]
            while rank[b] < rank[a]:
                b = idom[b]
        return a

    change = True
    while change:
        change = False
        for n in rpo[1:]:
            new = None
            for p in pred(n):
                if p in idom:
                    new = p if new is None else meet(p, new)
            if new is not None and idom.get(n) != new:
                idom[n] = new
                change = True
    return idom


@dataclass
class Dominance:
    idom: dict[str, str]
    ipdom: dict[str, str]

    @staticmethod
    def _chain(tree: dict, a: str, b: str) -> bool:
        if b not in tree:
            return False
        while True:
            if b == a:
                return True
            up = tree[b]
            if up == b:
                return False
            b = up

    def dominates(self, a: str, b: str) -> bool:
        return self._chain(self.idom, a, b)

    def post_dominates(self, a: str, b: str) -> bool:
        return self._chain(self.ipdom, a, b)

    def dominator_set(self, b: str) -> set[str]:
        return {a for a in self.idom if self.dominates(a, b)}


def compute_dominance(cfg: Cfg, root: str | None = None) -> Dominance:
    """Dominance from ``root`` (default: cfg root); post-dominance is dominance
    on the reversed graph from a virtual exit joined to every ret/halt block."""
    root = root or cfg.root
    succ_map: dict[str, list[str]] = {n: [] for n in cfg.nodes}
    pred_map: dict[str, list[str]] = {n: [] for n in cfg.nodes}
    for e in cfg.edges:
        succ_map[e.src].append(e.dst)
        pred_map[e.dst].append(e.src)
    pred_map[EXIT] = list(cfg.exits)
    succ_map[EXIT] = []
    for x in cfg.exits:
        succ_map[x].append(EXIT)
    idom = immediate_dominators(root, succ_map.__getitem__, pred_map.__getitem__)
    ipdom = immediate_dominators(EXIT, pred_map.__getitem__, succ_map.__getitem__)
    return Dominance(idom, ipdom)
