"""In-batch pair generation and rank-target derivation.

Pairs are formed once per mini-batch from the batch's predictions, after a
single backbone pass per image (single-stream Siamese style): for n images
there are n(n-1)/2 distinct unordered pairs, so the default batch of 5
yields 10 pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class RankPair:
    """One ordered judgment between two batch elements."""

    index_a: int
    index_b: int
    sign: int  # +1: a shows the higher level, -1: b does

    def __post_init__(self):
        if self.index_a == self.index_b:
            raise ValueError("a pair must reference two distinct elements")
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")


def enumerate_pairs(batch_size: int) -> list[tuple[int, int]]:
    """All distinct unordered index pairs (i, j), i < j, in lexicographic order."""
    if batch_size < 2:
        raise ValueError(f"need at least 2 elements to form pairs, got {batch_size}")
    return [(i, j) for i in range(batch_size) for j in range(i + 1, batch_size)]


def derive_rank_targets(
    levels: Sequence[float],
    pairs: Sequence[tuple[int, int]] | None = None,
) -> list[RankPair]:
    """Turn per-image weak levels into signed rank pairs.

    Equal-level pairs are dropped: under the zero-margin hinge they carry no
    ordering information. The number dropped is ``len(pairs) - len(result)``.
    """
    if pairs is None:
        pairs = enumerate_pairs(len(levels))
    out = []
    for i, j in pairs:
        if levels[i] > levels[j]:
            out.append(RankPair(i, j, +1))
        elif levels[i] < levels[j]:
            out.append(RankPair(i, j, -1))
    return out


def _closure(n: int, edges: set[tuple[int, int]]) -> set[tuple[int, int]]:
    reach = {(i, j) for i, j in edges}
    changed = True
    while changed:
        changed = False
        for i, k in list(reach):
            for k2, j in list(reach):
                if k == k2 and (i, j) not in reach:
                    reach.add((i, j))
                    changed = True
    return reach


def transitive_reduction(pairs: Sequence[RankPair]) -> list[RankPair]:
    """Minimal subset of ``pairs`` with the same transitive closure.

    Whenever A > B and B > C are kept, A > C is implied and dropped. Input
    must be cycle-free, which holds for any pairs derived from scalar levels.
    """
    if not pairs:
        return []
    nodes = sorted({p.index_a for p in pairs} | {p.index_b for p in pairs})
    # normalize to directed higher -> lower edges
    edges = set()
    for p in pairs:
        edges.add((p.index_a, p.index_b) if p.sign == +1 else (p.index_b, p.index_a))
    closure = _closure(len(nodes), edges)
    if any((i, i) in closure for i in nodes):
        raise ValueError("rank pairs contain an ordering cycle")

    kept = []
    for p in pairs:
        u, v = (p.index_a, p.index_b) if p.sign == +1 else (p.index_b, p.index_a)
        redundant = any(
            w != u and w != v and (u, w) in closure and (w, v) in closure
            for w in nodes
        )
        if not redundant:
            kept.append(p)
    return kept


@dataclass
class PairBudget:
    """Cap on the total number of ranking pairs consumed during training."""

    max_pairs: int

    def __post_init__(self):
        if self.max_pairs <= 0:
            raise ValueError(f"pair budget must be positive, got {self.max_pairs}")


class PairBudgetTracker:
    """Single-owner counter enforcing a pair budget across training steps.

    In ``distinct`` mode only previously unseen unordered id pairs count
    against the budget; otherwise every consumed pair counts, repeats
    included.
    """

    def __init__(self, budget: PairBudget, distinct: bool = False):
        self.budget = budget
        self.distinct = distinct
        self.consumed = 0
        self._seen: set[frozenset] = set() if distinct else None

    @property
    def remaining(self) -> int:
        return self.budget.max_pairs - self.consumed

    @property
    def exhausted(self) -> bool:
        return self.remaining <= 0

    def request(self, n: int, ids: Sequence[tuple] | None = None) -> int:
        """Ask to consume ``n`` pairs; returns how many are granted (0..n).

        In distinct mode ``ids`` must carry one (id_a, id_b) per requested
        pair so repeats can be recognized; repeats are granted for free.
        """
        if n < 0:
            raise ValueError("cannot request a negative number of pairs")
        if not self.distinct:
            granted = min(n, self.remaining)
            self.consumed += granted
            return granted
        if ids is None or len(ids) != n:
            raise ValueError("distinct mode needs one id pair per requested pair")
        granted = 0
        for key in (frozenset(p) for p in ids):
            if key in self._seen:
                granted += 1
            elif self.remaining > 0:
                self._seen.add(key)
                self.consumed += 1
                granted += 1
            else:
                break
        return granted
