"""Independent reference implementations used to check the package.

Everything here is written straight from the definitions (pure Python,
no shared code with the package) so the two sides can disagree.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence


def brute_force_recommend(
    student_ids: Sequence[str],
    resource_ids: Sequence[str],
    cells: Mapping[tuple[str, str], float],
    student_id: str,
    k: int,
    neighborhood: int,
) -> list[tuple[str, float]]:
    """Score every unseen resource directly from the CF definition."""

    def row(sid: str) -> list[float]:
        return [cells.get((sid, rid), 0.0) for rid in resource_ids]

    def cosine(u: list[float], v: list[float]) -> float:
        dot = sum(a * b for a, b in zip(u, v))
        nu = math.sqrt(sum(a * a for a in u))
        nv = math.sqrt(sum(b * b for b in v))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return dot / (nu * nv)

    query = row(student_id)
    observed = {rid for (sid, rid) in cells if sid == student_id}
    candidates = [rid for rid in resource_ids if rid not in observed]

    sims = []
    for sid in student_ids:
        if sid == student_id:
            continue
        sims.append((cosine(query, row(sid)), sid))
    peers = sorted([p for p in sims if p[0] > 0.0], key=lambda p: (-p[0], p[1]))[:neighborhood]

    scored = []
    if peers:
        for rid in candidates:
            num = 0.0
            den = 0.0
            for sim, sid in peers:
                if (sid, rid) in cells:
                    num += sim * cells[(sid, rid)]
                    den += sim
            if den > 0.0:
                scored.append((rid, num / den))
    else:
        for rid in candidates:
            values = [v for (sid, r), v in cells.items() if r == rid]
            if values:
                scored.append((rid, sum(values) / len(values)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def value_iteration(
    next_states: Sequence[Sequence[int]],
    rewards: Sequence[Sequence[float]],
    terminal: frozenset[int] | set[int],
    gamma: float,
    tol: float = 1e-12,
    max_iters: int = 1_000_000,
) -> list[list[float]]:
    """Optimal Q values of a deterministic finite MDP."""
    n_states = len(next_states)
    n_actions = len(next_states[0])
    q = [[0.0] * n_actions for _ in range(n_states)]
    for _ in range(max_iters):
        delta = 0.0
        for s in range(n_states):
            if s in terminal:
                continue
            for a in range(n_actions):
                s2 = next_states[s][a]
                if s2 in terminal:
                    target = rewards[s][a]
                else:
                    target = rewards[s][a] + gamma * max(q[s2])
                delta = max(delta, abs(target - q[s][a]))
                q[s][a] = target
        if delta < tol:
            break
    return q


def confusion_f1(
    predicted: Mapping[str, bool], actual: Mapping[str, bool]
) -> tuple[float, float, float]:
    """Precision/recall/F1 by explicit confusion-matrix counting."""
    tp = fp = fn = 0
    for key in predicted:
        p, a = predicted[key], actual[key]
        if p and a:
            tp += 1
        elif p and not a:
            fp += 1
        elif not p and a:
            fn += 1
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def polyfit_slope(points: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope via the closed form, coded independently."""
    n = len(points)
    if n < 2:
        return 0.0
    mean_x = sum(x for x, _ in points) / n
    mean_y = sum(y for _, y in points) / n
    num = sum((x - mean_x) * (y - mean_y) for x, y in points)
    den = sum((x - mean_x) ** 2 for x, _ in points)
    if den == 0.0:
        return 0.0
    return num / den


def match_rate_oracle(
    ours: Mapping[tuple[str, str], float], theirs: Mapping[tuple[str, str], float]
) -> float:
    agreed = sum(1 for pair in ours if ours[pair] == theirs[pair])
    return agreed / len(ours)
