"""Contribution scoring for local models.

A coalition ``S`` of local models is valued by the accuracy of their
equal-weight FedAvg on the evaluator's test set; the empty coalition is the
all-zero (uniform) model.  The cooperative-game routines take the value
function directly so they can be checked against constructed games.

If ``value`` returns ``fractions.Fraction`` the exact routines stay exact.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .learning import Dataset, ModelParams, evaluate, fedavg

ValueFn = Callable[[frozenset], float]

MAX_EXACT_PLAYERS = 10
BASIS_POINTS = 10000


def to_basis_points(accuracy: float) -> int:
    """floor(accuracy * 10000), clamped at zero."""
    return max(0, math.floor(accuracy * BASIS_POINTS))


def accuracy_bp(correct: int, total: int) -> int:
    # integer arithmetic: no float rounding at exact boundaries
    return correct * BASIS_POINTS // total


def leave_one_out(value: ValueFn, n: int) -> list:
    grand = frozenset(range(n))
    v_all = value(grand)
    return [v_all - value(grand - {i}) for i in range(n)]


def shapley_exact(value: ValueFn, n: int) -> list:
    """Shapley values via the subset formulation (2^n value calls)."""
    if n > MAX_EXACT_PLAYERS:
        raise ValueError(f"exact Shapley supports at most {MAX_EXACT_PLAYERS} players")
    players = range(n)
    cache: dict[frozenset, float] = {}

    def v(s: frozenset):
        if s not in cache:
            cache[s] = value(s)
        return cache[s]

    weights = [Fraction(math.factorial(s) * math.factorial(n - s - 1), math.factorial(n)) for s in range(n)]
    phi = []
    for i in players:
        others = [j for j in players if j != i]
        total = 0
        for size in range(n):
            w = weights[size]
            for combo in itertools.combinations(others, size):
                s = frozenset(combo)
                marginal = v(s | {i}) - v(s)
                total += w * marginal if isinstance(marginal, Fraction) else float(w) * marginal
        phi.append(total)
    return phi


def shapley_monte_carlo(value: ValueFn, n: int, samples: int, seed: int) -> list[float]:
    """Mean marginal contribution over ``samples`` random orderings."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng([seed, 0x7368])
    cache: dict[frozenset, float] = {}

    def v(s: frozenset) -> float:
        if s not in cache:
            cache[s] = float(value(s))
        return cache[s]

    phi = np.zeros(n)
    for _ in range(samples):
        coalition: frozenset = frozenset()
        prev = v(coalition)
        for i in rng.permutation(n):
            coalition = coalition | {int(i)}
            cur = v(coalition)
            phi[i] += cur - prev
            prev = cur
    return (phi / samples).tolist()


def coalition_value_fn(models: Sequence[ModelParams], test: Dataset) -> ValueFn:
    k, d = models[0].shape
    zero = ModelParams.zeros(k, d)

    def value(s: frozenset) -> float:
        if not s:
            return evaluate(zero, test).accuracy
        return evaluate(fedavg([models[i] for i in sorted(s)]), test).accuracy

    return value


def score_accuracy(models: Sequence[ModelParams], test: Dataset) -> list[int]:
    out = []
    for m in models:
        result = evaluate(m, test)
        out.append(accuracy_bp(result.correct, result.total))
    return out


def score_leave_one_out(models: Sequence[ModelParams], test: Dataset) -> list[float]:
    if len(models) < 2:
        raise ValueError("leave-one-out needs at least two models")
    return leave_one_out(coalition_value_fn(models, test), len(models))


def score_shapley(models: Sequence[ModelParams], test: Dataset, mode: str = "exact",
                  samples: int = 1000, seed: int = 0) -> list[float]:
    value = coalition_value_fn(models, test)
    if mode == "exact":
        return [float(p) for p in shapley_exact(value, len(models))]
    if mode == "monte_carlo":
        return shapley_monte_carlo(value, len(models), samples, seed)
    raise ValueError(f"unknown Shapley mode {mode!r}")
