"""Seeded random smooth expressions for property tests."""

from __future__ import annotations

import random

UNARY = ("sin({})", "cos({})", "exp(sin({}))", "sqrt(1 + ({})^2)", "log(2 + cos({}))", "({})^2", "-({})")
BINARY = ("({}) + ({})", "({}) - ({})", "({}) * ({})", "({}) / (2 + sin({}))")


def random_expr(rng: random.Random, names, depth: int = 3) -> str:
    """An expression that is smooth and finite everywhere on R^n."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.7:
            return rng.choice(names)
        return repr(round(rng.uniform(-2, 2), 3))
    if rng.random() < 0.5:
        return rng.choice(UNARY).format(random_expr(rng, names, depth - 1))
    return rng.choice(BINARY).format(random_expr(rng, names, depth - 1), random_expr(rng, names, depth - 1))


def random_field(rng: random.Random, dim: int, depth: int = 2) -> list[str]:
    names = [f"x{i + 1}" for i in range(dim)]
    # bounded right-hand sides keep the flow tame over short finite-difference spans
    return [f"sin({random_expr(rng, names, depth)})" for _ in range(dim)]
