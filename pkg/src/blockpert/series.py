"""Lazy, memoized, multivariate series of operator blocks.

A `BlockSeries` maps a block index ``(i, j)`` and an order multi-index
``(n_1, ..., n_k)`` to an operator. Entries are computed on first access by a
recurrence callback and stored, so that requesting additional orders reuses
all previous work. Structural zeros propagate as the ``zero`` sentinel and
are masked in range queries instead of being materialized.
"""

from __future__ import annotations

from itertools import product as cartesian
from typing import Any, Callable

import numpy as np

from blockpert.operators import Zero, adjoint, add, matmul, zero

__all__ = [
    "BlockSeries",
    "RecurrenceCycleError",
    "cauchy_product",
    "series_adjoint",
    "orders_up_to",
]

# Stack of (series name, key) of evaluations in flight, for cycle reports.
_EVAL_STACK: list[tuple[str, tuple]] = []


class RecurrenceCycleError(RuntimeError):
    """A recurrence queried its own entry at equal order."""


def orders_up_to(max_orders: tuple[int, ...]):
    """Iterate multi-indices ``m <= max_orders`` componentwise, lexicographically."""
    return cartesian(*(range(n + 1) for n in max_orders))


def _decompositions(n: tuple[int, ...], parts: int):
    """All tuples of ``parts`` multi-indices summing to ``n``, lexicographically."""
    if parts == 1:
        yield (n,)
        return
    for m in orders_up_to(n):
        rest = tuple(a - b for a, b in zip(n, m))
        for tail in _decompositions(rest, parts - 1):
            yield (m,) + tail


class BlockSeries:
    """Memoized series of operator blocks with a recurrence callback.

    Parameters
    ----------
    eval :
        Callback ``(i, j, n_1, ..., n_k) -> operator`` computing an entry that
        is not yet stored. May query other series (and lower orders of series
        that depend on this one); self-reference at equal order is an error.
    shape :
        Number of block rows and columns ``(b, b)``.
    n_params :
        Number of perturbative parameters ``k``.
    data :
        Optional initial entries ``{(i, j, n_1, ..., n_k): operator}``.
    name :
        Label used in error messages and cycle reports.
    param_names :
        Optional labels of the perturbative parameters.
    large_blocks :
        Block labels whose basis is the large implicit space; products
        landing on such diagonal blocks are kept matrix-free.
    """

    def __init__(
        self,
        eval: Callable | None = None,
        shape: tuple[int, int] = (2, 2),
        n_params: int = 1,
        data: dict | None = None,
        name: str = "series",
        param_names: tuple[str, ...] | None = None,
        large_blocks: frozenset[int] = frozenset(),
    ):
        self.eval = eval
        self.shape = shape
        self.n_params = n_params
        self.name = name
        self.param_names = param_names or tuple(
            f"lambda_{i}" for i in range(n_params)
        )
        self.large_blocks = large_blocks
        self._data: dict[tuple, Any] = dict(data) if data else {}
        self._in_progress: set[tuple] = set()

    def __repr__(self):
        return (
            f"BlockSeries(name={self.name!r}, shape={self.shape}, "
            f"n_params={self.n_params})"
        )

    def get(self, block: tuple[int, int], order: tuple[int, ...]):
        """Memoized entry at one block and order."""
        key = (*block, *order)
        if key in self._data:
            return self._data[key]
        self._check_key(key)
        if key in self._in_progress:
            chain = " -> ".join(f"{name}{k}" for name, k in _EVAL_STACK)
            raise RecurrenceCycleError(
                f"{self.name}{key} queried while being evaluated: {chain}"
            )
        if self.eval is None:
            raise KeyError(f"{self.name}{key} has no stored value and no eval.")
        self._in_progress.add(key)
        _EVAL_STACK.append((self.name, key))
        try:
            value = self.eval(*key)
        finally:
            _EVAL_STACK.pop()
            self._in_progress.discard(key)
        if value is None:
            value = zero
        self._data[key] = value
        return value

    def __getitem__(self, key):
        """Entry access with numpy-style indexing.

        Integer keys return the stored operator (possibly ``zero``). Slices
        over order axes return a masked object array in which structural
        zeros are masked.
        """
        if not isinstance(key, tuple):
            key = (key,)
        if len(key) != 2 + self.n_params:
            raise IndexError(
                f"{self.name} expects {2 + self.n_params} indices, got {len(key)}."
            )
        if all(isinstance(k, (int, np.integer)) for k in key):
            return self.get((int(key[0]), int(key[1])), tuple(map(int, key[2:])))
        ranges = []
        for axis, k in enumerate(key):
            limit = self.shape[axis] if axis < 2 else None
            if isinstance(k, (int, np.integer)):
                ranges.append([int(k)])
            elif isinstance(k, slice):
                if axis >= 2 and k.stop is None:
                    raise IndexError("Order slices must be bounded.")
                stop = k.stop if k.stop is not None else limit
                ranges.append(list(range(*k.indices(stop))))
            else:
                raise IndexError(f"Unsupported index {k!r}.")
        result_shape = tuple(len(r) for r in ranges)
        values = np.empty(result_shape, dtype=object)
        mask = np.zeros(result_shape, dtype=bool)
        for pos in cartesian(*(range(len(r)) for r in ranges)):
            entry_key = tuple(r[p] for r, p in zip(ranges, pos))
            value = self.get(entry_key[:2], entry_key[2:])
            if isinstance(value, Zero):
                mask[pos] = True
            else:
                values[pos] = value
        return np.ma.masked_array(values, mask=mask).squeeze()

    def stored_keys(self):
        """Keys of all memoized entries."""
        return set(self._data)

    def clear(self):
        """Drop all memoized entries (retention control)."""
        self._data.clear()

    def _check_key(self, key):
        i, j = key[:2]
        if not (0 <= i < self.shape[0] and 0 <= j < self.shape[1]):
            raise IndexError(f"Block {key[:2]} outside shape {self.shape}.")
        orders = key[2:]
        if len(orders) != self.n_params or any(n < 0 for n in orders):
            raise IndexError(f"Invalid order index {orders} for {self.name}.")


def cauchy_product(
    *factors: BlockSeries,
    name: str = "product",
) -> BlockSeries:
    """Block-contracting Cauchy product of series.

    The entry at order ``n`` sums, over all decompositions ``m_1 + ... + m_F
    = n`` and all internal block paths, the chained products of the factor
    entries. Terms containing a structural zero are skipped without
    arithmetic; the factor entries of each term are queried in increasing
    total order so that a vanishing low-order factor suppresses queries to
    the high-order ones.
    """
    if not factors:
        raise ValueError("Need at least one factor.")
    n_params = factors[0].n_params
    for left, right in zip(factors, factors[1:]):
        if left.shape[1] != right.shape[0]:
            raise ValueError(
                f"Block shape mismatch: {left.shape} @ {right.shape}."
            )
        if right.n_params != n_params:
            raise ValueError("Factors have different numbers of parameters.")
    shape = (factors[0].shape[0], factors[-1].shape[1])
    large = frozenset().union(*(f.large_blocks for f in factors))

    def eval(*key):
        i, j = key[:2]
        n = key[2:]
        paths = cartesian(*(range(f.shape[1]) for f in factors[:-1]))
        result = zero
        for path in paths:
            blocks = list(zip((i,) + path, path + (j,)))
            for parts in _decompositions(n, len(factors)):
                term = _evaluate_term(factors, blocks, parts, large)
                result = add(result, term)
        return result

    product = BlockSeries(
        eval=eval,
        shape=shape,
        n_params=n_params,
        name=name,
        param_names=factors[0].param_names,
        large_blocks=large,
    )
    product.factors = factors
    return product


def _evaluate_term(factors, blocks, parts, large_blocks):
    """One summand of a Cauchy product, with zero short-circuiting."""
    by_total = sorted(range(len(factors)), key=lambda f: (sum(parts[f]), f))
    values: list[Any] = [None] * len(factors)
    for f in by_total:
        value = factors[f].get(blocks[f], parts[f])
        if isinstance(value, Zero):
            return zero
        values[f] = value
    result = values[0]
    row = blocks[0][0]
    for value, (_, col) in zip(values[1:], blocks[1:]):
        lazy = row in large_blocks and col in large_blocks
        result = matmul(result, value, lazy=lazy)
    return result


def series_adjoint(series: BlockSeries, name: str | None = None) -> BlockSeries:
    """Adjoint series; delegates to the transposed block of the original.

    No products are performed: the entry ``(i, j, n)`` is the conjugate
    transpose of the original ``(j, i, n)`` entry, so memoized values are
    reused rather than recomputed.
    """

    def eval(*key):
        i, j = key[:2]
        return adjoint(series.get((j, i), key[2:]))

    return BlockSeries(
        eval=eval,
        shape=(series.shape[1], series.shape[0]),
        n_params=series.n_params,
        name=name or series.name + "†",
        param_names=series.param_names,
        large_blocks=series.large_blocks,
    )
