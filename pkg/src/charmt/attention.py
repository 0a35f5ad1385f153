"""Soft alignment between target contexts and source context vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Graph, Node, NumericsError, ParamStore


@dataclass(frozen=True)
class AttentionParams:
    """``W_t (d_z, d_target)``, ``W_s (d_z, d_source)`` and score vector ``v (d_z,)``."""

    prefix: str
    d_target: int
    d_source: int
    d_z: int

    @property
    def W_t(self):
        return f"{self.prefix}.W_t"

    @property
    def W_s(self):
        return f"{self.prefix}.W_s"

    @property
    def v(self):
        return f"{self.prefix}.v"

    def init(self, store: ParamStore, rng, scale=0.1):
        store.uniform(self.W_t, (self.d_z, self.d_target), rng, scale)
        store.uniform(self.W_s, (self.d_z, self.d_source), rng, scale)
        store.uniform(self.v, (self.d_z,), rng, scale)


def source_keys(graph: Graph, p: AttentionParams, B: Node) -> Node:
    """``W_s b_i`` for every source context; independent of the target side."""
    if B.value.shape[1] != p.d_source:
        raise NumericsError(f"source vectors have dim {B.value.shape[1]}, expected {p.d_source}")
    return nx.linear(graph, B, graph.param(p.W_s))


def attend(graph: Graph, p: AttentionParams, L: Node, B: Node, keys: Node | None = None):
    """Attention for each row of ``L`` over the rows of ``B``.

    Returns ``(log_coefficients, coefficients, context)`` with shapes
    ``(m, n)``, ``(m, n)`` and ``(m, d_source)``.  ``keys`` may carry a
    precomputed :func:`source_keys` result.
    """
    if B.value.shape[0] < 1:
        raise NumericsError("attend needs at least one source vector")
    if L.value.shape[1] != p.d_target:
        raise NumericsError(f"target vector has dim {L.value.shape[1]}, expected {p.d_target}")
    if keys is None:
        keys = source_keys(graph, p, B)
    query = nx.linear(graph, L, graph.param(p.W_t))
    z = nx.additive_scores(graph, query, keys, graph.param(p.v))
    log_a = nx.log_softmax(graph, z)
    a = nx.exp(graph, log_a)
    ctx = _weighted_rows(graph, a, B)
    return log_a, a, ctx


def _weighted_rows(graph, a: Node, B: Node) -> Node:
    av, bv = a.value, B.value

    def backward(g):
        return g @ bv.T, av.T @ g

    return graph.add_node(av @ bv, (a, B), backward)


def supervision_term(graph: Graph, log_a: Node, links, weight: float) -> Node | None:
    """``-weight * sum log a[row, col]`` over ``(row, col)`` links, or None without links."""
    links = list(links)
    if not links or weight == 0:
        return None
    r, c = zip(*links)
    n_rows, n_cols = log_a.value.shape
    if max(r) >= n_rows or max(c) >= n_cols or min(r) < 0 or min(c) < 0:
        raise NumericsError("supervision link out of range")
    return nx.scale(graph, nx.pick(graph, log_a, r, c), -weight)


def supervision_penalty(coefficients, index, weight=1.0) -> float:
    """``-weight * log a_k`` for the aligned source index, 0 when there is none."""
    a = np.asarray(coefficients, dtype=float)
    if index is None:
        return 0.0
    if not 0 <= index < a.size:
        raise IndexError(f"aligned index {index} out of range for {a.size} coefficients")
    return -weight * math.log(a[index])
