"""Reverse-mode gradient tape over numpy arrays.

Every op appends a node to the graph, so node order is a topological order
and the backward pass simply walks the list in reverse.
"""
from __future__ import annotations

import numpy as np


class Node:
    __slots__ = ("graph", "index", "op", "inputs", "value", "payload", "name")

    def __init__(self, graph, index, op, inputs, value, payload=None, name=None):
        self.graph = graph
        self.index = index
        self.op = op
        self.inputs = inputs
        self.value = value
        self.payload = payload
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return self.graph.add(self, other)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __mul__(self, other):
        return self.graph.mul(self, other)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)

    def __repr__(self):
        return f"Node({self.index}, {self.op}, shape={self.value.shape})"


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class ValueGraph:
    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def _push(self, op, inputs, value, payload=None, name=None) -> Node:
        node = Node(self, len(self.nodes), op, tuple(inputs), np.asarray(value, dtype=float), payload, name)
        self.nodes.append(node)
        return node

    def _lift(self, x) -> Node:
        if isinstance(x, Node):
            if x.graph is not self:
                raise ValueError("node belongs to a different graph")
            return x
        return self.const(x)

    # leaves
    def param(self, name: str, value) -> Node:
        node = self._push("param", (), value, name=name)
        self.params[name] = node
        return node

    def const(self, value) -> Node:
        return self._push("const", (), value)

    # ops
    def add(self, a, b):
        a, b = self._lift(a), self._lift(b)
        return self._push("add", (a, b), a.value + b.value)

    def sub(self, a, b):
        a, b = self._lift(a), self._lift(b)
        return self._push("sub", (a, b), a.value - b.value)

    def mul(self, a, b):
        a, b = self._lift(a), self._lift(b)
        return self._push("mul", (a, b), a.value * b.value)

    def matmul(self, a, b):
        a, b = self._lift(a), self._lift(b)
        return self._push("matmul", (a, b), a.value @ b.value)

    def silu(self, a):
        a = self._lift(a)
        sig = 1.0 / (1.0 + np.exp(-a.value))
        return self._push("silu", (a,), a.value * sig, payload=sig)

    def square(self, a):
        a = self._lift(a)
        return self._push("square", (a,), a.value * a.value)

    def sum(self, a):
        a = self._lift(a)
        return self._push("sum", (a,), a.value.sum())

    def mean(self, a):
        a = self._lift(a)
        return self._push("mean", (a,), a.value.mean())

    def rows(self, table, index):
        """Gather rows of a 2-D node: table[index]."""
        table = self._lift(table)
        index = np.asarray(index, dtype=np.intp)
        return self._push("rows", (table,), table.value[index], payload=index)

    # backward
    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        if loss.graph is not self:
            raise ValueError("loss node belongs to a different graph")
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        adj: list = [None] * (loss.index + 1)
        adj[loss.index] = np.ones_like(loss.value)

        def acc(node, g):
            i = node.index
            adj[i] = g if adj[i] is None else adj[i] + g

        for node in reversed(self.nodes[: loss.index + 1]):
            g = adj[node.index]
            if g is None or not node.inputs:
                continue
            op = node.op
            if op == "add":
                a, b = node.inputs
                acc(a, _unbroadcast(g, a.shape))
                acc(b, _unbroadcast(g, b.shape))
            elif op == "sub":
                a, b = node.inputs
                acc(a, _unbroadcast(g, a.shape))
                acc(b, _unbroadcast(-g, b.shape))
            elif op == "mul":
                a, b = node.inputs
                acc(a, _unbroadcast(g * b.value, a.shape))
                acc(b, _unbroadcast(g * a.value, b.shape))
            elif op == "matmul":
                a, b = node.inputs
                acc(a, g @ b.value.T)
                acc(b, a.value.T @ g)
            elif op == "silu":
                (a,) = node.inputs
                sig = node.payload
                acc(a, g * sig * (1.0 + a.value * (1.0 - sig)))
            elif op == "square":
                (a,) = node.inputs
                acc(a, 2.0 * g * a.value)
            elif op == "sum":
                (a,) = node.inputs
                acc(a, np.broadcast_to(g, a.shape).copy())
            elif op == "mean":
                (a,) = node.inputs
                acc(a, np.broadcast_to(g / a.value.size, a.shape).copy())
            elif op == "rows":
                (a,) = node.inputs
                full = np.zeros_like(a.value)
                np.add.at(full, node.payload, g)
                acc(a, full)
            else:  # pragma: no cover
                raise NotImplementedError(op)

        grads = {}
        for name, node in self.params.items():
            g = adj[node.index] if node.index < len(adj) else None
            grads[name] = np.zeros_like(node.value) if g is None else g
        return grads


def backward(graph: ValueGraph, loss: Node) -> dict[str, np.ndarray]:
    return graph.backward(loss)
