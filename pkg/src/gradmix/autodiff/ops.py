"""Thin functional front end over ``Graph.apply``."""

from __future__ import annotations

from .graph import Node


def _apply(kind, *inputs, **params) -> Node:
    return inputs[0].graph.apply(kind, *inputs, **params)


def add(a, b):
    return _apply("add", a, b)


def mul(a, b):
    return _apply("mul", a, b)


def scale(x, factor):
    return _apply("scale", x, factor=float(factor))


def relu(x):
    return _apply("relu", x)


def log(x):
    return _apply("log", x)


def exp(x):
    return _apply("exp", x)


def sum(x, axis=None):
    return _apply("sum", x, axis=axis)


def mean(x, axis=None):
    return _apply("mean", x, axis=axis)


def logsumexp(x, mask=None):
    return _apply("logsumexp", x, mask=mask)


def reshape(x, shape):
    return _apply("reshape", x, shape=tuple(shape))


def take_rows(x, index):
    return _apply("take_rows", x, index=index)


def subsample_pad(x, stride, channels):
    return _apply("subsample_pad", x, stride=stride, channels=channels)


def matmul(a, b):
    return _apply("matmul", a, b)


def dense(x, w, b=None):
    return _apply("dense", x, w) if b is None else _apply("dense", x, w, b)


def l2_normalize(x):
    return _apply("l2_normalize", x)


def cosine_similarity(a, b):
    return _apply("cosine_similarity", a, b)


def conv2d(x, w, b=None, stride=1, padding=0):
    inputs = (x, w) if b is None else (x, w, b)
    return _apply("conv2d", *inputs, stride=stride, padding=padding)


def max_pool2(x):
    return _apply("max_pool2", x)


def global_avg_pool(x):
    return _apply("global_avg_pool", x)


def batch_norm2d(x, gamma, beta, state, training=True, update=True):
    return _apply("batch_norm2d", x, gamma, beta, state=state, training=training, update=update)


def bilinear_resize(x, size):
    return _apply("bilinear_resize", x, size=size)
