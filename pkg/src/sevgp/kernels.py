"""Covariance functions and Gram-matrix construction.

Kernels are small immutable dataclasses. Gram matrices of plain numpy
inputs are computed with numpy; as soon as an input or a hyperparameter
is a JAX array (a tracer, while an objective is being differentiated) the
same code runs on ``jax.numpy``.

Lengthscale convention: every squared-exponential form divides by the
squared lengthscale and carries the 0.5 factor,

    se(x, x')  = a     * exp(-0.5 * |x - x'|^2 / l^2)
    ard(x, x') = theta * exp(-0.5 * sum_k (x_k - x'_k)^2 / l_k^2)

so that a one-dimensional ``Ard`` equals ``SqExp`` with the same values.

Kernels can be written as text, e.g. ``sum(constant(1.0), se(a=0.5, l=1.0,
fixed=(a,)))``. See :func:`parse_kernel` for the grammar.
"""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass
from typing import Union

import jax
import jax.numpy as jnp
import numpy as np

MAX_DEPTH = 4


def _concrete(value) -> bool:
    return not isinstance(value, jax.core.Tracer)


def _check_positive(name, value, allow_zero=False):
    if not _concrete(value):
        return
    arr = np.asarray(value, dtype=float)
    bad = arr < 0 if allow_zero else arr <= 0
    if np.any(bad) or not np.all(np.isfinite(arr)):
        kind = "nonnegative" if allow_zero else "positive"
        raise ValueError(f"{name} must be finite and {kind}, got {value!r}")


def _check_fixed(fixed, names):
    unknown = set(fixed) - set(names)
    if unknown:
        raise ValueError(f"unknown hyperparameter(s) in fixed: {sorted(unknown)}")


@dataclass(frozen=True)
class Constant:
    c: float = 1.0
    fixed: tuple = ("c",)

    names = ("c",)

    def __post_init__(self):
        object.__setattr__(self, "fixed", tuple(self.fixed))
        _check_fixed(self.fixed, self.names)
        _check_positive("constant c", self.c, allow_zero="c" in self.fixed)


@dataclass(frozen=True)
class SqExp:
    """Isotropic squared-exponential kernel with amplitude ``a``."""

    a: float = 1.0
    l: float = 1.0
    fixed: tuple = ()

    names = ("a", "l")

    def __post_init__(self):
        object.__setattr__(self, "fixed", tuple(self.fixed))
        _check_fixed(self.fixed, self.names)
        _check_positive("amplitude a", self.a)
        _check_positive("lengthscale l", self.l)


@dataclass(frozen=True)
class Ard:
    """Squared-exponential kernel with one lengthscale per input dimension."""

    theta: float = 1.0
    l: tuple = (1.0,)
    fixed: tuple = ()

    names = ("theta", "l")

    def __post_init__(self):
        object.__setattr__(self, "fixed", tuple(self.fixed))
        if _concrete(self.l):
            object.__setattr__(self, "l", tuple(float(v) for v in np.ravel(self.l)))
            if len(self.l) == 0:
                raise ValueError("ard needs at least one lengthscale")
        _check_fixed(self.fixed, self.names)
        _check_positive("amplitude theta", self.theta)
        _check_positive("lengthscales l", self.l)

    @property
    def dim(self) -> int:
        return int(np.shape(self.l)[0]) if not _concrete(self.l) else len(self.l)


@dataclass(frozen=True)
class Polynomial:
    """Homogeneous polynomial kernel (x . x')^degree, no hyperparameters."""

    degree: int = 2

    names = ()
    fixed = ()

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError(f"degree must be a positive integer, got {self.degree!r}")


@dataclass(frozen=True)
class Sum:
    children: tuple

    names = ()
    fixed = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ValueError("sum kernel needs at least one child")
        if depth(self) > MAX_DEPTH:
            raise ValueError(f"kernel nesting deeper than {MAX_DEPTH}")


KernelSpec = Union[Constant, SqExp, Ard, Polynomial, Sum]


def depth(k: KernelSpec) -> int:
    if isinstance(k, Sum):
        return 1 + max(depth(c) for c in k.children)
    return 1


def input_dim(k: KernelSpec):
    """Required input dimension, or None when any dimension is accepted."""
    if isinstance(k, Ard):
        return k.dim
    if isinstance(k, Sum):
        dims = {d for d in (input_dim(c) for c in k.children) if d is not None}
        if len(dims) > 1:
            raise ValueError(f"sum children disagree on input dimension: {dims}")
        return dims.pop() if dims else None
    return None


def _check_inputs(k, X, X2):
    if X.ndim != 2 or X2.ndim != 2:
        raise ValueError("inputs must be 2-d arrays (rows are points)")
    if X.shape[1] != X2.shape[1]:
        raise ValueError(f"column mismatch: {X.shape[1]} vs {X2.shape[1]}")
    d = input_dim(k)
    if d is not None and X.shape[1] != d:
        raise ValueError(f"kernel expects {d} input columns, got {X.shape[1]}")


def _is_jax(x) -> bool:
    return isinstance(x, jax.Array)


def _kernel_is_jax(k) -> bool:
    if isinstance(k, Sum):
        return any(_kernel_is_jax(c) for c in k.children)
    return any(_is_jax(getattr(k, name)) for name in k.names)


def _prepare(k, *arrays):
    """Array module for this evaluation plus the inputs as float arrays."""
    xp = jnp if _kernel_is_jax(k) or any(_is_jax(a) for a in arrays) else np
    return xp, [xp.asarray(a, dtype=float) for a in arrays]


def _sqdist(xp, X, X2):
    # explicit differences, not the |x|^2 - 2x.x' + |x'|^2 expansion:
    # exact zeros on the diagonal and no cancellation
    diff = X[:, None, :] - X2[None, :, :]
    return xp.sum(diff * diff, axis=-1)


def _gram(xp, k, X, X2):
    if isinstance(k, Constant):
        return k.c * xp.ones((X.shape[0], X2.shape[0]))
    if isinstance(k, SqExp):
        return k.a * xp.exp(-0.5 * _sqdist(xp, X, X2) / k.l**2)
    if isinstance(k, Ard):
        ls = xp.asarray(k.l)
        return k.theta * xp.exp(-0.5 * _sqdist(xp, X / ls, X2 / ls))
    if isinstance(k, Polynomial):
        return (X @ X2.T) ** k.degree
    if isinstance(k, Sum):
        out = _gram(xp, k.children[0], X, X2)
        for child in k.children[1:]:
            out = out + _gram(xp, child, X, X2)
        return out
    raise TypeError(f"not a kernel: {k!r}")


def gram(k: KernelSpec, X, X2=None):
    """Gram matrix with entries k(X[i], X2[j]); ``X2`` defaults to ``X``."""
    xp, (X, X2) = _prepare(k, X, X if X2 is None else X2)
    _check_inputs(k, X, X2)
    return _gram(xp, k, X, X2)


def gram_diag(k: KernelSpec, X):
    """Diagonal of ``gram(k, X, X)`` without forming the matrix."""
    xp, (X,) = _prepare(k, X)
    _check_inputs(k, X, X)
    return _diag(xp, k, X)


def _diag(xp, k, X):
    n = X.shape[0]
    if isinstance(k, Constant):
        return k.c * xp.ones(n)
    if isinstance(k, SqExp):
        return k.a * xp.ones(n)
    if isinstance(k, Ard):
        return k.theta * xp.ones(n)
    if isinstance(k, Polynomial):
        return xp.sum(X * X, axis=1) ** k.degree
    if isinstance(k, Sum):
        out = _diag(xp, k.children[0], X)
        for child in k.children[1:]:
            out = out + _diag(xp, child, X)
        return out
    raise TypeError(f"not a kernel: {k!r}")


def eval(k: KernelSpec, x, x2) -> float:  # noqa: A001 - mirrors k(x, x')
    """Evaluate the kernel at a single pair of points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise ValueError(f"point dimensions differ: {x.shape} vs {x2.shape}")
    return float(gram(k, x[None, :], x2[None, :])[0, 0])


# -- parameter packing -------------------------------------------------------


def _trainable(k):
    return [name for name in k.names if name not in k.fixed]


def n_params(k: KernelSpec) -> int:
    if isinstance(k, Sum):
        return sum(n_params(c) for c in k.children)
    count = 0
    for name in _trainable(k):
        count += int(np.size(getattr(k, name)))
    return count


def pack_params(k: KernelSpec):
    """Log of every trainable hyperparameter, in tree order."""
    if isinstance(k, Sum):
        parts = [pack_params(c) for c in k.children]
        return jnp.concatenate(parts) if parts else jnp.zeros(0)
    parts = [jnp.log(jnp.ravel(jnp.asarray(getattr(k, name), dtype=float))) for name in _trainable(k)]
    return jnp.concatenate(parts) if parts else jnp.zeros(0)


def unpack_params(k: KernelSpec, v) -> KernelSpec:
    """Inverse of :func:`pack_params`; ``v`` may be a traced array."""
    v = jnp.asarray(v, dtype=float) if _concrete(v) else v
    if v.shape != (n_params(k),):
        raise ValueError(f"expected {n_params(k)} packed values, got shape {v.shape}")
    out, _ = _unpack(k, v, 0)
    return out


def _unpack(k, v, pos):
    if isinstance(k, Sum):
        children = []
        for child in k.children:
            child, pos = _unpack(child, v, pos)
            children.append(child)
        return Sum(tuple(children)), pos
    updates = {}
    for name in _trainable(k):
        size = int(np.size(getattr(k, name)))
        chunk = jnp.exp(v[pos:pos + size])
        pos += size
        if name == "l" and isinstance(k, Ard):
            updates[name] = _maybe_concrete(chunk, tuple_=True)
        else:
            updates[name] = _maybe_concrete(chunk[0])
    return (dataclasses.replace(k, **updates) if updates else k), pos


def _maybe_concrete(x, tuple_=False):
    if not _concrete(x):
        return x
    arr = np.asarray(x, dtype=float)
    return tuple(arr.tolist()) if tuple_ else float(arr)


def concrete(k: KernelSpec) -> KernelSpec:
    """Copy of ``k`` with JAX array fields converted to plain floats."""
    if isinstance(k, Sum):
        return Sum(tuple(concrete(c) for c in k.children))
    updates = {}
    for name in k.names:
        value = getattr(k, name)
        if isinstance(k, Ard) and name == "l":
            updates[name] = tuple(np.asarray(value, dtype=float).ravel().tolist())
        else:
            updates[name] = float(np.asarray(value))
    return dataclasses.replace(k, **updates) if updates else k


def allclose(k1: KernelSpec, k2: KernelSpec, atol: float = 1e-12) -> bool:
    """Structural equality with hyperparameters compared to ``atol``."""
    if type(k1) is not type(k2):
        return False
    if isinstance(k1, Sum):
        return len(k1.children) == len(k2.children) and all(
            allclose(a, b, atol) for a, b in zip(k1.children, k2.children)
        )
    if isinstance(k1, Polynomial):
        return k1.degree == k2.degree
    if k1.fixed != k2.fixed:
        return False
    for name in k1.names:
        a, b = np.asarray(getattr(k1, name)), np.asarray(getattr(k2, name))
        if a.shape != b.shape or not np.allclose(a, b, rtol=0, atol=atol):
            return False
    return True


# -- text form -----------------------------------------------------------------

_CALL_NAMES = {
    "constant": Constant,
    "const": Constant,
    "se": SqExp,
    "sqexp": SqExp,
    "ard": Ard,
    "poly": Polynomial,
    "polynomial": Polynomial,
    "sum": Sum,
}


_TEXT_NAMES = {Constant: "constant", SqExp: "se", Ard: "ard"}


def parse_kernel(text: str) -> KernelSpec:
    """Parse a kernel expression.

    Grammar (whitespace-insensitive)::

        kernel   := constant(c [, fixed=NAMES])     c fixed unless fixed=()
                  | se(a, l [, fixed=NAMES])
                  | ard(theta, [l1, ..., lK] [, fixed=NAMES])
                  | poly(degree)
                  | sum(kernel, kernel, ...)
        NAMES    := (name, ...) | name

    Arguments may be positional or keyword (``a=0.5``). Names listed in
    ``fixed`` are excluded from training.

    >>> parse_kernel("sum(constant(1.0), se(a=0.5, l=1.0, fixed=(a,)))")
    Sum(children=(Constant(c=1.0, fixed=('c',)), SqExp(a=0.5, l=1.0, fixed=('a',))))
    """
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse kernel expression {text!r}: {exc.msg}") from None
    return _from_ast(tree.body)


def _from_ast(node) -> KernelSpec:
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name):
        raise ValueError(f"expected a kernel call, got {ast.unparse(node)!r}")
    name = node.func.id.lower()
    cls = _CALL_NAMES.get(name)
    if cls is None:
        raise ValueError(f"unknown kernel {node.func.id!r}")
    if cls is Sum:
        if node.keywords:
            raise ValueError("sum() takes only kernel arguments")
        return Sum(tuple(_from_ast(arg) for arg in node.args))

    fields = [f.name for f in dataclasses.fields(cls)]
    kwargs = {}
    for field_name, arg in zip(fields, node.args):
        kwargs[field_name] = _literal(arg)
    if len(node.args) > len(fields):
        raise ValueError(f"too many arguments for {name}()")
    for kw in node.keywords:
        if kw.arg not in fields:
            raise ValueError(f"{name}() got unknown argument {kw.arg!r}")
        kwargs[kw.arg] = _names(kw.value) if kw.arg == "fixed" else _literal(kw.value)
    if cls is Ard and "l" in kwargs:
        kwargs["l"] = tuple(np.atleast_1d(kwargs["l"]).astype(float).tolist())
    if cls is Polynomial and "degree" in kwargs:
        kwargs["degree"] = int(kwargs["degree"])
    return cls(**kwargs)


def _literal(node):
    try:
        return ast.literal_eval(node)
    except ValueError:
        raise ValueError(f"expected a literal, got {ast.unparse(node)!r}") from None


def _names(node):
    if isinstance(node, ast.Name):
        return (node.id,)
    if isinstance(node, (ast.Tuple, ast.List)):
        return tuple(_names(elt)[0] for elt in node.elts)
    if isinstance(node, ast.Constant) and isinstance(node.value, str):
        return (node.value,)
    raise ValueError(f"bad fixed= value {ast.unparse(node)!r}")


def format_kernel(k: KernelSpec) -> str:
    """Text form understood by :func:`parse_kernel`, exact for float values."""
    k = concrete(k)
    if isinstance(k, Sum):
        return "sum(" + ", ".join(format_kernel(c) for c in k.children) + ")"
    if isinstance(k, Polynomial):
        return f"poly({k.degree})"
    if isinstance(k, Constant):
        args = [f"c={k.c!r}"]
    elif isinstance(k, SqExp):
        args = [f"a={k.a!r}", f"l={k.l!r}"]
    else:
        args = [f"theta={k.theta!r}", "l=[" + ", ".join(repr(v) for v in k.l) + "]"]
    default_fixed = Constant().fixed if isinstance(k, Constant) else ()
    if k.fixed != default_fixed:
        args.append("fixed=(" + "".join(f"{n}," for n in k.fixed) + ")")
    return f"{_TEXT_NAMES[type(k)]}(" + ", ".join(args) + ")"


# -- presets ---------------------------------------------------------------------


def const_se(a: float = 0.5, l: float = 1.0) -> Sum:
    """1 + a * se(l), with only the lengthscale trainable."""
    return Sum((Constant(1.0), SqExp(a=a, l=l, fixed=("a",))))


def const_ard(dim: int, theta: float = 2.0, l: float = 1.0) -> Sum:
    """1 + theta * ard(l_1..l_K), with only the lengthscales trainable."""
    return Sum((Constant(1.0), Ard(theta=theta, l=(l,) * dim, fixed=("theta",))))
