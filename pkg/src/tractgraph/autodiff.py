"""Dense float64 arrays with tape-based reverse-mode differentiation.

A `Tape` records one forward pass and is discarded after `backward`; model
parameters are plain `Tensor` leaves that outlive tapes. Gradients always
accumulate (`+=`) so parameters shared between several ops collect the full
gradient; callers zero them between optimizer steps. A tape and the tensors
flowing through it belong to a single thread; independent tapes may run
concurrently.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import ConfigError, InputError, TrainingError

PARAMS_FORMAT_VERSION = 1


class Tensor:
    """n-dimensional float64 value plus a same-shape gradient buffer."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim and not v.flags.c_contiguous:
            # ascontiguousarray would promote 0-d scalars to shape (1,).
            v = np.ascontiguousarray(v)
        self.values = v
        self.grad = np.zeros_like(self.values)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.values.shape}, requires_grad={self.requires_grad})"


def param(values, name: str | None = None) -> Tensor:
    """Trainable leaf tensor."""
    return Tensor(values, requires_grad=True, name=name)


class ScatterPlan:
    """Precomputed segment-sum structure for the backward pass of gather_rows.

    Sorting the gather indices once lets the backward scatter-add run as a
    single reduceat instead of np.add.at, which matters in the edge-gather
    hot path.
    """

    __slots__ = ("idx", "n_rows", "perm", "starts", "targets")

    def __init__(self, idx, n_rows: int):
        idx = np.ascontiguousarray(idx, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ConfigError("gather index must be a non-empty 1-D array")
        if idx.min() < 0 or idx.max() >= n_rows:
            raise ConfigError(f"gather index out of range [0, {n_rows})")
        self.idx = idx
        self.n_rows = n_rows
        perm = np.argsort(idx, kind="stable")
        sorted_idx = idx[perm]
        self.perm = perm
        self.starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
        self.targets = sorted_idx[self.starts]

    def scatter_add(self, out: np.ndarray, g: np.ndarray) -> None:
        out[self.targets] += np.add.reduceat(g[self.perm], self.starts, axis=0)


def _require_2d(t: Tensor, op: str) -> None:
    if t.values.ndim != 2:
        raise ConfigError(f"{op}: expected a 2-D tensor, got shape {t.values.shape}")


class Tape:
    """Ordered record of one forward pass; `backward` replays it in reverse."""

    def __init__(self):
        self._backs: list[Callable[[], None]] = []

    def _out(self, values) -> Tensor:
        return Tensor(values)

    def backward(self, loss: Tensor, seed: float = 1.0) -> None:
        """Accumulate d(seed * loss)/d(leaf) into every upstream .grad."""
        loss.grad += seed
        for back in reversed(self._backs):
            back()

    # ---- elementwise / shape ----

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ConfigError(f"add: shape mismatch {a.shape} vs {b.shape}")
        out = self._out(a.values + b.values)

        def back():
            a.grad += out.grad
            b.grad += out.grad

        self._backs.append(back)
        return out

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ConfigError(f"sub: shape mismatch {a.shape} vs {b.shape}")
        out = self._out(a.values - b.values)

        def back():
            a.grad += out.grad
            b.grad -= out.grad

        self._backs.append(back)
        return out

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ConfigError(f"mul: shape mismatch {a.shape} vs {b.shape}")
        out = self._out(a.values * b.values)

        def back():
            a.grad += out.grad * b.values
            b.grad += out.grad * a.values

        self._backs.append(back)
        return out

    def scale_const(self, a: Tensor, c: float) -> Tensor:
        out = self._out(a.values * c)

        def back():
            a.grad += out.grad * c

        self._backs.append(back)
        return out

    def scale_scalar(self, a: Tensor, s: Tensor) -> Tensor:
        """Multiply by a learnable scalar (0-d tensor)."""
        if s.values.shape != ():
            raise ConfigError(f"scale_scalar: scale must be 0-d, got {s.values.shape}")
        out = self._out(a.values * s.values)

        def back():
            a.grad += out.grad * s.values
            s.grad += np.sum(out.grad * a.values)

        self._backs.append(back)
        return out

    def scale_rows(self, a: Tensor, s: Tensor) -> Tensor:
        """Scale each row of a (N, d) tensor by the matching (N, 1) scalar."""
        _require_2d(a, "scale_rows")
        if s.values.shape != (a.shape[0], 1):
            raise ConfigError(f"scale_rows: expected scale shape ({a.shape[0]}, 1), got {s.values.shape}")
        out = self._out(a.values * s.values)

        def back():
            a.grad += out.grad * s.values
            s.grad += np.sum(out.grad * a.values, axis=1, keepdims=True)

        self._backs.append(back)
        return out

    def concat_cols(self, a: Tensor, b: Tensor) -> Tensor:
        _require_2d(a, "concat_cols")
        _require_2d(b, "concat_cols")
        if a.shape[0] != b.shape[0]:
            raise ConfigError(f"concat_cols: row mismatch {a.shape} vs {b.shape}")
        out = self._out(np.concatenate([a.values, b.values], axis=1))
        na = a.shape[1]

        def back():
            a.grad += out.grad[:, :na]
            b.grad += out.grad[:, na:]

        self._backs.append(back)
        return out

    def flatten(self, a: Tensor) -> Tensor:
        out = self._out(a.values.reshape(-1))
        shape = a.values.shape

        def back():
            a.grad += out.grad.reshape(shape)

        self._backs.append(back)
        return out

    def gather_rows(self, a: Tensor, idx) -> Tensor:
        """Select rows of a 2-D tensor; idx is an int array or a ScatterPlan."""
        _require_2d(a, "gather_rows")
        plan = idx if isinstance(idx, ScatterPlan) else None
        raw = plan.idx if plan is not None else np.ascontiguousarray(idx, dtype=np.int64)
        if plan is not None and plan.n_rows != a.shape[0]:
            raise ConfigError(f"gather_rows: plan built for {plan.n_rows} rows, tensor has {a.shape[0]}")
        out = self._out(a.values[raw])

        def back():
            if plan is not None:
                plan.scatter_add(a.grad, out.grad)
            else:
                np.add.at(a.grad, raw, out.grad)

        self._backs.append(back)
        return out

    def max_pool_rows(self, a: Tensor, n_groups: int, k: int) -> Tensor:
        """Coordinatewise max over k consecutive rows per group: (n*k, d) -> (n, d).

        Ties go to the first row of the group, so duplicated padding rows
        receive no gradient.
        """
        _require_2d(a, "max_pool_rows")
        if a.shape[0] != n_groups * k:
            raise ConfigError(f"max_pool_rows: {a.shape[0]} rows != {n_groups} groups x {k}")
        r = a.values.reshape(n_groups, k, a.shape[1])
        am = np.argmax(r, axis=1)
        out = self._out(np.take_along_axis(r, am[:, None, :], axis=1)[:, 0, :])

        def back():
            ge = np.zeros_like(r)
            np.put_along_axis(ge, am[:, None, :], out.grad[:, None, :], axis=1)
            a.grad += ge.reshape(a.shape)

        self._backs.append(back)
        return out

    # ---- linear algebra ----

    def matmul(self, a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
        _require_2d(a, "matmul")
        _require_2d(b, "matmul")
        bv = b.values.T if transpose_b else b.values
        if a.shape[1] != bv.shape[0]:
            raise ConfigError(f"matmul: inner dims {a.shape} vs {b.shape} (transpose_b={transpose_b})")
        out = self._out(a.values @ bv)

        def back():
            if transpose_b:
                a.grad += out.grad @ b.values
                b.grad += out.grad.T @ a.values
            else:
                a.grad += out.grad @ b.values.T
                b.grad += a.values.T @ out.grad

        self._backs.append(back)
        return out

    def linear(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        """y = x @ w + b for 1-D or 2-D x; gradients flow to x, w and b."""
        _require_2d(w, "linear")
        if b.values.ndim != 1 or b.shape[0] != w.shape[1]:
            raise ConfigError(f"linear: bias shape {b.shape} does not match weight {w.shape}")
        vec = x.values.ndim == 1
        x2 = x.values[None, :] if vec else x.values
        if x2.ndim != 2 or x2.shape[1] != w.shape[0]:
            raise ConfigError(f"linear: input shape {x.shape} does not match weight {w.shape}")
        y = x2 @ w.values + b.values
        out = self._out(y[0] if vec else y)

        def back():
            g2 = out.grad[None, :] if vec else out.grad
            w.grad += x2.T @ g2
            b.grad += g2.sum(axis=0)
            gx = g2 @ w.values.T
            x.grad += gx[0] if vec else gx

        self._backs.append(back)
        return out

    # ---- nonlinearities ----

    def leaky_relu(self, a: Tensor, slope: float = 0.01) -> Tensor:
        v = a.values
        out = self._out(np.where(v > 0, v, slope * v))

        def back():
            a.grad += np.where(v > 0, 1.0, slope) * out.grad

        self._backs.append(back)
        return out

    def relu(self, a: Tensor) -> Tensor:
        v = a.values
        out = self._out(np.maximum(v, 0.0))

        def back():
            a.grad += (v > 0) * out.grad

        self._backs.append(back)
        return out

    def tanh(self, a: Tensor) -> Tensor:
        t = np.tanh(a.values)
        out = self._out(t)

        def back():
            a.grad += (1.0 - t * t) * out.grad

        self._backs.append(back)
        return out

    def sigmoid(self, a: Tensor) -> Tensor:
        v = a.values
        # Split by sign to avoid overflow in exp.
        s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
        out = self._out(s)

        def back():
            a.grad += s * (1.0 - s) * out.grad

        self._backs.append(back)
        return out

    def softmax_rows(self, a: Tensor) -> Tensor:
        """Row-wise softmax with max-subtraction for stability."""
        _require_2d(a, "softmax_rows")
        shifted = a.values - a.values.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)
        out = self._out(p)

        def back():
            gp = out.grad
            a.grad += p * (gp - np.sum(gp * p, axis=1, keepdims=True))

        self._backs.append(back)
        return out

    def layer_norm_rows(self, a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
        """Standardize each row, then apply per-feature gain and bias.

        eps is small enough that standardization is idempotent to ~1e-12 on
        O(1)-variance rows.
        """
        _require_2d(a, "layer_norm_rows")
        d = a.shape[1]
        if gain.values.shape != (d,) or bias.values.shape != (d,):
            raise ConfigError(f"layer_norm_rows: gain/bias must have shape ({d},)")
        mu = a.values.mean(axis=1, keepdims=True)
        xc = a.values - mu
        var = np.mean(xc * xc, axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out = self._out(xhat * gain.values + bias.values)

        def back():
            g = out.grad
            gain.grad += np.sum(g * xhat, axis=0)
            bias.grad += np.sum(g, axis=0)
            gx = g * gain.values
            a.grad += (inv / d) * (d * gx - gx.sum(axis=1, keepdims=True) - xhat * np.sum(gx * xhat, axis=1, keepdims=True))

        self._backs.append(back)
        return out

    # ---- reductions / losses ----

    def sum_all(self, a: Tensor) -> Tensor:
        out = self._out(np.sum(a.values))

        def back():
            a.grad += out.grad

        self._backs.append(back)
        return out

    def cross_entropy_logits(self, logits: Tensor, label: int) -> Tensor:
        """-log softmax(logits)[label], computed via log-sum-exp."""
        v = logits.values
        if v.ndim != 1:
            raise ConfigError(f"cross_entropy_logits: logits must be 1-D, got {v.shape}")
        if not 0 <= label < v.shape[0]:
            raise ConfigError(f"cross_entropy_logits: label {label} out of range for {v.shape[0]} classes")
        m = v.max()
        e = np.exp(v - m)
        z = e.sum()
        out = self._out(m + np.log(z) - v[label])

        def back():
            p = e / z
            p[label] -= 1.0
            logits.grad += out.grad * p

        self._backs.append(back)
        return out


class Adam:
    """Bias-corrected Adam over a named parameter dict.

    Per-parameter first/second moments live here; step() applies the update
    in place and leaves gradients untouched (callers zero them).
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter '{name}' at step {self.step_count}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad[...] = 0.0


def grad_check(build_loss: Callable[[Tape], Tensor], params: dict[str, Tensor],
               eps: float = 1e-5, max_coords_per_param: int | None = None,
               seed: int = 0, tiny: float = 1e-12) -> float:
    """Compare tape gradients of a scalar loss against central differences.

    build_loss is called with a fresh tape and must return a 0-d tensor that
    depends on the current values of `params`. Returns the max over checked
    coordinates of |analytic - central| / max(tiny, |analytic| + |central|).
    When max_coords_per_param is set, a seeded random subset of coordinates
    is checked per parameter instead of every entry. Raising `tiny` turns
    the comparison absolute for coordinates whose gradient sits below that
    scale, where the central difference is dominated by rounding noise.
    """
    for p in params.values():
        p.grad[...] = 0.0
    tape = Tape()
    loss = build_loss(tape)
    if loss.values.shape != ():
        raise ConfigError(f"grad_check: loss must be 0-d, got shape {loss.values.shape}")
    if not np.isfinite(loss.values):
        raise TrainingError("grad_check: loss is non-finite at the unperturbed point")
    tape.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def eval_loss() -> float:
        return float(build_loss(Tape()).values)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.values.reshape(-1)
        n = flat.shape[0]
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        aflat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fplus = eval_loss()
            flat[i] = orig - eps
            fminus = eval_loss()
            flat[i] = orig
            if not (math.isfinite(fplus) and math.isfinite(fminus)):
                raise TrainingError(f"grad_check: non-finite loss perturbing '{name}'[{i}]")
            central = (fplus - fminus) / (2.0 * eps)
            a = aflat[i]
            rel = abs(a - central) / max(tiny, abs(a) + abs(central))
            if rel > worst:
                worst = rel
    return worst


# ---- parameter snapshots ----

def params_to_jsonable(params: dict[str, Tensor]) -> dict:
    """Versioned name -> {shape, values} map; floats round-trip via repr."""
    return {
        "format_version": PARAMS_FORMAT_VERSION,
        "params": {
            name: {"shape": list(p.values.shape), "values": p.values.reshape(-1).tolist()}
            for name, p in params.items()
        },
    }


def params_from_jsonable(obj: dict) -> dict[str, Tensor]:
    version = obj.get("format_version")
    if version != PARAMS_FORMAT_VERSION:
        raise InputError(f"unsupported parameter snapshot format_version: {version!r}")
    out: dict[str, Tensor] = {}
    for name, entry in obj["params"].items():
        values = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        out[name] = Tensor(values, requires_grad=True, name=name)
    return out


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise TrainingError(f"non-finite values in {name}")
