"""Minimal reverse-mode autodiff and the few network pieces the supervisor needs.

Scope is deliberately tiny: float64 vectors, dense blocks, a GRU cell, Adam,
and a finite-difference gradient checker.  Graphs are built per episode by the
training loop and freed afterwards; there is no general broadcasting, batching
or graph compilation.  numpy supplies array arithmetic only; every derivative
rule is written out here and verified against central differences.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


def seed_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


class Tensor:
    """Node in a tape-free reverse-mode graph (edges carried by closures)."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(
        self,
        data: Array,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[Array], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self._parents = parents
        self._backward = backward

    def _accum(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


def backward(loss: Tensor) -> None:
    """Backprop from a scalar loss through every reachable node."""
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss._accum(np.asarray(1.0))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------- primitives

def const(data: Array | float) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64))


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))
    out._backward = lambda g: (a._accum(g), b._accum(g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, (a, b))
    out._backward = lambda g: (a._accum(g), b._accum(-g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, (a, b))
    out._backward = lambda g: (a._accum(g * b.data), b._accum(g * a.data))
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s, (a,))
    out._backward = lambda g: a._accum(g * s)
    return out


def add_const(a: Tensor, c: Array | float) -> Tensor:
    out = Tensor(a.data + c, (a,))
    out._backward = lambda g: a._accum(g)
    return out


def matvec(w: Tensor, x: Tensor) -> Tensor:
    out = Tensor(w.data @ x.data, (w, x))

    def back(g: Array) -> None:
        w._accum(np.outer(g, x.data))
        x._accum(w.data.T @ g)

    out._backward = back
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor(t, (a,))
    out._backward = lambda g: a._accum(g * (1.0 - t * t))
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, (a,))
    out._backward = lambda g: a._accum(g * s * (1.0 - s))
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(a.data * mask, (a,))
    out._backward = lambda g: a._accum(g * mask)
    return out


def concat(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    sizes = [p.data.shape[0] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts]), tuple(parts))

    def back(g: Array) -> None:
        ofs = 0
        for p, n in zip(parts, sizes):
            p._accum(g[ofs : ofs + n])
            ofs += n

    out._backward = back
    return out


def mean_vectors(parts: Sequence[Tensor]) -> Tensor:
    """Mean of k same-shape vectors (permutation-invariant pooling)."""
    parts = list(parts)
    k = len(parts)
    if k == 0:
        raise ValueError("mean_vectors needs at least one vector")
    out = Tensor(sum(p.data for p in parts) / k, tuple(parts))

    def back(g: Array) -> None:
        gk = g / k
        for p in parts:
            p._accum(gk)

    out._backward = back
    return out


def vsum(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum()), (a,))
    out._backward = lambda g: a._accum(np.full_like(a.data, float(g)))
    return out


def log_prob(logits: Tensor, idx: int) -> Tensor:
    """log softmax(logits)[idx] as one node (stable, fused backward)."""
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    p = np.exp(z - lse)
    out = Tensor(np.asarray(z[idx] - lse), (logits,))

    def back(g: Array) -> None:
        grad = -p * float(g)
        grad[idx] += float(g)
        logits._accum(grad)

    out._backward = back
    return out


def entropy(logits: Tensor) -> Tensor:
    """Shannon entropy of softmax(logits), nats."""
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    logp = z - lse
    p = np.exp(logp)
    h = float(-(p * logp).sum())
    out = Tensor(np.asarray(h), (logits,))
    out._backward = lambda g: logits._accum(-p * (logp + h) * float(g))
    return out


def softmax_probs(logits_data: Array) -> Array:
    """Plain numpy softmax for sampling; no graph node."""
    z = logits_data - logits_data.max()
    e = np.exp(z)
    return e / e.sum()


# ------------------------------------------------------------------- blocks

_ACTIVATIONS = {"tanh": tanh, "relu": relu, "sigmoid": sigmoid, "identity": lambda t: t}


class DenseBlock:
    """Stack of dense layers; configurable hidden and output activations."""

    def __init__(
        self,
        name: str,
        sizes: Sequence[int],
        rng: np.random.Generator,
        out_activation: str = "tanh",
        hidden_activation: str = "tanh",
    ):
        if len(sizes) < 2:
            raise ValueError("DenseBlock needs at least in/out sizes")
        for act in (out_activation, hidden_activation):
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.name = name
        self.out_activation = out_activation
        self.hidden_activation = hidden_activation
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(Tensor(rng.uniform(-bound, bound, (fan_out, fan_in))))
            self.biases.append(Tensor(np.zeros(fan_out)))

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matvec(w, h), b)
            act = _ACTIVATIONS[self.hidden_activation if i < last else self.out_activation]
            h = act(h)
        return h

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{self.name}.w{i}", w))
            out.append((f"{self.name}.b{i}", b))
        return out


class GruCell:
    """Single GRU cell: h' = (1 - z) * h + z * tanh-candidate.

    With all weights zero the gates sit at 0.5 and the candidate at 0, so the
    cell halves its hidden state; from a zero state it stays at zero.  Gate
    outputs keep every hidden entry strictly inside (-1, 1).
    """

    def __init__(self, name: str, in_size: int, hidden: int, rng: np.random.Generator):
        self.name = name
        self.hidden = hidden

        def mat(rows: int, cols: int) -> Tensor:
            bound = np.sqrt(6.0 / (rows + cols))
            return Tensor(rng.uniform(-bound, bound, (rows, cols)))

        self.w_z, self.u_z, self.b_z = mat(hidden, in_size), mat(hidden, hidden), Tensor(np.zeros(hidden))
        self.w_r, self.u_r, self.b_r = mat(hidden, in_size), mat(hidden, hidden), Tensor(np.zeros(hidden))
        self.w_h, self.u_h, self.b_h = mat(hidden, in_size), mat(hidden, hidden), Tensor(np.zeros(hidden))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        z = sigmoid(add(add(matvec(self.w_z, x), matvec(self.u_z, h)), self.b_z))
        r = sigmoid(add(add(matvec(self.w_r, x), matvec(self.u_r, h)), self.b_r))
        cand = tanh(add(add(matvec(self.w_h, x), matvec(self.u_h, mul(r, h))), self.b_h))
        one_minus_z = add_const(scale(z, -1.0), 1.0)
        return add(mul(one_minus_z, h), mul(z, cand))

    def named_params(self) -> list[tuple[str, Tensor]]:
        names = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"]
        return [(f"{self.name}.{n}", getattr(self, n)) for n in names]


class Adam:
    """Adam with bias correction; one instance per parameter group."""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 3e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ----------------------------------------------------------- gradient check

def gradient_check(
    build_loss: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Max relative error between autodiff and central-difference gradients.

    build_loss must rebuild the graph from the current parameter values on
    every call (parameters are perturbed in place between calls).
    """
    for p in params:
        p.grad = None
    loss = build_loss()
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = float(build_loss().data)
            flat[j] = orig - h
            down = float(build_loss().data)
            flat[j] = orig
            fd[j] = (up - down) / (2 * h)
        diff = np.abs(analytic.reshape(-1) - fd)
        denom = np.maximum(1.0, np.abs(analytic.reshape(-1)) + np.abs(fd))
        worst = max(worst, float((diff / denom).max()) if flat.size else 0.0)
    for p in params:
        p.grad = None
    return worst


def run_gradient_checks(
    seeds: Iterable[int] = range(10),
    tolerance: float = 1e-4,
    report: Callable[[str], None] | None = None,
) -> float:
    """Finite-difference battery over every block type; returns the worst error.

    Losses mix positive and negative weights over the outputs so sign errors
    in any backward rule cannot cancel.
    """
    worst = 0.0
    for seed in seeds:
        rng = seed_rng(seed)

        def weighted(t: Tensor) -> Tensor:
            w = const(rng.standard_normal(t.data.shape))
            return vsum(mul(w, t))

        cases: list[tuple[str, Callable[[], Tensor], list[Tensor]]] = []

        dense = DenseBlock("d", [5, 7, 4], rng, out_activation="identity")
        xd = rng.standard_normal(5)
        wd = rng.standard_normal(4)
        cases.append((
            "dense-tanh",
            lambda: vsum(mul(const(wd), dense(const(xd)))),
            [p for _, p in dense.named_params()],
        ))

        dense_r = DenseBlock("dr", [6, 5, 5], rng,
                             out_activation="identity", hidden_activation="relu")
        xr = rng.standard_normal(6) + 0.05  # keep clear of the relu kink
        wr = rng.standard_normal(5)
        cases.append((
            "dense-relu",
            lambda: vsum(mul(const(wr), dense_r(const(xr)))),
            [p for _, p in dense_r.named_params()],
        ))

        dense_s = DenseBlock("ds", [4, 6, 3], rng, out_activation="sigmoid")
        xs = rng.standard_normal(4)
        ws = rng.standard_normal(3)
        cases.append((
            "dense-sigmoid",
            lambda: vsum(mul(const(ws), dense_s(const(xs)))),
            [p for _, p in dense_s.named_params()],
        ))

        gru = GruCell("g", 4, 6, rng)
        xg1 = rng.standard_normal(4)
        xg2 = rng.standard_normal(4)
        wg = rng.standard_normal(6)

        def gru_loss() -> Tensor:
            h = const(np.zeros(6))
            h = gru(const(xg1), h)
            h = gru(const(xg2), h)
            return vsum(mul(const(wg), h))

        cases.append(("gru-2step", gru_loss, [p for _, p in gru.named_params()]))

        head = DenseBlock("h", [5, 8], rng, out_activation="identity")
        xh = rng.standard_normal(5)
        idx = int(rng.integers(8))

        def policy_loss() -> Tensor:
            logits = head(const(xh))
            return add(log_prob(logits, idx), scale(entropy(logits), 0.37))

        cases.append(("logprob+entropy", policy_loss, [p for _, p in head.named_params()]))

        pool_a = DenseBlock("pa", [3, 4], rng)
        pool_b = DenseBlock("pb", [3, 4], rng)
        xp = [rng.standard_normal(3) for _ in range(3)]
        wp = rng.standard_normal(8)

        def pool_loss() -> Tensor:
            parts = [pool_a(const(v)) for v in xp]
            pooled = mean_vectors(parts)
            joined = concat([pooled, pool_b(const(xp[0]))])
            return vsum(mul(const(wp), joined))

        cases.append((
            "pool+concat",
            pool_loss,
            [p for _, p in pool_a.named_params()] + [p for _, p in pool_b.named_params()],
        ))

        for name, build_loss, params in cases:
            err = gradient_check(build_loss, params)
            worst = max(worst, err)
            if report is not None and err > tolerance:
                report(f"  seed {seed} {name}: max relative error {err:.3e}")
    return worst


# -------------------------------------------------------------- checkpoints

_MAGIC = b"IMFKCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, named_params: Sequence[tuple[str, Array]], meta: dict) -> None:
    """Versioned flat float64 dump; layout documented in docs/formats.md."""
    header = {
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "params": [{"name": n, "shape": list(a.shape)} for n, a in named_params],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, a in named_params:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[dict, dict[str, Array]]:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
        params: dict[str, Array] = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            params[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header["meta"], params


def params_checksum(named_params: Sequence[tuple[str, Array]]) -> str:
    """sha256 over names and raw bytes, order-sensitive; detects any retraining."""
    digest = hashlib.sha256()
    for name, a in named_params:
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return digest.hexdigest()
