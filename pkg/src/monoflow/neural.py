"""A small leaky-ReLU MLP with hand-written backprop, plus SGD and Adam.

The network maps ``(n, d)`` inputs to ``n`` scalar logits. Weights are stored
as ``(fan_in, fan_out)`` matrices so a layer is ``a @ W + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ratio import RatioVariant, phi_eval, phi_prime, psi_eval, psi_prime

# rows per block; keeps hidden activations small enough to reuse heap memory
CHUNK = 256


class Mlp:
    def __init__(self, layer_sizes, rng=None, leaky_slope: float = 0.2, weights=None, biases=None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or sizes[-1] != 1:
            raise ValueError("layer_sizes must run from the input size to a single output")
        if not 0 < leaky_slope < 1:
            raise ValueError("leaky_slope must lie in (0, 1)")
        self.layer_sizes = sizes
        self.leaky_slope = float(leaky_slope)
        if weights is None:
            if rng is None:
                raise ValueError("need an rng to initialize weights")
            weights, biases = [], []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                lim = np.sqrt(6.0 / (fan_in + fan_out))
                weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
                biases.append(np.zeros(fan_out))
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for w, b, fi, fo in zip(self.weights, self.biases, sizes[:-1], sizes[1:]):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ValueError("parameter shapes do not chain")

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params) -> None:
        self.weights = [np.asarray(p, dtype=float) for p in params[0::2]]
        self.biases = [np.asarray(p, dtype=float) for p in params[1::2]]

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, leaky_slope=self.leaky_slope,
                   weights=[w.copy() for w in self.weights], biases=[b.copy() for b in self.biases])

    def _run(self, x):
        acts, pres = [x], []
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w
            z += b
            pres.append(z)
            # leaky ReLU as max(z, slope*z), valid for 0 < slope < 1
            a = z if i == last else np.maximum(z, self.leaky_slope * z)
            acts.append(a)
        return acts, pres

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        xs = np.atleast_2d(x)
        out = np.empty(len(xs))
        for i in range(0, len(xs), CHUNK):
            out[i:i + CHUNK] = self._run(xs[i:i + CHUNK])[0][-1][:, 0]
        return float(out[0]) if x.ndim == 1 else out

    __call__ = forward

    def preactivations(self, x) -> list[np.ndarray]:
        """Hidden-layer pre-activations, for locating leaky-ReLU kinks."""
        return self._run(np.atleast_2d(np.asarray(x, dtype=float)))[1][:-1]

    def backward(self, batch, upstream):
        """Gradients of ``sum_i upstream[i] * forward(batch[i])``.

        Returns ``(param_grads, input_grads)`` where ``param_grads`` lines up
        with :attr:`params`.
        """
        _, grads, input_grads = self.forward_backward(batch, upstream)
        return grads, input_grads

    def forward_backward(self, batch, upstream=None):
        """Outputs plus :meth:`backward` in one pass.

        ``upstream`` may be a callable mapping the outputs to upstream weights,
        for losses that depend on the outputs themselves.
        """
        x = np.atleast_2d(np.asarray(batch, dtype=float))
        n = len(x)
        out = None
        if callable(upstream):
            out = self.forward(x) if n else np.empty(0)
            upstream = upstream(out)
        g_all = np.ones(n) if upstream is None else np.asarray(upstream, dtype=float).ravel()
        if g_all.shape[0] != n:
            raise ValueError("upstream must have one entry per batch row")
        if out is None:
            out = np.empty(n)
        grads = [np.zeros_like(p) for p in self.params]
        input_grads = np.empty_like(x)
        kink = self.leaky_slope - 1.0
        for lo in range(0, n, CHUNK):
            # one chunk at a time keeps temporaries small
            acts, pres = self._run(x[lo:lo + CHUNK])
            out[lo:lo + CHUNK] = acts[-1][:, 0]
            delta = g_all[lo:lo + CHUNK, None]
            for i in range(len(self.weights) - 1, -1, -1):
                grads[2 * i] += acts[i].T @ delta
                grads[2 * i + 1] += delta.sum(axis=0)
                delta = delta @ self.weights[i].T
                if i > 0:
                    # derivative is 1 above the kink and slope below it
                    delta *= (pres[i - 1] <= 0) * kink + 1.0
            input_grads[lo:lo + CHUNK] = delta
        return out, grads, input_grads


def default_discriminator(rng, d: int = 2, width: int = 64, depth: int = 2, leaky_slope: float = 0.2) -> Mlp:
    return Mlp([d] + [width] * depth + [1], rng=rng, leaky_slope=leaky_slope)


@dataclass
class OptState:
    """SGD or Adam state. ``m`` and ``v`` are created lazily to match the parameters."""

    kind: str = "Adam"
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("SGD", "Adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def sgd(lr: float) -> OptState:
    return OptState("SGD", lr=lr)


def adam(lr: float = 1e-3, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> OptState:
    return OptState("Adam", lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def opt_step(opt: OptState, params, grads):
    """Descent step; returns ``(new_params, opt)``. ``opt`` is updated in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if opt.kind == "SGD":
        return [p - opt.lr * g for p, g in zip(params, grads)], opt
    if not opt.m:
        opt.m = [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
        opt.v = [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
    opt.step_count += 1
    t = opt.step_count
    c1 = 1.0 - opt.beta1**t
    c2 = 1.0 - opt.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g
        out.append(p - opt.lr * (opt.m[i] / c1) / (np.sqrt(opt.v[i] / c2) + opt.eps))
    return out, opt


def disc_objective(net: Mlp, v: RatioVariant, real_batch, fake_batch) -> float:
    return float(np.mean(phi_eval(v, net(real_batch))) + np.mean(psi_eval(v, net(fake_batch))))


def disc_update(net: Mlp, v: RatioVariant, real_batch, fake_batch, opt: OptState):
    """One ascent step on ``mean phi(d(real)) + mean psi(d(fake))``.

    Mutates and returns ``(net, opt)``.
    """
    real = np.atleast_2d(real_batch)
    fake = np.atleast_2d(fake_batch)
    if len(real) == 0 or len(fake) == 0:
        raise ValueError("empty batch")
    x = np.vstack([real, fake])
    n_r = len(real)

    def upstream(d):
        return -np.concatenate([
            np.asarray(phi_prime(v, d[:n_r])) / n_r,
            np.asarray(psi_prime(v, d[n_r:])) / len(fake),
        ])

    _, grads, _ = net.forward_backward(x, upstream)
    new, opt = opt_step(opt, net.params, grads)
    net.set_params(new)
    return net, opt
