"""Pseudo-negative synthesis.

Chains start at reference-distribution draws and ascend the classifier's
logit (the log probability ratio) with respect to the input, by either an
Adam-style adaptive ascent ("plain-gradient") or Langevin steps whose noise
variance equals the annealed step size. A chain stops when its sample first
looks positive (option1), first clears a confidence threshold (option2), or
after a fixed step count (option3); chains that never meet an early-stop
criterion are kept and tagged rather than discarded.
"""

from dataclasses import dataclass, field

import numpy as np

from . import network as N
from . import tensor as T

Array = np.ndarray

STOP_POSITIVE = "positive"
STOP_THRESHOLD = "threshold"
STOP_FIXED = "fixed_steps"
STOP_MAX = "max_steps"
STOP_NON_FINITE = "non_finite"

ADAM_EPS = 1e-8


class SamplerError(Exception):
    pass


@dataclass
class SamplerConfig:
    method: str = "plain-gradient"  # or "langevin"
    stopping: str = "option2"       # option1 | option2 | option3
    step_size: float = 0.02
    anneal: float = 0.99
    max_steps: int = 500
    confidence_threshold: float = 0.95
    fixed_steps: int | None = None
    clamp: tuple[float, float] | None = None
    reference_sigma: float = 0.3
    noise: bool = True              # test hook: disables Langevin noise
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999

    def __post_init__(self):
        if self.method not in ("plain-gradient", "langevin"):
            raise SamplerError(f"unknown method {self.method!r}")
        if self.stopping not in ("option1", "option2", "option3"):
            raise SamplerError(f"unknown stopping rule {self.stopping!r}")
        if self.step_size <= 0:
            raise SamplerError("step_size must be positive")
        if not 0 < self.anneal <= 1:
            raise SamplerError("anneal must lie in (0, 1]")
        if self.stopping == "option2" and not 0 < self.confidence_threshold < 1:
            raise SamplerError("option2 needs a confidence threshold in (0, 1)")
        if self.stopping == "option3":
            if self.fixed_steps is None:
                raise SamplerError("option3 needs fixed_steps")
            if not 0 <= self.fixed_steps <= self.max_steps:
                raise SamplerError("fixed_steps must lie in [0, max_steps]")


@dataclass
class SynthesisTrace:
    steps: int
    final_logit: float
    final_confidence: float
    stop_reason: str
    logit_path: Array = field(repr=False, default=None)


def draw_reference(count: int, dims, sigma: float, rng: np.random.Generator) -> Array:
    """i.i.d. zero-mean Gaussian draws, std sigma per coordinate."""
    if count < 1:
        raise SamplerError("need at least one draw")
    shape = (count,) + ((dims,) if isinstance(dims, int) else tuple(dims))
    return sigma * rng.standard_normal(shape)


def langevin_step(x: Array, grad: Array, eps: float, rng: np.random.Generator,
                  noise: bool = True, clamp=None) -> Array:
    """x + (eps/2) * grad + eta with eta ~ N(0, eps) per coordinate."""
    if grad.shape != x.shape:
        raise SamplerError(f"gradient shape {grad.shape} vs sample shape {x.shape}")
    if not np.all(np.isfinite(grad)):
        raise SamplerError("non-finite gradient")
    out = x + (eps / 2.0) * grad
    if noise:
        out = out + np.sqrt(eps) * rng.standard_normal(x.shape)
    if clamp is not None:
        out = np.clip(out, clamp[0], clamp[1])
    return out


def _adam_step(x, grad, m, v, k, config: SamplerConfig, eps_k: float):
    b1, b2 = config.adam_beta1, config.adam_beta2
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1 ** (k + 1))
    v_hat = v / (1 - b2 ** (k + 1))
    out = x + eps_k * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    if config.clamp is not None:
        out = np.clip(out, config.clamp[0], config.clamp[1])
    return out, m, v


def synthesize_pseudo_negatives(classifier, config: SamplerConfig, count: int,
                                rng: np.random.Generator, input_shape,
                                class_index: int | None = None,
                                init: Array | None = None):
    """Run `count` chains against one head; returns (samples, traces).

    Emitted samples are pseudo-negatives by construction: the caller tags
    them with the negative label (or the synthesizing class, multi-class).
    `init` overrides the reference draw (test hook).
    """
    if init is None:
        x = draw_reference(count, input_shape, config.reference_sigma, rng)
    else:
        x = np.array(init, dtype=np.float64)
        if x.shape[0] != count:
            raise SamplerError(f"init holds {x.shape[0]} rows, expected {count}")
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    steps = np.zeros(count, dtype=int)
    reasons = [""] * count
    final_logits = np.zeros(count)
    paths: list[list[float]] = [[] for _ in range(count)]
    active = np.ones(count, dtype=bool)

    limit = config.fixed_steps if config.stopping == "option3" else config.max_steps
    for k in range(limit + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        record, scalar, logits = N.logit_sum_graph(classifier, x[idx], class_index)
        for row, j in enumerate(idx):
            paths[j].append(float(logits[row]))
            final_logits[j] = logits[row]
        if config.stopping == "option1":
            stop_now = logits > 0.0
            reason = STOP_POSITIVE
        elif config.stopping == "option2":
            stop_now = T.sigmoid_value(logits) >= config.confidence_threshold
            reason = STOP_THRESHOLD
        else:
            stop_now = np.full(idx.size, k == config.fixed_steps)
            reason = STOP_FIXED
        for j in idx[stop_now]:
            steps[j], reasons[j] = k, reason
            active[j] = False
        if k == limit:
            for j in idx[~stop_now]:
                steps[j], reasons[j] = k, STOP_MAX
                active[j] = False
            break
        moving = idx[~stop_now]
        if moving.size == 0:
            continue
        grads = T.input_gradient(record, scalar)
        rows = ~stop_now
        g = grads[rows]
        bad = ~np.isfinite(g).reshape(g.shape[0], -1).all(axis=1)
        if bad.any():
            for j in moving[bad]:
                steps[j], reasons[j] = k, STOP_NON_FINITE
                active[j] = False
            moving = moving[~bad]
            g = g[~bad]
            if moving.size == 0:
                continue
        eps_k = config.step_size * config.anneal ** k
        if config.method == "langevin":
            x[moving] = langevin_step(x[moving], g, eps_k, rng,
                                      noise=config.noise, clamp=config.clamp)
        else:
            x[moving], m[moving], v[moving] = _adam_step(
                x[moving], g, m[moving], v[moving], k, config, eps_k)

    confidences = T.sigmoid_value(final_logits)
    traces = [SynthesisTrace(int(steps[j]), float(final_logits[j]),
                             float(confidences[j]), reasons[j], np.asarray(paths[j]))
              for j in range(count)]
    return x, traces
