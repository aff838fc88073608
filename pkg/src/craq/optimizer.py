"""Adam iteration over the joint variable (z, s, U') and the solve loop.

``paper_verbatim`` reproduces a variant of Adam in which the second moment
is accumulated with ``(1 - beta1)`` and the step divides by ``v_hat + eps``
without a square root. The default is the standard Kingma & Ba update.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logit

from .energy import EnergyBreakdown, EnergyParams, energy_and_gradients, sigmoid
from .priors import CrackPrior, GeneratorPrior

log = logging.getLogger(__name__)

BLOCKS = ("z", "s", "uprime")
TRACE_COLUMNS = ("iter", "data_fidelity", "preg", "creg", "cp", "total")


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    zero_division_margin: float = 1e-8
    step_z: float = 0.005
    step_s: float = 0.1
    step_uprime: float = 0.01
    iterations: int = 1000
    paper_verbatim_mode: bool = False
    early_stop: bool = True
    early_stop_window: int = 20
    early_stop_tol: float = 1e-6

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("decay rates must lie in [0, 1)")
        if min(self.zero_division_margin, self.step_z, self.step_s, self.step_uprime) <= 0:
            raise ValueError("margin and step sizes must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")

    @property
    def steps(self) -> tuple[float, float, float]:
        return (self.step_z, self.step_s, self.step_uprime)


@dataclass(frozen=True)
class SolverState:
    """Optimization variables plus Adam moments over their concatenation
    (order: z, s, U')."""

    z: np.ndarray
    s: np.ndarray
    uprime: np.ndarray
    m: np.ndarray
    w: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, z, s, uprime) -> "SolverState":
        z, s, uprime = (np.array(a, dtype=np.float64, copy=True) for a in (z, s, uprime))
        n = z.size + s.size + uprime.size
        return cls(z, s, uprime, np.zeros(n), np.zeros(n), 0)

    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.z, self.s, self.uprime)

    @property
    def v(self) -> np.ndarray:
        return sigmoid(self.s)


@dataclass
class IterationTrace:
    """Energy after each update; ``initial`` is the energy at the starting point."""

    initial: EnergyBreakdown | None = None
    records: list[EnergyBreakdown] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    final_state: SolverState | None = None

    def __len__(self):
        return len(self.records)

    @property
    def final(self) -> EnergyBreakdown | None:
        return self.records[-1] if self.records else self.initial

    def rows(self):
        for i, rec in enumerate(self.records, start=1):
            yield (i, rec.data_fidelity, rec.preg, rec.creg, rec.cp, rec.total)


def write_trace_csv(trace: IterationTrace, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in trace.rows():
            writer.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def adam_step(state: SolverState, gradient, config: AdamConfig) -> SolverState:
    """One Adam update of the concatenated variable.

    ``gradient`` is either the flat concatenated gradient or a ``(g_z, g_s,
    g_uprime)`` triple. Block step sizes come from ``config``.
    """
    sizes = [b.size for b in state.blocks()]
    if isinstance(gradient, (tuple, list)):
        parts = [np.asarray(g, dtype=np.float64).ravel() for g in gradient]
        if [p.size for p in parts] != sizes:
            raise ValueError(f"gradient block sizes {[p.size for p in parts]} do not match state {sizes}")
        g = np.concatenate(parts)
    else:
        g = np.asarray(gradient, dtype=np.float64).ravel()
        if g.size != sum(sizes):
            raise ValueError(f"gradient length {g.size} does not match state length {sum(sizes)}")
    bounds = np.cumsum([0] + sizes)
    for name, a, b in zip(BLOCKS, bounds[:-1], bounds[1:]):
        if not np.all(np.isfinite(g[a:b])):
            raise NonFiniteError(f"non-finite gradient in block {name!r} at iteration {state.k + 1}")

    k = state.k + 1
    b1, b2 = config.beta1, config.beta2
    m = b1 * state.m + (1.0 - b1) * g
    if config.paper_verbatim_mode:
        w = b2 * state.w + (1.0 - b1) * (g * g)
    else:
        w = b2 * state.w + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1**k)
    w_hat = w / (1.0 - b2**k)
    if config.paper_verbatim_mode:
        direction = m_hat / (w_hat + config.zero_division_margin)
    else:
        direction = m_hat / (np.sqrt(w_hat) + config.zero_division_margin)

    new_blocks = []
    for x, gamma, a, b in zip(state.blocks(), config.steps, bounds[:-1], bounds[1:]):
        new_blocks.append(x - gamma * direction[a:b].reshape(x.shape))
    return SolverState(*new_blocks, m=m, w=w, k=k)


def initial_state(U, G: GeneratorPrior, P: CrackPrior) -> SolverState:
    """U' starts at U, z per the generator, and the logits at the clamped crack prior."""
    U = np.asarray(U, dtype=np.float64)
    v0 = np.clip(P.predict(U), 0.05, 0.95)
    return SolverState.initial(G.init_latent(U), logit(v0), U)


def solve(U, G: GeneratorPrior, P: CrackPrior, params: EnergyParams | None = None,
          config: AdamConfig | None = None, state: SolverState | None = None):
    """Minimize the objective from the standard initialization.

    Returns ``(final_state, trace)``.
    """
    params = params or EnergyParams()
    config = config or AdamConfig()
    U = np.asarray(U, dtype=np.float64)
    state = state or initial_state(U, G, P)
    trace = IterationTrace()

    energy, grads = energy_and_gradients(U, state.z, state.s, state.uprime, G, P, params)
    trace.initial = energy
    totals = [energy.total]
    for _ in range(config.iterations):
        t0 = time.perf_counter()
        state = adam_step(state, (grads.z, grads.s, grads.uprime), config)
        energy, grads = energy_and_gradients(U, state.z, state.s, state.uprime, G, P, params)
        if not np.isfinite(energy.total):
            raise NonFiniteError(f"non-finite energy at iteration {state.k}")
        trace.records.append(energy)
        trace.seconds.append(time.perf_counter() - t0)
        totals.append(energy.total)
        n = config.early_stop_window
        if config.early_stop and len(totals) > n:
            old = totals[-1 - n]
            if abs(totals[-1] - old) <= config.early_stop_tol * max(abs(old), 1e-300):
                log.debug("early stop at iteration %d", state.k)
                break
    trace.final_state = state
    return state, trace


def crack_map(state: SolverState) -> np.ndarray:
    """Soft crack map ``1 - v``; bright values mark probable cracks."""
    return 1.0 - state.v

