"""Objective terms of the crack/background decomposition and their gradients.

The objective, with ``v = sigmoid(s)``, ``B = G(z)`` and ``p = P(U')``, is

    sum v^2 |U - B|^2
    + lambda_preg * sum v^2 |grad B|^2
    + lambda_creg * sum (eps |grad v|^2 + (v - 1)^2 / (4 eps))
    + lambda_cp   * sum (v - p)^2

with plain sums over pixels (and channels), unit pixel spacing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .imaging import GradientPair, grad_adjoint, grad_forward
from .priors import CrackPrior, GeneratorPrior


@dataclass(frozen=True)
class EnergyParams:
    lambda_preg: float = 1.0
    lambda_creg: float = 0.1
    lambda_cp: float = 0.5
    epsilon: float = 0.005

    def __post_init__(self):
        if min(self.lambda_preg, self.lambda_creg, self.lambda_cp) < 0:
            raise ValueError("regularization weights must be non-negative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be strictly positive")

    def key(self) -> tuple[float, float, float, float]:
        return (self.lambda_preg, self.lambda_creg, self.lambda_cp, self.epsilon)


@dataclass(frozen=True)
class EnergyBreakdown:
    """Unweighted term values plus the weighted total."""

    data_fidelity: float
    preg: float
    creg: float
    cp: float
    total: float


@dataclass(frozen=True)
class Gradients:
    s: np.ndarray
    z: np.ndarray
    uprime: np.ndarray


def sigmoid(s) -> np.ndarray:
    return expit(np.asarray(s, dtype=np.float64))


def _check_same(a, b, what):
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def data_fidelity(U, B, v) -> float:
    U, B, v = (np.asarray(a, dtype=np.float64) for a in (U, B, v))
    if U.shape != B.shape:
        raise ValueError(f"data_fidelity: shape mismatch {U.shape} vs {B.shape}")
    _check_same(U, v, "data_fidelity")
    return float(np.sum(v**2 * np.sum((U - B) ** 2, axis=2)))


def _grad_sq(B) -> np.ndarray:
    dx, dy = grad_forward(B)
    sq = dx**2 + dy**2
    return sq.sum(axis=2) if sq.ndim == 3 else sq


def preg_energy(B, v) -> float:
    B, v = np.asarray(B, dtype=np.float64), np.asarray(v, dtype=np.float64)
    _check_same(B, v, "preg_energy")
    return float(np.sum(v**2 * _grad_sq(B)))


def creg_energy(v, epsilon: float) -> float:
    v = np.asarray(v, dtype=np.float64)
    if not epsilon > 0:
        raise ValueError("epsilon must be strictly positive")
    dx, dy = grad_forward(v)
    return float(np.sum(epsilon * (dx**2 + dy**2) + (v - 1.0) ** 2 / (4.0 * epsilon)))


def cp_energy(v, p_map) -> float:
    v, p = np.asarray(v, dtype=np.float64), np.asarray(p_map, dtype=np.float64)
    if v.shape != p.shape:
        raise ValueError(f"cp_energy: shape mismatch {v.shape} vs {p.shape}")
    return float(np.sum((v - p) ** 2))


def weighted_total(terms: dict[str, float], params: EnergyParams) -> float:
    return (terms["data_fidelity"] + params.lambda_preg * terms["preg"]
            + params.lambda_creg * terms["creg"] + params.lambda_cp * terms["cp"])


def _breakdown(U, B, v, p, params) -> EnergyBreakdown:
    terms = {
        "data_fidelity": data_fidelity(U, B, v),
        "preg": preg_energy(B, v),
        "creg": creg_energy(v, params.epsilon),
        "cp": cp_energy(v, p),
    }
    return EnergyBreakdown(**terms, total=weighted_total(terms, params))


def total_energy(U, z, s, uprime, G: GeneratorPrior, P: CrackPrior, params: EnergyParams) -> EnergyBreakdown:
    v = sigmoid(s)
    return _breakdown(np.asarray(U, dtype=np.float64), G.generate(z), v, P.predict(uprime), params)


def energy_and_gradients(U, z, s, uprime, G: GeneratorPrior, P: CrackPrior,
                         params: EnergyParams) -> tuple[EnergyBreakdown, Gradients]:
    """Objective value and its exact gradient in (s, z, U') in one pass."""
    U = np.asarray(U, dtype=np.float64)
    v = sigmoid(s)
    B = G.generate(z)
    p, p_vjp = P.linearize(uprime)
    if U.shape != B.shape:
        raise ValueError(f"generator output {B.shape} does not match image {U.shape}")
    if p.shape != v.shape or v.shape != U.shape[:2]:
        raise ValueError(f"crack map {p.shape} / logits {v.shape} do not match image {U.shape[:2]}")
    eps = params.epsilon

    resid = U - B
    resid_sq = np.sum(resid**2, axis=2)
    gB = grad_forward(B)
    gB_sq = np.sum(gB.dx**2 + gB.dy**2, axis=2)
    gv = grad_forward(v)
    v2 = v * v

    terms = {
        "data_fidelity": float(np.sum(v2 * resid_sq)),
        "preg": float(np.sum(v2 * gB_sq)),
        "creg": float(np.sum(eps * (gv.dx**2 + gv.dy**2) + (v - 1.0) ** 2 / (4.0 * eps))),
        "cp": float(np.sum((v - p) ** 2)),
    }
    breakdown = EnergyBreakdown(**terms, total=weighted_total(terms, params))

    dv = 2.0 * v * resid_sq
    dv += params.lambda_preg * 2.0 * v * gB_sq
    dv += params.lambda_creg * (grad_adjoint(GradientPair(2.0 * eps * gv.dx, 2.0 * eps * gv.dy))
                                + (v - 1.0) / (2.0 * eps))
    dv += params.lambda_cp * 2.0 * (v - p)
    grad_s = dv * v * (1.0 - v)

    w = (params.lambda_preg * 2.0 * v2)[..., None]
    dB = -2.0 * v2[..., None] * resid + grad_adjoint(GradientPair(w * gB.dx, w * gB.dy))
    grad_z = G.vjp(z, dB)

    dp = -2.0 * params.lambda_cp * (v - p)
    if P.differentiable:
        grad_u = p_vjp(dp)
    else:
        grad_u = np.zeros_like(np.asarray(uprime, dtype=np.float64))
    return breakdown, Gradients(grad_s, grad_z, grad_u)


def gradients(U, z, s, uprime, G, P, params) -> Gradients:
    return energy_and_gradients(U, z, s, uprime, G, P, params)[1]
