"""Finite-difference verification of the objective's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import EnergyParams, Gradients, energy_and_gradients, total_energy
from .priors import BilinearGenerator, ConstantPrior, FileBackedPrior, IdentityGenerator, LineFilterPrior

FD_STEP = 1e-4


@dataclass(frozen=True)
class BlockCheck:
    combination: str
    block: str
    max_rel_error: float


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    """``|a - b| / max(|a|, |b|)``; two values both below ``floor`` count as equal."""
    scale = max(abs(a), abs(b))
    return 0.0 if scale < floor else abs(a - b) / scale


def shipped_combinations(shape):
    """Every (generator, crack prior) pairing the package ships, built for ``shape``."""
    gens = [("identity", IdentityGenerator(shape))]
    for f in (2, 4, 8):
        if shape[0] % f == 0 and shape[1] % f == 0:
            gens.append((f"bilinear:{f}", BilinearGenerator(shape, f)))
    rng = np.random.default_rng(12345)
    priors = [
        ("line-filter", LineFilterPrior(shape)),
        ("constant", ConstantPrior(shape, 1.0)),
        # a random frozen map stands in for a file-backed prior
        ("file", FileBackedPrior(rng.uniform(0.0, 1.0, size=shape))),
    ]
    return [(f"{gn}+{pn}", G, P) for gn, G in gens for pn, P in priors]


def random_instance(G, P, rng: np.random.Generator):
    h, w = G.shape
    U = rng.uniform(0.0, 1.0, size=(h, w, 3))
    # identity latents stay away from the clamp so central differences see a smooth map
    z = rng.uniform(0.05, 0.95, size=G.latent_shape)
    s = rng.normal(0.0, 1.5, size=(h, w))
    uprime = rng.uniform(0.0, 1.0, size=(h, w, 3))
    return U, z, s, uprime


def check_instance(U, z, s, uprime, G, P, params: EnergyParams, rng: np.random.Generator,
                   n_directions: int = 3, corrupt: bool = False) -> dict[str, float]:
    """Max relative error per block between directional derivatives from
    central differences and from the analytic gradient."""
    _, grads = energy_and_gradients(U, z, s, uprime, G, P, params)
    if corrupt:
        grads = Gradients(grads.s * 1.01 + 1e-3, grads.z, grads.uprime)
    point = {"z": z, "s": s, "uprime": uprime}
    analytic = {"z": grads.z, "s": grads.s, "uprime": grads.uprime}
    errors = {}
    for block in ("s", "z", "uprime"):
        worst = 0.0
        for _ in range(n_directions):
            d = rng.normal(size=point[block].shape)
            plus, minus = dict(point), dict(point)
            plus[block] = point[block] + FD_STEP * d
            minus[block] = point[block] - FD_STEP * d
            e_plus = total_energy(U, plus["z"], plus["s"], plus["uprime"], G, P, params).total
            e_minus = total_energy(U, minus["z"], minus["s"], minus["uprime"], G, P, params).total
            fd = (e_plus - e_minus) / (2 * FD_STEP)
            worst = max(worst, relative_error(fd, float(np.sum(analytic[block] * d))))
        errors[block] = worst
    return errors


def run_gradcheck(seed: int = 0, size=(8, 8), n_instances: int = 1, params: EnergyParams | None = None,
                  corrupt: bool = False) -> list[BlockCheck]:
    """Check every shipped combination on random instances of ``size``."""
    params = params or EnergyParams()
    rng = np.random.default_rng(seed)
    report = []
    for name, G, P in shipped_combinations(tuple(size)):
        worst = {"s": 0.0, "z": 0.0, "uprime": 0.0}
        for _ in range(n_instances):
            U, z, s, uprime = random_instance(G, P, rng)
            errs = check_instance(U, z, s, uprime, G, P, params, rng, corrupt=corrupt)
            worst = {k: max(worst[k], errs[k]) for k in worst}
        report.extend(BlockCheck(name, block, err) for block, err in worst.items())
    return report
