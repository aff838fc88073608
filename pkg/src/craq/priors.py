"""Differentiable background generators and crack estimators.

A generator maps a latent array ``z`` to a ``(h, w, 3)`` background image; a
crack prior maps an image ``U'`` to a ``(h, w)`` map in [0, 1] where values
near zero flag cracks. Both expose ``vjp(x, cotangent)``, the adjoint of
their Jacobian at ``x`` applied to ``cotangent``.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .imaging import LUMA_WEIGHTS, load_gray, to_grayscale


class GeneratorPrior:
    """Base class for background generators."""

    shape: tuple[int, int]

    @property
    def latent_shape(self) -> tuple[int, ...]:
        raise NotImplementedError

    @property
    def latent_dim(self) -> int:
        return int(np.prod(self.latent_shape))

    def generate(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, z: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def init_latent(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_latent(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != self.latent_shape:
            raise ValueError(f"latent shape {z.shape} does not match {self.latent_shape}")
        return z


class CrackPrior:
    """Base class for crack estimators. ``differentiable`` is False when the
    prior ignores its input, in which case ``vjp`` is identically zero."""

    shape: tuple[int, int]
    differentiable: bool = True

    def predict(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, image: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def linearize(self, image):
        """Return ``(predict(image), cotangent -> vjp(image, cotangent))``."""
        return self.predict(image), lambda cot: self.vjp(image, cot)


class IdentityGenerator(GeneratorPrior):
    """Pixel-space generator: the latent is the image itself, clamped to [0, 1].

    With this generator the background carries no learned structure and the
    painting-regularity term alone smooths it.
    """

    def __init__(self, shape):
        self.shape = (int(shape[0]), int(shape[1]))

    @property
    def latent_shape(self):
        return (*self.shape, 3)

    def generate(self, z):
        return np.clip(self._check_latent(z), 0.0, 1.0)

    def vjp(self, z, cotangent):
        z = self._check_latent(z)
        # pass-through on the closed interval; a latent sitting exactly at 0 or 1 can still move inward
        inside = (z >= 0.0) & (z <= 1.0)
        return np.where(inside, cotangent, 0.0)

    def init_latent(self, image):
        return np.array(image, dtype=np.float64, copy=True)


def _bilinear_matrix(n_out: int, factor: int) -> np.ndarray:
    """1-D bilinear upsampling weights, pixel-center aligned, edges clamped."""
    n_in = n_out // factor
    mat = np.zeros((n_out, n_in))
    coords = np.clip((np.arange(n_out) + 0.5) / factor - 0.5, 0.0, n_in - 1)
    left = np.floor(coords).astype(int)
    right = np.minimum(left + 1, n_in - 1)
    frac = coords - left
    rows = np.arange(n_out)
    np.add.at(mat, (rows, left), 1.0 - frac)
    np.add.at(mat, (rows, right), frac)
    return mat


class BilinearGenerator(GeneratorPrior):
    """Low-dimensional linear background manifold.

    The latent is a ``(h/f, w/f, 3)`` image, upsampled bilinearly by ``f``.
    Thin structures such as cracks lie outside its range, which is what lets
    the data term expose them.
    """

    def __init__(self, shape, factor: int = 4):
        h, w = int(shape[0]), int(shape[1])
        if factor not in (2, 4, 8):
            raise ValueError(f"bilinear factor must be 2, 4 or 8, got {factor}")
        if h % factor or w % factor:
            raise ValueError(f"image shape {(h, w)} is not divisible by factor {factor}")
        self.shape = (h, w)
        self.factor = factor
        self._rows = _bilinear_matrix(h, factor)
        self._cols = _bilinear_matrix(w, factor)

    @property
    def latent_shape(self):
        return (self.shape[0] // self.factor, self.shape[1] // self.factor, 3)

    def generate(self, z):
        z = self._check_latent(z)
        return np.einsum("ia,abc,jb->ijc", self._rows, z, self._cols, optimize=True)

    def vjp(self, z, cotangent):
        self._check_latent(z)
        return np.einsum("ia,ijc,jb->abc", self._rows, cotangent, self._cols, optimize=True)

    def init_latent(self, image):
        f = self.factor
        h, w = self.shape
        img = np.asarray(image, dtype=np.float64)
        return img.reshape(h // f, f, w // f, f, 3).mean(axis=(1, 3))


def _gaussian_kernels(sigma: float, radius: int):
    """Sampled Gaussian and its first and second derivatives (zero-sum, scale-normalized)."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    g1 = -x / sigma**2 * g
    g2 = (x**2 / sigma**4 - 1.0 / sigma**2) * g
    g2 -= g2.mean()
    return g, sigma * g1, sigma**2 * g2


class _ReflectPad:
    """Symmetric (edge-including) reflection padding with an exact adjoint."""

    def __init__(self, shape, radius: int):
        self.shape = shape
        self.radius = radius
        self.rows = np.pad(np.arange(shape[0]), radius, mode="symmetric")
        self.cols = np.pad(np.arange(shape[1]), radius, mode="symmetric")

    def __call__(self, x):
        return x[np.ix_(self.rows, self.cols)]

    def adjoint(self, xp):
        out = np.zeros(self.shape)
        np.add.at(out, (self.rows[:, None], self.cols[None, :]), xp)
        return out


class LineFilterPrior(CrackPrior):
    """Ridge/valley detector built from oriented second derivatives of Gaussians.

    The luminance of ``U'`` is filtered at every (scale, orientation); both
    signs of each response are pooled with a soft maximum
    ``(1/gain) * log(mean(exp(gain * r)))`` so that dark and bright lines
    both count. The pooled strength is squashed as
    ``1 - logistic(slope * strength - offset)`` with the offset chosen so a
    featureless image maps to ``baseline``.
    """

    def __init__(self, shape, scales=(1.0, 2.0), n_orientations: int = 4, gain: float = 10.0,
                 slope: float = 40.0, baseline: float = 0.9):
        if n_orientations < 2:
            raise ValueError("need at least two orientations")
        if any(s <= 0 for s in scales):
            raise ValueError("scales must be positive")
        if not 0.0 < baseline < 1.0:
            raise ValueError("baseline must lie in (0, 1)")
        self.shape = (int(shape[0]), int(shape[1]))
        self.scales = tuple(float(s) for s in scales)
        self.n_orientations = int(n_orientations)
        self.gain = float(gain)
        self.slope = float(slope)
        self.baseline = float(baseline)
        self.offset = math.log(baseline / (1.0 - baseline))

        thetas = np.arange(self.n_orientations) * math.pi / self.n_orientations
        c, s = np.cos(thetas), np.sin(thetas)
        # d^2/dn^2 = c^2 Ixx + 2cs Ixy + s^2 Iyy, x along width
        self._steer = np.stack([c * c, 2 * c * s, s * s], axis=1)
        self._banks = []
        for sigma in self.scales:
            radius = max(1, int(math.ceil(3.0 * sigma)))
            g, g1, g2 = _gaussian_kernels(sigma, radius)
            pad = _ReflectPad(self.shape, radius)
            # (row kernel, column kernel) for Ixx, Ixy, Iyy
            self._banks.append((pad, [(g, g2), (g1, g1), (g2, g)]))

    def _filter(self, gray):
        responses = []
        for pad, kernels in self._banks:
            r = pad.radius
            xp = pad(gray)
            basis = []
            for krow, kcol in kernels:
                t = ndimage.correlate1d(xp, krow, axis=0, mode="constant")
                t = ndimage.correlate1d(t, kcol, axis=1, mode="constant")
                basis.append(t[r:-r, r:-r])
            basis = np.stack(basis)  # (3, h, w)
            responses.append(np.tensordot(self._steer, basis, axes=1))
        return np.concatenate(responses)  # (n_scales * n_orient, h, w)

    def _filter_adjoint(self, cot):
        out = np.zeros(self.shape)
        n = self.n_orientations
        for i, (pad, kernels) in enumerate(self._banks):
            r = pad.radius
            basis_cot = np.tensordot(self._steer.T, cot[i * n:(i + 1) * n], axes=1)
            big = np.zeros((self.shape[0] + 2 * r, self.shape[1] + 2 * r))
            for (krow, kcol), bc in zip(kernels, basis_cot):
                t = np.zeros_like(big)
                t[r:-r, r:-r] = bc
                t = ndimage.convolve1d(t, kcol, axis=1, mode="constant")
                t = ndimage.convolve1d(t, krow, axis=0, mode="constant")
                big += t
            out += pad.adjoint(big)
        return out

    def _pool(self, responses):
        """Soft maximum over both signs of every response, with its derivative."""
        scaled = self.gain * responses
        top = np.abs(scaled).max(axis=0)
        pos, neg = np.exp(scaled - top), np.exp(-scaled - top)
        total = (pos + neg).sum(axis=0)
        pooled = (top + np.log(total) - math.log(2 * responses.shape[0])) / self.gain
        return pooled, (pos - neg) / total

    def strength(self, image) -> np.ndarray:
        """Pooled line strength, zero on featureless regions."""
        return self._pool(self._filter(to_grayscale(image)))[0]

    def linearize(self, image):
        pooled, dpool_dr = self._pool(self._filter(to_grayscale(image)))
        q = expit(self.slope * pooled - self.offset)
        dq = self.slope * q * (1.0 - q)

        def vjp(cotangent):
            d_pooled = -np.asarray(cotangent, dtype=np.float64) * dq
            d_gray = self._filter_adjoint(d_pooled[None] * dpool_dr)
            return d_gray[..., None] * LUMA_WEIGHTS

        return 1.0 - q, vjp

    def predict(self, image):
        return 1.0 - expit(self.slope * self.strength(image) - self.offset)

    def vjp(self, image, cotangent):
        return self.linearize(image)[1](cotangent)


class ConstantPrior(CrackPrior):
    """A frozen prior returning the same value everywhere."""

    differentiable = False

    def __init__(self, shape, value: float = 1.0):
        if not 0.0 <= value <= 1.0:
            raise ValueError("constant prior value must lie in [0, 1]")
        self.shape = (int(shape[0]), int(shape[1]))
        self.value = float(value)

    def predict(self, image):
        return np.full(self.shape, self.value)

    def vjp(self, image, cotangent):
        return np.zeros((*self.shape, 3))


class FileBackedPrior(CrackPrior):
    """A frozen prior holding an externally computed map (0 = crack, 1 = clean)."""

    differentiable = False

    def __init__(self, prior_map: np.ndarray):
        prior_map = np.asarray(prior_map, dtype=np.float64)
        if prior_map.ndim != 2:
            raise ValueError(f"prior map must be 2-D, got shape {prior_map.shape}")
        self.map = np.clip(prior_map, 0.0, 1.0)
        self.shape = prior_map.shape

    @classmethod
    def from_file(cls, path, shape=None) -> "FileBackedPrior":
        prior_map = load_gray(Path(path))
        if shape is not None and prior_map.shape != tuple(shape):
            raise ValueError(f"{path}: prior map shape {prior_map.shape} does not match image shape {tuple(shape)}")
        return cls(prior_map)

    def predict(self, image):
        return self.map.copy()

    def vjp(self, image, cotangent):
        return np.zeros((*self.shape, 3))


def file_backed_predict(path, shape=None) -> FileBackedPrior:
    return FileBackedPrior.from_file(path, shape)


def make_generator(name: str, shape) -> GeneratorPrior:
    """Build a generator from ``identity`` or ``bilinear:<factor>``."""
    kind, _, arg = name.partition(":")
    if kind == "identity" and not arg:
        return IdentityGenerator(shape)
    if kind == "bilinear":
        return BilinearGenerator(shape, int(arg) if arg else 4)
    raise ValueError(f"unknown generator {name!r}")


def make_crack_prior(name: str, shape) -> CrackPrior:
    """Build a crack prior from ``line-filter``, ``constant:<value>`` or ``file:<path>``."""
    kind, _, arg = name.partition(":")
    if kind == "line-filter" and not arg:
        return LineFilterPrior(shape)
    if kind == "constant":
        return ConstantPrior(shape, float(arg) if arg else 1.0)
    if kind == "file" and arg:
        return FileBackedPrior.from_file(arg, shape)
    raise ValueError(f"unknown crack prior {name!r}")
