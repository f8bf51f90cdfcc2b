"""The degenerate benchmark distribution: a 2D mixture of Gaussians living
on a tilted plane in 3D, plus latent sampling and a Gaussian KDE.

The mixture has ``n_modes`` isotropic components equally spaced on a circle;
the planar points (x, y) are lifted to (x, y, 0), rotated (Rodrigues) and
translated, so every sample lies exactly on an affine 2D submanifold of the
ambient space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


def _rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    k = np.asarray(axis, dtype=np.float64)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


@dataclass(frozen=True)
class MixtureSpec:
    n_modes: int = 7
    mode_std: float = 0.01
    circle_radius: float = 1.0
    rotation_axis: tuple[float, float, float] = (1.0 / np.sqrt(2.0), -1.0 / np.sqrt(2.0), 0.0)
    rotation_angle: float = np.pi / 4.0
    translation: tuple[float, float, float] = (
        1.0 / np.sqrt(3.0),
        1.0 / np.sqrt(3.0),
        1.0 / np.sqrt(3.0),
    )
    embedded: bool = True

    def __post_init__(self):
        if self.n_modes < 1 or self.mode_std <= 0.0 or self.circle_radius <= 0.0:
            raise ValueError("invalid mixture parameters")
        axis = np.asarray(self.rotation_axis, dtype=np.float64)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise ValueError("rotation axis must be unit norm")

    @property
    def dim(self) -> int:
        return 3 if self.embedded else 2

    def mode_centers_2d(self) -> np.ndarray:
        ang = 2.0 * np.pi * np.arange(self.n_modes) / self.n_modes
        return self.circle_radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)

    def rotation_matrix(self) -> np.ndarray:
        return _rodrigues(np.asarray(self.rotation_axis), self.rotation_angle)

    def plane_normal(self) -> np.ndarray:
        return self.rotation_matrix() @ np.array([0.0, 0.0, 1.0])

    def embed(self, points2d: np.ndarray) -> np.ndarray:
        """(x, y) -> (x, y, 0), rotate, translate."""
        p = np.asarray(points2d, dtype=np.float64)
        p3 = np.concatenate([p, np.zeros((p.shape[0], 1))], axis=1)
        return p3 @ self.rotation_matrix().T + np.asarray(self.translation)

    def project(self, points3d: np.ndarray):
        """Inverse embedding; returns (in-plane coords (n,2), off-plane dist (n,))."""
        p = np.asarray(points3d, dtype=np.float64) - np.asarray(self.translation)
        u = p @ self.rotation_matrix()
        return u[:, :2], u[:, 2]

    def mode_centers(self) -> np.ndarray:
        c2 = self.mode_centers_2d()
        return self.embed(c2) if self.embedded else c2


def sample_mixture(spec: MixtureSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw order: mode indices first, then the (n, 2) in-plane offsets."""
    if n < 1:
        raise ValueError("need n >= 1 samples")
    idx = rng.integers(0, spec.n_modes, size=n)
    pts = spec.mode_centers_2d()[idx] + spec.mode_std * rng.standard_normal((n, 2))
    return spec.embed(pts) if spec.embedded else pts


def mixture_density_inplane(spec: MixtureSpec, x, plane_tol: float = 1e-6):
    """Mixture pdf evaluated in plane coordinates; 0 off the plane.

    For embedded specs the input is 3D and gets projected first; points
    farther than ``plane_tol`` from the plane have density zero (the
    distribution is degenerate in the ambient space).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if spec.embedded:
        u, off = spec.project(x)
        on_plane = np.abs(off) <= plane_tol
    else:
        u = x
        on_plane = np.ones(x.shape[0], dtype=bool)
    centers = spec.mode_centers_2d()
    var = spec.mode_std**2
    d2 = ((u[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    dens = np.exp(-0.5 * d2 / var).sum(axis=1) / (spec.n_modes * 2.0 * np.pi * var)
    dens = np.where(on_plane, dens, 0.0)
    return dens if dens.size > 1 else float(dens[0])


@dataclass
class KDEModel:
    """Gaussian product-kernel density with a diagonal bandwidth."""

    samples: np.ndarray
    bandwidth: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.bandwidth = np.asarray(self.bandwidth, dtype=np.float64)
        if np.any(self.bandwidth <= 0.0):
            raise ValueError("bandwidth must be positive")


def scott_factor(n: int, d: int) -> float:
    return float(n) ** (-1.0 / (d + 4))


def kde_fit(samples: np.ndarray, scott: bool = True, bandwidth=None) -> KDEModel:
    """Scott's rule: factor n^(-1/(d+4)) times the per-dimension sample std."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError("need at least 2 samples in an (n, d) matrix")
    n, d = samples.shape
    if scott:
        std = np.std(samples, axis=0, ddof=1)
        h = scott_factor(n, d) * np.maximum(std, 1e-8)
    else:
        if bandwidth is None:
            raise ValueError("bandwidth required when scott=False")
        h = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (d,)).copy()
    return KDEModel(samples, h)


def kde_eval(model: KDEModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return kernels.kde_eval(x, model.samples, model.bandwidth)


def latent_sample(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. standard normal latent batch (n, dim)."""
    if dim < 1 or n < 1:
        raise ValueError("latent batch needs n >= 1, dim >= 1")
    return rng.standard_normal((n, dim))


def write_sample_csv(path, points3d: np.ndarray, density: np.ndarray) -> None:
    points3d = np.asarray(points3d, dtype=np.float64)
    density = np.asarray(density, dtype=np.float64)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("x,y,z,kde_density\n")
        for p, dv in zip(points3d, density):
            fh.write(
                f"{float(p[0])!r},{float(p[1])!r},{float(p[2])!r},{float(dv)!r}\n"
            )
