"""Mode-coverage and sample-quality metrics plus the pairwise cross-testing
protocol for comparing two trained models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, mixture, networks

LOG_FLOOR = 1e-12


@dataclass
class CoverageReport:
    per_mode_counts: np.ndarray
    covered: int
    radius: float
    total: int
    max_off_plane: float

    def __post_init__(self):
        self.per_mode_counts = np.asarray(self.per_mode_counts, dtype=np.int64)
        if self.per_mode_counts.sum() > self.total:
            raise ValueError("assigned counts exceed the sample count")


def mode_coverage(samples: np.ndarray, spec: mixture.MixtureSpec,
                  radius: float | None = None,
                  min_frac: float = 0.1) -> CoverageReport:
    """Count samples within ``radius`` of their nearest mode (in the plane).

    A mode counts as covered when it attracts at least
    ``min_frac * n / n_modes`` samples; the defaults (radius 5 sigma,
    min_frac 0.1) make the threshold n / (10 * n_modes).  Off-plane distance
    is recorded separately and does not disqualify a sample.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("need a non-empty (n, d) sample matrix")
    if radius is None:
        radius = 5.0 * spec.mode_std
    if radius <= 0.0 or not 0.0 < min_frac < 1.0:
        raise ValueError("need radius > 0 and min_frac in (0, 1)")
    if spec.embedded:
        inplane, off = spec.project(samples)
        max_off = float(np.max(np.abs(off)))
    else:
        inplane, max_off = samples, 0.0
    centers = spec.mode_centers_2d()
    d2 = ((inplane[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)
    within = d2[np.arange(len(nearest)), nearest] <= radius**2
    counts = np.bincount(nearest[within], minlength=spec.n_modes)
    n = samples.shape[0]
    threshold = min_frac * n / spec.n_modes
    covered = int(np.sum(counts >= threshold))
    return CoverageReport(counts, covered, float(radius), n, max_off)


def sample_quality(samples: np.ndarray, ref_kde: mixture.KDEModel) -> float:
    """Mean log-density of the samples under a reference KDE (floored)."""
    dens = mixture.kde_eval(ref_kde, samples)
    return float(np.mean(np.log(np.maximum(dens, LOG_FLOOR))))


@dataclass
class ConfusionMatrix:
    """Condition-normalized rates; the real column (tp, fn) and the fake
    column (fp, tn) each sum to one."""

    tp: float
    fn: float
    fp: float
    tn: float

    def as_array(self) -> np.ndarray:
        return np.array([[self.tp, self.fp], [self.fn, self.tn]])

    def validate(self, tol: float = 1e-12) -> None:
        for v in (self.tp, self.fn, self.fp, self.tn):
            if not 0.0 <= v <= 1.0:
                raise ValueError("confusion rates must lie in [0, 1]")
        if abs(self.tp + self.fn - 1.0) > tol or abs(self.fp + self.tn - 1.0) > tol:
            raise ValueError("confusion columns must sum to 1")


def confusion_from_logits(real_logits, fake_logits,
                          threshold: float = 0.5) -> ConfusionMatrix:
    """Predicted positive iff sigmoid(logit) > threshold (strict)."""
    real_logits = np.asarray(real_logits, dtype=np.float64)
    fake_logits = np.asarray(fake_logits, dtype=np.float64)
    if real_logits.size == 0 or fake_logits.size == 0:
        raise ValueError("both evaluation sets must be non-empty")
    from .divergences import sigmoid

    tp = float(np.mean(sigmoid(real_logits) > threshold))
    fp = float(np.mean(sigmoid(fake_logits) > threshold))
    return ConfusionMatrix(tp, 1.0 - tp, fp, 1.0 - fp)


@dataclass
class GanModel:
    """A trained generator/discriminator pair."""

    gen: networks.Params
    disc: networks.Params

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = mixture.latent_sample(n, self.gen.spec.input_dim, rng)
        return networks.generator_forward(self.gen, z)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return networks.discriminator_forward(self.disc, x)


def confusion_matrix(model: GanModel, real_set: np.ndarray,
                     fake_set: np.ndarray,
                     threshold: float = 0.5) -> ConfusionMatrix:
    return confusion_from_logits(model.logits(real_set), model.logits(fake_set),
                                 threshold)


@dataclass
class CrossReport:
    own_a: ConfusionMatrix
    own_b: ConfusionMatrix
    cross_fp_a: float  # model A's discriminator on model B's fakes
    cross_fn_a: float
    cross_fp_b: float
    cross_fn_b: float

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("model,tp,fn,fp,tn,cross_fp,cross_fn\n")
            for name, own, cfp, cfn in (
                ("A", self.own_a, self.cross_fp_a, self.cross_fn_a),
                ("B", self.own_b, self.cross_fp_b, self.cross_fn_b),
            ):
                fh.write(
                    f"{name},{own.tp!r},{own.fn!r},{own.fp!r},{own.tn!r},"
                    f"{cfp!r},{cfn!r}\n"
                )


def cross_test(model_a: GanModel, model_b: GanModel, real_test: np.ndarray,
               n: int, rng: np.random.Generator,
               threshold: float = 0.5) -> CrossReport:
    """Pairwise protocol: own confusion matrices on ``n`` own fakes, then
    each discriminator classifies the *other* model's fakes.

    cross_fp is the fraction of the other model's fakes accepted as real
    (lower indicates the better discriminator); cross_fn is the fraction of
    the shared real test set rejected.  With identical models the cross
    rates reduce to the own-matrix rates.
    """
    if n < 1:
        raise ValueError("need n >= 1 evaluation samples")
    real_test = np.asarray(real_test, dtype=np.float64)
    dz_a = model_a.gen.spec.input_dim
    dz_b = model_b.gen.spec.input_dim
    if dz_a == dz_b:
        # paired latents: identical models then yield identical fakes, so
        # cross rates reduce to the own-matrix rates exactly
        z = mixture.latent_sample(n, dz_a, rng)
        fakes_a = networks.generator_forward(model_a.gen, z)
        fakes_b = networks.generator_forward(model_b.gen, z)
    else:
        fakes_a = model_a.sample(n, rng)
        fakes_b = model_b.sample(n, rng)
    own_a = confusion_matrix(model_a, real_test, fakes_a, threshold)
    own_b = confusion_matrix(model_b, real_test, fakes_b, threshold)
    from .divergences import sigmoid

    cross_fp_a = float(np.mean(sigmoid(model_a.logits(fakes_b)) > threshold))
    cross_fp_b = float(np.mean(sigmoid(model_b.logits(fakes_a)) > threshold))
    return CrossReport(own_a, own_b,
                       cross_fp_a, own_a.fn,
                       cross_fp_b, own_b.fn)
