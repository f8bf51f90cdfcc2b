"""The regularized JS-GAN training loop.

One generator iteration = ``n_disc_steps`` ascent steps on
F - (gamma_t/2) * Omega for the discriminator, then one descent step on the
chosen generator loss.  ``gamma`` is annealed exponentially per generator
iteration when enabled.  The explicit-noise baseline replaces the penalty by
adding Gaussian noise to (batch/NSR) base samples replicated NSR times.

RNG discipline: ``SeedSequence(seed)`` spawns four independent streams in a
fixed order (generator init, discriminator init, training draws, evaluation
draws).  The training stream is consumed in a documented order per
iteration: for each discriminator step the real batch (mode indices, then
2D offsets), then the latent batch, then (noise modes only) real noise and
fake noise; afterwards the generator latent batch and (disc_and_gen only)
the generator-side noise.  Coverage snapshots draw only from the evaluation
stream, so the checkpoint cadence never perturbs training.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import kernels, mixture, networks, protocol

GEN_LOSSES = ("saturating", "alternative")
NOISE_MODES = ("off", "disc_and_gen", "disc_only")
DIVERGENCE_LIMIT = 1e6


class TrainingDiverged(RuntimeError):
    """Raised when the objective or parameters blow up; carries the state
    reached so far so a diagnostic checkpoint can be written."""

    def __init__(self, message, gen=None, disc=None, trace=None, iteration=None):
        super().__init__(message)
        self.gen = gen
        self.disc = disc
        self.trace = trace
        self.iteration = iteration


@dataclass
class TrainConfig:
    gamma0: float = 2.0
    alpha: float = 0.01
    annealing: bool = True
    gamma_fixed: float = 0.1
    n_disc_steps: int = 1
    batch_size: int = 64
    total_iters: int = 1000
    gen_loss: str = "alternative"
    noise_mode: str = "off"
    nsr: int = 1
    disc_lr: float = 1e-3
    gen_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 500
    eval_samples: int = 1024
    latent_dim: int = 2
    timing: bool = False

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.annealing and self.gamma0 <= 0.0:
            raise ValueError("gamma0 must be > 0 when annealing")
        if self.gamma_fixed < 0.0:
            raise ValueError("gamma must be >= 0")
        if self.gen_loss not in GEN_LOSSES:
            raise ValueError(f"gen_loss must be one of {GEN_LOSSES}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.nsr not in (1, 2, 4, 8):
            raise ValueError("nsr must be one of 1, 2, 4, 8")
        if self.batch_size % self.nsr != 0:
            raise ValueError("nsr must divide batch_size")
        if self.n_disc_steps < 1:
            raise ValueError("n_disc_steps must be >= 1")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


def image_style_config(**overrides) -> TrainConfig:
    """Preset with the image-experiment optimizer settings (kept as a
    config preset only; image pipelines are out of scope)."""
    base = dict(disc_lr=2e-4, gen_lr=2e-4, adam_beta1=0.5)
    base.update(overrides)
    return TrainConfig(**base)


def anneal_gamma(t: int, total: int, gamma0: float, alpha: float) -> float:
    """gamma_t = gamma0 * alpha^(t/T), strictly decreasing for alpha < 1."""
    return gamma0 * alpha ** (t / total)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int
    lr: float
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def fresh(cls, n: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: networks.Params, grad: np.ndarray,
              direction: str = "descent"):
    """Bias-corrected Adam; ascent adds the update, descent subtracts.

    Updates ``params.flat`` and the moment accumulators in place and returns
    ``(params, state)``.
    """
    if grad.shape != params.flat.shape:
        raise ValueError("gradient and parameter shapes differ")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    if direction not in ("ascent", "descent"):
        raise ValueError("direction must be 'ascent' or 'descent'")
    state.t += 1
    sign = 1.0 if direction == "ascent" else -1.0
    kernels.adam_update(params.flat, grad, state.m, state.v, state.t,
                        state.lr, state.beta1, state.beta2, state.eps, sign)
    return params, state


def make_noisy_batch(base: np.ndarray, nsr: int, gamma: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Replicate each base point ``nsr`` times and add N(0, gamma I) noise."""
    if gamma < 0.0:
        raise ValueError("noise variance must be >= 0")
    base = np.asarray(base, dtype=np.float64)
    rep = np.repeat(base, nsr, axis=0)
    return rep + np.sqrt(gamma) * rng.standard_normal(rep.shape)


@lru_cache(maxsize=64)
def _layout_arrays(spec: networks.MLPSpec):
    sw, sb, _ = spec.layout()
    return sw, sb, spec.widths_array(), spec.acts_array()


class _Net:
    """Precomputed layout arrays for the kernels."""

    def __init__(self, params: networks.Params):
        self.params = params
        self.sw, self.sb, self.widths, self.acts = _layout_arrays(params.spec)

    def forward(self, x):
        return kernels.mlp_forward(
            self.params.flat, self.sw, self.sb, self.widths, self.acts, x
        )


def discriminator_step(config: TrainConfig, disc: networks.Params,
                       gen: networks.Params, real_batch: np.ndarray,
                       latent_batch: np.ndarray, gamma_t: float,
                       adam: AdamState, rng: np.random.Generator | None = None,
                       want_omega: bool = True):
    """One ascent step on F - (gamma_t/2)*Omega w.r.t. the discriminator.

    Generated points are constants here (no gradient reaches the generator).
    In the explicit-noise modes the penalty is disabled and both batches are
    noisy (variance gamma_t, NSR replication).  Returns (F, Omega).
    """
    dn, gn = _Net(disc), _Net(gen)
    fake_batch = gn.forward(latent_batch)
    if config.noise_mode != "off":
        if rng is None:
            raise ValueError("noise modes need the training rng")
        real_batch = make_noisy_batch(real_batch, config.nsr, gamma_t, rng)
        fake_batch = make_noisy_batch(fake_batch, config.nsr, gamma_t, rng)
        penalty_gamma = 0.0
    else:
        penalty_gamma = gamma_t
    grad, f_value, omega = kernels.disc_penalized_grad(
        disc.flat, dn.sw, dn.sb, dn.widths, dn.acts,
        real_batch, fake_batch, penalty_gamma, want_omega,
    )
    if not np.isfinite(f_value) or abs(f_value) > DIVERGENCE_LIMIT:
        raise TrainingDiverged(f"discriminator objective diverged (F={f_value})")
    adam_step(adam, disc, grad, "ascent")
    if not np.all(np.isfinite(disc.flat)):
        raise TrainingDiverged("discriminator parameters became non-finite")
    return f_value, omega


def generator_step(config: TrainConfig, disc: networks.Params,
                   gen: networks.Params, latent_batch: np.ndarray,
                   adam: AdamState, gamma_t: float = 0.0,
                   rng: np.random.Generator | None = None) -> float:
    """One descent step on the selected generator loss (the regularizer
    never appears here).  Returns the loss value."""
    dn, gn = _Net(disc), _Net(gen)
    noise = None
    nsr = 1
    if config.noise_mode == "disc_and_gen":
        if rng is None:
            raise ValueError("noise modes need the training rng")
        nsr = config.nsr
        m = latent_batch.shape[0] * nsr
        noise = np.sqrt(gamma_t) * rng.standard_normal((m, disc.spec.input_dim))
    grad, loss = kernels.gen_loss_grad(
        gen.flat, gn.sw, gn.sb, gn.widths, gn.acts,
        disc.flat, dn.sw, dn.sb, dn.widths, dn.acts,
        latent_batch, config.gen_loss == "alternative", noise, nsr,
    )
    if not np.isfinite(loss) or abs(loss) > DIVERGENCE_LIMIT:
        raise TrainingDiverged(f"generator loss diverged ({loss})")
    adam_step(adam, gen, grad, "descent")
    if not np.all(np.isfinite(gen.flat)):
        raise TrainingDiverged("generator parameters became non-finite")
    return loss


@dataclass
class TraceRow:
    iteration: int
    gamma: float
    f_value: float
    omega: float
    gen_loss: float
    coverage: int
    wall_ms: float


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)

    def append(self, row: TraceRow):
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.asarray([getattr(r, name) for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("iter,gamma,F,Omega,gen_loss,coverage,wall_ms\n")
            for r in self.rows:
                fh.write(
                    f"{r.iteration},{float(r.gamma)!r},{float(r.f_value)!r},"
                    f"{float(r.omega)!r},{float(r.gen_loss)!r},{r.coverage},"
                    f"{float(r.wall_ms)!r}\n"
                )

    @classmethod
    def read_csv(cls, path) -> "TrainTrace":
        trace = cls()
        with open(path, "r", encoding="ascii") as fh:
            header = fh.readline().strip()
            if header != "iter,gamma,F,Omega,gen_loss,coverage,wall_ms":
                raise ValueError(f"{path}: not a trace CSV")
            for line in fh:
                tok = line.strip().split(",")
                trace.append(TraceRow(int(tok[0]), float(tok[1]), float(tok[2]),
                                      float(tok[3]), float(tok[4]), int(tok[5]),
                                      float(tok[6])))
        return trace


def train(config: TrainConfig, spec: mixture.MixtureSpec,
          gen_spec: networks.MLPSpec | None = None,
          disc_spec: networks.MLPSpec | None = None):
    """Run Algorithm 1 on the mixture benchmark.

    Returns (generator Params, discriminator Params, TrainTrace).  Fully
    deterministic given ``config.seed`` (single-threaded kernels); see the
    module docstring for the draw order.  Divergence raises
    :class:`TrainingDiverged` with the partial state attached.
    """
    root = np.random.SeedSequence(config.seed)
    ss_gen, ss_disc, ss_train, ss_eval = root.spawn(4)
    gen_rng = np.random.default_rng(ss_gen)
    disc_rng = np.random.default_rng(ss_disc)
    rng = np.random.default_rng(ss_train)
    eval_rng = np.random.default_rng(ss_eval)

    if gen_spec is None:
        gen_spec = networks.mixture_generator_spec(config.latent_dim, seed=config.seed)
    if disc_spec is None:
        disc_spec = networks.mixture_discriminator_spec(seed=config.seed)
    if gen_spec.output_dim != spec.dim or disc_spec.input_dim != spec.dim:
        raise ValueError("network dimensions do not match the mixture")

    gen = networks.init_params(gen_spec, gen_rng)
    disc = networks.init_params(disc_spec, disc_rng)
    adam_d = AdamState.fresh(disc.spec.n_params, config.disc_lr,
                             config.adam_beta1, config.adam_beta2, config.adam_eps)
    adam_g = AdamState.fresh(gen.spec.n_params, config.gen_lr,
                             config.adam_beta1, config.adam_beta2, config.adam_eps)

    m = config.batch_size
    m_base = m // config.nsr if config.noise_mode != "off" else m
    trace = TrainTrace()
    t_start = time.perf_counter()

    for t in range(1, config.total_iters + 1):
        gamma_t = (anneal_gamma(t, config.total_iters, config.gamma0, config.alpha)
                   if config.annealing else config.gamma_fixed)
        log_now = (t % config.checkpoint_every == 0) or (t == config.total_iters)
        try:
            f_value = omega = 0.0
            for _ in range(config.n_disc_steps):
                real = mixture.sample_mixture(spec, m_base, rng)
                latents = mixture.latent_sample(m_base, config.latent_dim, rng)
                f_value, omega = discriminator_step(
                    config, disc, gen, real, latents, gamma_t, adam_d, rng,
                    want_omega=log_now,
                )
            gen_base = m // config.nsr if config.noise_mode == "disc_and_gen" else m
            latents = mixture.latent_sample(gen_base, config.latent_dim, rng)
            gen_loss = generator_step(config, disc, gen, latents, adam_g,
                                      gamma_t, rng)
        except TrainingDiverged as exc:
            exc.gen, exc.disc, exc.trace, exc.iteration = gen, disc, trace, t
            raise
        if log_now:
            coverage = -1
            if config.eval_samples > 0:
                z_eval = mixture.latent_sample(config.eval_samples,
                                               config.latent_dim, eval_rng)
                samples = _Net(gen).forward(z_eval)
                coverage = protocol.mode_coverage(samples, spec).covered
            wall = (time.perf_counter() - t_start) * 1e3 if config.timing else 0.0
            trace.append(TraceRow(t, float(gamma_t), float(f_value),
                                  float(omega), float(gen_loss), coverage,
                                  wall))
    return gen, disc, trace
