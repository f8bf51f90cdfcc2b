"""Gradient-norm regularized JS-GAN training with an analytic verification
suite and the dimensionally-misspecified mixture benchmark."""

from . import (  # noqa: F401
    cli,
    config,
    diffcore,
    divergences,
    kernels,
    mixture,
    networks,
    protocol,
    training,
    verify,
)

__version__ = "0.1.0"
