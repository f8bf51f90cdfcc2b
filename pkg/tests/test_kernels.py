import os

import numpy as np
import pytest

from ganreg import divergences as dv
from ganreg import kernels, mixture, networks

from conftest import (build_disc_objective_tape, fd_grad, rel_err,
                      sample_kink_free, tape_flat_grad)
from ganreg import diffcore


pytestmark = pytest.mark.skipif(
    not kernels.HAVE_NUMBA and os.environ.get("GANREG_KERNELS") == "numba",
    reason="numba requested but unavailable",
)

ARCHS = [
    networks.MLPSpec(3, (5, 4, 1), ("tanh", "tanh", "linear")),
    networks.MLPSpec(3, (6, 1), ("leaky_relu", "linear")),
    networks.MLPSpec(3, (5, 4, 1), ("tanh", "leaky_relu", "linear")),
    networks.MLPSpec(3, (1,), ("linear",)),
    networks.MLPSpec(3, (128, 128, 1), ("leaky_relu", "leaky_relu", "linear")),
]


def _arrays(spec):
    sw, sb, _ = spec.layout()
    return sw, sb, spec.widths_array(), spec.acts_array()


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.mark.parametrize("spec", ARCHS, ids=lambda s: "-".join(s.activations))
def test_forward_matches_networks_forward(spec, backend, rng):
    p = networks.init_params(spec, rng)
    x = rng.standard_normal((9, 3))
    sw, sb, w, a = _arrays(spec)
    got = kernels.mlp_forward(p.flat, sw, sb, w, a, x)
    ref = networks.forward(p, x)
    if backend == "numpy":
        np.testing.assert_array_equal(got, ref)  # same ops, same order
    else:
        np.testing.assert_allclose(got, ref, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("gamma", [0.0, 0.3])
@pytest.mark.parametrize("spec", ARCHS[:4], ids=lambda s: "-".join(s.activations))
def test_disc_grad_matches_tape(spec, gamma, backend, rng):
    p = networks.init_params(spec, rng)
    m = 5
    xr = rng.standard_normal((m, 3))
    xf = rng.standard_normal((m, 3))
    sw, sb, w, a = _arrays(spec)
    grad, f_val, omega = kernels.disc_penalized_grad(
        p.flat, sw, sb, w, a, xr, xf, gamma, True)
    tape, pids, f_node, om_node, obj = build_disc_objective_tape(spec, m, gamma)
    bind = {"Xr": xr, "Xf": xf, **networks.param_bindings(p)}
    vals = diffcore.evaluate(tape, bind)
    ref = tape_flat_grad(tape, obj, pids, bind, spec)
    assert abs(f_val - float(vals[f_node])) < 1e-12
    assert abs(omega - float(vals[om_node])) < 1e-12
    assert np.max(np.abs(grad - ref)) < 1e-12


def test_disc_grad_objective_values(backend, rng):
    """F and Omega returned by the kernel equal the divergences-module
    evaluation of the same batches."""
    spec = ARCHS[0]
    p = networks.init_params(spec, rng)
    xr = rng.standard_normal((8, 3))
    xf = rng.standard_normal((8, 3))
    sw, sb, w, a = _arrays(spec)
    _, f_val, omega = kernels.disc_penalized_grad(
        p.flat, sw, sb, w, a, xr, xf, 0.5, True)
    logits_r = networks.discriminator_forward(p, xr)
    logits_f = networks.discriminator_forward(p, xf)

    def gradsq(x):
        t = diffcore.Tape()
        xn = t.input("x", x.shape)
        pids = []
        from conftest import build_mlp_on
        l = build_mlp_on(t, spec, xn, pids)
        node = diffcore.batch_input_grad_sq_norm(t, l, xn)
        vals = diffcore.evaluate(t, {"x": x, **networks.param_bindings(p)})
        return vals[node]

    assert f_val == pytest.approx(dv.js_objective(logits_r, logits_f), abs=1e-13)
    assert omega == pytest.approx(
        dv.omega_js(logits_r, gradsq(xr), logits_f, gradsq(xf)), abs=1e-13)


def test_disc_grad_gamma_zero_equals_unregularized(backend, rng):
    """gamma = 0 must reduce exactly to the plain JS-GAN discriminator
    gradient (the penalty path contributes nothing, not merely zero)."""
    spec = ARCHS[2]
    p = networks.init_params(spec, rng)
    xr = rng.standard_normal((6, 3))
    xf = rng.standard_normal((6, 3))
    sw, sb, w, a = _arrays(spec)
    grad0, _, _ = kernels.disc_penalized_grad(p.flat, sw, sb, w, a, xr, xf, 0.0, False)
    tape, pids, f_node, _, _ = build_disc_objective_tape(spec, 6, 0.0)
    bind = {"Xr": xr, "Xf": xf, **networks.param_bindings(p)}
    ref = tape_flat_grad(tape, f_node, pids, bind, spec)
    assert np.max(np.abs(grad0 - ref)) < 1e-12


@pytest.mark.parametrize("spec", ARCHS[:3], ids=lambda s: "-".join(s.activations))
def test_disc_grad_vs_fd(spec, backend, rng):
    p, xr, xf = sample_kink_free(spec, 4, rng)
    gamma = 0.7
    sw, sb, w, a = _arrays(spec)
    grad, _, _ = kernels.disc_penalized_grad(p.flat, sw, sb, w, a, xr, xf, gamma, False)

    def obj(flat):
        _, f_val, om = kernels.disc_penalized_grad(flat, sw, sb, w, a, xr, xf,
                                                   gamma, True)
        return f_val - 0.5 * gamma * om

    assert rel_err(grad, fd_grad(obj, p.flat), floor=1e-6) < 1e-4


@pytest.mark.parametrize("alternative", [True, False])
def test_gen_grad_vs_fd(alternative, backend, rng):
    gen_spec = networks.MLPSpec(2, (6, 3), ("tanh", "linear"))
    disc_spec = networks.MLPSpec(3, (5, 1), ("leaky_relu", "linear"))
    pg = networks.init_params(gen_spec, rng)
    pd = networks.init_params(disc_spec, rng)
    z = rng.standard_normal((5, 2))
    gsw, gsb, gw, ga = _arrays(gen_spec)
    dsw, dsb, dw, da = _arrays(disc_spec)
    grad, loss = kernels.gen_loss_grad(pg.flat, gsw, gsb, gw, ga,
                                       pd.flat, dsw, dsb, dw, da, z, alternative)

    def obj(flat):
        x = networks.forward(networks.Params(gen_spec, flat), z)
        l = networks.discriminator_forward(pd, x)
        if alternative:
            return float(-np.mean(dv.log_sigmoid(l)))
        return float(np.mean(dv.log_sigmoid(-l)))

    assert loss == pytest.approx(obj(pg.flat), abs=1e-13)
    assert rel_err(grad, fd_grad(obj, pg.flat), floor=1e-5) < 1e-6


def test_gen_grad_noise_replication(backend, rng):
    """nsr > 1 with additive noise: gradients flow through the replicated
    generator outputs exactly as np.repeat semantics demand."""
    gen_spec = networks.MLPSpec(2, (5, 3), ("tanh", "linear"))
    disc_spec = networks.MLPSpec(3, (4, 1), ("leaky_relu", "linear"))
    pg = networks.init_params(gen_spec, rng)
    pd = networks.init_params(disc_spec, rng)
    z = rng.standard_normal((3, 2))
    nsr = 4
    noise = 0.3 * rng.standard_normal((12, 3))
    gsw, gsb, gw, ga = _arrays(gen_spec)
    dsw, dsb, dw, da = _arrays(disc_spec)
    grad, loss = kernels.gen_loss_grad(pg.flat, gsw, gsb, gw, ga,
                                       pd.flat, dsw, dsb, dw, da,
                                       z, True, noise, nsr)

    def obj(flat):
        x = networks.forward(networks.Params(gen_spec, flat), z)
        xr = np.repeat(x, nsr, axis=0) + noise
        l = networks.discriminator_forward(pd, xr)
        return float(-np.mean(dv.log_sigmoid(l)))

    assert loss == pytest.approx(obj(pg.flat), abs=1e-13)
    assert rel_err(grad, fd_grad(obj, pg.flat, step=1e-6), floor=1e-7) < 1e-6


def test_backends_agree(rng):
    if not kernels.HAVE_NUMBA:
        pytest.skip("numba unavailable")
    spec = ARCHS[4]
    p = networks.init_params(spec, rng)
    xr = rng.standard_normal((32, 3))
    xf = rng.standard_normal((32, 3))
    sw, sb, w, a = _arrays(spec)
    prev = kernels.get_backend()
    out = {}
    for be in ("numpy", "numba"):
        kernels.set_backend(be)
        out[be] = kernels.disc_penalized_grad(p.flat, sw, sb, w, a, xr, xf, 0.1, True)
    kernels.set_backend(prev)
    g1, f1, o1 = out["numpy"]
    g2, f2, o2 = out["numba"]
    scale = np.max(np.abs(g1)) + 1.0
    assert np.max(np.abs(g1 - g2)) / scale < 1e-12
    assert abs(f1 - f2) < 1e-12 and abs(o1 - o2) < 1e-12


def test_kde_backends_agree(rng):
    refs = rng.standard_normal((500, 3))
    queries = rng.standard_normal((64, 3))
    h = np.array([0.3, 0.2, 0.5])
    prev = kernels.get_backend()
    vals = {}
    for be in kernels.available_backends():
        kernels.set_backend(be)
        vals[be] = kernels.kde_eval(queries, refs, h)
    kernels.set_backend(prev)
    if "numba" in vals:
        np.testing.assert_allclose(vals["numba"], vals["numpy"], rtol=1e-12)


def test_kde_parallel_matches_sequential(rng):
    if not kernels.HAVE_NUMBA:
        pytest.skip("numba unavailable")
    refs = rng.standard_normal((300, 2))
    queries = rng.standard_normal((50, 2))
    h = np.array([0.4, 0.4])
    prev = kernels.set_backend("numba")
    seq = kernels.kde_eval(queries, refs, h)
    kernels.set_eval_threads(2)
    try:
        par = kernels.kde_eval(queries, refs, h)
    finally:
        kernels.set_eval_threads(1)
        kernels.set_backend(prev)
    np.testing.assert_allclose(par, seq, rtol=1e-14)


def test_set_backend_validation():
    with pytest.raises(ValueError):
        kernels.set_backend("cython")
    prev = kernels.get_backend()
    assert kernels.set_backend(prev) == prev


def test_backend_determinism(backend, rng):
    spec = ARCHS[2]
    p = networks.init_params(spec, rng)
    xr = rng.standard_normal((8, 3))
    xf = rng.standard_normal((8, 3))
    sw, sb, w, a = _arrays(spec)
    r1 = kernels.disc_penalized_grad(p.flat, sw, sb, w, a, xr, xf, 0.2, True)
    r2 = kernels.disc_penalized_grad(p.flat, sw, sb, w, a, xr, xf, 0.2, True)
    np.testing.assert_array_equal(r1[0], r2[0])
    assert r1[1] == r2[1] and r1[2] == r2[2]
