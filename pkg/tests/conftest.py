import numpy as np
import pytest

from ganreg import diffcore, networks


def fd_grad(fn, x0, step=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += step
        xm = x0.copy()
        xm[i] -= step
        g[i] = (fn(xp) - fn(xm)) / (2.0 * step)
    return g


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def build_mlp_on(tape, spec, x_node, pids):
    """Forward pass of ``spec`` on an existing tape, reusing parameter leaves."""
    h = x_node
    for l, (fi, fo) in enumerate(spec.layer_dims()):
        if len(pids) <= l:
            pids.append((tape.input(f"W{l}", (fi, fo)), tape.input(f"b{l}", (fo,))))
        w, b = pids[l]
        a = tape.affine(h, w, b)
        act = spec.activations[l]
        if act == "tanh":
            h = tape.tanh(a)
        elif act == "relu":
            h = tape.relu(a)
        elif act == "leaky_relu":
            h = tape.leaky_relu(a)
        else:
            h = a
    return h


def build_disc_objective_tape(spec, m, gamma):
    """Tape route for F - (gamma/2)*Omega_JS; the oracle the kernels are
    compared against.  Returns (tape, pids, F node, Omega node, objective)."""
    tape = diffcore.Tape()
    xr = tape.input("Xr", (m, spec.input_dim))
    xf = tape.input("Xf", (m, spec.input_dim))
    pids = []
    lr = build_mlp_on(tape, spec, xr, pids)
    lf = build_mlp_on(tape, spec, xf, pids)
    f_node = tape.add(
        tape.mean(tape.log_sigmoid(lr)),
        tape.mean(tape.log_sigmoid(tape.neg(lf))),
    )
    gr = diffcore.batch_input_grad_sq_norm(tape, lr, xr)
    gf = diffcore.batch_input_grad_sq_norm(tape, lf, xf)
    wr = tape.reshape(tape.square(tape.sigmoid(tape.neg(lr))), (m,))
    wf = tape.reshape(tape.square(tape.sigmoid(lf)), (m,))
    om_node = tape.add(tape.mean(tape.mul(wr, gr)), tape.mean(tape.mul(wf, gf)))
    obj = tape.sub(f_node, tape.scale_shift(om_node, gamma / 2.0))
    return tape, pids, f_node, om_node, obj


def tape_flat_grad(tape, obj, pids, bindings, spec):
    grads = diffcore.backward(tape, obj, [i for p in pids for i in p],
                              bindings=bindings)
    return np.concatenate(
        [np.concatenate([grads[w].ravel(), grads[b].ravel()]) for w, b in pids]
    )


def sample_kink_free(spec, m, rng, tol=1e-3, max_tries=100):
    """Params and batches whose hidden pre-activations stay away from the
    relu/leaky-relu kink, so finite differences are trustworthy."""
    for _ in range(max_tries):
        params = networks.init_params(spec, rng)
        xr = rng.standard_normal((m, spec.input_dim))
        xf = rng.standard_normal((m, spec.input_dim))
        h = np.vstack([xr, xf])
        clear = True
        for l in range(spec.n_layers):
            a = h @ params.weight(l) + params.bias(l)
            if l < spec.n_layers - 1 and np.min(np.abs(a)) < tol:
                clear = False
                break
            h = networks._apply_act(a, spec.activations[l])
        if clear:
            return params, xr, xf
    raise RuntimeError("could not find a kink-free configuration")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
