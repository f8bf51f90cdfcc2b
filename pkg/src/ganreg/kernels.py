"""Hot numeric kernels: fused MLP forward/backward passes and KDE evaluation.

Every kernel is written once in a numba-compatible numpy subset and compiled
twice: the plain function is the pure-numpy fallback, the jitted twin is the
default.  Select with the ``GANREG_KERNELS`` environment variable
(``numba`` or ``numpy``) or :func:`set_backend`; ``benchmarks/bench_kernels.py``
compares the two.

The discriminator kernel computes the exact gradient of the penalized
objective  F - (gamma/2) * Omega  with respect to the flat parameter vector,
including the second-order path through the squared input-gradient norms.
Layer layout matches :meth:`ganreg.networks.MLPSpec.layout`.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba.extending import register_jitable

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

    def register_jitable(f):
        return f


LEAKY_SLOPE = 0.2


# ---------------------------------------------------------------------------
# single-source kernels (numba-compatible numpy subset)
# ---------------------------------------------------------------------------

def _act_fwd(a, act_id):
    """Activation value and derivative in one logical pass.

    The numba overload below fuses both outputs into a single sweep; here
    they are vectorized forms (bool arithmetic: np.where with scalar
    branches is an order of magnitude slower and yields the same masks).
    act ids: 0 linear, 1 tanh, 2 relu, 3 leaky-relu (right-derivative
    convention at the kink).
    """
    if act_id == 1:
        h = np.tanh(a)
        return h, 1.0 - h * h
    if act_id == 2:
        d = (a >= 0.0) * 1.0
        return a * d, d
    if act_id == 3:
        d = LEAKY_SLOPE + (1.0 - LEAKY_SLOPE) * (a >= 0.0)
        return a * d, d
    return a, np.ones_like(a)


if HAVE_NUMBA:
    import math as _math

    @numba.extending.overload(_act_fwd)
    def _act_fwd_overload(a, act_id):
        def impl(a, act_id):
            n, k = a.shape
            h = np.empty((n, k))
            d = np.empty((n, k))
            af = a.reshape(n * k)
            hf = h.reshape(n * k)
            df = d.reshape(n * k)
            if act_id == 1:
                for i in range(n * k):
                    t = _math.tanh(af[i])
                    hf[i] = t
                    df[i] = 1.0 - t * t
            elif act_id == 2:
                for i in range(n * k):
                    v = af[i]
                    if v >= 0.0:
                        hf[i] = v
                        df[i] = 1.0
                    else:
                        hf[i] = 0.0
                        df[i] = 0.0
            elif act_id == 3:
                for i in range(n * k):
                    v = af[i]
                    if v >= 0.0:
                        hf[i] = v
                        df[i] = 1.0
                    else:
                        hf[i] = LEAKY_SLOPE * v
                        df[i] = LEAKY_SLOPE
            else:
                return a, np.ones_like(a)
            return h, d

        return impl


def _mlp_forward(flat, sw, sb, widths, acts, X):
    L = widths.shape[0] - 1
    h = X
    for k in range(L):
        fi = widths[k]
        fo = widths[k + 1]
        W = flat[sw[k] : sw[k] + fi * fo].reshape(fi, fo)
        b = flat[sb[k] : sb[k] + fo]
        a = np.dot(h, W) + b
        if acts[k] == 1:
            h = np.tanh(a)
        elif acts[k] == 2:
            h = a * np.where(a >= 0.0, 1.0, 0.0)
        elif acts[k] == 3:
            h = a * np.where(a >= 0.0, 1.0, LEAKY_SLOPE)
        else:
            h = a
    return h


@register_jitable
def _forward_caches(flat, sw, sb, widths, acts, X):
    """Forward pass keeping activations and the hidden derivative masks."""
    L = widths.shape[0] - 1
    hs = [X]
    ds = []
    h = X
    for k in range(L):
        fi = widths[k]
        fo = widths[k + 1]
        W = flat[sw[k] : sw[k] + fi * fo].reshape(fi, fo)
        b = flat[sb[k] : sb[k] + fo]
        a = np.dot(h, W) + b
        h, d = _act_fwd(a, acts[k])
        hs.append(h)
        ds.append(d)
    return hs, ds


@register_jitable
def _sigmoid(t):
    e = np.exp(-np.abs(t))
    return np.where(t >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


@register_jitable
def _log_sigmoid(t):
    return -(np.log1p(np.exp(-np.abs(t))) + np.maximum(-t, 0.0))


def _disc_penalized_grad(flat, sw, sb, widths, acts, Xr, Xf, gamma, want_omega):
    """Gradient of F - (gamma/2)*Omega w.r.t. the discriminator parameters.

    Returns (grad_flat, F, Omega); Omega is 0.0 when neither requested nor
    needed (gamma == 0 and want_omega False).
    """
    L = widths.shape[0] - 1
    m = Xr.shape[0]
    n = 2 * m
    inv_m = 1.0 / m
    X = np.concatenate((Xr, Xf), axis=0)

    hs, ds = _forward_caches(flat, sw, sb, widths, acts, X)
    logit = hs[L]  # (n, 1)
    s_pos = _sigmoid(logit)       # phi
    s_neg = _sigmoid(-logit)      # 1 - phi

    F = (np.sum(_log_sigmoid(logit[:m])) + np.sum(_log_sigmoid(-logit[m:]))) * inv_m

    need_g = want_omega or gamma != 0.0
    omega = 0.0

    # reverse pass for per-sample input gradients of the logit
    # rs[k] = d logit / d a_k, qs[k] = d logit / d h_k  (qs[0] = d logit / dx)
    qs = []
    rs = []
    for _ in range(L):
        qs.append(np.empty((0, 0)))
        rs.append(np.empty((0, 0)))
    g2 = np.zeros((n, 1))
    if need_g:
        r = np.ones((n, 1))
        rs[L - 1] = r
        for k in range(L - 1, -1, -1):
            fi = widths[k]
            fo = widths[k + 1]
            W = flat[sw[k] : sw[k] + fi * fo].reshape(fi, fo)
            q = np.dot(r, W.T)
            qs[k] = q
            if k > 0:
                r = q * ds[k - 1]
                rs[k - 1] = r
        G = qs[0]
        g2 = np.sum(G * G, axis=1).reshape(n, 1)
        omega = (
            np.sum(s_neg[:m] * s_neg[:m] * g2[:m])
            + np.sum(s_pos[m:] * s_pos[m:] * g2[m:])
        ) * inv_m

    # seed on the logit: dF/dl plus the phi-dependence of the Omega weights
    if gamma != 0.0:
        cP = (s_neg[:m] + gamma * (s_pos[:m] * s_neg[:m] * s_neg[:m] * g2[:m])) * inv_m
        cQ = (-s_pos[m:] - gamma * (s_pos[m:] * s_pos[m:] * s_neg[m:] * g2[m:])) * inv_m
    else:
        cP = s_neg[:m] * inv_m
        cQ = -s_pos[m:] * inv_m
    c = np.concatenate((cP, cQ), axis=0)

    grad = np.zeros(flat.shape[0])

    # contribution A: ordinary backprop from the logit seed.  With a scalar
    # logit the layer deltas are the unit-seed reverse values rs[k] scaled
    # per row by c, so reuse them whenever the gradient pass ran.
    if need_g:
        for k in range(L - 1, -1, -1):
            fi = widths[k]
            fo = widths[k + 1]
            delta = c * rs[k]
            dW = np.dot(hs[k].T, delta)
            grad[sw[k] : sw[k] + fi * fo] += dW.ravel()
            grad[sb[k] : sb[k] + fo] += np.sum(delta, axis=0)
    else:
        delta = c
        for k in range(L - 1, -1, -1):
            fi = widths[k]
            fo = widths[k + 1]
            W = flat[sw[k] : sw[k] + fi * fo].reshape(fi, fo)
            dW = np.dot(hs[k].T, delta)
            grad[sw[k] : sw[k] + fi * fo] += dW.ravel()
            grad[sb[k] : sb[k] + fo] += np.sum(delta, axis=0)
            if k > 0:
                delta = np.dot(delta, W.T) * ds[k - 1]

    # contribution B: the path through the squared gradient norms
    if gamma != 0.0:
        curved = False
        for k in range(L - 1):
            if acts[k] == 1:
                curved = True

        coef = -0.5 * gamma * inv_m
        uP = coef * s_neg[:m] * s_neg[:m]
        uQ = coef * s_pos[m:] * s_pos[m:]
        u = np.concatenate((uP, uQ), axis=0)

        amask = []
        for _ in range(max(L - 1, 1)):
            amask.append(np.empty((0, 0)))
        qbar = 2.0 * (u * qs[0])
        for k in range(L):
            fi = widths[k]
            fo = widths[k + 1]
            W = flat[sw[k] : sw[k] + fi * fo].reshape(fi, fo)
            dW = np.dot(qbar.T, rs[k])
            grad[sw[k] : sw[k] + fi * fo] += dW.ravel()
            if k < L - 1:
                rbar = np.dot(qbar, W)
                qbar = rbar * ds[k]
                if curved:
                    if acts[k] == 1:
                        # tanh'' = -2 * tanh * tanh'
                        amask[k] = (rbar * qs[k + 1]) * (-2.0) * hs[k + 1] * ds[k]
                    else:
                        amask[k] = np.zeros((n, fo))

        # second-derivative terms of the hidden activations; identically
        # zero for piecewise-linear nets, so skip those entirely
        if curved:
            abar = np.empty((0, 0))
            for k in range(L - 2, -1, -1):
                fo2 = widths[k + 2]
                fi2 = widths[k + 1]
                if k == L - 2:
                    abar = amask[k]
                else:
                    Wn = flat[sw[k + 1] : sw[k + 1] + fi2 * fo2].reshape(fi2, fo2)
                    abar = amask[k] + np.dot(abar, Wn.T) * ds[k]
                fi = widths[k]
                fo = widths[k + 1]
                dW = np.dot(hs[k].T, abar)
                grad[sw[k] : sw[k] + fi * fo] += dW.ravel()
                grad[sb[k] : sb[k] + fo] += np.sum(abar, axis=0)

    return grad, F, omega


def _gen_loss_grad(
    gflat, gsw, gsb, gwidths, gacts,
    dflat, dsw, dsb, dwidths, dacts,
    Z, alternative, noise, use_noise, nsr,
):
    """Gradient of the generator loss w.r.t. the generator parameters.

    ``Z`` holds the base latent batch; with ``nsr > 1`` each generated point
    is replicated ``nsr`` times before the (optional) additive noise, and the
    incoming gradients are summed back over the replicas.
    Returns (grad_flat, loss).
    """
    Lg = gwidths.shape[0] - 1
    Ld = dwidths.shape[0] - 1
    mp = Z.shape[0]
    m = mp * nsr
    inv_m = 1.0 / m

    ghs, gds = _forward_caches(gflat, gsw, gsb, gwidths, gacts, Z)
    Xg = ghs[Lg]
    d_amb = Xg.shape[1]
    if nsr > 1:
        Xf = (Xg.reshape(mp, 1, d_amb) + np.zeros((mp, nsr, d_amb))).reshape(m, d_amb)
    else:
        Xf = Xg
    if use_noise:
        Xf = Xf + noise

    dhs, dds = _forward_caches(dflat, dsw, dsb, dwidths, dacts, Xf)
    logit = dhs[Ld]
    if alternative:
        loss = -np.sum(_log_sigmoid(logit)) * inv_m
        seed = -_sigmoid(-logit) * inv_m
    else:
        loss = np.sum(_log_sigmoid(-logit)) * inv_m
        seed = -_sigmoid(logit) * inv_m

    # discriminator backprop to its input (parameters untouched)
    delta = seed
    dX = np.empty((0, 0))
    for k in range(Ld - 1, -1, -1):
        fi = dwidths[k]
        fo = dwidths[k + 1]
        W = dflat[dsw[k] : dsw[k] + fi * fo].reshape(fi, fo)
        deltah = np.dot(delta, W.T)
        if k > 0:
            delta = deltah * dds[k - 1]
        else:
            dX = deltah
    if nsr > 1:
        dXb = np.sum(dX.reshape(mp, nsr, d_amb), axis=1)
    else:
        dXb = dX

    grad = np.zeros(gflat.shape[0])
    delta = dXb
    for k in range(Lg - 1, -1, -1):
        fi = gwidths[k]
        fo = gwidths[k + 1]
        W = gflat[gsw[k] : gsw[k] + fi * fo].reshape(fi, fo)
        dW = np.dot(ghs[k].T, delta)
        grad[gsw[k] : gsw[k] + fi * fo] += dW.ravel()
        grad[gsb[k] : gsb[k] + fo] += np.sum(delta, axis=0)
        if k > 0:
            delta = np.dot(delta, W.T) * gds[k - 1]
    return grad, loss


def _adam_update(flat, grad, m, v, t, lr, beta1, beta2, eps, sign):
    """One bias-corrected Adam step, in place.

    Elementwise rounding order matches the vectorized textbook form
    (m = b1*m + (1-b1)*g etc.), so both twins give bit-identical parameters.
    """
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    n = flat.shape[0]
    for i in range(n):
        g = grad[i]
        mi = beta1 * m[i] + (1.0 - beta1) * g
        vi = beta2 * v[i] + (1.0 - beta2) * (g * g)
        m[i] = mi
        v[i] = vi
        flat[i] += sign * (lr * (mi / c1) / (np.sqrt(vi / c2) + eps))


def _adam_update_np(flat, grad, m, v, t, lr, beta1, beta2, eps, sign):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    flat += sign * (lr * mhat / (np.sqrt(vhat) + eps))


def _kde_eval_loop(queries, refs, h):
    """Gaussian product-kernel density, one query at a time (jit-friendly)."""
    nq = queries.shape[0]
    nr = refs.shape[0]
    d = refs.shape[1]
    lognorm = -0.5 * d * np.log(2.0 * np.pi) - np.log(float(nr))
    for j in range(d):
        lognorm -= np.log(h[j])
    norm = np.exp(lognorm)
    out = np.empty(nq)
    for i in range(nq):
        acc = 0.0
        for j in range(nr):
            e = 0.0
            for k in range(d):
                z = (queries[i, k] - refs[j, k]) / h[k]
                e += z * z
            acc += np.exp(-0.5 * e)
        out[i] = acc * norm
    return out


def _kde_eval_np(queries, refs, h, chunk: int = 128):
    """Vectorized fallback of :func:`_kde_eval_loop` (chunked broadcasting)."""
    nq, d = queries.shape
    nr = refs.shape[0]
    lognorm = -0.5 * d * np.log(2.0 * np.pi) - np.log(float(nr)) - np.sum(np.log(h))
    norm = np.exp(lognorm)
    out = np.empty(nq)
    scaled_refs = refs / h
    for s in range(0, nq, chunk):
        q = queries[s : s + chunk] / h
        e = np.sum((q[:, None, :] - scaled_refs[None, :, :]) ** 2, axis=2)
        out[s : s + chunk] = np.exp(-0.5 * e).sum(axis=1) * norm
    return out


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

_NUMPY_IMPL = {
    "mlp_forward": _mlp_forward,
    "disc_penalized_grad": _disc_penalized_grad,
    "gen_loss_grad": _gen_loss_grad,
    "kde_eval": _kde_eval_np,
    "adam_update": _adam_update_np,
}

if HAVE_NUMBA:
    _NUMBA_IMPL = {
        "mlp_forward": numba.njit(cache=True)(_mlp_forward),
        "disc_penalized_grad": numba.njit(cache=True)(_disc_penalized_grad),
        "gen_loss_grad": numba.njit(cache=True)(_gen_loss_grad),
        "kde_eval": numba.njit(cache=True)(_kde_eval_loop),
        "adam_update": numba.njit(cache=True)(_adam_update),
    }

    @numba.njit(cache=True, parallel=True)
    def _kde_eval_parallel(queries, refs, h):
        # per-query results are independent, so the thread count does not
        # change values, only scheduling
        nq = queries.shape[0]
        nr = refs.shape[0]
        d = refs.shape[1]
        lognorm = -0.5 * d * np.log(2.0 * np.pi) - np.log(float(nr))
        for j in range(d):
            lognorm -= np.log(h[j])
        norm = np.exp(lognorm)
        out = np.empty(nq)
        for i in numba.prange(nq):
            acc = 0.0
            for j in range(nr):
                e = 0.0
                for k in range(d):
                    z = (queries[i, k] - refs[j, k]) / h[k]
                    e += z * z
                acc += np.exp(-0.5 * e)
            out[i] = acc * norm
        return out
else:  # pragma: no cover - exercised only without numba
    _NUMBA_IMPL = None
    _kde_eval_parallel = None


_EVAL_THREADS = 1


def set_eval_threads(n: int) -> None:
    """Opt-in parallel batch evaluation (currently the KDE kernel)."""
    global _EVAL_THREADS
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _EVAL_THREADS = n
    if HAVE_NUMBA and n > 1:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# Without SVML numba's transcendentals are scalar libm calls, so the
# tanh-heavy generator kernels run faster in numpy while the piecewise-linear
# discriminator kernel and the KDE loops favour the jitted twins; "auto"
# encodes that per-kernel choice.
_AUTO_CHOICE = {
    "mlp_forward": "numpy",
    "disc_penalized_grad": "numba",
    "gen_loss_grad": "numpy",
    "kde_eval": "numba",
    "adam_update": "numba",
}


def available_backends() -> tuple[str, ...]:
    return ("auto", "numba", "numpy") if HAVE_NUMBA else ("numpy",)


def _default_backend() -> str:
    env = os.environ.get("GANREG_KERNELS", "").strip().lower()
    if env:
        if env not in ("auto", "numba", "numpy"):
            raise ValueError(
                f"GANREG_KERNELS must be 'auto', 'numba' or 'numpy', got {env!r}")
        if env in ("auto", "numba") and not HAVE_NUMBA:
            raise ValueError(f"GANREG_KERNELS={env} but numba is not importable")
        return env
    return "auto" if HAVE_NUMBA else "numpy"


_BACKEND = _default_backend()


def get_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> str:
    """Switch kernel backend ('auto', 'numba' or 'numpy'); returns the
    previous one."""
    global _BACKEND
    if name not in available_backends():
        raise ValueError(f"unknown backend {name!r}; have {available_backends()}")
    prev = _BACKEND
    _BACKEND = name
    return prev


def _impl(name):
    mode = _BACKEND
    if mode == "auto":
        mode = _AUTO_CHOICE[name]
    if mode == "numba":
        return _NUMBA_IMPL[name]
    return _NUMPY_IMPL[name]


def mlp_forward(flat, sw, sb, widths, acts, X):
    return _impl("mlp_forward")(flat, sw, sb, widths, acts, X)


def disc_penalized_grad(flat, sw, sb, widths, acts, Xr, Xf, gamma, want_omega=False):
    return _impl("disc_penalized_grad")(
        flat, sw, sb, widths, acts, Xr, Xf, float(gamma), bool(want_omega)
    )


def gen_loss_grad(
    gflat, gsw, gsb, gwidths, gacts,
    dflat, dsw, dsb, dwidths, dacts,
    Z, alternative, noise=None, nsr=1,
):
    use_noise = noise is not None
    if noise is None:
        d_amb = int(dwidths[0])
        noise = np.zeros((Z.shape[0] * nsr, d_amb))
    return _impl("gen_loss_grad")(
        gflat, gsw, gsb, gwidths, gacts,
        dflat, dsw, dsb, dwidths, dacts,
        Z, bool(alternative), noise, use_noise, int(nsr),
    )


def adam_update(flat, grad, m, v, t, lr, beta1, beta2, eps, sign):
    _impl("adam_update")(flat, grad, m, v, int(t), float(lr), float(beta1),
                         float(beta2), float(eps), float(sign))


def kde_eval(queries, refs, h):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    if _EVAL_THREADS > 1 and HAVE_NUMBA and _BACKEND != "numpy":
        return _kde_eval_parallel(queries, refs, h)
    return _impl("kde_eval")(queries, refs, h)
