"""Command line entry point: train / verify / cross-test / sample.

Exit codes: 0 success, 1 usage or config error, 2 training divergence
(a diagnostic checkpoint is still written).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import config as config_mod
from . import kernels, mixture, networks, protocol, training, verify


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ganreg")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for parallel evaluation (opt-in; "
                        "training kernels stay sequential)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the regularized JS-GAN loop")
    t.add_argument("--config", default=None, help="config file (key = value)")
    t.add_argument("--gamma0", type=float, default=None)
    t.add_argument("--alpha", type=float, default=None)
    anneal = t.add_mutually_exclusive_group()
    anneal.add_argument("--anneal", dest="anneal", action="store_true", default=None)
    anneal.add_argument("--no-anneal", dest="anneal", action="store_false")
    t.add_argument("--gamma", type=float, default=None,
                   help="fixed regularization (annealing off)")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--iters", type=int, default=None)
    t.add_argument("--n-disc", type=int, default=None)
    t.add_argument("--gen-loss", choices=training.GEN_LOSSES, default=None)
    t.add_argument("--noise-mode", choices=training.NOISE_MODES, default=None)
    t.add_argument("--nsr", type=int, default=None)
    t.add_argument("--disc-lr", type=float, default=None)
    t.add_argument("--gen-lr", type=float, default=None)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.add_argument("--eval-samples", type=int, default=None)
    t.add_argument("--latent-dim", type=int, default=None)
    t.add_argument("--timing", action="store_true", default=None,
                   help="record real wall times in the trace (breaks "
                        "byte-identical reruns)")

    v = sub.add_parser("verify", help="run the analytic identity checks")
    v.add_argument("--all", action="store_true", help="run every check (default)")
    v.add_argument("--check", action="append", default=None,
                   metavar="NAME", help="run one named check (repeatable)")
    v.add_argument("--grid-nodes", type=int, default=None)
    v.add_argument("--grid-lo", type=float, default=None)
    v.add_argument("--grid-hi", type=float, default=None)
    v.add_argument("--mc-draws", type=int, default=None)

    c = sub.add_parser("cross-test", help="pairwise discriminator cross-testing")
    c.add_argument("model_a", help="directory with gen.mlp and disc.mlp")
    c.add_argument("model_b", help="directory with gen.mlp and disc.mlp")
    c.add_argument("--n", type=int, default=1000,
                   help="evaluation samples per set")

    s = sub.add_parser("sample", help="draw samples from a trained generator")
    s.add_argument("model", help="directory with gen.mlp")
    s.add_argument("--n", type=int, default=1000)
    return p


def _train_overrides(args) -> dict:
    pairs = {
        ("train", "gamma0"): args.gamma0,
        ("train", "alpha"): args.alpha,
        ("train", "annealing"): args.anneal,
        ("train", "gamma"): args.gamma,
        ("train", "batch_size"): args.batch_size,
        ("train", "total_iters"): args.iters,
        ("train", "n_disc_steps"): args.n_disc,
        ("train", "gen_loss"): args.gen_loss,
        ("train", "noise_mode"): args.noise_mode,
        ("train", "nsr"): args.nsr,
        ("train", "disc_lr"): args.disc_lr,
        ("train", "gen_lr"): args.gen_lr,
        ("train", "checkpoint_every"): args.checkpoint_every,
        ("train", "eval_samples"): args.eval_samples,
        ("train", "latent_dim"): args.latent_dim,
        ("train", "timing"): args.timing,
        ("train", "seed"): args.seed,
        ("output", "dir"): args.out,
    }
    # a fixed --gamma implies the non-annealed schedule unless stated
    if args.gamma is not None and args.anneal is None:
        pairs[("train", "annealing")] = False
    return {k: v for k, v in pairs.items() if v is not None}


def _write_model_dir(out_dir, gen, disc) -> None:
    networks.save_params(os.path.join(out_dir, "gen.mlp"), gen)
    networks.save_params(os.path.join(out_dir, "disc.mlp"), disc)


def cmd_train(args) -> int:
    try:
        file_values = config_mod.read_config(args.config) if args.config else None
        cfg = config_mod.resolve(file_values, _train_overrides(args))
    except (config_mod.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    config_mod.write_config(cfg, os.path.join(out_dir, "config.ini"))
    try:
        gen, disc, trace = training.train(cfg.train, cfg.mixture)
    except training.TrainingDiverged as exc:
        print(f"training diverged at iteration {exc.iteration}: {exc}",
              file=sys.stderr)
        if exc.gen is not None and exc.disc is not None:
            _write_model_dir(out_dir, exc.gen, exc.disc)
        if exc.trace is not None:
            exc.trace.write_csv(os.path.join(out_dir, "trace.csv"))
        return 2
    trace.write_csv(os.path.join(out_dir, "trace.csv"))
    _write_model_dir(out_dir, gen, disc)
    dump_rng = np.random.default_rng(np.random.SeedSequence([cfg.train.seed, 4242]))
    z = mixture.latent_sample(cfg.final_samples, cfg.train.latent_dim, dump_rng)
    pts = networks.generator_forward(gen, z)
    kde = mixture.kde_fit(pts)
    mixture.write_sample_csv(os.path.join(out_dir, "samples.csv"), pts,
                             mixture.kde_eval(kde, pts))
    return 0


def cmd_verify(args) -> int:
    names = args.check if args.check else None
    if names:
        unknown = [n for n in names if n not in verify.CHECKS]
        if unknown:
            print(f"error: unknown check(s): {', '.join(unknown)}; "
                  f"known: {', '.join(verify.CHECKS)}", file=sys.stderr)
            return 1
    grid_kwargs = {}
    if args.grid_lo is not None:
        grid_kwargs["lo"] = args.grid_lo
    if args.grid_hi is not None:
        grid_kwargs["hi"] = args.grid_hi
    if args.grid_nodes is not None:
        grid_kwargs["n"] = args.grid_nodes
    grid = verify.QuadGrid(**grid_kwargs)
    results = verify.run_checks(
        names, grid,
        mc_draws=args.mc_draws if args.mc_draws else 1_000_000,
        seed=args.seed if args.seed is not None else 0,
    )
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    verify.write_report(results, os.path.join(out_dir, "report.csv"))
    for r in results:
        print(r.row())
    return 0 if all(r.passed for r in results) else 1


def _load_model(path) -> protocol.GanModel:
    gen = networks.load_params(os.path.join(path, "gen.mlp"))
    disc = networks.load_params(os.path.join(path, "disc.mlp"))
    return protocol.GanModel(gen, disc)


def cmd_cross_test(args) -> int:
    if args.n < 1:
        print("error: need --n >= 1 evaluation samples", file=sys.stderr)
        return 1
    try:
        model_a = _load_model(args.model_a)
        model_b = _load_model(args.model_b)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5151]))
    spec = mixture.MixtureSpec()
    real_test = mixture.sample_mixture(spec, args.n, rng)
    report = protocol.cross_test(model_a, model_b, real_test, args.n, rng)
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "cross_test.csv")
    report.write_csv(path)
    with open(path, "r", encoding="ascii") as fh:
        sys.stdout.write(fh.read())
    return 0


def cmd_sample(args) -> int:
    if args.n < 1:
        print("error: need --n >= 1 samples", file=sys.stderr)
        return 1
    try:
        gen = networks.load_params(os.path.join(args.model, "gen.mlp"))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(np.random.SeedSequence([seed, 6363]))
    z = mixture.latent_sample(args.n, gen.spec.input_dim, rng)
    pts = networks.generator_forward(gen, z)
    kde = mixture.kde_fit(pts)
    out = args.out or "samples.csv"
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    mixture.write_sample_csv(out, pts, mixture.kde_eval(kde, pts))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads > 1:
        kernels.set_eval_threads(args.threads)
    handlers = {
        "train": cmd_train,
        "verify": cmd_verify,
        "cross-test": cmd_cross_test,
        "sample": cmd_sample,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
