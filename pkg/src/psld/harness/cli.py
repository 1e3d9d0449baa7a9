"""Command-line entry point.

Subcommands: train, sample, kernel-check, stationarity, gamma-sweep, guide.
Every CSV artifact starts with a comment line recording the master seed, the
config content hash, and the package version.  Exit codes: 0 success,
2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from importlib.metadata import PackageNotFoundError, version as pkg_version

import numpy as np

from ..errors import ConfigError, NumericError
from ..guidance import impute_sample, make_gmm_class_grad_fn, make_guided_score_fn
from ..kernel import kernel_moments_hsm, kernel_moments_ode_oracle
from ..recipe import (BetaSchedule, instantiate_cld, instantiate_psld,
                      instantiate_vpsde, stationarity_residual, validate_recipe)
from ..sampler import SamplerConfig, sample
from ..score import load_model, make_gmm_score_fn, make_model_score_fn, save_model
from . import metrics
from .config import config_hash, default_config_text, load_config, params_from_config
from .datasets import DATASET_NAMES, make_dataset
from .svg import scatter_svg
from .training import TrainConfig, train_loop

try:
    _VERSION = pkg_version("psld")
except PackageNotFoundError:  # running from a checkout
    _VERSION = "0.1.0"

GAMMA_SWEEP = (0.0, 0.005, 0.01, 0.02, 0.25)
_STRIDING = {"us": "uniform", "qs": "quadratic",
             "uniform": "uniform", "quadratic": "quadratic"}


def _artifact_header(seed, cfg_text):
    return f"# seed={seed} config={config_hash(cfg_text)} version={_VERSION}"


def _write_csv(path, header_comment, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header_comment + "\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)


def _load_setup(args):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        cfg = load_config(args.config)
    else:
        text = default_config_text()
        cfg = {}
        from .config import parse_config
        cfg = parse_config(text)
    params, dim = params_from_config(cfg)
    return params, dim, text


def cmd_kernel_check(args) -> int:
    params, dim, cfg_text = _load_setup(args)
    del dim
    t_values = np.linspace(0.02, 1.0, args.points)
    x0 = np.ones(1)
    oracle = kernel_moments_ode_oracle(
        params, np.array([1.0, 0.0]), np.diag([0.0, params.mass * params.gamma0]),
        t=1.0, step=args.oracle_step, t_record=t_values)
    rows = []
    worst = 0.0
    for t, om in zip(t_values, oracle):
        cm = kernel_moments_hsm(params, x0, float(t))
        err = max(abs(cm.sxx - om.sxx), abs(cm.sxm - om.sxm),
                  abs(cm.smm - om.smm),
                  float(np.abs(cm.mean() - om.mean()).max()))
        worst = max(worst, err)
        rows.append([f"{t:.6f}", cm.sxx, om.sxx, cm.sxm, om.sxm,
                     cm.smm, om.smm, err])
    _write_csv(args.out, _artifact_header(args.seed, cfg_text),
               ["t", "sxx_closed", "sxx_ode", "sxm_closed", "sxm_ode",
                "smm_closed", "smm_ode", "max_abs_err"], rows)
    print(f"kernel-check: {args.points} times, worst |closed - oracle| = {worst:.3e}")
    return 0


def cmd_stationarity(args) -> int:
    params, _, cfg_text = _load_setup(args)
    specs = [
        ("psld", instantiate_psld(params, dim=1)),
        ("cld", instantiate_cld(nu_bar=params.mass * params.nu,
                                mass_inv=params.mass_inv,
                                beta_bar=_halved(params.beta), dim=1)),
        ("vpsde", instantiate_vpsde(dim=1)),
    ]
    rows = []
    for name, spec in specs:
        rep = validate_recipe(spec)
        resid = stationarity_residual(spec, h=args.h)
        rows.append([name, rep.psd_ok, rep.skew_ok, f"{resid:.6e}"])
        print(f"{name}: psd_ok={rep.psd_ok} skew_ok={rep.skew_ok} "
              f"residual={resid:.3e}")
    if args.out:
        _write_csv(args.out, _artifact_header(args.seed, cfg_text),
                   ["process", "psd_ok", "skew_ok", "residual"], rows)
    return 0


def _halved(beta: BetaSchedule) -> BetaSchedule:
    if beta.kind == "constant":
        return BetaSchedule(kind="constant", beta_const=0.5 * beta.beta_const)
    return BetaSchedule(kind="linear", beta_min=0.5 * beta.beta_min,
                        beta_max=0.5 * beta.beta_max)


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(kind=args.sampler, nfe_budget=args.nfe,
                         striding=_STRIDING[args.striding],
                         ode_rtol=args.rtol, ode_atol=args.rtol)


def cmd_sample(args) -> int:
    params, dim, cfg_text = _load_setup(args)
    rng = np.random.default_rng(args.seed)
    data_rng, sample_rng = (np.random.default_rng(s)
                            for s in np.random.SeedSequence(args.seed).spawn(2))
    data, gmm, _ = make_dataset(args.data, max(args.batch, 2), data_rng, params)
    if args.checkpoint:
        model = load_model(args.checkpoint)
        score_fn = make_model_score_fn(model, params)
    else:
        score_fn = make_gmm_score_fn(gmm, params)
    config = _sampler_config(args)
    run = sample(params, score_fn, config, args.batch, dim, sample_rng)
    del rng
    columns = (["chain_id"] + [f"x{i + 1}" for i in range(dim)]
               + [f"m{i + 1}" for i in range(dim)])
    rows = [[i] + [f"{v:.10g}" for v in row] for i, row in enumerate(run.states)]
    _write_csv(args.out, _artifact_header(args.seed, cfg_text), columns, rows)
    print(f"sample: wrote {args.batch} chains, nfe={run.nfe_used}")
    if args.plot:
        scatter_svg([("data", data[:, :2]), ("generated", run.data(dim)[:, :2])],
                    args.plot)
    return 0


def cmd_train(args) -> int:
    from ..score import ScoreModel

    params, dim, cfg_text = _load_setup(args)
    seq = np.random.SeedSequence(args.seed).spawn(2)
    data_rng = np.random.default_rng(seq[0])
    init_rng = np.random.default_rng(seq[1])
    data, _, _ = make_dataset(args.data, args.train_size, data_rng, params)
    model = ScoreModel.create(dim=dim, rng=init_rng)
    config = TrainConfig(iterations=args.iterations, batch_size=args.batch,
                         learning_rate=args.lr, seed=args.seed)
    result = train_loop(model, data, params, config=config)
    save_model(result.ema_model, args.out)
    if args.log:
        rows = [[it, f"{loss:.6f}", f"{gn:.6f}", f"{sec:.3f}"]
                for it, loss, gn, sec in result.log]
        _write_csv(args.log, _artifact_header(args.seed, cfg_text),
                   ["iteration", "loss", "grad_norm", "wallclock_s"], rows)
    final = np.mean([row[1] for row in result.log[-100:]]) if result.log else math.nan
    print(f"train: {args.iterations} iterations, final mean loss {final:.4f}, "
          f"checkpoint {args.out}")
    return 0


def cmd_gamma_sweep(args) -> int:
    cfg_text = default_config_text()
    rows = []
    for gamma in GAMMA_SWEEP:
        from ..recipe import PsldParams
        params = PsldParams.critically_damped(gamma)
        seq = np.random.SeedSequence(args.seed).spawn(3)
        data_rng, fresh_rng, sample_rng = map(np.random.default_rng, seq)
        data, gmm, _ = make_dataset(args.data, args.batch, data_rng, params)
        fresh, _, _ = make_dataset(args.data, args.batch, fresh_rng, params)
        score_fn = make_gmm_score_fn(gmm, params)
        config = _sampler_config(args)
        run = sample(params, score_fn, config, args.batch, 2, sample_rng)
        rep = metrics.report(run.data(2), fresh, run.nfe_used,
                             rng=np.random.default_rng(args.seed))
        rows.append([gamma, f"{rep.energy_dist:.6e}", f"{rep.sliced_w2:.6e}",
                     f"{rep.mean_err:.6e}", f"{rep.cov_err:.6e}", rep.nfe])
        print(f"gamma={gamma}: energy={rep.energy_dist:.4e} "
              f"sw2={rep.sliced_w2:.4e} nfe={rep.nfe}")
    _write_csv(args.out, _artifact_header(args.seed, cfg_text),
               ["gamma", "energy_dist", "sliced_w2", "mean_err", "cov_err",
                "nfe"], rows)
    return 0


def cmd_guide(args) -> int:
    params, dim, cfg_text = _load_setup(args)
    seq = np.random.SeedSequence(args.seed).spawn(2)
    data_rng, sample_rng = map(np.random.default_rng, seq)
    data, gmm, _ = make_dataset(args.data, max(args.batch, 2), data_rng, params)
    score_fn = make_gmm_score_fn(gmm, params)
    config = _sampler_config(args)

    if args.mask:
        mask = np.array([bool(int(v)) for v in args.mask.split(",")])
        observed = np.array([float(v) for v in args.observed.split(",")])
        states = impute_sample(params, score_fn, observed, mask, config,
                               args.batch, sample_rng)
        tag_col = "observed"
        tags = ["".join(str(int(v)) for v in mask)] * args.batch
    else:
        grad_fn = make_gmm_class_grad_fn(gmm, params, args.label)
        guided = make_guided_score_fn(score_fn, grad_fn, args.weight)
        run = sample(params, guided, config, args.batch, dim, sample_rng)
        states = run.states
        tag_col = "label"
        tags = [args.label] * args.batch
    columns = (["chain_id"] + [f"x{i + 1}" for i in range(dim)]
               + [f"m{i + 1}" for i in range(dim)] + [tag_col])
    rows = [[i] + [f"{v:.10g}" for v in row] + [tag]
            for i, (row, tag) in enumerate(zip(states, tags))]
    _write_csv(args.out, _artifact_header(args.seed, cfg_text), columns, rows)
    print(f"guide: wrote {args.batch} chains to {args.out}")
    if args.plot:
        scatter_svg([("data", data[:, :2]), ("guided", states[:, :2])], args.plot)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psld")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("kernel-check", help="closed-form vs oracle moments CSV")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--oracle-step", type=float, default=1e-5)
    p.set_defaults(func=cmd_kernel_check)

    p = sub.add_parser("stationarity", help="Fokker-Planck residual checks")
    add_common(p)
    p.add_argument("--h", type=float, default=0.02)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stationarity)

    def add_sampler_args(p):
        p.add_argument("--sampler", choices=("em", "sscs", "ode"), default="em")
        p.add_argument("--nfe", type=int, default=1000)
        p.add_argument("--striding", choices=tuple(_STRIDING), default="us")
        p.add_argument("--rtol", type=float, default=1e-5)
        p.add_argument("--batch", type=int, default=2000)

    p = sub.add_parser("sample", help="reverse-time generation to CSV/SVG")
    add_common(p)
    add_sampler_args(p)
    p.add_argument("--data", choices=DATASET_NAMES, default="gmm2")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="fit the noise predictor")
    add_common(p)
    p.add_argument("--data", choices=DATASET_NAMES, default="gmm2")
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--train-size", type=int, default=20000)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gamma-sweep",
                       help="sampler metrics across position-noise levels")
    add_common(p)
    add_sampler_args(p)
    p.add_argument("--data", choices=DATASET_NAMES, default="gmm2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gamma_sweep)

    p = sub.add_parser("guide", help="class-conditional or imputation sampling")
    add_common(p)
    add_sampler_args(p)
    p.add_argument("--data", choices=DATASET_NAMES, default="gmm2")
    p.add_argument("--label", type=int, default=0)
    p.add_argument("--weight", type=float, default=5.0)
    p.add_argument("--mask", default=None,
                   help="comma 0/1 flags marking observed coordinates")
    p.add_argument("--observed", default="1.0,0.0",
                   help="comma values for observed coordinates")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_guide)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
