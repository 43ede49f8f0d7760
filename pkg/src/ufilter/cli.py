"""Command-line entry point: ``ufilter {run,oracle,fit,generate,validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .config import ExperimentConfig, validate_config
from .core import Channel
from .em import em_fit
from .errors import CapacityError, ConfigError, InvalidArgumentError, UFilterError
from .experiment import generate_data, run_experiment
from .memory import build_equivalent_channel
from .oracle import JointLaw, dpi_check, lemma4_sweep, phi_estimate

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CAPACITY = 0, 1, 2, 3, 4


def _load_config(args) -> ExperimentConfig:
    try:
        raw = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError([f"cannot read {args.config}: {exc.strerror}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{args.config}: invalid JSON ({exc.msg} at line {exc.lineno})"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a JSON object"])
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "replicas", None) is not None:
        raw["replicas"] = args.replicas
    em = dict(raw.get("em", {}))
    em_flags = (
        ("em_max_iters", "max_iters"),
        ("em_tol", "rel_tol"),
        ("em_restarts", "restarts"),
        ("em_jitter", "init_jitter"),
    )
    for flag, key in em_flags:
        value = getattr(args, flag, None)
        if value is not None:
            em[key] = value
    if em:
        raw["em"] = em
    return validate_config(raw)


def _emit(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def cmd_run(args):
    cfg = _load_config(args)
    report = run_experiment(cfg, workers=args.workers, dump_dir=args.dump_steps)
    _emit(report.to_json(), args.out or cfg.output)
    return EXIT_OK


def cmd_validate(args):
    cfg = _load_config(args)
    _emit(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True), args.out)
    return EXIT_OK


def cmd_generate(args):
    cfg = _load_config(args)
    out = Path(args.out or cfg.output or "data")
    out.mkdir(parents=True, exist_ok=True)
    for r in range(cfg.replicas):
        joint, x, z = generate_data(cfg, r)
        if joint.alphabet > 256:
            raise CapacityError("one-byte symbol files need an alphabet of at most 256")
        (out / f"clean_r{r}.bin").write_bytes(x.astype(np.uint8).tobytes())
        (out / f"noisy_r{r}.bin").write_bytes(z.astype(np.uint8).tobytes())
        meta = {"replica": r, "n": cfg.n, "alphabet": joint.alphabet, "config": cfg.model_dump(mode="json")}
        (out / f"meta_r{r}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_fit(args):
    cfg = _load_config(args)
    channel = cfg.build_channel()
    if args.data:
        z = np.frombuffer(Path(args.data).read_bytes(), dtype=np.uint8).astype(np.int64)
    else:
        _, _, z = generate_data(cfg, 0)
    if isinstance(channel, Channel):
        emission, readout, n_symbols, floor = channel.matrix, None, None, cfg.floor_obj()
    else:
        eq = build_equivalent_channel(channel.gamma, channel.alphabet)
        emission, readout, n_symbols, floor = eq.xi, eq.readout, channel.alphabet, cfg.floor_obj().scaled(channel.alpha)
    M = emission.shape[1]
    if z.size and z.max() >= M:
        raise InvalidArgumentError(f"data contains symbol {int(z.max())} outside the alphabet of size {M}")
    results = []
    for k in cfg.ks:
        model, trace = em_fit(
            z, k, floor.delta(k), emission, cfg.em_config(), readout=readout, n_symbols=n_symbols, stream=(k,)
        )
        if args.trace:
            path = Path(args.trace)
            path = path.with_name(f"{path.stem}_k{k}{path.suffix}") if len(cfg.ks) > 1 else path
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(trace.to_csv())
        results.append(
            {
                "k": k,
                "model": model.to_dict(),
                "log_likelihood": trace.log_likelihoods[-1],
                "iterations": len(trace.log_likelihoods) - 1,
                "converged": trace.converged,
                "chosen_restart": trace.chosen_restart,
            }
        )
    _emit(json.dumps({"n": int(z.size), "fits": results}, indent=2, sort_keys=True), args.out)
    return EXIT_OK


def cmd_oracle(args):
    if args.check == "lemma4":
        gen = rngmod.stream(args.seed or 0, 3)
        result = lemma4_sweep(args.instances, gen, mc_samples=args.mc_samples)
    elif args.check == "dpi":
        result = dpi_check(n_values=range(2, args.n + 1))
    else:
        if not args.config:
            raise ConfigError(["--check phi needs --config"])
        cfg = _load_config(args)
        joint = JointLaw(cfg.build_source(), cfg.build_channel())
        mean, se = phi_estimate(joint, cfg.build_loss(joint.alphabet), cfg.n, cfg.replicas, rngmod.stream(cfg.seed, 4))
        result = {"phi": mean, "se": se, "n": cfg.n, "replicas": cfg.replicas}
    _emit(json.dumps(result, indent=2, sort_keys=True), args.out)
    violations = result.get("violations", 0)
    return EXIT_OK if violations == 0 else EXIT_FAILURE


def _add_em_flags(p):
    p.add_argument("--em-max-iters", type=int)
    p.add_argument("--em-tol", type=float)
    p.add_argument("--em-restarts", type=int)
    p.add_argument("--em-jitter", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="ufilter", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="universal and oracle filters over a (k, epsilon, replica) grid")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--dump-steps", metavar="DIR", help="write per-step CSVs here")
    p.add_argument("--out", help="report path (default: config output, else stdout)")
    p.add_argument("--workers", type=int, default=1)
    _add_em_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="numerical checks against ground truth")
    p.add_argument("--check", choices=["lemma4", "dpi", "phi"], required=True)
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--mc-samples", type=int, default=10_000)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, help="seed for lemma4 (default 0); overrides the config seed for phi")
    p.add_argument("--config")
    p.add_argument("--replicas", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("fit", help="constrained ML fit only")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="noisy symbols, one byte each (default: generate replica 0)")
    p.add_argument("--seed", type=int)
    p.add_argument("--trace", metavar="CSV", help="write the log-likelihood trace")
    p.add_argument("--out")
    _add_em_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("generate", help="write clean and noisy sequences")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except UFilterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
