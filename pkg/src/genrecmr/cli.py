"""Command-line entry point.

Subcommands: gen-data, train, reconstruct, eval, ablate, report. Every
flag can also come from a ``key = value`` config file via ``--config``;
explicit flags win. All commands are deterministic given their flags and
seed, exit 0 on success, and print a single ``error: ...`` line to
stderr otherwise. The ``GENRE_THREADS`` environment variable caps CPU
worker threads.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, parse_config_file, parse_int_list, parse_str_list
from .dataset import DatasetHeader, gen_dataset, load_dataset
from .gcmr import read_gcmr, write_gcmr, write_pgm
from .trainer import (ABLATION_VARIANTS, TrainConfig, apply_thread_env, evaluate,
                      load_checkpoint, run_ablation, summarize_rows, train_run,
                      variant_configs, write_eval_csv)
from .report import generate_report
from .unroll import GeneratorConfig, generator_forward


def _add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None,
                        help="key = value file supplying defaults for any flag")


def _coerce(text: str, action: argparse.Action):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return isinstance(action, argparse._StoreTrueAction)
        if low in ("0", "false", "no", "off"):
            return not isinstance(action, argparse._StoreTrueAction)
        raise ConfigError(f"bad boolean value {text!r} for {action.dest}")
    if action.type is not None:
        return action.type(text)
    return text


def _parse_with_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    probe, _ = parser.parse_known_args(argv)
    if getattr(probe, "config", None):
        file_cfg = parse_config_file(probe.config)
        defaults = {}
        for action in parser._actions:
            if action.dest in file_cfg:
                defaults[action.dest] = _coerce(file_cfg[action.dest], action)
        unknown = set(file_cfg) - {a.dest for a in parser._actions}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        parser.set_defaults(**defaults)
    return parser.parse_args(argv)


# --------------------------------------------------------------------------
# gen-data

def _build_gen_data() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genrecmr gen-data",
                                description="Generate a synthetic multi-coil dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--h", type=int, default=64)
    p.add_argument("--w", type=int, default=64)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--domains", type=int, default=5,
                   help="number of training domains (a held-out domain is always added)")
    p.add_argument("--samples-per-domain", type=int, default=8)
    p.add_argument("--adjacent", type=int, default=5)
    p.add_argument("--acs-lines", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    _add_config_flag(p)
    return p


def _cmd_gen_data(args: argparse.Namespace) -> int:
    header = DatasetHeader(h=args.h, w=args.w, frames=args.frames, coils=args.coils,
                           domains=args.domains,
                           samples_per_domain=args.samples_per_domain,
                           adjacent=args.adjacent, acs_lines=args.acs_lines,
                           seed=args.seed)
    ds = gen_dataset(args.out, header)
    print(f"wrote {len(ds.samples)} samples "
          f"({args.domains} training domains + held-out) to {args.out}")
    return 0


# --------------------------------------------------------------------------
# train

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--unrolls", type=int, default=4,
                   help="number of unrolled stages (full-scale setting: 16)")
    p.add_argument("--accel-set", default="8,16,24",
                   help="comma-separated acceleration factors, ascending")
    p.add_argument("--trajectory", default="uniform,gaussian,radial",
                   help="comma-separated sampling trajectories to train on")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--dtype", default="float64", choices=("float64", "float32"))
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--variant", default="full", choices=ABLATION_VARIANTS,
                   help="mechanism switch used by the ablation study")


def _build_train() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genrecmr train",
                                description="Train the unrolled reconstructor")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    _add_train_flags(p)
    _add_config_flag(p)
    return p


def _make_configs(args: argparse.Namespace,
                  header) -> tuple[TrainConfig, GeneratorConfig]:
    cfg = TrainConfig(epochs=args.epochs,
                      accelerations=parse_int_list(args.accel_set),
                      trajectories=parse_str_list(args.trajectory),
                      seed=args.seed, lr=args.lr, dtype=args.dtype,
                      max_iterations=args.max_iterations)
    gen_cfg = GeneratorConfig(unrolls=args.unrolls, adjacent=header.adjacent,
                              coils=header.coils, acs_lines=header.acs_lines,
                              dtype=cfg.torch_dtype)
    return variant_configs(args.variant, cfg, gen_cfg)


def _cmd_train(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    cfg, gen_cfg = _make_configs(args, dataset.header)
    state = train_run(dataset, args.out, cfg, gen_cfg=gen_cfg,
                      resume=args.resume, progress=print)
    print(f"training done at step {state.global_step}; "
          f"final checkpoint: {Path(args.out) / 'ckpt_final.gckp'}")
    return 0


# --------------------------------------------------------------------------
# reconstruct

def _build_reconstruct() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genrecmr reconstruct",
                                description="Reconstruct one masked k-space stack")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="masked adjacent k-space (.gcmr)")
    p.add_argument("--mask", required=True, help="sampling pattern volume (.gcmr)")
    p.add_argument("--out", required=True, help="output graymap image path")
    p.add_argument("--bits", type=int, default=16, choices=(8, 16))
    _add_config_flag(p)
    return p


def _cmd_reconstruct(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.ckpt)
    dtype = state.gen_cfg.dtype
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    k0 = torch.as_tensor(np.ascontiguousarray(read_gcmr(args.input))).to(cdtype)
    mask = torch.as_tensor(np.ascontiguousarray(read_gcmr(args.mask))).to(dtype)
    with torch.no_grad():
        trace = generator_forward(k0, mask, state.gen)
        image = trace.final_image
    out = Path(args.out)
    write_pgm(out, image.abs().numpy(), bits=args.bits)
    gcmr_out = out.with_suffix(".gcmr")
    write_gcmr(gcmr_out, image.numpy().astype(np.complex64))
    print(f"wrote {out} and {gcmr_out}")
    return 0


# --------------------------------------------------------------------------
# eval

def _build_eval() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genrecmr eval",
                                description="Metric table for a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="unseen", choices=("unseen", "train", "all"))
    p.add_argument("--report", required=True, help="output CSV path")
    p.add_argument("--accel-set", default=None,
                   help="override the checkpoint's acceleration factors")
    p.add_argument("--trajectory", default=None,
                   help="override the checkpoint's trajectories")
    p.add_argument("--seed", type=int, default=0)
    _add_config_flag(p)
    return p


def _cmd_eval(args: argparse.Namespace) -> int:
    state = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    trajectories = (parse_str_list(args.trajectory) if args.trajectory
                    else state.cfg.trajectories)
    accels = (parse_int_list(args.accel_set) if args.accel_set
              else state.cfg.accelerations)
    rows = evaluate(dataset, state.gen, trajectories, accels,
                    seed=args.seed, split=args.split)
    write_eval_csv(rows, args.report)
    summary = summarize_rows(rows)
    print(f"{args.split} split: ssim={summary['ssim']:.4f} "
          f"(zero-filled {summary['zf_ssim']:.4f}), psnr={summary['psnr']:.2f} dB "
          f"(zero-filled {summary['zf_psnr']:.2f} dB) -> {args.report}")
    return 0


# --------------------------------------------------------------------------
# ablate

def _build_ablate() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genrecmr ablate",
                                description="Train and score mechanism-removal variants")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default=",".join(ABLATION_VARIANTS))
    p.add_argument("--seeds", type=int, default=3, help="number of shared seeds")
    _add_train_flags(p)
    _add_config_flag(p)
    return p


def _cmd_ablate(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    cfg, gen_cfg = _make_configs(args, dataset.header)
    variants = parse_str_list(args.variants)
    table = run_ablation(dataset, args.out, cfg, gen_cfg, variants=variants,
                         seeds=tuple(range(args.seeds)), progress=print)
    for row in table:
        print(f"{row['variant']:>12}: ssim {row['ssim_mean']:.4f} "
              f"+/- {row['ssim_std']:.4f}")
    print(f"table written to {Path(args.out) / 'ablation.csv'}")
    return 0


# --------------------------------------------------------------------------
# report

def _build_report() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genrecmr report",
                                description="Render charts and reconstruction panels")
    p.add_argument("--run", required=True, help="completed training run directory")
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None,
                   help="dataset directory (default: recorded in the run)")
    p.add_argument("--accel", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_config_flag(p)
    return p


def _cmd_report(args: argparse.Namespace) -> int:
    written = generate_report(args.run, args.out, data=args.data,
                              accel=args.accel, seed=args.seed)
    print(f"wrote {len(written)} report files to {args.out}")
    return 0


# --------------------------------------------------------------------------

COMMANDS = {
    "gen-data": (_build_gen_data, _cmd_gen_data),
    "train": (_build_train, _cmd_train),
    "reconstruct": (_build_reconstruct, _cmd_reconstruct),
    "eval": (_build_eval, _cmd_eval),
    "ablate": (_build_ablate, _cmd_ablate),
    "report": (_build_report, _cmd_report),
}

_USAGE = ("usage: genrecmr COMMAND [flags]\n\ncommands:\n" +
          "\n".join(f"  {name}" for name in COMMANDS) +
          "\n\nrun 'genrecmr COMMAND --help' for per-command flags")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(_USAGE)
        return 0
    name, rest = argv[0], argv[1:]
    if name not in COMMANDS:
        print(f"error: unknown command {name!r}", file=sys.stderr)
        return 2
    build, run = COMMANDS[name]
    apply_thread_env()
    try:
        args = _parse_with_config(build(), rest)
        return run(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # surface a single parsable line, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
