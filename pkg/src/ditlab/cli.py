"""Command-line entry point.

Subcommands: cost-report, build-check, train, ablate, sample,
caption-stats, sweep. Every subcommand writes a manifest.json with the
fully resolved configuration; reruns with the same manifest produce
byte-identical CSVs. Exit codes: 0 ok, 1 config error, 2 runtime failure,
3 reference-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from . import backbone
from . import captions as caplib
from . import conditioning as condlib
from . import config as cfglib
from . import costmodel
from . import data as datalib
from . import diffusion
from . import serialization
from . import training

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3

_FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


class ConfigError(ValueError):
    pass


def _write_manifest(out_dir, command, payload):
    manifest = {"command": command, "version": __version__}
    manifest.update(payload)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")


def _resolve_config(args):
    """--preset / --config JSON / field flags -> ArchConfig."""
    preset_name = getattr(args, "preset", None)
    if isinstance(preset_name, list):  # sweep allows repeats; base = first
        preset_name = preset_name[0] if preset_name else None
    if getattr(args, "config", None):
        cfg = cfglib.load_config_file(args.config)
    elif preset_name:
        cfg = cfglib.preset(preset_name)
    else:
        cfg = cfglib.ArchConfig(
            family=args.family, hidden_dim=args.h, depth=args.d,
            num_heads=args.n, text_dim=args.text_dim, text_len=args.text_len)
    vr = cfglib.validate(cfg)
    if not vr:
        raise ConfigError("; ".join(vr.violations))
    return cfg


def _add_toy_arch_flags(p, with_preset=True):
    if with_preset:
        p.add_argument("--preset", help="named preset (overrides the toy flags)")
    p.add_argument("--config", help="JSON file of ArchConfig fields")
    p.add_argument("--family", default=cfglib.UVIT, choices=cfglib.FAMILIES)
    p.add_argument("--h", type=int, default=32)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--text-dim", type=int, default=32)
    p.add_argument("--text-len", type=int, default=16)


# ---------------------------------------------------------------------------
# cost-report

def cmd_cost_report(args):
    os.makedirs(args.out, exist_ok=True)
    names = args.preset or sorted(cfglib.PRESETS)
    mode = costmodel.WITH_ATTENTION if args.mode == "full" else costmodel.PROJECTION_ONLY
    lines = [costmodel.CSV_HEADER]
    for name in sorted(names):
        lines.append(costmodel.cost_report(name, mode=mode).csv_row())
    _write_lines(os.path.join(args.out, "cost_report.csv"), lines)
    _write_manifest(args.out, "cost-report",
                    {"presets": sorted(names), "mode": mode})
    print(f"wrote {len(lines) - 1} rows to {args.out}/cost_report.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# build-check

def cmd_build_check(args):
    os.makedirs(args.out, exist_ok=True)
    checks = costmodel.table_comparison(gated_only=True)
    lines = ["name,quantity,computed,expected,rel_err,passed"]
    failed = 0
    for c in checks:
        print(c.line())
        lines.append(f"{c.name},{c.quantity},{c.computed:.6f},{c.expected:.6f},"
                     f"{c.rel_err:.6f},{int(c.passed)}")
        failed += 0 if c.passed else 1
    _write_lines(os.path.join(args.out, "build_check.csv"), lines)
    _write_manifest(args.out, "build-check", {"rows": len(checks)})
    print(f"{len(checks) - failed}/{len(checks)} reference checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK


# ---------------------------------------------------------------------------
# train

def _toy_dataset(args, cfg):
    return datalib.ToyShapeDataset(
        n=args.data_size, latent_size=args.latent_size,
        text_len=cfg.text_len, seed=args.seed + 1000)


def _save_embedder(out_dir, embedder):
    ps = embedder.parameters()
    serialization.save_tensor(os.path.join(out_dir, "text_emb_table.bin"),
                              ps["text_emb.table"].data)
    serialization.save_tensor(os.path.join(out_dir, "text_emb_pos.bin"),
                              ps["text_emb.pos"].data)


def _load_embedder(ckpt_dir, text_len):
    table = serialization.load_tensor(os.path.join(ckpt_dir, "text_emb_table.bin"))
    emb = datalib.ToyTextEmbedder(table.shape[0], table.shape[1], text_len)
    emb.parameters()["text_emb.table"].data = table.copy()
    emb.parameters()["text_emb.pos"].data = serialization.load_tensor(
        os.path.join(ckpt_dir, "text_emb_pos.bin")).copy()
    return emb


def cmd_train(args):
    cfg = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    spec = None
    if args.condition != "none":
        spec = condlib.inpaint_spec(args.condition, cfg)
    tc = training.TrainConfig(
        batch_size=args.batch, total_steps=args.steps, lr=args.lr,
        warmup_steps=min(args.warmup, args.steps), freeze_text=args.freeze_text,
        seed=args.seed)
    dataset = _toy_dataset(args, cfg)
    ds = dataset if spec is None else training._InpaintingDataset(dataset, args.seed)
    resolution = dataset.latent_size * cfg.vae_downsample
    net = backbone.build(cfg, seed=args.seed, resolution=resolution, conditioning=spec)
    embedder = datalib.ToyTextEmbedder(dataset.tokenizer.vocab_size, cfg.text_dim,
                                       cfg.text_len, seed=args.seed)
    log = training.train(net, tc, ds, text_embedder=embedder)
    log.to_csv(os.path.join(args.out, "train_log.csv"))
    ckpt = os.path.join(args.out, "checkpoint")
    serialization.save_checkpoint(ckpt, net)
    _save_embedder(ckpt, embedder)
    _write_manifest(args.out, "train", {
        "arch": cfg.to_dict(), "train": tc.to_dict(),
        "condition": args.condition, "data_size": args.data_size,
        "latent_size": args.latent_size, "resolution": resolution,
        "batch_hash": log.batch_hash,
    })
    print(f"final smoothed loss {log.smoothed_loss():.4f}; "
          f"checkpoint at {ckpt}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate

_ABLATIONS = {
    "skip": ("use_skip", [("skip-on", True), ("skip-off", False)], cfglib.UVIT),
    "text-encoder": ("freeze_text", [("trainable", False), ("frozen", True)],
                     cfglib.CROSSATTN_ADALN_SINGLE),
    "conditioning": ("condition_mode",
                     [("token", cfglib.TOKEN_CONCAT), ("channel", cfglib.CHANNEL_CONCAT)],
                     cfglib.UVIT),
}


def cmd_ablate(args):
    if args.name not in _ABLATIONS:
        raise ConfigError(f"unknown ablation {args.name!r}; have {sorted(_ABLATIONS)}")
    factor, pairs, family = _ABLATIONS[args.name]
    os.makedirs(args.out, exist_ok=True)
    cfg = cfglib.ArchConfig(family=family, hidden_dim=args.h, depth=args.d,
                            num_heads=args.n, text_dim=args.text_dim,
                            text_len=args.text_len)
    tc = training.TrainConfig(batch_size=args.batch, total_steps=args.steps,
                              lr=args.lr, warmup_steps=min(args.warmup, args.steps),
                              seed=args.seed)
    dataset = _toy_dataset(args, cfg)
    variants = [(label, {factor: value}) for label, value in pairs]
    report = training.run_ablation(args.name, variants, tc, cfg, dataset)
    lines = ["name,factor,label,value,seed,smoothed_loss,probe,batch_hash"]
    for row in report.summary_rows():
        lines.append(",".join(str(v) for v in row))
    _write_lines(os.path.join(args.out, "summary.csv"), lines)
    for run in report.runs:
        run.log.to_csv(os.path.join(args.out, f"curve_{run.label}.csv"))
    _write_manifest(args.out, "ablate", {
        "name": args.name, "factor": factor, "arch": cfg.to_dict(),
        "train": tc.to_dict(), "data_size": args.data_size,
        "latent_size": args.latent_size,
    })
    for run in report.runs:
        print(f"{run.label}: smoothed loss {run.log.smoothed_loss():.4f}, "
              f"probe {run.probe:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample

def cmd_sample(args):
    os.makedirs(args.out, exist_ok=True)
    if args.ckpt:
        manifest, _ = serialization.load_checkpoint(args.ckpt)
        cfg = cfglib.ArchConfig.from_dict(manifest["config"])
        spec = None
        if manifest.get("conditioning"):
            spec = condlib.ConditioningSpec.from_dict(manifest["conditioning"])
        net = backbone.build(cfg, seed=args.seed, resolution=manifest["resolution"],
                             conditioning=spec)
        serialization.restore_checkpoint(net, args.ckpt)
        embedder = _load_embedder(args.ckpt, cfg.text_len)
    else:
        cfg = _resolve_config(args)
        net = backbone.build(cfg, seed=args.seed,
                             resolution=args.latent_size * cfg.vae_downsample)
        embedder = datalib.ToyTextEmbedder(datalib.ToyTokenizer().vocab_size,
                                           cfg.text_dim, cfg.text_len, seed=args.seed)
    if net.conditioning is not None:
        raise ConfigError("sample does not wire local conditions; "
                          "train an unconditioned model for this command")
    tok = datalib.ToyTokenizer()
    ids, mask = tok.encode(args.prompt, cfg.text_len)
    ids = np.tile(ids, (args.batch, 1))
    mask = np.tile(mask, (args.batch, 1))
    text = embedder.embed_np(ids)
    side = net.latent_side
    scfg = diffusion.SamplerConfig(ddim_steps=args.steps, cfg_scale=args.cfg,
                                   seed=args.seed)
    latents = diffusion.ddim_sample(net, text, scfg, diffusion.make_schedule(),
                                    (args.batch, cfg.latent_channels, side, side),
                                    text_mask=mask)
    serialization.save_tensor(os.path.join(args.out, "latents.bin"), latents)
    serialization.write_latent_grid_ppm(os.path.join(args.out, "preview.ppm"), latents)
    _write_manifest(args.out, "sample", {
        "arch": cfg.to_dict(), "prompt": args.prompt, "steps": args.steps,
        "cfg_scale": args.cfg, "seed": args.seed, "batch": args.batch,
        "ckpt": bool(args.ckpt),
    })
    print(f"wrote {args.batch} latents and preview.ppm to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# caption-stats

def cmd_caption_stats(args):
    os.makedirs(args.out, exist_ok=True)
    paths = args.corpus or [os.path.join(_FIXTURES, "corpus_short.tsv"),
                            os.path.join(_FIXTURES, "corpus_long.tsv")]
    lex = caplib.load_lexicon(args.lexicon or os.path.join(_FIXTURES, "lexicon.tsv"))
    corpora = {}
    for path in paths:
        corpus = caplib.load_corpus(path)
        name = os.path.splitext(os.path.basename(path))[0]
        corpora[name] = corpus
        hist = caplib.length_histogram(corpus, args.bucket_width)
        lines = ["bucket_start,count"]
        for start in sorted(hist.counts):
            lines.append(f"{start},{hist.counts[start]}")
        _write_lines(os.path.join(args.out, f"length_hist_{name}.csv"), lines)
    if len(corpora) >= 2:
        report = caplib.density_report(corpora, lex)
        _write_lines(os.path.join(args.out, "density.csv"), report.csv_lines())
    _write_manifest(args.out, "caption-stats", {
        "corpora": sorted(corpora), "bucket_width": args.bucket_width,
        "lexicon_types": len(lex.phrases),
    })
    print(f"analyzed {len(corpora)} corpora into {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

def _sweep_entries(args):
    if args.vary:
        base = _resolve_config(args)
        entries = [("base", base)]
        for spec in args.vary:
            key, _, values = spec.partition("=")
            if not values:
                raise ConfigError(f"--vary needs key=v1,v2,... got {spec!r}")
            new = []
            for label, cfg in entries:
                for v in values.split(","):
                    field = {"h": "hidden_dim", "d": "depth", "n": "num_heads"}.get(key, key)
                    new.append((f"{label}-{key}{v}", cfg.replace(**{field: int(v)})))
            entries = new
        return entries
    names = args.preset or list(cfglib.SCALED_UVIT_PRESETS)
    return [(n, None) for n in names]


def cmd_sweep(args):
    os.makedirs(args.out, exist_ok=True)
    mode = costmodel.WITH_ATTENTION if args.mode == "full" else costmodel.PROJECTION_ONLY
    merged = [costmodel.CSV_HEADER]
    status = ["name,status,detail"]
    ok = True
    for name, cfg in sorted(_sweep_entries(args)):
        try:
            if cfg is None:
                cfg = cfglib.preset(name)
            vr = cfglib.validate(cfg)
            if not vr:
                raise ConfigError("; ".join(vr.violations))
            report = costmodel.cost_report(name, cfg, mode=mode)
        except (ConfigError, cfglib.UnknownPresetError, ValueError) as e:
            status.append(f"{name},skipped,{str(e).replace(',', ';')}")
            ok = False
            continue
        row = report.csv_row()
        merged.append(row)
        _write_lines(os.path.join(args.out, f"{name}.csv"),
                     [costmodel.CSV_HEADER, row])
        status.append(f"{name},ok,")
    _write_lines(os.path.join(args.out, "sweep.csv"), merged)
    _write_lines(os.path.join(args.out, "sweep_status.csv"), status)
    _write_manifest(args.out, "sweep", {
        "entries": [s.split(",")[0] for s in status[1:]], "mode": mode,
    })
    print(f"{len(merged) - 1} configs swept, {len(status) - 1 - (len(merged) - 1)} skipped")
    return EXIT_OK if ok else EXIT_CONFIG


# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(
        prog="ditlab",
        description="Desk-scale diffusion-transformer laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cost-report", help="analytic params/TMACs CSV")
    p.add_argument("--preset", action="append")
    p.add_argument("--mode", choices=("projection", "full"), default="projection")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cost_report)

    p = sub.add_parser("build-check", help="compare against the reference table")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_check)

    p = sub.add_parser("train", help="toy denoiser training run")
    _add_toy_arch_flags(p)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-size", type=int, default=256)
    p.add_argument("--latent-size", type=int, default=16)
    p.add_argument("--condition", choices=("none", "token", "channel"), default="none")
    p.add_argument("--freeze-text", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="two-variant single-factor comparison")
    p.add_argument("--name", required=True, choices=sorted(_ABLATIONS))
    _add_toy_arch_flags(p)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-size", type=int, default=256)
    p.add_argument("--latent-size", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sample", help="DDIM sampling to latents + PPM preview")
    _add_toy_arch_flags(p)
    p.add_argument("--ckpt", help="checkpoint dir from train")
    p.add_argument("--prompt", default="a red square")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--cfg", type=float, default=3.0)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--latent-size", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("caption-stats", help="length histograms + element density")
    p.add_argument("--corpus", action="append")
    p.add_argument("--lexicon")
    p.add_argument("--bucket-width", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_caption_stats)

    p = sub.add_parser("sweep", help="cost reports across many configs")
    _add_toy_arch_flags(p, with_preset=False)
    p.add_argument("--preset", action="append",
                   help="preset name (repeatable); default: the scaled rows")
    p.add_argument("--vary", action="append",
                   help="key=v1,v2 over h/d/n (cross product)")
    p.add_argument("--mode", choices=("projection", "full"), default="projection")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, cfglib.UnknownPresetError, backbone.InvalidConfigError,
            FileNotFoundError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except training.TrainDivergedError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # runtime failures keep a distinct exit code
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
