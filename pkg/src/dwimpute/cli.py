"""Command line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("dwimpute")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _read_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    return json.loads(p.read_text())


def _phantom_generate(args):
    from .phantom import generate_dataset, load_spec_file
    from .manifest import validate_manifest

    spec, counts, fraction = load_spec_file(args.spec or args.config)
    if args.seed is not None:
        spec.seed = args.seed
    manifest = generate_dataset(spec, counts, fraction, args.out)
    problems = validate_manifest(manifest)
    if problems:
        raise RuntimeError("generated manifest is invalid: " + "; ".join(map(str, problems)))
    print(f"wrote {len(manifest.records)} scans to {args.out}")


def _paired_split(manifest, split):
    from .harness import load_scans

    return [(s.t1, s.fa) for s in load_scans(manifest, manifest.select(split, paired=True))]


def _ddpm_train(args):
    from .diffusion import DdpmTrainConfig, DenoiserSpec, scaled_linear_schedule, train_ddpm
    from .manifest import DatasetManifest

    cfg = _read_json(args.config)
    train_cfg = DdpmTrainConfig(**cfg.get("train", {}))
    if args.seed is not None:
        train_cfg.seed = args.seed
    spec = DenoiserSpec.from_dict(cfg.get("denoiser", {}))
    sched = cfg.get("schedule", {})
    schedule = scaled_linear_schedule(sched.get("T", 1000), sched.get("beta_start", 5e-4),
                                      sched.get("beta_end", 1.95e-2))
    manifest = DatasetManifest.load(args.manifest)
    pairs = _paired_split(manifest, "train")
    val = _paired_split(manifest, "val") if cfg.get("track_validation", False) else None
    ckpt = train_ddpm(pairs, train_cfg, spec, schedule, val_pairs=val)
    ckpt.save(args.out)
    print(f"trained on {len(pairs)} pairs, final loss {ckpt.meta['final_loss']:.5f}; saved to {args.out}")


def _ddpm_sample(args):
    from .diffusion import DdpmCheckpoint, sample_conditional
    from .volume import read_volume, write_volume

    ckpt = DdpmCheckpoint.load(args.ckpt)
    fa = sample_conditional(read_volume(args.t1), ckpt, args.seed or 0)
    write_volume(fa, args.out)
    print(f"wrote {args.out}")


def _impute(args):
    from .diffusion import DdpmCheckpoint
    from .harness import load_scans
    from .imputation import AugmentationPlan, ImputationStrategy, build_augmented_training_set
    from .manifest import DatasetManifest
    from .volume import write_volume

    kind = {"ddpm": "DDPM", "blank": "Blank", "avgdx": "AvgDX"}[args.strategy]
    if kind == "DDPM" and not args.ckpt:
        raise UsageError("--ckpt is required for --strategy ddpm")
    plan = AugmentationPlan.parse(args.plan)
    seed = args.seed or 0
    manifest = DatasetManifest.load(args.manifest)
    real_train = [r for r in manifest.select("train") if r.provenance == "real"]
    paired = load_scans(manifest, [r for r in real_train if r.has_dwi])
    pool = load_scans(manifest, [r for r in real_train if r.has_t1 and not r.has_dwi])
    strategy = ImputationStrategy(kind, DdpmCheckpoint.load(args.ckpt) if kind == "DDPM" else None, seed)
    aug = build_augmented_training_set(paired, pool, plan, strategy, np.random.default_rng(seed))

    out = Path(args.out)
    replaced = {}
    for s in aug.imputed:
        write_volume(s.fa, out / s.record.dwi_path)
        replaced[s.record.scan_id] = s.record
    records = []
    for r in manifest.records:
        r = replaced.get(r.scan_id, r)
        # keep original volumes where they are; point at them from the new manifest
        if r.t1_path:
            r.t1_path = os.path.relpath(manifest.resolve(r.t1_path), out)
        if r.dwi_path and r.scan_id not in replaced:
            r.dwi_path = os.path.relpath(manifest.resolve(r.dwi_path), out)
        records.append(r)
    DatasetManifest(records).save(out / "manifest.json")
    print(f"imputed {len(aug.imputed)} FA volumes ({kind}); training set size {len(aug)}")


def _classify_data(manifest, split, modality):
    from .harness import load_scans, to_volume_data

    recs = manifest.select(split)
    recs = [r for r in recs if r.has_t1] if modality == "T1" else [r for r in recs if r.has_dwi]
    if not recs:
        raise UsageError(f"no {modality} scans in split {split}")
    return to_volume_data(load_scans(manifest, recs), modality)


def _classify_train(args):
    from .classifier import BackboneSpec, FitConfig, SearchSpace, build_bimodal, build_unimodal, fit, hyperparameter_search
    from .harness import normalize_modality
    from .manifest import DatasetManifest

    modality = normalize_modality(args.modality)
    cfg = _read_json(args.config) if args.config else {}
    spec = BackboneSpec.from_dict(cfg.get("backbone", {}))
    fit_cfg = FitConfig(**cfg.get("fit", {}))
    if args.seed is not None:
        fit_cfg.seed = args.seed
    manifest = DatasetManifest.load(args.manifest)
    train = _classify_data(manifest, "train", modality)
    val = _classify_data(manifest, "val", modality)
    build = build_bimodal if modality == "T1+DWI" else build_unimodal

    def builder():
        return build(spec, train.dims, seed=fit_cfg.seed)

    if cfg.get("search"):
        result = hyperparameter_search(SearchSpace(**cfg["search"]), builder, train, val, fit_cfg, modality)
        trained = result.best_model
    else:
        trained = fit(builder(), train, val, fit_cfg, modality=modality)
    trained.save(args.out)
    print(f"best epoch {trained.best_epoch}, val accuracy {trained.best_val_accuracy:.4f}; saved to {args.out}")


def _classify_eval(args):
    from .classifier import TrainedClassifier, predict_proba
    from .manifest import DatasetManifest
    from .metrics import ScoreMatrix, classification_metrics

    trained = TrainedClassifier.load(args.model)
    data = _classify_data(DatasetManifest.load(args.manifest), args.split, trained.modality)
    probs, _ = predict_proba(trained.model, data)
    report = classification_metrics(ScoreMatrix(probs, data.labels))
    text = json.dumps(report.to_dict(), indent=1) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _experiment_run(args):
    from .harness import load_grid, run_grid

    cfgs = load_grid(args.config, out_dir=args.out, base_seed=args.seed)
    records = run_grid(cfgs)
    failed = [r for r in records if r.status != "ok"]
    print(f"{len(records) - len(failed)} runs ok, {len(failed)} failed; reports in {cfgs[0].output_dir}")
    if failed:
        raise RuntimeError(f"{len(failed)} runs failed")


def _report(args):
    from .harness import load_run_records, render_table

    src = args.inp or args.config
    if not src or not Path(src).exists():
        raise UsageError("--in must name a directory of run records")
    table = render_table(load_run_records(src))
    text = table.to_csv() if args.format == "csv" else table.to_text()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None)
    common.add_argument("--out", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="dwimpute", description="FA imputation and classification pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ph = sub.add_parser("phantom").add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = ph.add_parser("generate", parents=[common])
    g.add_argument("--spec", default=None)
    g.set_defaults(func=_phantom_generate, required=("out",), one_of=("spec", "config"))

    dd = sub.add_parser("ddpm").add_subparsers(dest="action", required=True, parser_class=_Parser)
    t = dd.add_parser("train", parents=[common])
    t.add_argument("--manifest", required=True)
    t.set_defaults(func=_ddpm_train, required=("config", "out"))
    s = dd.add_parser("sample", parents=[common])
    s.add_argument("--ckpt", required=True)
    s.add_argument("--t1", required=True)
    s.set_defaults(func=_ddpm_sample, required=("out",))

    im = sub.add_parser("impute", parents=[common])
    im.add_argument("--manifest", required=True)
    im.add_argument("--strategy", required=True, choices=("ddpm", "blank", "avgdx"))
    im.add_argument("--plan", required=True)
    im.add_argument("--ckpt", default=None)
    im.set_defaults(func=_impute, required=("out",))

    cl = sub.add_parser("classify").add_subparsers(dest="action", required=True, parser_class=_Parser)
    ct = cl.add_parser("train", parents=[common])
    ct.add_argument("--manifest", required=True)
    ct.add_argument("--modality", required=True, choices=("t1", "dwi", "both"))
    ct.set_defaults(func=_classify_train, required=("out",))
    ce = cl.add_parser("eval", parents=[common])
    ce.add_argument("--model", required=True)
    ce.add_argument("--manifest", required=True)
    ce.add_argument("--split", default="test", choices=("train", "val", "test"))
    ce.set_defaults(func=_classify_eval)

    ex = sub.add_parser("experiment").add_subparsers(dest="action", required=True, parser_class=_Parser)
    er = ex.add_parser("run", parents=[common])
    er.set_defaults(func=_experiment_run, required=("config",))

    rp = sub.add_parser("report", parents=[common])
    rp.add_argument("--in", dest="inp", default=None)
    rp.add_argument("--format", choices=("csv", "text"), default="text")
    rp.set_defaults(func=_report)
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for name in getattr(args, "required", ()):
            if getattr(args, name) is None:
                parser.print_usage(sys.stderr)
                raise UsageError(f"--{name} is required")
        one_of = getattr(args, "one_of", ())
        if one_of and all(getattr(args, n) is None for n in one_of):
            raise UsageError("one of " + ", ".join(f"--{n}" for n in one_of) + " is required")
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    from .harness import ConfigError

    try:
        args.func(args)
    except (UsageError, ConfigError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        log.exception("failed: %s", e)
        return 2
    return 0


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
