"""Command-line surface: data generation, training stages, evaluation, and
report collation.

    groundcap synth-gen     --out runs/data [--config cfg.ini] [--seed 0]
    groundcap pretrain      --data runs/data --out runs/pre
    groundcap joint-train   --data runs/data --out runs/joint [--checkpoint ...]
    groundcap finetune grounding|captioning --data ... --out ...
    groundcap eval grounding|captioning|detection --data ... --out ...
                            (--checkpoint ckpt | --preds file [--gts file])
    groundcap report        --runs dirA dirB ... --out report.csv
    groundcap ablation a|b|c|d|e --data ... --out ...

The data directory defaults to $GROUNDCAP_DATA_ROOT. Every command writes a
manifest.json next to its outputs; reruns with the same config and seed
produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

from . import records
from .configio import AppConfig, ConfigError, load_config, write_manifest
from .data import build_shared_vocab, clean_samples, synth_samples
from .decoding import evaluate_captioning, evaluate_grounding
from .metrics import (
    captioning_csv,
    captioning_report,
    grounding_csv,
    grounding_report,
    map_at_k,
)
from .model import ModelConfig, build_model
from .synth import CLASS_NAMES, dataset_stats, generate_scene, synth_pipeline
from .text import Vocabulary
from .training import load_checkpoint, run_stage
from .records import (
    DENSECAP_GTS_FORMAT,
    DENSECAP_PREDS_FORMAT,
    DETECTION_GTS_FORMAT,
    DETECTIONS_FORMAT,
    GROUNDING_PREDS_FORMAT,
    PAIRS_FORMAT,
    SCENES_FORMAT,
)

DATA_ROOT_ENV = "GROUNDCAP_DATA_ROOT"

ABLATIONS = {
    "a": "direct from scratch",
    "b": "joint from scratch",
    "c": "initial pre-trained",
    "d": "direct fine-tuned",
    "e": "joint fine-tuned",
}


class CliError(Exception):
    pass


def _data_dir(args) -> str:
    path = args.data or os.environ.get(DATA_ROOT_ENV)
    if not path:
        raise CliError(f"no data directory: pass --data or set {DATA_ROOT_ENV}")
    if not os.path.isdir(path):
        raise CliError(f"data directory not found: {path}")
    return path


def _config(args) -> AppConfig:
    if args.config:
        return load_config(args.config)
    return AppConfig()


def _load_scenes(data_dir: str):
    path = os.path.join(data_dir, "scenes.jsonl")
    if not os.path.exists(path):
        raise CliError(f"missing {path} (run synth-gen first)")
    return [records.scene_from_json(r) for r in records.iter_records(path, SCENES_FORMAT)]


def _load_pairs(data_dir: str):
    path = os.path.join(data_dir, "pairs.jsonl")
    if not os.path.exists(path):
        raise CliError(f"missing {path} (run synth-gen first)")
    return [records.pair_from_json(r) for r in records.iter_records(path, PAIRS_FORMAT)]


def _load_vocab(data_dir: str) -> Vocabulary:
    path = os.path.join(data_dir, "vocab.txt")
    if not os.path.exists(path):
        raise CliError(f"missing {path} (run synth-gen first)")
    return Vocabulary.load(path)


def _derived_model_config(cfg: AppConfig, vocab: Vocabulary, scenes) -> ModelConfig:
    """Fit the architecture to the dataset: vocabulary size, aux channels,
    class count, and a proposal cap no smaller than the largest scene."""
    max_masks = max((len(s.masks) for s in scenes), default=cfg.model.max_boxes)
    return replace(
        cfg.model,
        vocab_size=len(vocab),
        n_aux_channels=scenes[0].cloud.aux.shape[1] if scenes else cfg.model.n_aux_channels,
        n_semantic_classes=len(CLASS_NAMES),
        max_boxes=max(cfg.model.max_boxes, max_masks),
        max_len=max(cfg.model.max_len, cfg.decode.max_len),
    )


def _init_model(args, cfg: AppConfig, vocab: Vocabulary, scenes, seed: int):
    if args.checkpoint:
        if not os.path.exists(args.checkpoint):
            raise CliError(f"checkpoint not found: {args.checkpoint}")
        return load_checkpoint(args.checkpoint)
    return build_model(_derived_model_config(cfg, vocab, scenes), seed=seed)


# ---------------------------------------------------------------------------
# commands


def cmd_synth_gen(args) -> None:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else 0
    out = args.out
    os.makedirs(out, exist_ok=True)
    sc = cfg.synth
    scenes = [
        generate_scene(seed + i, n_objects=sc.n_objects or None,
                       points_per_object=sc.points_per_object)
        for i in range(sc.n_scenes)
    ]
    result = synth_pipeline(
        scenes, frame_stride=sc.frame_stride, top_k=sc.top_k,
        sim_threshold=sc.sim_threshold, n_frames=sc.n_frames,
        noise_seed=seed, noise_prob=sc.noise_prob,
    )
    scenes_path = os.path.join(out, "scenes.jsonl")
    pairs_path = os.path.join(out, "pairs.jsonl")
    stats_path = os.path.join(out, "stats.json")
    vocab_path = os.path.join(out, "vocab.txt")
    records.write_records(scenes_path, SCENES_FORMAT,
                          [records.scene_to_json(s) for s in scenes])
    records.write_records(pairs_path, PAIRS_FORMAT,
                          [records.pair_to_json(p) for p in result.pairs])
    with open(stats_path, "w") as fh:
        json.dump(dataset_stats(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    build_shared_vocab(scenes, result.pairs, min_count=sc.vocab_min_count).save(vocab_path)
    write_manifest(out, "synth-gen", args.config, seed, inputs=[],
                   outputs=[scenes_path, pairs_path, stats_path, vocab_path])
    stats = dataset_stats(result)
    print(f"wrote {stats['emitted']} pairs from {stats['scenes']} scenes "
          f"({stats['filtered']} filtered, {stats['empty_crop']} empty) to {out}")


def _train(args, stage: str) -> None:
    cfg = _config(args)
    data_dir = _data_dir(args)
    scenes = _load_scenes(data_dir)
    vocab = _load_vocab(data_dir)
    max_len = cfg.decode.max_len
    if stage == "pretrain":
        samples = synth_samples(_load_pairs(data_dir), vocab, max_len=max_len)
    else:
        samples = clean_samples(scenes, vocab, max_len=max_len)
    train_cfg = cfg.stage(stage)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    model = _init_model(args, cfg, vocab, scenes, seed=train_cfg.seed)
    result = run_stage(model, train_cfg, samples, out_dir=args.out)
    inputs = [os.path.join(data_dir, "scenes.jsonl"), os.path.join(data_dir, "vocab.txt")]
    if stage == "pretrain":
        inputs.append(os.path.join(data_dir, "pairs.jsonl"))
    if args.checkpoint:
        inputs.append(args.checkpoint)
    write_manifest(args.out, stage, args.config, train_cfg.seed, inputs=inputs,
                   outputs=[result.checkpoint_path,
                            os.path.join(args.out, f"{stage}_loss.csv")])
    print(f"{stage}: {result.steps_run} steps"
          f"{' (converged)' if result.converged else ''};"
          f" final loss {result.curve[-1]['total']:.6f}; checkpoint {result.checkpoint_path}")


def cmd_pretrain(args) -> None:
    _train(args, "pretrain")


def cmd_joint_train(args) -> None:
    _train(args, "joint")


def cmd_finetune(args) -> None:
    _train(args, f"finetune_{args.task}")


def _write_csv(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def cmd_eval(args) -> None:
    cfg = _config(args)
    data_dir = _data_dir(args)
    os.makedirs(args.out, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    inputs, outputs = [], []

    if args.task == "grounding":
        if args.preds:
            preds = [records.grounding_pred_from_json(r)
                     for r in records.iter_records(args.preds, GROUNDING_PREDS_FORMAT)]
            inputs.append(args.preds)
        else:
            scenes = _load_scenes(data_dir)
            vocab = _load_vocab(data_dir)
            model = _require_checkpoint(args)
            preds = evaluate_grounding(model, scenes, vocab, max_len=cfg.decode.max_len)
            preds_path = os.path.join(args.out, "grounding_preds.jsonl")
            records.write_records(preds_path, GROUNDING_PREDS_FORMAT,
                                  [records.grounding_pred_to_json(p) for p in preds])
            outputs.append(preds_path)
            inputs += [args.checkpoint, os.path.join(data_dir, "scenes.jsonl")]
        report = grounding_report(preds)
        csv_path = os.path.join(args.out, "grounding.csv")
        _write_csv(csv_path, grounding_csv(report))

    elif args.task == "captioning":
        if args.preds:
            if not args.gts:
                raise CliError("eval captioning --preds also needs --gts")
            preds = [records.densecap_pred_from_json(r)
                     for r in records.iter_records(args.preds, DENSECAP_PREDS_FORMAT)]
            gts = [records.densecap_gt_from_json(r)
                   for r in records.iter_records(args.gts, DENSECAP_GTS_FORMAT)]
            dets = det_gts = None
            inputs += [args.preds, args.gts]
        else:
            scenes = _load_scenes(data_dir)
            vocab = _load_vocab(data_dir)
            model = _require_checkpoint(args)
            preds, gts, dets, det_gts = evaluate_captioning(model, scenes, vocab, cfg.decode)
            for name, fmt, rows in (
                ("densecap_preds.jsonl", DENSECAP_PREDS_FORMAT,
                 [records.densecap_pred_to_json(p) for p in preds]),
                ("densecap_gts.jsonl", DENSECAP_GTS_FORMAT,
                 [records.densecap_gt_to_json(g) for g in gts]),
                ("detections.jsonl", DETECTIONS_FORMAT,
                 [records.detection_to_json(d) for d in dets]),
                ("detection_gts.jsonl", DETECTION_GTS_FORMAT,
                 [records.detection_gt_to_json(g) for g in det_gts]),
            ):
                path = os.path.join(args.out, name)
                records.write_records(path, fmt, rows)
                outputs.append(path)
            inputs += [args.checkpoint, os.path.join(data_dir, "scenes.jsonl")]
        report = captioning_report(preds, gts, dets, det_gts)
        csv_path = os.path.join(args.out, "captioning.csv")
        _write_csv(csv_path, captioning_csv(report))

    else:  # detection
        if args.preds:
            if not args.gts:
                raise CliError("eval detection --preds also needs --gts")
            dets = [records.detection_from_json(r)
                    for r in records.iter_records(args.preds, DETECTIONS_FORMAT)]
            det_gts = [records.detection_gt_from_json(r)
                       for r in records.iter_records(args.gts, DETECTION_GTS_FORMAT)]
            inputs += [args.preds, args.gts]
        else:
            scenes = _load_scenes(data_dir)
            vocab = _load_vocab(data_dir)
            model = _require_checkpoint(args)
            _, _, dets, det_gts = evaluate_captioning(model, scenes, vocab, cfg.decode)
            inputs += [args.checkpoint, os.path.join(data_dir, "scenes.jsonl")]
        lines = ["k,map"]
        for k in (0.25, 0.5):
            lines.append(f"{k},{100.0 * map_at_k(dets, det_gts, k):.2f}")
        csv_path = os.path.join(args.out, "detection.csv")
        _write_csv(csv_path, "\n".join(lines) + "\n")

    outputs.append(csv_path)
    write_manifest(args.out, f"eval {args.task}", args.config, seed,
                   inputs=inputs, outputs=outputs)
    print(f"wrote {csv_path}")


def _require_checkpoint(args):
    if not args.checkpoint:
        raise CliError(f"eval {args.task} needs --checkpoint or --preds")
    if not os.path.exists(args.checkpoint):
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    return load_checkpoint(args.checkpoint)


def _read_csv_map(path: str) -> list[list[str]]:
    with open(path) as fh:
        return list(csv.reader(fh))


def cmd_report(args) -> None:
    """Collate per-run eval CSVs into one table, one row per run."""
    header = ["run", "acc@0.25", "acc@0.5",
              "cider_f1@0.25", "bleu4_f1@0.25", "rougel_f1@0.25",
              "cider_f1@0.5", "bleu4_f1@0.5", "rougel_f1@0.5", "map@0.5"]
    out_rows = [header]
    for run_dir in args.runs:
        row = {name: "" for name in header}
        row["run"] = os.path.basename(os.path.normpath(run_dir))
        gpath = os.path.join(run_dir, "grounding.csv")
        if os.path.exists(gpath):
            rows = _read_csv_map(gpath)
            cols = rows[0]
            for r in rows[1:]:
                if r[0] == "overall":
                    for i, c in enumerate(cols[1:], 1):
                        row[f"acc@{c.split('@')[1]}"] = r[i]
        cpath = os.path.join(run_dir, "captioning.csv")
        if os.path.exists(cpath):
            for r in _read_csv_map(cpath)[1:]:
                if r[0] in ("cider", "bleu4", "rougel"):
                    row[f"{r[0]}_f1@0.25"] = r[3]
                    row[f"{r[0]}_f1@0.5"] = r[6]
                elif r[0].startswith("map@0.5"):
                    row["map@0.5"] = r[1]
        out_rows.append([row[name] for name in header])
    with open(args.out, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(out_rows)
    print(f"wrote {args.out} ({len(args.runs)} runs)")


def cmd_ablation(args) -> None:
    """One of the five training-scheme presets, end to end.

    a: per-task training from scratch; b: joint from scratch; c: synthetic
    pre-training only; d: pre-train then per-task fine-tune; e: pre-train
    then joint fine-tune.
    """
    cfg = _config(args)
    data_dir = _data_dir(args)
    scenes = _load_scenes(data_dir)
    vocab = _load_vocab(data_dir)
    max_len = cfg.decode.max_len
    clean = clean_samples(scenes, vocab, max_len=max_len)
    seed = args.seed if args.seed is not None else 0
    os.makedirs(args.out, exist_ok=True)

    def fresh():
        return build_model(_derived_model_config(cfg, vocab, scenes), seed=seed)

    def stage_of(name, model, samples, subdir):
        tc = replace(cfg.stage(name), seed=seed)
        return run_stage(model, tc, samples, out_dir=os.path.join(args.out, subdir))

    def pretrained():
        model = fresh()
        synth = synth_samples(_load_pairs(data_dir), vocab, max_len=max_len)
        stage_of("pretrain", model, synth, "pretrain")
        return model

    preset = args.preset
    if preset == "a":
        ground_model = fresh()
        stage_of("finetune_grounding", ground_model, clean, "grounding")
        caption_model = fresh()
        stage_of("finetune_captioning", caption_model, clean, "captioning")
    elif preset == "b":
        ground_model = caption_model = fresh()
        stage_of("joint", ground_model, clean, "joint")
    elif preset == "c":
        ground_model = caption_model = pretrained()
    elif preset == "d":
        ground_model = pretrained()
        stage_of("finetune_grounding", ground_model, clean, "grounding")
        caption_model = pretrained()
        stage_of("finetune_captioning", caption_model, clean, "captioning")
    else:  # e
        ground_model = caption_model = pretrained()
        stage_of("joint", ground_model, clean, "joint")

    g_preds = evaluate_grounding(ground_model, scenes, vocab, max_len=max_len)
    _write_csv(os.path.join(args.out, "grounding.csv"), grounding_csv(grounding_report(g_preds)))
    c_preds, c_gts, dets, det_gts = evaluate_captioning(caption_model, scenes, vocab, cfg.decode)
    _write_csv(os.path.join(args.out, "captioning.csv"),
               captioning_csv(captioning_report(c_preds, c_gts, dets, det_gts)))
    write_manifest(args.out, f"ablation {preset}", args.config, seed,
                   inputs=[os.path.join(data_dir, "scenes.jsonl")],
                   outputs=[os.path.join(args.out, "grounding.csv"),
                            os.path.join(args.out, "captioning.csv")])
    print(f"ablation ({preset}) {ABLATIONS[preset]}: wrote {args.out}")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groundcap",
        description="Grounding/captioning pipeline: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, checkpoint=False):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="run seed")
        p.add_argument("--out", required=True, help="output directory")
        if data:
            p.add_argument("--data", default=None,
                           help=f"data directory (default ${DATA_ROOT_ENV})")
        if checkpoint:
            p.add_argument("--checkpoint", default=None, help="checkpoint to start from")

    p = sub.add_parser("synth-gen", help="generate scenes and synthetic pairs")
    common(p, data=False)
    p.set_defaults(fn=cmd_synth_gen)

    p = sub.add_parser("pretrain", help="pre-train on synthetic pairs")
    common(p, checkpoint=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("joint-train", help="joint training on clean data")
    common(p, checkpoint=True)
    p.set_defaults(fn=cmd_joint_train)

    p = sub.add_parser("finetune", help="single-task fine-tuning")
    p.add_argument("task", choices=["grounding", "captioning"])
    common(p, checkpoint=True)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint or prediction files")
    p.add_argument("task", choices=["grounding", "captioning", "detection"])
    common(p, checkpoint=True)
    p.add_argument("--preds", default=None, help="prediction records to score")
    p.add_argument("--gts", default=None, help="ground-truth records (with --preds)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="collate eval CSVs from multiple runs")
    p.add_argument("--runs", nargs="+", required=True, help="run directories")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("ablation", help="run one training-scheme preset (a-e)")
    p.add_argument("preset", choices=sorted(ABLATIONS))
    common(p, checkpoint=False)
    p.set_defaults(fn=cmd_ablation)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (CliError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
