"""Command-line entry point covering the full pipeline.

Subcommands wrap one library operation each: bpe-learn, bpe-apply, train,
distill-init, translate, average, bleu, profile, sweep, ablate. Exit
codes: 0 ok, 1 usage, 2 data error, 3 numeric failure. Option precedence
is CLI flag > --config JSON file > built-in default, and every run echoes
its resolved configuration to stderr. bpe-apply and translate read stdin
and write stdout when given "-".
"""
from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from types import SimpleNamespace

import numpy as np

from . import bpe as bpe_mod
from .bench import (ablation_report, profile_translation, sensitivity_sweep)
from .bleu import bleu as bleu_score
from .checkpoint import checkpoint_average, load_checkpoint, load_model, save_checkpoint, save_model
from .data import make_copy_corpus, make_reversal_corpus, read_lines
from .distill import DistillConfig, init_student_from_teacher
from .errors import DataError, NumericError
from .infer import translate_batch
from .model import Model, ModelConfig
from .optim import AdamConfig
from .train import TrainConfig, train_loop


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _resolve(args: argparse.Namespace, defaults: dict) -> SimpleNamespace:
    """flag > config file > default; echoes the resolved config to stderr."""
    file_cfg = {}
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        with open(cfg_path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise DataError(f"unknown keys in {cfg_path}: {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        cli_val = getattr(args, key, None)
        out[key] = cli_val if cli_val is not None else file_cfg.get(key, default)
    print("resolved config: " + json.dumps(out, sort_keys=True, default=str),
          file=sys.stderr)
    return SimpleNamespace(**out)


def _read_input(path: str) -> list[str]:
    if path == "-":
        return sys.stdin.read().splitlines()
    return read_lines(path)


def _write_output(path: str, lines):
    if path == "-":
        for line in lines:
            sys.stdout.write(line + "\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")


def _read_id_lines(path: str) -> list[list[int]]:
    out = []
    for ln, line in enumerate(_read_input(path), start=1):
        try:
            out.append([int(t) for t in line.split()])
        except ValueError as exc:
            raise DataError(f"{path}:{ln}: expected space-separated ids") from exc
    return out


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


# ---------------------------------------------------------------------------
# subcommands


def cmd_bpe_learn(args) -> int:
    cfg = _resolve(args, dict(merges=10000, max_units=250))
    sentences = []
    for path in args.input:
        sentences.extend(read_lines(path))
    table = bpe_mod.learn_bpe(bpe_mod.word_frequencies(sentences), cfg.merges)
    bpe_mod.save_table(table, args.table)
    bpe_mod.save_vocab(table, args.vocab)
    print(f"learned {len(table.merges)} merges "
          f"(requested {cfg.merges}), vocab size {table.vocab_size}", file=sys.stderr)
    return 0


def cmd_bpe_apply(args) -> int:
    _resolve(args, dict())
    table = bpe_mod.load_table(args.table, args.vocab)
    lines = _read_input(args.input)
    out = [" ".join(bpe_mod.segment_sentence(line, table)) for line in lines]
    _write_output(args.output, out)
    return 0


def _load_pairs(args, cfg) -> tuple[list, int, int]:
    """Returns (pairs, vocab_src, vocab_tgt) from text+tables or a synthetic task."""
    if cfg.task == "copy":
        pairs = make_copy_corpus(cfg.examples, cfg.task_vocab, seed=cfg.seed)
        return pairs, cfg.task_vocab, cfg.task_vocab
    if cfg.task == "reverse":
        pairs = make_reversal_corpus(cfg.examples, cfg.task_vocab, seed=cfg.seed)
        return pairs, cfg.task_vocab, cfg.task_vocab
    if not (args.src and args.tgt and args.src_table and args.tgt_table):
        raise DataError("text training needs --src/--tgt and --src-table/--tgt-table")
    src_table = bpe_mod.load_table(args.src_table, args.src_vocab)
    tgt_table = bpe_mod.load_table(args.tgt_table, args.tgt_vocab)
    src_lines = read_lines(args.src)
    tgt_lines = read_lines(args.tgt)
    if len(src_lines) != len(tgt_lines):
        raise DataError("source and target files have different line counts")
    pairs = []
    dropped = 0
    for s_line, t_line in zip(src_lines, tgt_lines):
        s_units = bpe_mod.segment_sentence(s_line, src_table)
        t_units = bpe_mod.segment_sentence(t_line, tgt_table)
        if len(s_units) > cfg.max_units or len(t_units) > cfg.max_units:
            dropped += 1
            continue
        pairs.append(([src_table.token_id(u) for u in s_units],
                      [tgt_table.token_id(u) for u in t_units]))
    print(f"{len(pairs)} sentence pairs kept, {dropped} dropped "
          f"(> {cfg.max_units} units)", file=sys.stderr)
    return pairs, src_table.vocab_size, tgt_table.vocab_size


def cmd_train(args) -> int:
    cfg = _resolve(args, dict(
        steps=1000, batch_tokens=2000, lr=1e-3, warmup=400,
        label_smoothing=None, decoder_dropout=None, interval=500,
        seed=0, max_units=250, task="text", examples=2000, task_vocab=50,
        alpha=0.5, temperature=1.0,
    ))
    pairs, v_src, v_tgt = _load_pairs(args, cfg)
    if args.model_config:
        with open(args.model_config, encoding="utf-8") as fh:
            mcfg = ModelConfig.from_json(fh.read())
    else:
        mcfg = ModelConfig.baseline(v_src, v_tgt, hidden=64, ffn_dim=128,
                                    enc_layers=2, dec_layers=2, enc_heads=4,
                                    dec_heads=4, dec_head_dim=16)
    ls = mcfg.label_smoothing if cfg.label_smoothing is None else cfg.label_smoothing
    tcfg = TrainConfig(max_steps=cfg.steps, batch_tokens=cfg.batch_tokens,
                       peak_lr=cfg.lr, warmup_steps=cfg.warmup,
                       label_smoothing=ls,
                       decoder_dropout_override=cfg.decoder_dropout,
                       checkpoint_interval=cfg.interval,
                       checkpoint_dir=args.out, seed=cfg.seed,
                       adam=AdamConfig(lr=cfg.lr))
    if args.init_from:
        model, _ = load_model(args.init_from)
        if json.loads(model.config.to_json(None)) != json.loads(mcfg.to_json(None)):
            print("note: continuing with the checkpoint's own config", file=sys.stderr)
    else:
        model = Model(mcfg, seed=cfg.seed)
    teacher = None
    distill = None
    if args.teacher:
        teacher, _ = load_model(args.teacher)
        distill = DistillConfig(alpha=cfg.alpha, temperature=cfg.temperature,
                                seed=cfg.seed)
    result = train_loop(model, pairs, tcfg, teacher=teacher, distill=distill)
    last = result.losses[-1] if result.losses else None
    print(f"finished at step {result.final_step}"
          + (f", loss {last.loss:.4f}, {last.tokens_per_sec:.0f} tok/s" if last else "")
          + f"; checkpoints: {len(result.checkpoint_paths)}", file=sys.stderr)
    return 0


def cmd_distill_init(args) -> int:
    cfg = _resolve(args, dict(seed=0, head_index=None))
    teacher, t_ckpt = load_model(args.teacher)
    with open(args.student_config, encoding="utf-8") as fh:
        scfg = ModelConfig.from_json(fh.read())
    student = Model(scfg, seed=cfg.seed)
    report = init_student_from_teacher(
        student, teacher,
        DistillConfig(head_selection=cfg.head_index, seed=cfg.seed))
    extra = {"wd_encoder_mapping": report.encoder_mapping,
             "wd_head_indices": report.head_indices,
             "wd_output_svd": report.output_svd}
    for key in ("vocab_src_sha", "vocab_tgt_sha"):
        if key in t_ckpt.extra:
            extra[key] = t_ckpt.extra[key]
    save_model(args.output, student, step=0, extra=extra)
    print(f"student initialized from teacher: encoder map {report.encoder_mapping}, "
          f"heads {report.head_indices}, svd={report.output_svd}", file=sys.stderr)
    return 0


def cmd_translate(args) -> int:
    cfg = _resolve(args, dict(beam=4, batch=64, alpha_ln=1.0,
                              max_len_factor=1.5, threads=1, seed=0))
    model, _ = load_model(args.model)
    if args.ids:
        src = _read_id_lines(args.input)
        hyps = translate_batch(src, model, beam_width=cfg.beam,
                               batch_size=cfg.batch, alpha_ln=cfg.alpha_ln,
                               max_len_factor=cfg.max_len_factor,
                               threads=cfg.threads)
        _write_output(args.output, [" ".join(map(str, h.tokens)) for h in hyps])
        return 0
    if not (args.src_table and args.tgt_vocab):
        raise DataError("text translation needs --src-table (+--src-vocab) and --tgt-vocab")
    src_table = bpe_mod.load_table(args.src_table, args.src_vocab)
    tgt_vocab = bpe_mod._read_vocab(args.tgt_vocab)
    lines = _read_input(args.input)
    src = [[src_table.token_id(u) for u in bpe_mod.segment_sentence(line, src_table)]
           for line in lines]
    hyps = translate_batch(src, model, beam_width=cfg.beam, batch_size=cfg.batch,
                           alpha_ln=cfg.alpha_ln,
                           max_len_factor=cfg.max_len_factor, threads=cfg.threads)
    out = []
    for h in hyps:
        units = [tgt_vocab[t] if t < len(tgt_vocab) else bpe_mod.UNK for t in h.tokens]
        out.append(bpe_mod.decode_units(units))
    _write_output(args.output, out)
    return 0


def cmd_average(args) -> int:
    cfg = _resolve(args, dict(last=5))
    if args.inputs:
        paths = args.inputs
    elif args.dir:
        paths = sorted(glob.glob(os.path.join(args.dir, "ckpt_*.mdn")))[-cfg.last:]
    else:
        raise DataError("give --inputs or --dir")
    if not paths:
        raise DataError("no checkpoints found to average")
    avg = checkpoint_average(paths)
    save_checkpoint(args.output, avg.tensors, avg.config, avg.step, avg.extra)
    print(f"averaged {len(paths)} checkpoints -> {args.output}", file=sys.stderr)
    return 0


def cmd_bleu(args) -> int:
    _resolve(args, dict())
    hyps = _read_input(args.hyp)
    refs = _read_input(args.ref)
    score = bleu_score(hyps, refs)
    print(f"{score:.2f}")
    return 0


def cmd_profile(args) -> int:
    cfg = _resolve(args, dict(beam=4, batch=1, runs=5, warmup=3, seed=0))
    model, _ = load_model(args.model)
    data = _read_id_lines(args.input)
    report = profile_translation(model, data, beam=cfg.beam, batch=cfg.batch,
                                 runs=cfg.runs, warmup=cfg.warmup)
    print(report.format_table())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args, dict(what="sensitivity", runs=5, warmup=3,
                              batch_sizes="1,4,16,64", beam_widths="1,2,4,16",
                              merge_counts="0,100,1000", fixed_beam=4,
                              fixed_batch=1, seed=0))
    if cfg.what == "bpe":
        sentences = _read_input(args.input)
        rows = bpe_mod.sweep_merge_ops(sentences, _int_list(cfg.merge_counts))
        lines = ["merges,vocab_size,mean_units_per_sentence"]
        lines += [f"{r.num_merges},{r.vocab_size},{r.mean_units_per_sentence:.3f}"
                  for r in rows]
        _write_output(args.csv or "-", lines)
        return 0
    if not (args.baseline and args.fast):
        raise DataError("sensitivity sweep needs --baseline and --fast checkpoints")
    base, _ = load_model(args.baseline)
    fast, _ = load_model(args.fast)
    data = _read_id_lines(args.input)
    result = sensitivity_sweep(base, fast, data,
                               batch_sizes=_int_list(cfg.batch_sizes),
                               beam_widths=_int_list(cfg.beam_widths),
                               runs=cfg.runs, warmup=cfg.warmup,
                               fixed_beam=cfg.fixed_beam,
                               fixed_batch=cfg.fixed_batch)
    _write_output(args.csv or "-", result.to_csv().splitlines())
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve(args, dict(beam=4, batch=64, runs=5, warmup=3, seed=0))
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    entries = []
    for item in manifest:
        model, _ = load_model(item["checkpoint"])
        entries.append((item["label"], model))
    src = _read_id_lines(args.src)
    refs = _read_id_lines(args.ref)
    table = ablation_report(entries, src, refs, beam=cfg.beam, batch=cfg.batch,
                            runs=cfg.runs, warmup=cfg.warmup)
    print(table.format_table())
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(table.to_csv())
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> _Parser:
    p = _Parser(prog="mdn", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file (flag > file > default)")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("bpe-learn", help="learn a merge table from text")
    sp.add_argument("--input", nargs="+", required=True)
    sp.add_argument("--merges", type=int, default=None)
    sp.add_argument("--max-units", dest="max_units", type=int, default=None)
    sp.add_argument("--table", required=True)
    sp.add_argument("--vocab", required=True)
    common(sp)
    sp.set_defaults(fn=cmd_bpe_learn)

    sp = sub.add_parser("bpe-apply", help="segment text with a merge table")
    sp.add_argument("--table", required=True)
    sp.add_argument("--vocab", default=None)
    sp.add_argument("--input", default="-")
    sp.add_argument("--output", default="-")
    common(sp)
    sp.set_defaults(fn=cmd_bpe_apply)

    sp = sub.add_parser("train", help="train a model (text or synthetic task)")
    sp.add_argument("--src"), sp.add_argument("--tgt")
    sp.add_argument("--src-table", dest="src_table"), sp.add_argument("--src-vocab", dest="src_vocab")
    sp.add_argument("--tgt-table", dest="tgt_table"), sp.add_argument("--tgt-vocab", dest="tgt_vocab")
    sp.add_argument("--task", choices=["text", "copy", "reverse"], default=None)
    sp.add_argument("--examples", type=int, default=None)
    sp.add_argument("--task-vocab", dest="task_vocab", type=int, default=None)
    sp.add_argument("--model-config", dest="model_config")
    sp.add_argument("--init-from", dest="init_from")
    sp.add_argument("--teacher")
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--temperature", type=float, default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--batch-tokens", dest="batch_tokens", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--warmup", type=int, default=None)
    sp.add_argument("--label-smoothing", dest="label_smoothing", type=float, default=None)
    sp.add_argument("--decoder-dropout", dest="decoder_dropout", type=float, default=None)
    sp.add_argument("--interval", type=int, default=None)
    sp.add_argument("--max-units", dest="max_units", type=int, default=None)
    sp.add_argument("--out", required=True, help="checkpoint directory")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("distill-init", help="weight-distillation student init")
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--student-config", dest="student_config", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--head-index", dest="head_index", type=int, default=None)
    common(sp)
    sp.set_defaults(fn=cmd_distill_init)

    sp = sub.add_parser("translate", help="beam-search translation")
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", default="-")
    sp.add_argument("--output", default="-")
    sp.add_argument("--ids", action="store_true",
                    help="input/output are space-separated token ids")
    sp.add_argument("--src-table", dest="src_table"), sp.add_argument("--src-vocab", dest="src_vocab")
    sp.add_argument("--tgt-vocab", dest="tgt_vocab")
    sp.add_argument("--beam", type=int, default=None)
    sp.add_argument("--batch", type=int, default=None)
    sp.add_argument("--alpha-ln", dest="alpha_ln", type=float, default=None)
    sp.add_argument("--max-len-factor", dest="max_len_factor", type=float, default=None)
    sp.add_argument("--threads", type=int, default=None)
    common(sp)
    sp.set_defaults(fn=cmd_translate)

    sp = sub.add_parser("average", help="elementwise checkpoint mean")
    sp.add_argument("--inputs", nargs="*")
    sp.add_argument("--dir")
    sp.add_argument("--last", type=int, default=None)
    sp.add_argument("--output", required=True)
    common(sp)
    sp.set_defaults(fn=cmd_average)

    sp = sub.add_parser("bleu", help="corpus BLEU of tokenized files")
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--ref", required=True)
    common(sp)
    sp.set_defaults(fn=cmd_bleu)

    sp = sub.add_parser("profile", help="per-component inference wall time")
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", required=True, help="id file, one sentence per line")
    sp.add_argument("--beam", type=int, default=None)
    sp.add_argument("--batch", type=int, default=None)
    sp.add_argument("--runs", type=int, default=None)
    sp.add_argument("--warmup", type=int, default=None)
    sp.add_argument("--json")
    common(sp)
    sp.set_defaults(fn=cmd_profile)

    sp = sub.add_parser("sweep", help="sensitivity (batch/beam) or bpe merge sweep")
    sp.add_argument("--what", choices=["sensitivity", "bpe"], default=None)
    sp.add_argument("--baseline"), sp.add_argument("--fast")
    sp.add_argument("--input", required=True)
    sp.add_argument("--batch-sizes", dest="batch_sizes", default=None)
    sp.add_argument("--beam-widths", dest="beam_widths", default=None)
    sp.add_argument("--merge-counts", dest="merge_counts", default=None)
    sp.add_argument("--fixed-beam", dest="fixed_beam", type=int, default=None)
    sp.add_argument("--fixed-batch", dest="fixed_batch", type=int, default=None)
    sp.add_argument("--runs", type=int, default=None)
    sp.add_argument("--warmup", type=int, default=None)
    sp.add_argument("--csv")
    common(sp)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("ablate", help="cumulative system comparison table")
    sp.add_argument("--manifest", required=True,
                    help='JSON: [{"label": ..., "checkpoint": ...}, ...]')
    sp.add_argument("--src", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--beam", type=int, default=None)
    sp.add_argument("--batch", type=int, default=None)
    sp.add_argument("--runs", type=int, default=None)
    sp.add_argument("--warmup", type=int, default=None)
    sp.add_argument("--csv")
    common(sp)
    sp.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (DataError, FileNotFoundError, IsADirectoryError, PermissionError,
            json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
