"""Command-line entry point: ``cpcx <subcommand> [flags]``.

Settings resolve in order: built-in default, ``--config`` file, flag. The
config file holds ``key = value`` lines with ``#`` comments; its keys share one
namespace across subcommands (``train.lr``, ``probe.concat_frames`` ...) and an
unknown key is an error. Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import abx, data, gradsuite, probe, trainer
from .encoder import EncoderConfig
from .model import ModelConfig, format_value
from .predictor import PredictorConfig
from .recurrent import RecurrenceConfig

log = logging.getLogger("cpcx")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
THREADS_ENV = "CPCX_THREADS"
PREDICTOR_KINDS = ("linear", "ffd", "conv8", "transformer")


class UsageError(Exception):
    pass


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str) -> int | None:
    return None if str(text).strip().lower() in ("none", "") else int(text)


def _ratios(text: str) -> tuple[float, ...]:
    parts = [float(x) for x in str(text).replace("/", ",").split(",")]
    if len(parts) != 3:
        raise ValueError("ratios need three values, e.g. 8,1,1")
    return tuple(parts)


def _norm(text: str) -> str:
    return "channel_norm" if text in ("channel", "channel_norm") else text


@dataclass(frozen=True)
class Option:
    key: str
    flag: str
    parse: Callable[[str], Any]
    default: Any
    help: str
    choices: tuple | None = None


_enc, _rec, _pred = EncoderConfig(), RecurrenceConfig(), PredictorConfig()
_train, _probe = trainer.TrainConfig(), probe.ProbeConfig()

OPTIONS = {o.key: o for o in [
    Option("seed", "--seed", int, 0, "master seed; every random stream is derived from it"),
    Option("threads", "--threads", int, 1, f"BLAS threads (fallback: ${THREADS_ENV})"),
    # model
    Option("encoder.channels", "--channels", int, _enc.channels, "encoder channels C"),
    Option("encoder.norm", "--norm", _norm, _enc.norm, "per-layer encoder normalisation",
           ("channel_norm", "channel", "none")),
    Option("recurrence.kind", "--recurrence", str, _rec.kind, "context network", ("lstm", "gru")),
    Option("recurrence.hidden", "--hidden", int, _rec.hidden, "context width H"),
    Option("recurrence.forget_bias", "--forget-bias", float, _rec.forget_bias, "initial LSTM forget-gate bias"),
    Option("predictor.kind", "--predictor", str, _pred.kind, "prediction network", PREDICTOR_KINDS),
    Option("predictor.K", "--K", int, _pred.K, "number of future steps predicted"),
    Option("predictor.dropout", "--dropout", float, _pred.dropout, "transformer dropout"),
    Option("predictor.heads", "--heads", int, _pred.heads, "transformer attention heads"),
    Option("predictor.heads_share_trunk", "--heads-share-trunk", _bool, _pred.heads_share_trunk,
           "one transformer trunk feeding K heads (false: one trunk per step)"),
    # pretraining
    Option("train.mode", "--mode", str, _train.mode, "pretraining objective", ("cpc", "supervised")),
    Option("train.max_steps", "--steps", int, _train.max_steps, "optimisation steps"),
    Option("train.batch_size", "--batch-size", int, _train.batch_size, "windows per batch"),
    Option("train.n_negatives", "--negatives", int, _train.n_negatives, "negatives per prediction"),
    Option("train.window_samples", "--window", int, _train.window_samples, "window length in samples"),
    Option("train.lr", "--lr", float, _train.lr, "Adam learning rate"),
    Option("train.clip_norm", "--clip-norm", float, _train.clip_norm, "global gradient-norm clip"),
    Option("train.eval_interval", "--eval-interval", int, _train.eval_interval,
           "checkpoint every N steps (0: only at the end)"),
    Option("train.shared_negatives_across_k", "--shared-negatives", _bool, _train.shared_negatives_across_k,
           "reuse one negative draw for every k"),
    # probe
    Option("probe.mode", "--mode", str, _probe.mode, "which upstream parameters move", ("frozen", "finetune", "both")),
    Option("probe.concat_frames", "--stack", int, _probe.concat_frames, "frames concatenated per probe input"),
    Option("probe.stride", "--stride", _opt_int, _probe.stride, "hop between stacked inputs (none: --stack)"),
    Option("probe.steps", "--steps", int, _probe.steps, "probe optimisation steps"),
    Option("probe.lr", "--lr", float, _probe.lr, "probe learning rate"),
    Option("probe.finetune_lr", "--finetune-lr", float, _probe.finetune_lr, "upstream learning rate when finetuning"),
    Option("probe.batch_size", "--batch-size", int, _probe.batch_size, "utterances per probe batch"),
    # abx
    Option("abx.mode", "--mode", str, "both", "speaker condition", ("within", "across", "both")),
    Option("abx.max_triplets", "--max-triplets", int, abx.MAX_TRIPLETS, "triplets sampled per cell"),
    Option("abx.aggregation", "--aggregation", str, "pairs_then_speakers", "averaging order",
           ("pairs_then_speakers", "speakers_then_pairs")),
    Option("abx.use_context", "--use-context", _bool, False, "condition cells on neighbouring labels"),
    Option("abx.utterances_per_speaker", "--abx-utterances", int, 0, "utterances per speaker scored (0: all)"),
    # synthetic data
    Option("synth.n_speakers", "--speakers", int, 4, "speakers"),
    Option("synth.n_classes", "--classes", int, 8, "phoneme classes"),
    Option("synth.utterances_per_speaker", "--utterances", int, 50, "utterances per speaker"),
    Option("synth.utterance_seconds", "--seconds", float, 6.0, "utterance length in seconds"),
    Option("synth.snr_db", "--snr", float, 20.0, "additive noise SNR in dB"),
    # splits
    Option("splits.ratios", "--ratios", _ratios, (8.0, 1.0, 1.0), "train,dev,test speaker ratios"),
]}

MODEL_KEYS = [k for k in OPTIONS if k.split(".")[0] in ("encoder", "recurrence", "predictor")]
TRAIN_KEYS = [k for k in OPTIONS if k.startswith("train.")]
PROBE_KEYS = [k for k in OPTIONS if k.startswith("probe.")]
ABX_KEYS = [k for k in OPTIONS if k.startswith("abx.")]
SYNTH_KEYS = [k for k in OPTIONS if k.startswith("synth.")]


def read_config_file(path) -> dict[str, Any]:
    """Parse ``key = value`` lines; unknown keys and malformed lines are usage errors."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file {path} does not exist")
    out = {}
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in OPTIONS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _coerce(OPTIONS[key], value, f"{path}:{n}")
    return out


def _coerce(opt: Option, value, where: str):
    try:
        v = opt.parse(value)
    except ValueError as e:
        raise UsageError(f"{where}: bad value for {opt.key}: {e}") from None
    if opt.choices and v not in opt.choices:
        raise UsageError(f"{where}: {opt.key} must be one of {', '.join(opt.choices)}; got {v!r}")
    return v


def render_config(values: dict[str, Any]) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in sorted(values.items()))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_options(p: argparse.ArgumentParser, keys: Sequence[str], overrides: dict[str, Any] | None = None):
    overrides = overrides or {}
    for key in keys:
        opt = OPTIONS[key]
        default = overrides.get(key, opt.default)
        kwargs = dict(dest=key, default=argparse.SUPPRESS, type=str, metavar=opt.flag.lstrip("-").upper().replace("-", "_"))
        if opt.choices:
            kwargs["choices"] = opt.choices
            kwargs.pop("metavar")
        p.add_argument(opt.flag, help=f"{opt.help} (default: {format_value(default)}; key {key})", **kwargs)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="key = value settings file (default: none)")
    p.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"),
                   help="logging verbosity (default: INFO)")
    _add_options(p, ["seed", "threads"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpcx", description="Contrastive predictive coding on raw audio, from scratch.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("synth-data", help="write the synthetic tonal corpus", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory (required)")
    _add_options(p, SYNTH_KEYS)
    p.set_defaults(handler=cmd_synth_data, defaults={})

    p = sub.add_parser("make-splits", help="speaker-disjoint train/dev/test manifests", formatter_class=fmt)
    p.add_argument("--data", required=True, help="manifest file or directory holding manifest.tsv (required)")
    p.add_argument("--out", default=None, help="directory for train/dev/test.tsv (default: the manifest's directory)")
    _add_options(p, ["splits.ratios"])
    p.set_defaults(handler=cmd_make_splits, defaults={})

    p = sub.add_parser("pretrain", help="contrastive or supervised pretraining", formatter_class=fmt,
                       description="--data may be a manifest or a directory; a directory uses train.tsv when present, "
                                   "else manifest.tsv.")
    p.add_argument("--data", required=True, help="training manifest or data directory (required)")
    p.add_argument("--out", required=True, help="checkpoint path (required)")
    p.add_argument("--trace", default=None, help="loss trace path (default: <out>.trace.tsv)")
    p.add_argument("--resume", default=None, help="checkpoint to continue from (default: none)")
    _add_options(p, MODEL_KEYS + TRAIN_KEYS)
    p.set_defaults(handler=cmd_pretrain, defaults={})

    p = sub.add_parser("probe", help="linear CTC phoneme probe; prints split<TAB>PER", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="pretrained checkpoint (required)")
    p.add_argument("--data", required=True, help="directory with train.tsv, dev.tsv, test.tsv (required)")
    p.add_argument("--inventory", default=None, help="phoneme inventory file (default: <data>/inventory.txt)")
    p.add_argument("--out", default=None, help="also write the PER table here (default: none)")
    _add_options(p, PROBE_KEYS)
    p.set_defaults(handler=cmd_probe, defaults={})

    p = sub.add_parser("eval-abx", help="ABX error of checkpoint features", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint (required)")
    p.add_argument("--data", required=True, help="manifest with alignments, or data directory (required)")
    p.add_argument("--out", default=None, help="write per-pair key = value details here (default: none)")
    _add_options(p, ABX_KEYS)
    p.set_defaults(handler=cmd_eval_abx, defaults={})

    p = sub.add_parser("extract", help="write one CPCF feature file per utterance", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint (required)")
    p.add_argument("--data", required=True, help="manifest or data directory (required)")
    p.add_argument("--out", required=True, help="output directory (required)")
    p.set_defaults(handler=cmd_extract, defaults={})

    p = sub.add_parser("grad-check", help="double-precision finite-difference suite", formatter_class=fmt)
    p.set_defaults(handler=cmd_grad_check, defaults={})

    ablate_defaults = {"abx.utterances_per_speaker": 4, "abx.max_triplets": 500}
    p = sub.add_parser("ablate", help="pretrain every predictor kind under one seed and compare", formatter_class=fmt,
                       description="Pretrains linear, ffd, conv8 and transformer predictors with identical seeds, "
                                   "then scores ABX on the evaluation manifest.")
    p.add_argument("--data", required=True, help="data directory (train.tsv + dev.tsv) or one manifest (required)")
    p.add_argument("--out", required=True, help="output directory (required)")
    _add_options(p, [k for k in MODEL_KEYS if k != "predictor.kind"] + [k for k in TRAIN_KEYS if k != "train.mode"])
    _add_options(p, [k for k in ABX_KEYS if k != "abx.mode"], ablate_defaults)
    p.set_defaults(handler=cmd_ablate, defaults=ablate_defaults)

    for action in sub.choices.values():
        _common(action)
    return parser


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then config file, then explicit flags."""
    values = {k: o.default for k, o in OPTIONS.items()}
    values.update(args.defaults)
    if args.config:
        values.update(read_config_file(args.config))
    env = os.environ.get(THREADS_ENV)
    if env:
        values["threads"] = _coerce(OPTIONS["threads"], env, THREADS_ENV)
    for key, raw in vars(args).items():
        if key in OPTIONS:
            values[key] = _coerce(OPTIONS[key], raw, OPTIONS[key].flag)
    if values["threads"] < 1:
        raise UsageError("threads must be at least 1")
    return values


def model_config(v: dict[str, Any]) -> ModelConfig:
    return ModelConfig(
        EncoderConfig(channels=v["encoder.channels"], norm=v["encoder.norm"]),
        RecurrenceConfig(v["recurrence.kind"], hidden=v["recurrence.hidden"], forget_bias=v["recurrence.forget_bias"]),
        PredictorConfig(
            kind=v["predictor.kind"], K=v["predictor.K"], dropout=v["predictor.dropout"],
            heads=v["predictor.heads"], heads_share_trunk=v["predictor.heads_share_trunk"],
        ),
    )


def train_config(v: dict[str, Any]) -> trainer.TrainConfig:
    fields = {f.name for f in dataclasses.fields(trainer.TrainConfig)}
    kwargs = {k[6:]: val for k, val in v.items() if k.startswith("train.") and k[6:] in fields}
    return trainer.TrainConfig(seed=v["seed"], **kwargs)


def probe_config(v: dict[str, Any], mode: str) -> probe.ProbeConfig:
    kwargs = {k[6:]: val for k, val in v.items() if k.startswith("probe.") and k != "probe.mode"}
    return probe.ProbeConfig(mode=mode, seed=v["seed"], **kwargs)


# --- data location helpers --------------------------------------------------------


def _manifest(location: str, prefer: str | None = None) -> Path:
    path = Path(location)
    if path.is_dir():
        for name in ([f"{prefer}.tsv"] if prefer else []) + ["manifest.tsv"]:
            if (path / name).is_file():
                return path / name
        raise data.DataError(f"{path} holds no manifest.tsv")
    if not path.is_file():
        raise data.DataError(f"{path} does not exist")
    return path


def _split(root: str, name: str) -> Path:
    path = Path(root) / f"{name}.tsv"
    if not path.is_file():
        raise data.DataError(f"{path} missing; run make-splits first")
    return path


def _inventory(path: Path | None, utterances) -> list[str]:
    if path is not None and path.is_file():
        return data.read_inventory(path)
    return sorted({p for u in utterances for p in u.phonemes})


def _per_speaker(utterances, n: int):
    if n <= 0:
        return list(utterances)
    kept, counts = [], {}
    for u in utterances:
        if counts.get(u.speaker, 0) < n:
            kept.append(u)
            counts[u.speaker] = counts.get(u.speaker, 0) + 1
    return kept


# --- subcommands ---------------------------------------------------------------------


def cmd_synth_data(args, v) -> int:
    ds = data.synth_dataset(
        n_speakers=v["synth.n_speakers"], n_classes=v["synth.n_classes"],
        utterances_per_speaker=v["synth.utterances_per_speaker"], seed=v["seed"],
        utterance_seconds=v["synth.utterance_seconds"], snr_db=v["synth.snr_db"],
    )
    manifest = ds.write(args.out)
    seconds = sum(len(u.samples) for u in ds.utterances) / 16000
    print(f"{manifest}\t{len(ds.utterances)} utterances\t{seconds / 60:.1f} min")
    return EXIT_OK


def cmd_make_splits(args, v) -> int:
    src = _manifest(args.data)
    out = Path(args.out) if args.out else src.parent
    out.mkdir(parents=True, exist_ok=True)
    records = data.read_manifest(src)
    splits = data.make_splits(records, v["splits.ratios"], v["seed"])

    def rebase(p: str) -> str:
        return os.path.relpath(src.parent / p, out) if p else ""

    for name, recs in splits.items():
        moved = [data.ManifestRecord(r.utt_id, rebase(r.audio), r.speaker, rebase(r.transcript), rebase(r.alignment))
                 for r in recs]
        data.write_manifest(out / f"{name}.tsv", moved)
        print(f"{name}\t{len({r.speaker for r in recs})} speakers\t{len(recs)} utterances")
    inv = src.parent / "inventory.txt"
    if inv.is_file() and out != src.parent:
        (out / "inventory.txt").write_text(inv.read_text(encoding="utf-8"), encoding="utf-8")
    return EXIT_OK


def cmd_pretrain(args, v) -> int:
    manifest = _manifest(args.data, prefer="train")
    utterances = data.load_utterances(manifest)
    cfg = train_config(v)
    mc = model_config(v)
    trace = args.trace or f"{args.out}.trace.tsv"
    resume = data.load_checkpoint(args.resume) if args.resume else None
    meta = {"data": str(manifest)}
    if cfg.mode == "supervised":
        unaligned = [u.utt_id for u in utterances if u.aligned_labels is None]
        if unaligned:
            raise UsageError(f"--mode supervised needs alignments; {len(unaligned)} utterances have none "
                             f"(first: {unaligned[0]})")
        inventory = _inventory(manifest.parent / "inventory.txt", utterances)
        result = trainer.supervised_pretrain(utterances, inventory, mc, cfg, resume=resume, trace_path=trace,
                                             checkpoint_path=args.out, meta=meta, dump_dir=Path(args.out).parent)
    else:
        result = trainer.pretrain(utterances, mc, cfg, resume=resume, trace_path=trace,
                                  checkpoint_path=args.out, meta=meta, dump_dir=Path(args.out).parent)
    if result.trace:
        last = result.trace[-1]
        print(f"step\t{last.step}\tloss\t{last.loss:.4f}\tacc1\t{last.accuracy[0]:.4f}")
    else:
        print("step\t0\tinitialisation only")
    return EXIT_OK


def _load_model(path):
    ckpt = data.load_checkpoint(path)
    return ckpt, trainer.model_from_checkpoint(ckpt)


def cmd_probe(args, v) -> int:
    ckpt, model = _load_model(args.ckpt)
    train = data.load_utterances(_split(args.data, "train"))
    evals = {name: data.load_utterances(_split(args.data, name)) for name in ("dev", "test")}
    inv_path = Path(args.inventory) if args.inventory else Path(args.data) / "inventory.txt"
    inventory = _inventory(inv_path, train)
    stored = ckpt.config.get("meta.inventory")
    if stored is not None and stored.split(",") != inventory:
        raise data.DataError(f"checkpoint was trained on inventory {stored!r}; dataset has {','.join(inventory)!r}")
    modes = ("frozen", "finetune") if v["probe.mode"] == "both" else (v["probe.mode"],)
    lines = []
    for mode in modes:
        res = probe.train_probe(model, train, inventory, probe_config(v, mode), evals)
        prefix = f"{mode}." if len(modes) > 1 else ""
        lines += [f"{prefix}{split}\t{100 * value:.4f}" for split, value in res.per.items()]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


def _abx_report(model, utterances, v, modes) -> abx.AbxReport:
    utterances = _per_speaker(utterances, v["abx.utterances_per_speaker"])
    segments = abx.extract_segments(utterances, model.features)
    return abx.evaluate_abx(
        segments, modes, max_triplets=v["abx.max_triplets"], seed=v["seed"],
        aggregation=v["abx.aggregation"], use_context=v["abx.use_context"],
    )


def cmd_eval_abx(args, v) -> int:
    _, model = _load_model(args.ckpt)
    utterances = data.load_utterances(_manifest(args.data, prefer="test"))
    modes = ("within", "across") if v["abx.mode"] == "both" else (v["abx.mode"],)
    report = _abx_report(model, utterances, v, modes)
    sys.stdout.write(report.text())
    if args.out:
        Path(args.out).write_text(report.key_values())
    return EXIT_OK


def cmd_extract(args, v) -> int:
    _, model = _load_model(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    utterances = data.load_utterances(_manifest(args.data))
    for u in utterances:
        data.write_features(out / f"{u.utt_id}.cpcf", model.features(u.samples))
    print(f"{out}\t{len(utterances)} feature files")
    return EXIT_OK


def cmd_grad_check(args, v) -> int:
    results = gradsuite.run_suite(v["seed"])
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERICAL if failed else EXIT_OK


ABLATION_HEADER = ("predictor", "final_loss", "acc_k1", "abx_within", "abx_across")


def cmd_ablate(args, v) -> int:
    root = Path(args.data)
    if root.is_dir() and (root / "train.tsv").is_file():
        train_m = root / "train.tsv"
        eval_m = root / "dev.tsv" if (root / "dev.tsv").is_file() else train_m
    else:
        train_m = eval_m = _manifest(args.data)
    train = data.load_utterances(train_m)
    evals = data.load_utterances(eval_m)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind in PREDICTOR_KINDS:
        vk = dict(v, **{"predictor.kind": kind})
        cfg = dataclasses.replace(train_config(vk), mode="cpc")
        log.info("ablation: %s predictor", kind)
        result = trainer.pretrain(train, model_config(vk), cfg, trace_path=out / f"{kind}.trace.tsv",
                                  checkpoint_path=out / f"{kind}.ckpt", dump_dir=out)
        tail = result.trace[-min(100, len(result.trace)):] if result.trace else []
        loss = float(np.mean([r.loss for r in tail])) if tail else float("nan")
        acc = float(np.mean([r.accuracy[0] for r in tail])) if tail else float("nan")
        rep = _abx_report(result.model, evals, vk, ("within", "across"))
        rows.append((kind, loss, acc, rep.within_speaker, rep.across_speaker))
    lines = ["\t".join(ABLATION_HEADER)]
    lines += [f"{k}\t{l:.4f}\t{a:.4f}\t{w:.4f}\t{x:.4f}" for k, l, a, w, x in rows]
    text = "\n".join(lines) + "\n"
    (out / "ablation.tsv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", force=True)
    prog = f"cpcx {args.command}"
    try:
        values = resolve(args)
        log.info("resolved config:\n%s", render_config(values).rstrip())
        with threadpool_limits(limits=values["threads"]):
            return args.handler(args, values)
    except UsageError as e:
        print(f"{prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except data.DataError as e:
        print(f"{prog}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (trainer.NumericalError, FloatingPointError) as e:
        print(f"{prog}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"{prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
