"""Command-line entry point: ``speakerseg <command> ...``.

Exit status: 0 on success, 1 on runtime errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .annotation import Annotation, ParseError, Timeline, overlap_timeline, parse_rttm, parse_uem, to_annotation, write_rttm
from .augment import AudioChunk, load_audio, load_chunk, parse_manifest, sample_training_batch, write_wav
from .config import ConfigError, PipelineConfig, format_pipeline_config, parse_pipeline_config, read_key_values
from .metrics import DevItem, ParamSpace, der, detection_error, precision_recall_f1, tune
from .pit import Activations
from .postprocess import PostProcessingParams, binarize, osd_scores, read_activations_csv, read_frame_table, score_stream, vad_scores, write_activations_csv
from .reseg import SlicedWindows, SlidingWindowConfig, resegmentation_scores
from .synth import SynthConfig, generate_reference, oracle_activations
from .toy import TrainConfig, dev_frame_accuracy, load_checkpoint, make_dev_set, make_toy_data, predict, save_checkpoint, synth_features, train

SCHEMA_VERSION = 1

log = logging.getLogger("speakerseg")


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers


def write_output(path: str, content) -> None:
    """Write text or bytes atomically (temp file + rename); ``-`` means stdout."""
    if path == "-":
        if isinstance(content, str):
            sys.stdout.write(content)
        else:
            sys.stdout.buffer.write(content)
        sys.stdout.flush()
        return
    data = content.encode() if isinstance(content, str) else content
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_text(path) -> str:
    """File contents; ``-`` reads stdin."""
    if str(path) == "-":
        return sys.stdin.read()
    return Path(path).read_text()


def pick_annotation(annotations: dict[str, Annotation], uri: str | None, source: str) -> Annotation:
    if uri is not None:
        if uri not in annotations:
            raise CommandError(f"{source}: no file id {uri!r}")
        return annotations[uri]
    if len(annotations) != 1:
        raise CommandError(f"{source}: holds {len(annotations)} file ids, pass --uri")
    return next(iter(annotations.values()))


def load_config(path: str | None) -> PipelineConfig:
    return parse_pipeline_config(read_text(path)) if path else PipelineConfig()


def override_params(base: PostProcessingParams, args) -> PostProcessingParams:
    changes = {
        name: getattr(args, name)
        for name in ("theta_on", "theta_off", "delta_on", "delta_off")
        if getattr(args, name) is not None
    }
    return replace(base, **changes)


def add_param_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config file (key = value)")
    p.add_argument("--theta-on", type=float)
    p.add_argument("--theta-off", type=float)
    p.add_argument("--delta-on", type=float, help="seconds")
    p.add_argument("--delta-off", type=float, help="seconds")


def uri_from_path(path: str) -> str:
    return Path(path).stem


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> None:
    if args.augment:
        return _synth_augment(args)
    values = {}
    if args.config:
        values = read_key_values(read_text(args.config)).get("", {})
    def opt(name, cast, default):
        flag = getattr(args, name)
        if flag is not None:
            return flag
        return cast(values[name]) if name in values else default
    cfg = SynthConfig(
        num_speakers=opt("num_speakers", int, 2),
        duration=opt("duration", float, 60.0),
        on_rate=opt("on_rate", float, 0.3),
        off_rate=opt("off_rate", float, 0.5),
        noise_level=opt("noise", float, 0.0),
        seed=opt("seed", int, 0),
        step=opt("step", float, 0.016),
    )
    uri = args.uri
    ref = generate_reference(cfg, uri)
    write_output(args.out_rttm, write_rttm({uri: ref}))
    if args.out_acts:
        k_max = opt("k_max", int, None)
        acts = oracle_activations(ref, cfg.grid, cfg.noise_level, cfg.seed, k_max=k_max)
        write_output(args.out_acts, write_activations_csv(acts))
    if args.out_features:
        feats = synth_features(ref, cfg.grid, args.features_dim, args.feature_noise,
                               seed=cfg.seed, embedding_seed=args.embedding_seed)
        header = ",".join(["time"] + [f"f{i}" for i in range(feats.shape[1])])
        rows = [header]
        times = cfg.grid.frame_start(np.arange(cfg.grid.num_frames))
        for t, row in zip(times, feats):
            rows.append(f"{t:.6f}," + ",".join(f"{v:.6f}" for v in row))
        write_output(args.out_features, "\n".join(rows) + "\n")


def _synth_augment(args) -> None:
    if not args.manifest or not args.out_dir:
        raise CommandError("--augment needs --manifest and --out-dir")
    manifest = Path(args.manifest)
    entries = parse_manifest(read_text(manifest))
    corpus = [load_chunk(e, args.chunk_duration, args.step or 0.016, manifest.parent) for e in entries]
    noises = []
    if args.noise_list:
        noise_file = Path(args.noise_list)
        n = int(round(args.chunk_duration * 16000))
        for line in read_text(noise_file).splitlines():
            if line.strip():
                audio = load_audio(noise_file.parent / line.strip())
                noises.append(AudioChunk(audio.samples[:n], audio.sample_rate))
    batch = sample_training_batch(
        corpus, args.batch, args.mix_prob, args.seed or 0, k_max=args.k_max or 4,
        ssr_range=(args.ssr_min, args.ssr_max), noises=noises, snr_range=(args.snr_min, args.snr_max),
    )
    out = Path(args.out_dir)
    annotations = {}
    lines = []
    for i, chunk in enumerate(batch):
        name = f"chunk_{i:04d}"
        write_output(str(out / f"{name}.wav"), write_wav(chunk.audio))
        annotations[name] = to_annotation(chunk.labels, name)
        lines.append(f"{name}.wav\t0.000\tchunks.rttm")
    write_output(str(out / "chunks.rttm"), write_rttm(annotations))
    write_output(str(out / "manifest.tsv"), "\n".join(lines) + "\n")


# ---------------------------------------------------------------- toy model


def _train_config(args) -> TrainConfig:
    hidden = tuple(int(h) for h in args.hidden.split(","))
    if len(hidden) != 2:
        raise CommandError("--hidden expects two comma-separated sizes")
    return TrainConfig(
        lr=args.lr, batch_size=args.batch_size, plateau_factor=args.plateau_factor,
        plateau_patience=args.plateau_patience, plateau_threshold=args.plateau_threshold,
        max_epochs=args.max_epochs, steps_per_epoch=args.steps_per_epoch,
        chunk_duration=args.chunk_duration, mix_prob=args.mix_prob, k_max=args.k_max,
        context=args.context, hidden=hidden, embed_dim=args.embed_dim,
        feature_noise=args.feature_noise, embedding_seed=args.embedding_seed, seed=args.seed,
    )


def cmd_train_toy(args) -> None:
    cfg = _train_config(args)
    train_frames, dev_frames = make_toy_data(
        args.num_speakers, args.train_duration, args.dev_duration, seed=args.data_seed)
    result = train(train_frames, dev_frames, cfg)
    write_output(args.checkpoint, save_checkpoint(result.model))
    if args.log:
        write_output(args.log, result.log_tsv())
    acc = dev_frame_accuracy(result.model, make_dev_set(dev_frames, cfg, cfg.seed + 1))
    print(f"best epoch {result.best_epoch}, dev frame accuracy {100 * acc:.2f}%", file=sys.stderr)


def cmd_infer_toy(args) -> None:
    model = load_checkpoint(Path(args.checkpoint).read_bytes())
    grid, _, feats = read_frame_table(read_text(args.features), args.step)
    if feats.shape[1] != model.feat_dim:
        raise CommandError(f"{args.features}: {feats.shape[1]} features, model expects {model.feat_dim}")
    write_output(args.output, write_activations_csv(predict(model, feats, grid)))


# ---------------------------------------------------------------- post-processing


def _binarize_stream(acts: Activations, params: PostProcessingParams, uri: str) -> str:
    return write_rttm({uri: to_annotation(binarize(acts, params), uri)})


def cmd_binarize(args) -> None:
    acts = read_activations_csv(read_text(args.acts), args.step)
    params = override_params(load_config(args.config).task_params("seg"), args)
    write_output(args.output, _binarize_stream(acts, params, args.uri or uri_from_path(args.acts)))


def cmd_vad(args) -> None:
    acts = read_activations_csv(read_text(args.acts), args.step)
    params = override_params(load_config(args.config).task_params("vad"), args)
    stream = score_stream(vad_scores(acts), acts.grid, "speech")
    write_output(args.output, _binarize_stream(stream, params, args.uri or uri_from_path(args.acts)))


def cmd_osd(args) -> None:
    acts = read_activations_csv(read_text(args.acts), args.step)
    params = override_params(load_config(args.config).task_params("osd"), args)
    stream = score_stream(osd_scores(acts), acts.grid, "overlap")
    write_output(args.output, _binarize_stream(stream, params, args.uri or uri_from_path(args.acts)))


def cmd_reseg(args) -> None:
    cfg = load_config(args.config)
    window = SlidingWindowConfig(
        args.window_duration if args.window_duration is not None else cfg.window.duration,
        args.window_step if args.window_step is not None else cfg.window.step,
    )
    params = override_params(cfg.task_params("reseg"), args)
    dia = pick_annotation(parse_rttm(read_text(args.dia)), args.uri, args.dia)
    acts = read_activations_csv(read_text(args.acts), args.step)
    trace = [] if args.dump_cost else None
    scores = resegmentation_scores(dia, SlicedWindows(acts), window, trace=trace)
    out = to_annotation(binarize(scores, params), dia.uri)
    write_output(args.output, write_rttm({dia.uri: out}))
    if trace is not None:
        lines = ["window_start\trow\tpermutation\tcosts"]
        for first, cost, perm in trace:
            t0 = acts.grid.start + first * acts.grid.step
            for i, row in enumerate(cost):
                lines.append(f"{t0:.3f}\t{i}\t{perm[i]}\t" + " ".join(f"{c:.6f}" for c in row))
        write_output(args.dump_cost, "\n".join(lines) + "\n")


# ---------------------------------------------------------------- eval


def _hyp_timeline(hyp: Annotation, task: str) -> Timeline:
    # a multi-speaker hypothesis for osd is scored through its own overlap
    if task == "osd" and len(hyp.labels()) > 1:
        return overlap_timeline(hyp)
    return hyp.support()


def _score_file(job):
    task, ref, hyp, uem, collar, skip_overlap = job
    if task == "vad":
        return detection_error(ref.support(), _hyp_timeline(hyp, task), uem)
    if task == "osd":
        return precision_recall_f1(overlap_timeline(ref), _hyp_timeline(hyp, task), uem)
    return der(ref, hyp, uem, collar, skip_overlap)


def _round(d: dict) -> dict:
    return {k: (round(v, 6) if isinstance(v, float) else v) for k, v in d.items()}


def cmd_eval(args) -> None:
    refs = parse_rttm(read_text(args.ref))
    hyps = parse_rttm(read_text(args.hyp))
    uems = parse_uem(read_text(args.uem)) if args.uem else {}
    if args.collar < 0:
        raise CommandError("--collar must be >= 0")
    uris = sorted(refs)
    for u in uris:
        if u not in hyps:
            log.warning("%s: no hypothesis for file id %r, scoring it as empty", args.hyp, u)
    jobs = [
        (args.task, refs[u], hyps.get(u, Annotation(u)), uems.get(u) if args.uem else None,
         args.collar, args.skip_overlap)
        for u in uris
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            reports = list(pool.map(_score_file, jobs))
    else:
        reports = [_score_file(j) for j in jobs]
    if not reports:
        raise CommandError(f"{args.ref}: no reference files")
    total = reports[0]
    for rep in reports[1:]:
        total = total + rep
    rows = [(u, _round(r.as_dict())) for u, r in zip(uris, reports)]
    total_row = _round(total.as_dict())

    columns = list(total_row)
    tsv = ["\t".join(["uri"] + columns)]
    for uri, row in rows + [("TOTAL", total_row)]:
        tsv.append("\t".join([uri] + [_fmt(row[c]) for c in columns]))
    tsv_text = "\n".join(tsv) + "\n"
    report = {
        "schema_version": SCHEMA_VERSION,
        "task": args.task,
        "collar": args.collar,
        "skip_overlap": args.skip_overlap,
        "files": [{"uri": u, **r} for u, r in rows],
        "total": total_row,
    }
    json_text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.json:
        write_output(args.json, json_text)
    write_output(args.tsv, tsv_text)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


# ---------------------------------------------------------------- tune


def _range(text: str | None, default: tuple[float, float]) -> tuple[float, float]:
    if text is None:
        return default
    parts = text.split(":")
    if len(parts) == 1:
        return float(parts[0]), float(parts[0])
    if len(parts) != 2:
        raise CommandError(f"bad range {text!r}, expected lo:hi or a single value")
    return float(parts[0]), float(parts[1])


def _load_dev_set(path: str, step) -> list[DevItem]:
    base = Path(path).parent
    items = []
    for lineno, raw in enumerate(read_text(path).splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) < 2:
            raise CommandError(f"{path}: line {lineno}: expected ref_rttm<TAB>acts_csv[<TAB>dia_rttm[<TAB>uem]]")
        acts_path = base / fields[1]
        refs = parse_rttm(read_text(base / fields[0]))
        ref = pick_annotation(refs, acts_path.stem if len(refs) > 1 else None, fields[0])
        acts = read_activations_csv(read_text(acts_path), step)
        dia = None
        if len(fields) > 2 and fields[2] not in ("", "-"):
            dias = parse_rttm(read_text(base / fields[2]))
            dia = pick_annotation(dias, ref.uri if ref.uri in dias else None, fields[2])
        uem = None
        if len(fields) > 3 and fields[3] not in ("", "-"):
            uems = parse_uem(read_text(base / fields[3]))
            uem = uems.get(ref.uri) or pick_uem(uems, fields[3])
        items.append(DevItem(ref, acts, dia, uem))
    return items


def pick_uem(uems: dict[str, Timeline], source: str) -> Timeline:
    if len(uems) != 1:
        raise CommandError(f"{source}: cannot tell which UEM entry to use")
    return next(iter(uems.values()))


def cmd_tune(args) -> None:
    dev = _load_dev_set(args.dev, args.step)
    space = ParamSpace(
        _range(args.theta_on, (0.0, 1.0)),
        _range(args.theta_off, (0.0, 1.0)),
        _range(args.delta_on, (0.0, 1.0)),
        _range(args.delta_off, (0.0, 1.0)),
    )
    window = SlidingWindowConfig(args.window_duration, args.window_step)
    result = tune(space, args.objective, dev, seed=args.seed, window=window)
    if args.objective == "detection-error":
        task = "vad"
    elif args.objective == "f1":
        task = "osd"
    else:
        task = "reseg" if any(item.diarization is not None for item in dev) else "seg"
    cfg = PipelineConfig(window, {task: result.params}, args.seed)
    write_output(args.output, format_pipeline_config(cfg))
    if args.report:
        report = {"schema_version": SCHEMA_VERSION, "task": task, **_round(result.as_dict())}
        write_output(args.report, json.dumps(report, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speakerseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthetic reference RTTM + oracle activations, or augmented chunks")
    p.add_argument("--config", help="key = value file with synth settings")
    p.add_argument("--num-speakers", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--on-rate", type=float)
    p.add_argument("--off-rate", type=float)
    p.add_argument("--noise", type=float, help="oracle activation noise level")
    p.add_argument("--seed", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--k-max", type=int, help="pad activations with silent columns up to this count")
    p.add_argument("--uri", default="synth")
    p.add_argument("--out-rttm", default="-")
    p.add_argument("--out-acts")
    p.add_argument("--out-features")
    p.add_argument("--features-dim", type=int, default=16)
    p.add_argument("--feature-noise", type=float, default=0.1)
    p.add_argument("--embedding-seed", type=int, default=0)
    p.add_argument("--augment", action="store_true", help="mix chunks listed in --manifest")
    p.add_argument("--manifest", help="TSV: audio_path<TAB>offset<TAB>rttm_path")
    p.add_argument("--out-dir")
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--mix-prob", type=float, default=0.5)
    p.add_argument("--ssr-min", type=float, default=0.0)
    p.add_argument("--ssr-max", type=float, default=10.0)
    p.add_argument("--noise-list", help="file listing background noise audio paths")
    p.add_argument("--snr-min", type=float, default=5.0)
    p.add_argument("--snr-max", type=float, default=15.0)
    p.add_argument("--chunk-duration", type=float, default=5.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-toy", help="train the toy model on synthetic data")
    d = TrainConfig()
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", help="TSV training log")
    p.add_argument("--num-speakers", type=int, default=2)
    p.add_argument("--train-duration", type=float, default=600.0)
    p.add_argument("--dev-duration", type=float, default=120.0)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--plateau-factor", type=float, default=d.plateau_factor)
    p.add_argument("--plateau-patience", type=int, default=d.plateau_patience)
    p.add_argument("--plateau-threshold", type=float, default=d.plateau_threshold)
    p.add_argument("--max-epochs", type=int, default=d.max_epochs)
    p.add_argument("--steps-per-epoch", type=int, default=d.steps_per_epoch)
    p.add_argument("--chunk-duration", type=float, default=d.chunk_duration)
    p.add_argument("--mix-prob", type=float, default=d.mix_prob)
    p.add_argument("--k-max", type=int, default=d.k_max)
    p.add_argument("--context", type=int, default=d.context)
    p.add_argument("--hidden", default=",".join(str(h) for h in d.hidden))
    p.add_argument("--embed-dim", type=int, default=d.embed_dim)
    p.add_argument("--feature-noise", type=float, default=d.feature_noise)
    p.add_argument("--embedding-seed", type=int, default=d.embedding_seed)
    p.add_argument("--seed", type=int, default=d.seed)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("infer-toy", help="activation CSV from a toy checkpoint and a feature CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--step", type=float)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_infer_toy)

    for name, func, help_ in (
        ("binarize", cmd_binarize, "per-speaker segmentation from activations"),
        ("vad", cmd_vad, "voice activity detection (max over speakers)"),
        ("osd", cmd_osd, "overlapped speech detection (second highest activation)"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("acts", help="activation CSV")
        p.add_argument("--uri")
        p.add_argument("--step", type=float)
        p.add_argument("-o", "--output", default="-")
        add_param_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("reseg", help="overlap-aware resegmentation of a diarization")
    p.add_argument("--dia", required=True, help="diarization RTTM")
    p.add_argument("--acts", required=True, help="full-file activation CSV")
    p.add_argument("--uri")
    p.add_argument("--step", type=float)
    p.add_argument("--window-duration", type=float)
    p.add_argument("--window-step", type=float)
    p.add_argument("--dump-cost", help="write per-window cost matrices as TSV")
    p.add_argument("-o", "--output", default="-")
    add_param_flags(p)
    p.set_defaults(func=cmd_reseg)

    p = sub.add_parser("eval", help="score a hypothesis RTTM against a reference RTTM")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--uem")
    p.add_argument("--task", choices=("vad", "osd", "der"), default="der")
    p.add_argument("--collar", type=float, default=0.0, help="total collar width in seconds (der only)")
    p.add_argument("--skip-overlap", action="store_true", help="der only")
    p.add_argument("--tsv", default="-")
    p.add_argument("--json")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tune", help="tune post-processing thresholds on a dev set")
    p.add_argument("--dev", required=True, help="TSV: ref_rttm<TAB>acts_csv[<TAB>dia_rttm[<TAB>uem]]")
    p.add_argument("--objective", choices=("detection-error", "f1", "der"), required=True)
    p.add_argument("--theta-on", help="lo:hi or value")
    p.add_argument("--theta-off", help="lo:hi or value")
    p.add_argument("--delta-on", help="lo:hi or value (seconds)")
    p.add_argument("--delta-off", help="lo:hi or value (seconds)")
    p.add_argument("--window-duration", type=float, default=5.0)
    p.add_argument("--window-step", type=float, default=0.5)
    p.add_argument("--step", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="-", help="params file")
    p.add_argument("--report", help="JSON report")
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CommandError, ConfigError, ParseError, OSError, ValueError, RuntimeError) as exc:
        print(f"speakerseg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
