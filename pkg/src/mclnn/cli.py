"""Command-line entry point wiring the modules into reproducible runs.

Subcommands: features extract, dataset plan, mask dump, model describe,
train, eval, predict, gradcheck.  Configuration precedence is CLI flag >
config file (INI) > built-in defaults; every artifact-producing run
writes the fully resolved config beside its outputs.

Exit codes: 0 success; 1 gradcheck found a failure; 2 usage;
3 config error; 4 file/format error; 5 data or shape validation error;
6 training divergence.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import features as feat
from . import model as mdl
from . import training as trn
from .errors import (
    ConfigError,
    ContractError,
    FileFormatError,
    MclnnError,
    TrainingDivergedError,
    ValidationError,
)
from .mask import BinaryMask, MaskSpec, generate_mask

OUT_ROOT_ENV = "MCLNN_OUT_ROOT"
FEATURE_SUFFIX = ".mclf"
MODEL_SUFFIX = ".mcln"

EXIT_OK = 0
EXIT_GRADCHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_DATA = 5
EXIT_DIVERGED = 6


# ---------------------------------------------------------------------------
# config file handling
# ---------------------------------------------------------------------------

_KNOWN_KEYS = {
    "features": {"rate", "fft", "hop", "mel_bins", "chunk_seconds"},
    "model": {
        "feature_length", "layers", "extra_frames", "dense_width",
        "class_count", "activation",
    },
    "training": {
        "learning_rate", "batch_size", "epochs", "seed", "patience",
        "hop", "optimizer", "momentum",
    },
    "paths": {"features", "plan", "out", "manifest", "classes", "model"},
}


@dataclass
class ExperimentConfig:
    features: feat.FeatureParams
    model_spec: mdl.ModelSpec | None
    training: trn.TrainConfig

    def to_ini(self, paths: dict[str, str] | None = None) -> str:
        parser = configparser.ConfigParser()
        parser["features"] = {
            "rate": str(self.features.sample_rate),
            "fft": str(self.features.fft_size),
            "hop": str(self.features.hop),
            "mel_bins": str(self.features.mel_bins),
            "chunk_seconds": str(self.features.chunk_seconds),
        }
        if self.model_spec is not None:
            parser["model"] = {
                "feature_length": str(self.model_spec.feature_length),
                "layers": format_layers(self.model_spec.layers),
                "extra_frames": str(self.model_spec.extra_frames),
                "dense_width": str(self.model_spec.dense_width),
                "class_count": str(self.model_spec.class_count),
                "activation": self.model_spec.activation,
            }
        parser["training"] = {
            k: ("" if v is None else str(v)) for k, v in self.training.to_dict().items()
        }
        if paths:
            parser["paths"] = {k: str(v) for k, v in sorted(paths.items())}
        import io

        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def format_layers(layers) -> str:
    parts = []
    for layer in layers:
        if layer.masked:
            parts.append(f"{layer.width}:{layer.order}:{layer.bandwidth}:{layer.overlap}")
        else:
            parts.append(f"{layer.width}:{layer.order}")
    return ", ".join(parts)


def parse_layers(text: str) -> tuple[mdl.LayerSpec, ...]:
    """Parse 'width:order' or 'width:order:bandwidth:overlap', comma-separated."""
    layers = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        try:
            if len(parts) == 2:
                layers.append(mdl.LayerSpec(width=int(parts[0]), order=int(parts[1])))
            elif len(parts) == 4:
                layers.append(
                    mdl.LayerSpec(
                        width=int(parts[0]), order=int(parts[1]),
                        bandwidth=int(parts[2]), overlap=int(parts[3]),
                    )
                )
            else:
                raise ValueError(f"expected 2 or 4 fields, got {len(parts)}")
        except ValueError as exc:
            raise ConfigError(f"bad layer spec {chunk!r}: {exc}") from exc
    if not layers:
        raise ConfigError(f"no layers parsed from {text!r}")
    return tuple(layers)


def _read_ini(path: Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    try:
        with open(path) as handle:
            parser.read_file(handle)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        unknown = set(parser[section]) - _KNOWN_KEYS[section]
        if unknown:
            raise ConfigError(f"{path}: unknown keys in [{section}]: {sorted(unknown)}")
    return parser


def _get(parser, section, key, cast, fallback):
    if parser is None or not parser.has_option(section, key):
        return fallback
    raw = parser.get(section, key)
    if raw == "":
        return None
    try:
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def _bool_or_value(args, name, fallback):
    value = getattr(args, name, None)
    return fallback if value is None else value


def load_experiment_config(args) -> ExperimentConfig:
    """Merge defaults, the optional INI file, preset, and CLI flags."""
    parser = None
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        parser = _read_ini(path)

    fp = feat.FeatureParams(
        sample_rate=_get(parser, "features", "rate", int, 22050),
        fft_size=_get(parser, "features", "fft", int, 2048),
        hop=_get(parser, "features", "hop", int, 1024),
        mel_bins=_get(parser, "features", "mel_bins", int, 256),
        chunk_seconds=_get(parser, "features", "chunk_seconds", float, 30.0),
    )
    for attr, flag in (
        ("sample_rate", "rate"), ("fft_size", "fft"), ("hop", "feature_hop"),
        ("mel_bins", "mel_bins"), ("chunk_seconds", "chunk_seconds"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            fp = replace(fp, **{attr: value})

    spec: mdl.ModelSpec | None = None
    preset = getattr(args, "preset", None)
    if preset is not None:
        if preset not in mdl.PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(mdl.PRESETS)}")
        spec = mdl.PRESETS[preset]
    elif parser is not None and parser.has_section("model"):
        for key in ("feature_length", "layers", "extra_frames", "dense_width", "class_count"):
            if not parser.has_option("model", key):
                raise ConfigError(f"[model] section is missing {key!r}")
        try:
            spec = mdl.ModelSpec(
                feature_length=parser.getint("model", "feature_length"),
                layers=parse_layers(parser.get("model", "layers")),
                extra_frames=parser.getint("model", "extra_frames"),
                dense_width=parser.getint("model", "dense_width"),
                class_count=parser.getint("model", "class_count"),
                activation=parser.get("model", "activation", fallback="prelu"),
            )
        except (ValueError, ValidationError) as exc:
            raise ConfigError(f"invalid [model] section: {exc}") from exc

    tc_kwargs = dict(
        learning_rate=_get(parser, "training", "learning_rate", float, 0.01),
        batch_size=_get(parser, "training", "batch_size", int, 64),
        epochs=_get(parser, "training", "epochs", int, 200),
        seed=_get(parser, "training", "seed", int, 0),
        patience=_get(parser, "training", "patience", int, 10),
        hop=_get(parser, "training", "hop", int, None),
        optimizer=_get(parser, "training", "optimizer", str, "momentum"),
        momentum=_get(parser, "training", "momentum", float, 0.9),
    )
    for key, flag in (
        ("learning_rate", "learning_rate"), ("batch_size", "batch_size"),
        ("epochs", "epochs"), ("seed", "seed"), ("patience", "patience"),
        ("hop", "hop"), ("optimizer", "optimizer"), ("momentum", "momentum"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            tc_kwargs[key] = value
    try:
        tc = trn.TrainConfig(**tc_kwargs)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(features=fp, model_spec=spec, training=tc)


def _resolve_out(raw: str | None, command: str) -> Path:
    if raw:
        return Path(raw)
    root = os.environ.get(OUT_ROOT_ENV)
    if root:
        return Path(root) / command
    raise ConfigError(f"--out is required (or set ${OUT_ROOT_ENV})")


# ---------------------------------------------------------------------------
# data plumbing shared by train / eval / predict
# ---------------------------------------------------------------------------


def _load_feature_dir(directory: Path) -> list[feat.FeatureMatrix]:
    if not directory.is_dir():
        raise ConfigError(f"feature directory {directory} does not exist")
    paths = sorted(directory.glob(f"*{FEATURE_SUFFIX}"))
    if not paths:
        raise ValidationError(f"no {FEATURE_SUFFIX} files under {directory}")
    return [feat.load_features(p) for p in paths]


def _read_class_names(path: str | None, class_count: int) -> tuple[str, ...]:
    if path is None:
        return tuple(str(i) for i in range(class_count))
    names = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    if len(names) != class_count:
        raise ConfigError(f"{path} lists {len(names)} classes, model expects {class_count}")
    return tuple(names)


def _bucket_roles(plan: ds.SplitPlan, args) -> dict[str, str]:
    """Map each plan bucket to train/validation/test."""
    buckets = plan.buckets()
    if all(b.startswith("fold") for b in buckets):
        test_fold = getattr(args, "test_fold", None)
        if test_fold is None:
            raise ConfigError("plan uses folds; pass --test-fold")
        return ds.fold_buckets(len(buckets), test_fold, getattr(args, "validation_fold", None))
    known = {ds.TRAIN, ds.VALIDATION, ds.TEST}
    stray = set(buckets) - known
    if stray:
        raise ValidationError(f"plan buckets {sorted(stray)} are neither folds nor {sorted(known)}")
    return {b: b for b in buckets}


def _split_features(all_features, plan, roles):
    groups: dict[str, list[feat.FeatureMatrix]] = {ds.TRAIN: [], ds.VALIDATION: [], ds.TEST: []}
    for fm in all_features:
        role = roles[plan.bucket(fm.clip_id)]
        groups[role].append(replace(fm, split=role))
    if not groups[ds.TRAIN]:
        raise ValidationError("plan leaves the training split empty")
    return groups


def _segment_all(features_list, q, hop) -> list[ds.Segment]:
    segments: list[ds.Segment] = []
    for fm in features_list:
        segments.extend(ds.segment_clip(fm, q, hop))
    return segments


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_features_extract(args) -> int:
    config = load_experiment_config(args)
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise ConfigError(f"input directory {in_dir} does not exist")
    out_dir = _resolve_out(args.out, "features")
    out_dir.mkdir(parents=True, exist_ok=True)

    class_dirs = sorted(p for p in in_dir.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValidationError(f"{in_dir} has no class subdirectories")
    mapping = ds.class_mapping([p.name for p in class_dirs])
    manifest_rows = []
    for class_dir in class_dirs:
        label = mapping[class_dir.name]
        audio_paths = sorted(
            p for p in class_dir.iterdir() if p.suffix in (".npz", ".wav")
        )
        for audio_path in audio_paths:
            clip = feat.load_audio(audio_path)
            clip_id = f"{class_dir.name}__{audio_path.stem}"
            fm = feat.extract_features(
                clip, config.features, clip_id=clip_id, label=label
            )
            feat.save_features(fm, out_dir / f"{clip_id}{FEATURE_SUFFIX}")
            manifest_rows.append(f"{clip_id}\t{class_dir.name}")
    if not manifest_rows:
        raise ValidationError(f"no .npz or .wav clips found under {in_dir}")
    (out_dir / "manifest.tsv").write_text("\n".join(manifest_rows) + "\n")
    (out_dir / "classes.txt").write_text(
        "\n".join(sorted(mapping, key=mapping.get)) + "\n"
    )
    (out_dir / "resolved.ini").write_text(
        config.to_ini({"in": str(in_dir), "out": str(out_dir)})
    )
    print(f"extracted {len(manifest_rows)} clips into {out_dir}")
    return EXIT_OK


def cmd_dataset_plan(args) -> int:
    out_path = Path(args.out) if args.out else _resolve_out(None, "plan") / "plan.txt"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if args.train_list or args.test_list:
        if not (args.train_list and args.test_list):
            raise ConfigError("--train-list and --test-list must be given together")
        train_ids = [l.strip() for l in Path(args.train_list).read_text().splitlines() if l.strip()]
        test_ids = [l.strip() for l in Path(args.test_list).read_text().splitlines() if l.strip()]
        labels = None
        if args.manifest:
            rows = ds.load_manifest(args.manifest)
            mapping = ds.class_mapping([c for _, c in rows])
            labels = {clip: mapping[c] for clip, c in rows}
        plan = ds.fixed_split(
            train_ids, test_ids,
            validation_fraction=args.validation_fraction,
            seed=args.seed, labels=labels,
        )
    else:
        if not args.manifest:
            raise ConfigError("either --manifest (fold mode) or --train-list/--test-list is required")
        rows = ds.load_manifest(args.manifest)
        mapping = ds.class_mapping([c for _, c in rows])
        clips = [(clip, mapping[c]) for clip, c in rows]
        plan = ds.make_folds(clips, folds=args.folds, seed=args.seed)
    plan.save(out_path)
    counts = {b: len(plan.clips_in(b)) for b in plan.buckets()}
    print(f"wrote {out_path}: " + ", ".join(f"{b}={n}" for b, n in sorted(counts.items())))
    return EXIT_OK


def _mask_grid_text(mask: BinaryMask) -> str:
    rows = ["".join(str(int(v)) for v in row) for row in mask.entries]
    ones = [f"{r},{c}" for r, c in mask.one_positions()]
    return "\n".join(rows) + "\n\nones (row,col): " + " ".join(ones) + "\n"


def cmd_mask_dump(args) -> int:
    spec = MaskSpec(
        feature_length=args.feature_length,
        hidden_width=args.hidden_width,
        bandwidth=args.bandwidth,
        overlap=args.overlap,
    )
    text = _mask_grid_text(generate_mask(spec))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        print(f"wrote {out}")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_model_describe(args) -> int:
    config = load_experiment_config(args)
    if config.model_spec is None:
        raise ConfigError("model describe needs --preset or a config file with a [model] section")
    spec = config.model_spec
    model = mdl.build_model(spec, seed=args.seed or 0)
    plan = mdl.frame_plan(spec)
    print(f"feature_length: {spec.feature_length}")
    print(f"layers: {format_layers(spec.layers)}")
    print(f"extra_frames: {spec.extra_frames}  dense_width: {spec.dense_width}  "
          f"classes: {spec.class_count}  activation: {spec.activation}")
    print(f"segment_size: {mdl.segment_size(spec)}")
    print(f"frame_plan: {plan}")
    total = 0
    for name, tensor in model.parameters().items():
        total += tensor.size
    print(f"parameters: {total}")
    for i, layer in enumerate(model.clnn_layers):
        if layer.mask is None:
            print(f"layer {i}: unmasked, weights {layer.weights.shape}")
        else:
            print(
                f"layer {i}: mask {layer.mask.shape[0]}x{layer.mask.shape[1]}, "
                f"density {layer.mask.density():.4f}, weights {layer.weights.shape}"
            )
    return EXIT_OK


def _prepare_run(args, config):
    """Shared train/eval setup: features, plan, roles, normalization, segments."""
    spec = config.model_spec
    if spec is None:
        raise ConfigError("a model architecture is required: --preset or config [model] section")
    all_features = _load_feature_dir(Path(args.features))
    plan = ds.SplitPlan.load(args.plan)
    missing = [fm.clip_id for fm in all_features if fm.clip_id not in plan.assignment]
    if missing:
        raise ValidationError(
            f"{len(missing)} feature clips are not in the plan, e.g. {missing[:3]}"
        )
    roles = _bucket_roles(plan, args)
    groups = _split_features(all_features, plan, roles)
    widths = {fm.feature_length for fm in all_features}
    if widths != {spec.feature_length}:
        raise ValidationError(
            f"feature widths {sorted(widths)} do not match model feature_length "
            f"{spec.feature_length}"
        )
    return plan, roles, groups


def cmd_train(args) -> int:
    config = load_experiment_config(args)
    spec = config.model_spec
    out_dir = _resolve_out(args.out, "train")
    out_dir.mkdir(parents=True, exist_ok=True)
    plan, roles, groups = _prepare_run(args, config)

    stats = feat.fit_zscore(groups[ds.TRAIN])
    normalized = {
        role: [feat.apply_zscore(fm, stats) for fm in fms] for role, fms in groups.items()
    }
    q = mdl.segment_size(spec)
    hop = config.training.hop or q
    train_segments = _segment_all(normalized[ds.TRAIN], q, hop)
    val_segments = _segment_all(normalized[ds.VALIDATION], q, hop)
    if not train_segments:
        raise ValidationError(f"training clips yielded no segments at q={q}, hop={hop}")

    labels = _read_class_names(args.classes, spec.class_count)
    model = mdl.build_model(spec, seed=config.training.seed, labels=labels)
    model.norm_stats = stats
    model, report = trn.train(model, train_segments, config.training, val_segments or None)

    if normalized[ds.TEST]:
        by_clip = {fm.clip_id: ds.segment_clip(fm, q, hop) for fm in normalized[ds.TEST]}
        labels_by_clip = {fm.clip_id: fm.label for fm in normalized[ds.TEST]}
        result = trn.evaluate(model, by_clip, labels_by_clip)
        report.test_accuracy = result.clip_accuracy
        report.confusion = result.confusion

    mdl.save_model(model, out_dir / f"model{MODEL_SUFFIX}")
    (out_dir / "report.txt").write_text(report.to_text())
    (out_dir / "resolved.ini").write_text(config.to_ini({
        "features": str(args.features), "plan": str(args.plan), "out": str(out_dir),
    }))
    plan.save(out_dir / "plan.txt")
    summary = f"trained {len(report.epochs)} epochs; best epoch {report.best_epoch}"
    if report.test_accuracy is not None:
        summary += f"; test clip accuracy {report.test_accuracy:.4f}"
    print(summary)
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = mdl.load_model(args.model)
    all_features = _load_feature_dir(Path(args.features))
    plan = ds.SplitPlan.load(args.plan)
    bucket = args.bucket
    clip_ids = set(plan.clips_in(bucket))
    if not clip_ids:
        raise ValidationError(f"plan has no clips in bucket {bucket!r}")
    chosen = [fm for fm in all_features if fm.clip_id in clip_ids]
    if not chosen:
        raise ValidationError(f"no feature files for bucket {bucket!r} under {args.features}")
    if model.norm_stats is not None:
        chosen = [
            fm if fm.normalized else feat.apply_zscore(fm, model.norm_stats) for fm in chosen
        ]
    q = mdl.segment_size(model.spec)
    hop = args.hop or q
    by_clip = {fm.clip_id: ds.segment_clip(fm, q, hop) for fm in chosen}
    labels_by_clip = {fm.clip_id: fm.label for fm in chosen}
    result = trn.evaluate(model, by_clip, labels_by_clip)
    print(f"clips: {len(labels_by_clip)}  accuracy: {result.clip_accuracy:.4f}")
    header = list(model.labels) + ["none"]
    print("true\\pred\t" + "\t".join(header))
    for i, row in enumerate(result.confusion):
        print(model.labels[i] + "\t" + "\t".join(str(int(v)) for v in row))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"{cid}\t{pred}" for cid, pred in sorted(result.per_clip.items())]
        out.write_text(f"# accuracy = {result.clip_accuracy!r}\n" + "\n".join(lines) + "\n")
        print(f"wrote {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = mdl.load_model(args.model)
    q = mdl.segment_size(model.spec)
    hop = args.hop or q
    paths = [Path(p) for p in args.features_files]
    for path in paths:
        fm = feat.load_features(path)
        if model.norm_stats is not None and not fm.normalized:
            fm = feat.apply_zscore(fm, model.norm_stats)
        if fm.label is None:
            fm = replace(fm, label=0)  # segmentation requires one; prediction ignores it
        segments = ds.segment_clip(fm, q, hop)
        if not segments:
            print(f"{fm.clip_id or path.name}\t<too short>\t-")
            continue
        predicted, mean_probs = trn.predict_clip(model, segments)
        probs_text = " ".join(f"{p:.4f}" for p in mean_probs)
        print(f"{fm.clip_id or path.name}\t{model.labels[predicted]}\t{probs_text}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = load_experiment_config(args)
    spec = config.model_spec
    if spec is None:
        # small default: exercises masking, multiple layers, and pooling
        spec = mdl.ModelSpec(
            feature_length=8,
            layers=(
                mdl.LayerSpec(width=6, order=2, bandwidth=3, overlap=1),
                mdl.LayerSpec(width=6, order=2, bandwidth=3, overlap=1),
            ),
            extra_frames=3,
            dense_width=5,
            class_count=4,
        )
    model = mdl.build_model(spec, seed=args.seed or 0)
    rng = np.random.default_rng((args.seed or 0) + 1)
    segment = rng.standard_normal((mdl.segment_size(spec), spec.feature_length))
    target = int(rng.integers(spec.class_count))
    report = trn.grad_check(model, segment, target, tolerance=args.tolerance)
    print(report.to_text(), end="")
    return EXIT_OK if report.passed else EXIT_GRADCHECK_FAILED


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--preset", help="built-in architecture preset (e.g. table3)")
    p.add_argument("--seed", type=int, default=None)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--hop", type=int, default=None, help="segment hop (default: segment size)")
    p.add_argument("--optimizer", choices=["sgd", "momentum"], default=None)
    p.add_argument("--momentum", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mclnn",
        description="Masked conditional neural networks for temporal-signal classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_features = sub.add_parser("features", help="feature pipeline")
    f_sub = p_features.add_subparsers(dest="subcommand", required=True)
    p_extract = f_sub.add_parser("extract", help="audio dir -> per-clip feature files")
    p_extract.add_argument("--in", dest="in_dir", required=True,
                           help="directory of <class>/<clip>.npz|.wav")
    p_extract.add_argument("--out", default=None)
    p_extract.add_argument("--rate", type=int, default=None)
    p_extract.add_argument("--fft", type=int, default=None)
    p_extract.add_argument("--hop", dest="feature_hop", type=int, default=None)
    p_extract.add_argument("--mel-bins", dest="mel_bins", type=int, default=None)
    p_extract.add_argument("--chunk-seconds", dest="chunk_seconds", type=float, default=None)
    p_extract.add_argument("--config", help="INI config file")
    p_extract.set_defaults(func=cmd_features_extract)

    p_dataset = sub.add_parser("dataset", help="splits and folds")
    d_sub = p_dataset.add_subparsers(dest="subcommand", required=True)
    p_plan = d_sub.add_parser("plan", help="build a split plan")
    p_plan.add_argument("--manifest", help="clip<TAB>class rows")
    p_plan.add_argument("--folds", type=int, default=10)
    p_plan.add_argument("--seed", type=int, default=0)
    p_plan.add_argument("--train-list", dest="train_list")
    p_plan.add_argument("--test-list", dest="test_list")
    p_plan.add_argument("--validation-fraction", dest="validation_fraction",
                        type=float, default=0.0)
    p_plan.add_argument("--out", default=None)
    p_plan.set_defaults(func=cmd_dataset_plan)

    p_mask = sub.add_parser("mask", help="band-pattern masks")
    m_sub = p_mask.add_subparsers(dest="subcommand", required=True)
    p_dump = m_sub.add_parser("dump", help="print a mask as a 0/1 grid")
    p_dump.add_argument("--feature-length", dest="feature_length", type=int, required=True)
    p_dump.add_argument("--hidden-width", dest="hidden_width", type=int, required=True)
    p_dump.add_argument("--bandwidth", type=int, required=True)
    p_dump.add_argument("--overlap", type=int, required=True)
    p_dump.add_argument("--out", default=None)
    p_dump.set_defaults(func=cmd_mask_dump)

    p_model = sub.add_parser("model", help="architecture tools")
    mo_sub = p_model.add_subparsers(dest="subcommand", required=True)
    p_describe = mo_sub.add_parser("describe", help="print spec, frame plan, parameter counts")
    _add_config_flags(p_describe)
    p_describe.set_defaults(func=cmd_model_describe)

    p_train = sub.add_parser("train", help="train a model from feature files and a plan")
    _add_config_flags(p_train)
    _add_train_flags(p_train)
    p_train.add_argument("--features", required=True, help="directory of feature files")
    p_train.add_argument("--plan", required=True, help="split plan file")
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--classes", default=None, help="class-name list, one per line")
    p_train.add_argument("--test-fold", dest="test_fold", type=int, default=None)
    p_train.add_argument("--validation-fold", dest="validation_fold", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a saved model on a plan bucket")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--plan", required=True)
    p_eval.add_argument("--features", required=True)
    p_eval.add_argument("--bucket", default="test")
    p_eval.add_argument("--hop", type=int, default=None)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_predict = sub.add_parser("predict", help="per-clip predictions for feature files")
    p_predict.add_argument("--model", required=True)
    p_predict.add_argument("--hop", type=int, default=None)
    p_predict.add_argument("features_files", nargs="+", metavar="FEATURES")
    p_predict.set_defaults(func=cmd_predict)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_config_flags(p_grad)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    p_grad.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except TrainingDivergedError as exc:
        return _fail(exc, EXIT_DIVERGED)
    except FileFormatError as exc:
        return _fail(exc, EXIT_IO)
    except OSError as exc:
        return _fail(exc, EXIT_IO)
    except MclnnError as exc:
        return _fail(exc, EXIT_DATA)


def _fail(exc: Exception, code: int) -> int:
    print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
