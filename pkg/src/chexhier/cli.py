"""Command-line entry point: ``chexhier <subcommand> [options]``.

Subcommands: gen, preprocess, train, predict, ensemble, eval, ablate.

Exit codes: 0 success, 2 usage error, 3 data/schema error, 4 numeric failure.
Every successful run writes a JSON manifest next to its output with the
resolved configuration and SHA-256 digests of inputs and outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._random import derive_rng
from .data import (
    SyntheticConfig,
    generate_synthetic,
    load_csv,
    read_features,
    write_csv,
    write_features,
)
from .evaluation import (
    compare_operating_points,
    default_ablation_matrix,
    evaluate,
    parse_ablation_spec,
    read_operating_points,
    run_ablation,
)
from .exceptions import HierarchyError, NumericError, SchemaError
from .hierarchy import (
    COMPETITION_LABELS,
    LabelHierarchy,
    default_hierarchy,
    load_hierarchy,
    read_hierarchy,
)
from .infer import TtaConfig, ensemble_predict, read_predictions, write_predictions
from .model import (
    Architecture,
    TrainConfig,
    TrainLog,
    load_checkpoint,
    save_checkpoint,
    train_flat,
    train_two_phase,
)
from .policy import POLICY_KINDS, LabelPolicy
from .preprocess import PreprocessConfig, load_tensor, preprocess_image, read_pgm, save_tensor

logger = logging.getLogger("chexhier")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

PRESETS = {
    # Hyperparameters of the original CNN protocol.
    "standard": {"hidden": "64,64", "lr": 1e-4},
    # Fresh MLPs on a few thousand samples need a larger step and a single
    # wide hidden layer; the decay factor and epoch counts are unchanged.
    "desk": {"hidden": "512", "lr": 1e-2},
}

TRAIN_DEFAULTS = {
    "preset": "standard",
    "policy": "u-ones-lsr",
    "lsr_low": None,
    "lsr_high": None,
    "lsr_resample": False,
    "missing": "negative",
    "conditional": False,
    "epochs_p1": 5,
    "epochs_p2": 5,
    "lr_decay": 0.1,
    "batch_size": 32,
    "view": None,
}

DEFAULTS = {
    "gen": {"n": 1000, "n_val": 0, "d": 16, "rho": 0.0, "beta": 0.5,
            "weight_scale": 8.0, "bias_scale": 1.0},
    "preprocess": {"template": None},
    "train": dict(TRAIN_DEFAULTS),
    "predict": {"tta": 0},
    "ensemble": {"tta": 0, "average": "conditional"},
    "eval": {"subset": ",".join(COMPETITION_LABELS), "rad_points": None, "roc_dir": None,
             "truth": None},
    "ablate": dict(TRAIN_DEFAULTS, matrix="default", subset=",".join(COMPETITION_LABELS)),
}
COMMON_DEFAULTS = {"seed": 0, "hierarchy": None, "threads": None}


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _opt(p, *flags, **kw):
    p.add_argument(*flags, default=argparse.SUPPRESS, **kw)


def _add_common(p):
    _opt(p, "--config", help="JSON file of option defaults (keys as long flag names)")
    _opt(p, "--seed", type=int, help="run seed (default 0)")
    _opt(p, "--hierarchy", help="hierarchy file (default: shipped chexpert.hier)")
    _opt(p, "--threads", type=int, help="cap on BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_train_opts(p):
    _opt(p, "--preset", choices=sorted(PRESETS), help="hyperparameter preset (default standard)")
    _opt(p, "--policy", choices=POLICY_KINDS)
    _opt(p, "--lsr-low", type=float)
    _opt(p, "--lsr-high", type=float)
    _opt(p, "--lsr-resample", action="store_true", help="redraw LSR targets every epoch")
    _opt(p, "--missing", choices=("negative", "ignore"))
    _opt(p, "--conditional", action="store_true", help="two-phase conditional training")
    _opt(p, "--epochs-p1", type=int)
    _opt(p, "--epochs-p2", type=int)
    _opt(p, "--lr", type=float, help="initial learning rate")
    _opt(p, "--lr-decay", type=float, help="per-epoch learning-rate factor")
    _opt(p, "--batch-size", type=int)
    _opt(p, "--hidden", help="comma-separated hidden layer widths")
    _opt(p, "--view", choices=("frontal", "lateral"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chexhier", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic hierarchical dataset")
    _add_common(p)
    _opt(p, "--n", type=int, help="training samples")
    _opt(p, "--n-val", type=int, help="held-out samples (clean labels)")
    _opt(p, "--d", type=int, help="feature dimension")
    _opt(p, "--rho", type=float, help="uncertainty injection rate")
    _opt(p, "--beta", type=float, help="share of injected entries that are truly positive")
    _opt(p, "--weight-scale", type=float)
    _opt(p, "--bias-scale", type=float)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("preprocess", help="rescale, template-match and normalize PGM images")
    _add_common(p)
    p.add_argument("--input", required=True, help="directory of .pgm files")
    _opt(p, "--template", help="224x224 PGM template (default: built-in synthetic)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train a classifier")
    _add_common(p)
    _add_train_opts(p)
    p.add_argument("--data", required=True, help="label CSV")
    p.add_argument("--features", required=True, help="feature sidecar CSV")
    p.add_argument("--out", required=True, help="checkpoint path")

    for name, helptext in (("predict", "predict with one model"),
                           ("ensemble", "average several models")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name == "predict":
            p.add_argument("--model", required=True)
        else:
            p.add_argument("--models", required=True, nargs="+")
            _opt(p, "--average", choices=("conditional", "unconditional"))
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--features", help="feature sidecar CSV")
        src.add_argument("--images", help="directory written by `preprocess`")
        _opt(p, "--tta", type=int, help="test-time augmentations per image (0 = off)")
        p.add_argument("--out", required=True, help="prediction CSV")

    p = sub.add_parser("eval", help="AUC report for a prediction file")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True, help="label CSV with ground truth")
    _opt(p, "--subset", help="comma-separated labels for the mean AUC")
    _opt(p, "--rad-points", help="CSV of label,FPR,TPR reader operating points")
    _opt(p, "--roc-dir", help="write per-label ROC point lists here")
    p.add_argument("--out", required=True, help="report CSV (a .txt table is written alongside)")

    p = sub.add_parser("ablate", help="run the policy x conditional-training grid")
    _add_common(p)
    _add_train_opts(p)
    p.add_argument("--train", required=True)
    p.add_argument("--train-features", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--val-features", required=True)
    _opt(p, "--matrix", help="'default' or comma-separated rows like U-Ones+CT+LSR")
    _opt(p, "--subset", help="comma-separated labels to report")
    p.add_argument("--out", required=True, help="table CSV (a .txt table is written alongside)")
    return parser


def resolve_config(command: str, ns: argparse.Namespace) -> dict:
    """Built-in defaults < preset < config file < command-line flags."""
    cfg = dict(COMMON_DEFAULTS)
    cfg.update(DEFAULTS.get(command, {}))
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose", "config")}
    file_cfg = {}
    if getattr(ns, "config", None):
        path = Path(ns.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        file_cfg = {k.replace("-", "_"): v for k, v in json.loads(path.read_text()).items()}
    if "preset" in cfg:
        preset = given.get("preset", file_cfg.get("preset", cfg["preset"]))
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}")
        cfg.update(PRESETS[preset])
    cfg.update(file_cfg)
    cfg.update(given)
    return cfg


def _hierarchy(cfg) -> LabelHierarchy:
    return read_hierarchy(cfg["hierarchy"]) if cfg.get("hierarchy") else default_hierarchy()


def _hidden(text) -> tuple[int, ...]:
    try:
        sizes = tuple(int(s) for s in str(text).split(",") if s.strip())
    except ValueError:
        raise UsageError(f"invalid --hidden value {text!r}") from None
    if any(s < 1 for s in sizes):
        raise UsageError("hidden layer widths must be positive")
    return sizes


def _train_setup(cfg):
    policy = LabelPolicy(cfg["policy"], cfg["lsr_low"], cfg["lsr_high"], cfg["missing"])
    tc = TrainConfig(
        lr=float(cfg["lr"]),
        lr_decay=float(cfg["lr_decay"]),
        batch_size=int(cfg["batch_size"]),
        epochs_phase1=int(cfg["epochs_p1"]),
        epochs_phase2=int(cfg["epochs_p2"]),
        seed=int(cfg["seed"]),
        lsr_resample=bool(cfg["lsr_resample"]),
    )
    return policy, tc, Architecture(_hidden(cfg["hidden"]))


def _write_manifest(path, command, cfg, inputs, outputs):
    doc = {
        "tool": "chexhier",
        "version": __version__,
        "subcommand": command,
        "seed": cfg.get("seed"),
        "config": cfg,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _input_paths(cfg, *keys):
    paths = []
    for key in keys:
        value = cfg.get(key)
        if value is None:
            continue
        for v in value if isinstance(value, list) else [value]:
            if not Path(v).exists():
                raise FileNotFoundError(f"input not found: {v}")
            paths.append(v)
    return paths


def cmd_gen(cfg):
    h = _hierarchy(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    sc = SyntheticConfig(d=int(cfg["d"]), n=int(cfg["n"]), rho=float(cfg["rho"]),
                         beta=float(cfg["beta"]), seed=int(cfg["seed"]), hierarchy=h,
                         weight_scale=float(cfg["weight_scale"]),
                         bias_scale=float(cfg["bias_scale"]))
    ds, gt = generate_synthetic(sc)
    files = [out / "train.csv", out / "train_features.csv", out / "train_truth.csv",
             out / "ground_truth.json"]
    write_csv(ds, files[0])
    write_features(files[1], ds.ids, ds.features)
    write_csv(replace(ds, labels=ds.truth.astype(float)), files[2])
    files[3].write_text(json.dumps(gt.to_dict()) + "\n", encoding="utf-8")
    if int(cfg["n_val"]) > 0:
        val = gt.sample(int(cfg["n_val"]), derive_rng(sc.seed, "synthetic-heldout"),
                        rho=0.0, id_prefix="val")
        write_csv(val, out / "val.csv")
        write_features(out / "val_features.csv", val.ids, val.features)
        files += [out / "val.csv", out / "val_features.csv"]
    inputs = [cfg["hierarchy"]] if cfg.get("hierarchy") else []
    _write_manifest(out / "manifest.json", "gen", cfg, inputs, files)
    logger.info("wrote %d training samples to %s", len(ds), out)


def cmd_preprocess(cfg):
    src = Path(cfg["input"])
    if not src.is_dir():
        raise FileNotFoundError(f"input directory not found: {src}")
    template = read_pgm(cfg["template"]).astype(float) if cfg.get("template") else None
    pc = PreprocessConfig(template=template)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    files = sorted(src.glob("*.pgm"))
    if not files:
        raise SchemaError(f"no .pgm files in {src}")
    rows = ["file,offset_row,offset_col,ncc"]
    outputs = []
    for f in files:
        img, match = preprocess_image(read_pgm(f), pc)
        target = out / (f.stem + ".json")
        save_tensor(target, img, id=f.stem)
        outputs.append(target)
        score = "undefined" if match.fallback else repr(match.score)
        rows.append(f"{f.name},{match.offset[0]},{match.offset[1]},{score}")
        if match.fallback:
            logger.warning("%s: template match undefined, used center crop", f.name)
    manifest_csv = out / "manifest.csv"
    manifest_csv.write_text("\n".join(rows) + "\n", encoding="utf-8")
    inputs = list(files) + ([cfg["template"]] if cfg.get("template") else [])
    _write_manifest(out / "run_manifest.json", "preprocess",
                    dict(cfg, constants=_preprocess_constants(pc)), inputs, outputs + [manifest_csv])


def _preprocess_constants(pc: PreprocessConfig) -> dict:
    return {"resize": pc.resize, "crop": pc.crop, "mean": pc.mean, "std": pc.std}


def cmd_train(cfg):
    h = _hierarchy(cfg)
    _input_paths(cfg, "data", "features")
    ds = load_csv(cfg["data"], h, view=cfg.get("view"), features=cfg["features"])
    policy, tc, arch = _train_setup(cfg)
    log = TrainLog()
    if cfg["conditional"]:
        params = train_two_phase(ds, h, policy, tc, arch, log=log)
    else:
        params = train_flat(ds, policy, tc, arch, log=log)
    out = Path(cfg["out"])
    save_checkpoint(params, out, hierarchy=h, policy=policy, seed=tc.seed,
                    train_config=tc, conditional=bool(cfg["conditional"]))
    log_path = out.with_name(out.name + ".log.json")
    log_path.write_text(json.dumps(log.entries, indent=1) + "\n", encoding="utf-8")
    _write_manifest(out.with_name(out.name + ".manifest.json"), "train", cfg,
                    _input_paths(cfg, "data", "features", "hierarchy"), [out, log_path])


def _load_images(directory):
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"image directory not found: {d}")
    files = sorted(p for p in d.glob("*.json") if p.name != "run_manifest.json")
    if not files:
        raise SchemaError(f"no image tensors in {d}")
    return [p.stem for p in files], np.stack([load_tensor(p) for p in files]), files


def _predict(cfg, model_paths, command):
    models, meta = [], None
    for path in model_paths:
        params, doc = load_checkpoint(path)
        if meta is not None and doc.get("hierarchy_digest") != meta.get("hierarchy_digest"):
            raise SchemaError(f"{path}: hierarchy differs from the first model")
        meta = meta or doc
        models.append(params)
    h = load_hierarchy(meta["hierarchy"]) if meta.get("hierarchy") else _hierarchy(cfg)
    tta_count = int(cfg["tta"])
    tta = TtaConfig(count=tta_count, seed=int(cfg["seed"])) if tta_count > 0 else None
    if cfg.get("images"):
        ids, inputs, files = _load_images(cfg["images"])
        if tta is None:
            inputs = inputs.reshape(len(inputs), -1)
    else:
        if tta is not None:
            raise UsageError("--tta requires --images (augmentation is defined for images)")
        ids, inputs = read_features(cfg["features"])
        files = [cfg["features"]]
    pred = ensemble_predict(models, inputs, h, tta=tta,
                            model_ids=[Path(p).name for p in model_paths],
                            average=cfg.get("average", "conditional"))
    out = Path(cfg["out"])
    write_predictions(out, ids, pred.probs, h.labels)
    _write_manifest(out.with_name(out.name + ".manifest.json"), command, cfg,
                    list(model_paths) + list(files), [out])


def cmd_predict(cfg):
    _predict(cfg, [cfg["model"]], "predict")


def cmd_ensemble(cfg):
    _predict(cfg, list(cfg["models"]), "ensemble")


def _subset(cfg, h):
    names = [s.strip() for s in str(cfg["subset"]).split(",") if s.strip()]
    unknown = [n for n in names if n not in h.labels]
    if unknown:
        raise SchemaError(f"subset label {unknown[0]!r} is not in the hierarchy")
    return names


def cmd_eval(cfg):
    h = _hierarchy(cfg)
    _input_paths(cfg, "pred", "data", "rad_points")
    ids, scores = read_predictions(cfg["pred"], h.labels)
    ds = load_csv(cfg["data"], h)
    lookup = {i: k for k, i in enumerate(ds.ids)}
    missing = [i for i in ids if i not in lookup]
    if missing:
        raise SchemaError(f"no ground truth for prediction id {missing[0]!r}")
    y = ds.evaluation_labels()[[lookup[i] for i in ids]]
    report = evaluate(y, scores, h.labels, _subset(cfg, h))
    out = Path(cfg["out"])
    text = report.to_text()
    csv_text = report.to_csv()
    outputs = [out]
    if cfg.get("rad_points"):
        points = read_operating_points(cfg["rad_points"])
        lines = ["label,n_points,n_below"]
        for name in h.labels:
            pts = [p for p in points if p.label == name]
            if not pts or name not in report.curves:
                continue
            below = compare_operating_points(report.curves[name], pts)
            lines.append(f"{name},{len(pts)},{below}")
            text += f"{name}: {below} of {len(pts)} reader points below the ROC\n"
        rad_out = out.with_name(out.stem + "_readers.csv")
        rad_out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        outputs.append(rad_out)
    out.write_text(csv_text, encoding="utf-8")
    txt = out.with_suffix(".txt")
    txt.write_text(text, encoding="utf-8")
    outputs.append(txt)
    if cfg.get("roc_dir"):
        roc_dir = Path(cfg["roc_dir"])
        roc_dir.mkdir(parents=True, exist_ok=True)
        for name, curve in report.curves.items():
            target = roc_dir / (name.replace(" ", "_") + ".csv")
            target.write_text(curve.to_csv(), encoding="utf-8")
            outputs.append(target)
    sys.stdout.write(text)
    _write_manifest(out.with_name(out.name + ".manifest.json"), "eval", cfg,
                    _input_paths(cfg, "pred", "data", "rad_points"), outputs)


def cmd_ablate(cfg):
    h = _hierarchy(cfg)
    inputs = _input_paths(cfg, "train", "train_features", "val", "val_features")
    ds_train = load_csv(cfg["train"], h, view=cfg.get("view"), features=cfg["train_features"])
    ds_val = load_csv(cfg["val"], h, features=cfg["val_features"])
    if cfg["matrix"] == "default":
        matrix = default_ablation_matrix()
    else:
        try:
            matrix = [parse_ablation_spec(r) for r in str(cfg["matrix"]).split(",") if r.strip()]
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    _, tc, arch = _train_setup(dict(cfg, policy="u-ones"))
    intervals = {}
    if cfg.get("lsr_low") is not None or cfg.get("lsr_high") is not None:
        for kind in ("u-zeros-lsr", "u-ones-lsr"):
            intervals[kind] = (cfg.get("lsr_low"), cfg.get("lsr_high"))
    table = run_ablation(ds_train, ds_val, h, matrix, tc, arch, _subset(cfg, h), intervals)
    out = Path(cfg["out"])
    out.write_text(table.to_csv(), encoding="utf-8")
    txt = out.with_suffix(".txt")
    txt.write_text(table.to_text(), encoding="utf-8")
    sys.stdout.write(table.to_text())
    _write_manifest(out.with_name(out.name + ".manifest.json"), "ablate", cfg, inputs, [out, txt])


COMMANDS = {
    "gen": cmd_gen,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "predict": cmd_predict,
    "ensemble": cmd_ensemble,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(ns.command, ns)
        if cfg.get("threads"):
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=int(cfg["threads"])):
                COMMANDS[ns.command](cfg)
        else:
            COMMANDS[ns.command](cfg)
    except (FileNotFoundError, SchemaError, HierarchyError, json.JSONDecodeError) as exc:
        print(f"chexhier {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"chexhier {ns.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError) as exc:
        print(f"chexhier {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
