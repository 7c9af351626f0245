"""roadex command line: labelgen, synth, train, eval, infer, plot-curves.

Exit codes: 0 success, 1 usage error (bad flags or parameter/shape errors),
2 data error (missing or malformed inputs, diverged training).
"""
import argparse
import configparser
import csv
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .errors import (DataError, ParameterError, ShapeError,
                     TrainingDivergedError)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

# direction classes 0-3 colored, non-road 4 black
DIRECTION_PALETTE = [(230, 60, 60), (60, 180, 75), (60, 120, 230),
                     (240, 180, 40), (0, 0, 0)]

# train options shared between config files and flags (keys = flag names)
TRAIN_OPTION_TYPES = {
    "model": str, "epochs": int, "batch-size": int, "learning-rate": float,
    "lr-schedule": str, "seed": int, "val-fraction": float, "ablation": str,
    "backbone-depth": int, "downsample": int, "crop-size": int,
    "crops-per-image": int, "hflip-prob": float, "vflip-prob": float,
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract reserves 2 for
    data errors, so route usage failures to exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_labelgen(args):
    from .data import load_mask
    from .labels import (DirectionParams, direction_map_conv,
                         structure_target)
    params = DirectionParams.from_divisor(args.radius, args.angle_step_div)
    mask = load_mask(args.mask)
    direction = direction_map_conv(mask, params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray(direction, mode="P")
    img.putpalette([c for rgb in DIRECTION_PALETTE for c in rgb])
    img.save(out)
    structure = structure_target(mask, args.scale)
    struct_path = out.with_name(out.stem + "_structure.png")
    Image.fromarray(np.round(structure * 255).astype(np.uint8)
                    ).save(struct_path)
    print(f"wrote {out} and {struct_path}")
    return EXIT_OK


def cmd_synth(args):
    from .synth import SynthConfig, synth_generate, write_dataset
    config = SynthConfig(
        image_size=args.size, n_images=args.n,
        road_width_range=(args.road_width_min, args.road_width_max),
        roads_per_image=(args.roads_min, args.roads_max),
        occlusion_density=args.occlusion_density,
        noise_level=args.noise_level, seed=args.seed)
    samples = synth_generate(config)
    write_dataset(samples, args.out, config)
    print(f"wrote {len(samples)} image/mask pairs to {args.out}")
    return EXIT_OK


def read_config_file(path):
    """Flat INI key=value file mirroring the train flag names; a leading
    section header is optional and ignored."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    text = path.read_text()
    if not text.lstrip().startswith("["):
        text = "[roadex]\n" + text
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise DataError(f"cannot parse config file {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        values.update(parser.items(section))
    unknown = set(values) - set(TRAIN_OPTION_TYPES)
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)} "
                             f"(known: {sorted(TRAIN_OPTION_TYPES)})")
    return values


def parse_ablation(text):
    text = text.strip()
    if not text or text == "none":
        return ()
    return tuple(part.strip() for part in text.split(","))


def merged_train_options(args):
    """Flags beat config-file values beat dataclass defaults."""
    file_values = read_config_file(args.config) if args.config else {}
    values = {}
    for key, cast in TRAIN_OPTION_TYPES.items():
        flag = getattr(args, key.replace("-", "_"))
        if flag is not None:
            values[key] = flag
        elif key in file_values:
            try:
                values[key] = cast(file_values[key])
            except ValueError:
                raise ParameterError(
                    f"config value {key} = {file_values[key]!r} is not a "
                    f"valid {cast.__name__}")
    return values


def build_train_config(values):
    from .data import AugmentConfig
    from .network import NetworkConfig
    from .trainer import TrainConfig
    seed = values.get("seed", 0)
    network = NetworkConfig(
        backbone_depth=values.get("backbone-depth", 18),
        downsample=values.get("downsample", 8))
    augment = AugmentConfig(
        crop_size=values.get("crop-size", 320),
        crops_per_image=values.get("crops-per-image", 10),
        hflip_prob=values.get("hflip-prob", 0.5),
        vflip_prob=values.get("vflip-prob", 0.5),
        seed=seed)
    return TrainConfig(
        network=network, augment=augment,
        model=values.get("model", "diresnet"),
        epochs=values.get("epochs", 50),
        batch_size=values.get("batch-size", 16),
        learning_rate=values.get("learning-rate", 1e-3),
        lr_schedule=values.get("lr-schedule", "cosine"),
        seed=seed,
        ablation=parse_ablation(values.get(
            "ablation", "structure,direction,refiner")),
        val_fraction=values.get("val-fraction", 0.1))


def _load_dataset(root, layout):
    from .data import load_folder_dataset
    dataset, report = load_folder_dataset(root, layout)
    for path in report.skipped:
        print(f"skipped (no mask): {path}", file=sys.stderr)
    return dataset


def cmd_train(args):
    from .trainer import train
    config = build_train_config(merged_train_options(args))
    dataset = _load_dataset(args.data, args.layout)
    result = train(config, dataset, args.out)
    print(f"best val F1 {result.best_val_f1:.4f}; "
          f"checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args):
    from .trainer import evaluate
    if args.thresholds < 2:
        raise ParameterError(f"--thresholds must be >= 2, "
                             f"got {args.thresholds}")
    dataset = _load_dataset(args.data, args.layout)
    result = evaluate(args.checkpoint, dataset, args.out,
                      thresholds=np.linspace(0.0, 1.0, args.thresholds))
    for key, m in result["metrics"].items():
        print(f"{key}: P={m['precision']:.4f} R={m['recall']:.4f} "
              f"F1={m['f1']:.4f} OA={m['oa']:.4f} BEP={m['bep']:.4f}")
    print(f"wrote {result['metrics_csv']} and {result['curve_csv']}")
    return EXIT_OK


def cmd_infer(args):
    from .trainer import infer
    result = infer(args.checkpoint, args.image, args.out,
                   max_size=args.max_size, tile=args.tile,
                   overlap=args.overlap)
    print("wrote " + ", ".join(str(p) for p in result["paths"].values()))
    return EXIT_OK


def cmd_plot_curves(args):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    path = Path(args.curve)
    if not path.is_file():
        raise DataError(f"curve file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    needed = {"threshold", "precision", "recall", "oa"}
    if not rows or not needed <= set(rows[0]):
        raise DataError(f"{path} must have columns {sorted(needed)}")
    cols = {k: np.array([float(r[k]) for r in rows]) for k in needed}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(cols["recall"], cols["precision"], marker=".", lw=1.2)
    ax.plot([0, 1], [0, 1], ls="--", c="gray", lw=0.8, label="P = R")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.set_title("precision-recall")
    pr_path = out / "pr_curve.png"
    fig.savefig(pr_path, dpi=120, bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(cols["threshold"], cols["oa"], marker=".", lw=1.2)
    ax.set_xlabel("threshold")
    ax.set_ylabel("overall accuracy")
    ax.set_ylim(0, 1.02)
    ax.set_title("OA vs threshold")
    oa_path = out / "oa_threshold.png"
    fig.savefig(oa_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    print(f"wrote {pr_path} and {oa_path}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="roadex",
                     description="Road extraction toolkit: direction-aware "
                                 "label generation, training, and evaluation.")
    parser.add_argument("--version", action="version",
                        version=f"roadex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="COMMAND")

    p = sub.add_parser("labelgen", help="direction + structure targets "
                                        "from a road mask")
    p.add_argument("--mask", required=True, help="8-bit mask image; "
                                                 "value > 127 counts as road")
    p.add_argument("--out", required=True,
                   help="output path for the direction map (indexed PNG, "
                        "classes 0-4); the structure target is written "
                        "alongside as <stem>_structure.png")
    p.add_argument("--radius", type=int, default=9,
                   help="probe arm length in pixels (default 9)")
    p.add_argument("--angle-step-div", type=int, default=16,
                   help="integer n meaning angle step pi/n (default 16)")
    p.add_argument("--scale", type=int, default=8,
                   help="structure-target block size (default 8)")
    p.set_defaults(func=cmd_labelgen)

    p = sub.add_parser("synth", help="generate a synthetic road dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=16, help="number of images")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--road-width-min", type=int, default=3)
    p.add_argument("--road-width-max", type=int, default=15)
    p.add_argument("--roads-min", type=int, default=1)
    p.add_argument("--roads-max", type=int, default=3)
    p.add_argument("--occlusion-density", type=float, default=0.10)
    p.add_argument("--noise-level", type=float, default=0.03)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a folder dataset")
    p.add_argument("--data", required=True, help="dataset root folder")
    p.add_argument("--out", required=True, help="output run folder")
    p.add_argument("--layout", default="paired-generic",
                   choices=("paired-generic", "massachusetts", "deepglobe"))
    p.add_argument("--config",
                   help="INI file of key=value defaults; flags override")
    p.add_argument("--model", choices=("diresnet", "fcn"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--lr-schedule", choices=("cosine", "constant"))
    p.add_argument("--seed", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--ablation",
                   help="comma list of enabled auxiliaries out of "
                        "structure,direction,refiner; 'none' disables all")
    p.add_argument("--backbone-depth", type=int, choices=(18, 34))
    p.add_argument("--downsample", type=int, choices=(8, 16))
    p.add_argument("--crop-size", type=int)
    p.add_argument("--crops-per-image", type=int)
    p.add_argument("--hflip-prob", type=float)
    p.add_argument("--vflip-prob", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layout", default="paired-generic",
                   choices=("paired-generic", "massachusetts", "deepglobe"))
    p.add_argument("--thresholds", type=int, default=101,
                   help="number of uniform thresholds on [0,1] (default 101)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run a checkpoint on one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-size", type=int, default=2048,
                   help="tile inputs larger than this on a side")
    p.add_argument("--tile", type=int, default=512)
    p.add_argument("--overlap", type=int, default=64)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("plot-curves",
                       help="render PR and OA figures from a curve.csv")
    p.add_argument("--curve", required=True, help="curve.csv from eval")
    p.add_argument("--out", required=True, help="output figure folder")
    p.set_defaults(func=cmd_plot_curves)
    return parser


def dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (ParameterError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TrainingDivergedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None):
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
