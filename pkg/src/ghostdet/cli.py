"""Command-line entry point: analyze, gradcheck, train-demo, eval, infer.

Failures print a single ``error: <Class>: message`` line and exit nonzero
(2 for usage errors, 1 for everything else).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import checks
from .data import (KITTI_CLASSES, VOC_VEHICLE_CLASSES, AnnotatedImage, parse_kitti_label, parse_voc_xml,
                   read_weights, synth_dataset, to_voc_xml, write_weights)
from .metrics import evaluate, evaluate_by_difficulty, format_detections, parse_detections
from .model import PRESETS, VariantConfig, build_model, compare_reports, count_flops, load_arch
from .tensor import Tensor

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class GradCheckFailure(Exception):
    pass


class WeightsMismatch(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line usage errors instead of argparse's two-line form
        raise UsageError(message)


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("input sides must be positive")
    return w, h


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{v} outside [0, 1]")
    return v


def _csv(text: str) -> list[str]:
    return [t for t in (s.strip() for s in text.split(",")) if t]


def _variant_flags(p: argparse.ArgumentParser, default_preset: str | None = None) -> None:
    g = p.add_argument_group("variant")
    g.add_argument("--arch", help="architecture document (YAML); defaults to the bundled YOLOv7-tiny layout")
    g.add_argument("--preset", choices=list(PRESETS), default=default_preset)
    g.add_argument("--width", type=float, help="width multiplier in (0, 1]")
    g.add_argument("--ghost-backbone", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--neck", choices=["panet", "bifpn"])
    g.add_argument("--head", choices=["coupled", "decoupled"])
    g.add_argument("--ca", action=argparse.BooleanOptionalAction, default=None, help="coordinate attention")
    g.add_argument("--loss", choices=["ciou", "wiou"])
    g.add_argument("--num-classes", type=int)


def _variant(args, fallback: str = "baseline") -> VariantConfig:
    base = PRESETS[args.preset or fallback]
    overrides = {
        "width": args.width, "ghost_backbone": args.ghost_backbone, "neck": args.neck, "head": args.head,
        "coord_attention": args.ca, "box_loss": args.loss,
    }
    return dataclasses.replace(base, **{k: v for k, v in overrides.items() if v is not None})


def _custom(args) -> bool:
    return any(getattr(args, k) is not None for k in ("width", "ghost_backbone", "neck", "head", "ca", "loss"))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ghostdet", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML/JSON file of flag values; explicit flags take precedence")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="parameter / mult-add report and reductions vs baseline")
    _variant_flags(a)
    a.add_argument("--input", type=_size, help="input size WxH (default from the architecture document)")
    a.add_argument("--layers", action="store_true", help="print the per-layer table")
    a.add_argument("--out", help="write the machine-readable report (JSON) here")

    g = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    g.add_argument("--only", type=_csv, action="extend", help="comma-separated suite names or prefixes")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--points", type=int, default=100, help="minimum checked coordinates per suite")
    g.add_argument("--inject-fault", metavar="PRIMITIVE", help=argparse.SUPPRESS)
    g.add_argument("--out")

    t = sub.add_parser("train-demo", help="train a small variant on synthetic rectangles")
    _variant_flags(t, default_preset="model6")
    t.add_argument("--steps", type=int, default=200)
    t.add_argument("--seed", type=int, default=7)
    t.add_argument("--images", type=int, default=64)
    t.add_argument("--image-size", type=int, default=64)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--iou-thresh", type=_unit, default=0.5)
    t.add_argument("--conf-thresh", type=_unit, default=0.05)
    t.add_argument("--log-every", type=int, default=1)
    t.add_argument("--out", help="directory for weights, data, annotations and the loss history")

    e = sub.add_parser("eval", help="AP / mAP of detection dumps against annotations")
    e.add_argument("--dets", required=True, help="directory of per-image dump files <stem>.txt")
    e.add_argument("--annotations", required=True, help="directory of VOC .xml or KITTI .txt labels")
    e.add_argument("--format", choices=["voc", "kitti"], help="annotation format (default: by extension)")
    e.add_argument("--classes", type=_csv, help="comma-separated class list")
    e.add_argument("--image-size", type=_size, default=(1242, 375), help="KITTI image size WxH")
    e.add_argument("--difficulty", action="store_true", help="easy/moderate/hard breakdown")
    e.add_argument("--iou-thresh", type=_unit, default=0.5)
    e.add_argument("--out")

    i = sub.add_parser("infer", help="decode + NMS detection dumps for an image tensor file")
    _variant_flags(i, default_preset="model6")
    i.add_argument("--weights", help="GDK1 weights file (omitted: all-zero weights)")
    i.add_argument("--images", required=True, help=".npy array [N,3,H,W]")
    i.add_argument("--conf-thresh", type=_unit, default=0.25)
    i.add_argument("--iou-thresh", type=_unit, default=0.5)
    i.add_argument("--out", required=True, help="directory for the per-image dumps")
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    try:
        doc = yaml.safe_load(Path(known.config).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must be a mapping of flag names to values")
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    accepted = {name: {a.dest for a in sp._actions} for name, sp in subparsers.choices.items()}
    unknown = set(doc) - set().union(*accepted.values())
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for name, sp in subparsers.choices.items():
        sp.set_defaults(**{k: v for k, v in doc.items() if k in accepted[name]})
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    arch = load_arch(args.arch)
    nc = args.num_classes
    size = args.input

    def report(cfg):
        return count_flops(build_model(cfg, arch, nc, size))

    if _custom(args):
        names = ["baseline", "custom"]
        configs = [PRESETS["baseline"], _variant(args)]
    elif args.preset:
        names = ["baseline"] + ([args.preset] if args.preset != "baseline" else [])
        configs = [PRESETS[n] for n in names]
        if args.preset == "baseline":
            names, configs = ["baseline", "baseline"], [PRESETS["baseline"]] * 2
    else:
        names, configs = list(PRESETS), list(PRESETS.values())
    reports = [report(c) for c in configs]
    base = reports[0]
    print(f"input {'x'.join(map(str, base.input_shape))}; mult-adds = multiply-accumulates (FLOPs ~ 2x)")
    print(f"{'variant':<10}{'params(M)':>11}{'mult-adds(G)':>14}{'weight16(MB)':>14}")
    for n, r in zip(names, reports):
        print(f"{n:<10}{r.total_params / 1e6:>11.3f}{r.total_macs / 1e9:>14.3f}{r.weight_mb(2):>14.2f}")
    out = {"input_shape": list(base.input_shape), "variants": {}, "reductions": {}}
    for n, r, c in zip(names, reports, configs):
        out["variants"][n] = {"config": dataclasses.asdict(c), **r.to_dict()}
        if args.layers:
            print(f"\n[{n}]\n{r.table()}")
    for n, r in list(zip(names, reports))[1:]:
        red = compare_reports(base, r)
        out["reductions"][n] = red
        print(f"reduction {n} vs baseline: params {red['params']:.1f}%  mult-adds {red['macs']:.1f}%  "
              f"weight {red['weight']:.1f}%")
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    names = checks.select_suites(args.only)
    failed = []
    rows = {}
    ctx = checks.faulty_gradient(args.inject_fault) if args.inject_fault else _null()
    with ctx:
        for name in names:
            t0 = time.perf_counter()
            rep = checks.SUITES[name](points=args.points, seed=args.seed)
            status = "PASS" if rep.passed else "FAIL"
            if not rep.passed:
                failed.append(name)
            rows[name] = {"max_rel_error": rep.max_rel_error, "checked": rep.checked,
                          "aborted": len(rep.aborted), "passed": rep.passed}
            print(f"{name:<22} worst {rep.max_rel_error:.3e}  checked {rep.checked:>4}  "
                  f"{status}  ({time.perf_counter() - t0:.2f}s)")
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    if failed:
        raise GradCheckFailure(f"suites failed: {','.join(failed)}")
    return EXIT_OK


class _null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def cmd_train_demo(args) -> int:
    from .train import TrainConfig, train_demo

    variant = _variant(args, "model6")
    cfg = TrainConfig(
        steps=args.steps, batch_size=args.batch, lr=args.lr, seed=args.seed, num_images=args.images,
        image_size=args.image_size, num_classes=args.num_classes or 3, width=args.width or 0.125,
        box_loss=variant.box_loss, conf_threshold=args.conf_thresh, iou_threshold=args.iou_thresh,
        variant=variant,
    )
    every = max(1, args.log_every)

    def log(e):
        if e.step % every == 0 or e.step == cfg.steps - 1:
            print(f"step {e.step:4d} total {e.total:.6f} obj {e.obj:.6f} cls {e.cls:.6f} box {e.box:.6f}")

    res = train_demo(cfg, log)
    if res.history:
        print(f"loss initial {res.initial_loss:.6f} final {res.final_loss:.6f} "
              f"ratio {res.final_loss / res.initial_loss:.4f}")
    print(f"train mAP@{cfg.iou_threshold:g}: {res.final_map:.4f}")
    if args.out:
        _write_demo_outputs(Path(args.out), cfg, res)
    return EXIT_OK


def _write_demo_outputs(out: Path, cfg, res) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_weights(out / "weights.gdk", res.model.state_dict())
    data = synth_dataset(cfg.seed, cfg.num_images, cfg.image_size, cfg.num_classes)
    np.save(out / "images.npy", np.stack([img for img, _ in data]))
    ann_dir = out / "annotations"
    ann_dir.mkdir(exist_ok=True)
    for i, (_, ann) in enumerate(data):
        named = dataclasses.replace(ann, image_ref=f"{i:05d}")
        (ann_dir / f"{i:05d}.xml").write_text(to_voc_xml(named))
    lines = ["step,total,obj,cls,box"] + [f"{e.step},{e.total!r},{e.obj!r},{e.cls!r},{e.box!r}" for e in res.history]
    (out / "history.csv").write_text("\n".join(lines) + "\n")
    m = cfg.model_config()
    run = {
        "width": m.width, "ghost_backbone": m.ghost_backbone, "neck": m.neck, "head": m.head,
        "ca": m.coord_attention, "loss": m.box_loss, "num_classes": cfg.num_classes,
        "classes": ",".join(data[0][1].class_names),
    }
    (out / "run.yaml").write_text(yaml.safe_dump(run, sort_keys=True))
    summary = {"final_map": res.final_map, "initial_loss": res.initial_loss, "final_loss": res.final_loss,
               "per_class_ap": {str(k): v for k, v in res.eval.per_class_ap.items()}}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _load_annotations(directory: Path, fmt: str | None, classes, image_size) -> dict[str, AnnotatedImage]:
    if not directory.is_dir():
        raise FileNotFoundError(f"annotations directory {directory} not found")
    files = sorted(p for p in directory.iterdir() if p.suffix in (".xml", ".txt"))
    if fmt is None:
        fmt = "voc" if any(p.suffix == ".xml" for p in files) else "kitti"
    out = {}
    for p in files:
        if fmt == "voc" and p.suffix == ".xml":
            out[p.stem] = parse_voc_xml(p.read_text(), classes or VOC_VEHICLE_CLASSES, image_id=p.stem)
        elif fmt == "kitti" and p.suffix == ".txt":
            w, h = image_size
            out[p.stem] = parse_kitti_label(p.read_text(), h, w, classes or KITTI_CLASSES, image_id=p.stem)
    return out


def cmd_eval(args) -> int:
    anns = _load_annotations(Path(args.annotations), args.format, args.classes, args.image_size)
    det_dir = Path(args.dets)
    if not det_dir.is_dir():
        raise FileNotFoundError(f"detections directory {det_dir} not found")
    dets, gts = [], []
    for stem, ann in anns.items():
        gts += ann.objects
        f = det_dir / f"{stem}.txt"
        if f.exists():
            dets += parse_detections(f.read_text(), image_id=stem)
    class_names = next(iter(anns.values())).class_names if anns else tuple(args.classes or ())
    classes = range(len(class_names))
    res = evaluate(dets, gts, args.iou_thresh, classes)
    print(f"{'class':<14}{'AP':>8}")
    for c, ap in res.per_class_ap.items():
        print(f"{class_names[c]:<14}{'n/a' if ap is None else f'{ap:.4f}':>8}")
    print(f"mAP@{args.iou_thresh:g}: {res.map:.4f}")
    out = {"all": res.to_dict()}
    if args.difficulty:
        for tier, r in evaluate_by_difficulty(dets, gts, args.iou_thresh, classes).items():
            print(f"{tier:<9} mAP {r.map:.4f}")
            out[tier] = r.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .train import predict

    try:
        images = np.load(args.images)
    except (OSError, ValueError) as exc:
        raise FileNotFoundError(f"cannot read images {args.images}: {exc}") from None
    if images.ndim != 4:
        raise ValueError(f"images must be [N,C,H,W], got shape {images.shape}")
    variant = _variant(args, "model6")
    model = build_model(variant, load_arch(args.arch), args.num_classes, (images.shape[3], images.shape[2]))
    if args.weights:
        state = read_weights(args.weights)
        try:
            model.load_state(state)
        except (KeyError, ValueError) as exc:
            raise WeightsMismatch(str(exc).strip("'\"")) from None
    dets = predict(model, images.astype(np.float64), args.conf_thresh, args.iou_thresh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(len(images)):
        mine = [d for d in dets if d.image_id == i]
        (out / f"{i:05d}.txt").write_text(format_detections(mine))
    print(f"{len(dets)} detections over {len(images)} images -> {out}")
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
    "train-demo": cmd_train_demo,
    "eval": cmd_eval,
    "infer": cmd_infer,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if getattr(args, "width", None) is not None and not 0.0 < args.width <= 1.0:
            raise UsageError(f"--width must lie in (0, 1], got {args.width}")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
