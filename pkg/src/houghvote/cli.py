"""``houghvote`` command line.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter

import numpy as np

from . import decoder, evalkit, losses
from .dataset import compute_stats, load_annotations, sample_minitrain
from .errors import HoughVoteError, ShapeError, ValidationError
from .render import colorize, write_ppm
from .tensorio import read_hvt, write_hvt
from .votefield import MASK_MODES, VoteField, VoteFieldConfig, build_field, mask_rings
from .voting import aggregate_gather, aggregate_scatter, vote_contributions

log = logging.getLogger("houghvote")

EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _mask_arg(text: str):
    if text in MASK_MODES or text == "none":
        return text
    return set(_int_list(text))


def _dump(doc, path=None):
    text = json.dumps(doc, indent=2)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as f:
            f.write(text + "\n")


def _evidence_stack(path, vote_field: VoteField) -> np.ndarray:
    E = read_hvt(path)
    if E.ndim == 3:
        E = E[None]
    if E.ndim != 4:
        raise ShapeError(f"{path}: evidence must be C x H x W x R, got shape {E.shape}")
    if E.shape[-1] != vote_field.region_count:
        raise ShapeError(f"{path}: evidence has R={E.shape[-1]} but the field has R={vote_field.region_count}")
    return E


def cmd_gen_field(args) -> int:
    vf = build_field(VoteFieldConfig(args.angle_bins, args.ring_extents))
    if args.mask is not None:
        vf = mask_rings(vf, args.mask)
    doc = vf.to_dict()
    if isinstance(args.mask, str):
        doc["mask_mode"] = args.mask
    if args.out:
        _dump(doc, args.out)
    print(f"R={vf.region_count} field={vf.field_size}")
    return 0


def cmd_vote(args) -> int:
    vf = VoteField.load(args.field)
    E = _evidence_stack(args.evidence, vf)
    if args.mode == "scatter":
        O = aggregate_scatter(E, vf)
    else:
        O = aggregate_gather(E, vf, threads=args.threads)
    write_hvt(args.out, O)
    log.info("wrote %s presence maps of %dx%d to %s", O.shape[0], O.shape[1], O.shape[2], args.out)
    return 0


def cmd_detect(args) -> int:
    presence = read_hvt(args.presence)
    if presence.ndim == 2:
        presence = presence[None]
    offsets = read_hvt(args.offsets)
    sizes = read_hvt(args.sizes)
    if presence.ndim != 3:
        raise ShapeError(f"presence must be C x H x W, got {presence.shape}")
    if offsets.shape != presence.shape[1:] + (2,) or sizes.shape != offsets.shape:
        raise ShapeError(
            f"offset {offsets.shape} and size {sizes.shape} maps must be H x W x 2 for presence {presence.shape}"
        )
    cat_ids = args.category_ids
    if cat_ids is not None and len(cat_ids) != presence.shape[0]:
        raise ValidationError(f"{len(cat_ids)} category ids given for {presence.shape[0]} classes")
    diag = Counter()
    dets = decoder.detect(
        presence,
        offsets,
        sizes,
        stride=args.stride,
        top_k=args.topk,
        sigma=args.soft_nms_sigma,
        score_floor=args.score_floor,
        logits=args.logits,
        diagnostics=diag,
    )
    if diag:
        log.warning("decode diagnostics: %s", dict(diag))
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w")
    try:
        for d in dets:
            rec = d.to_coco(args.image_id)
            if cat_ids is not None:
                rec["category_id"] = cat_ids[d.class_id]
            out.write(json.dumps(rec) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_render_votes(args) -> int:
    vf = VoteField.load(args.field)
    E = _evidence_stack(args.evidence, vf)
    y, x, c = args.target
    C, H, W, _ = E.shape
    if not (0 <= c < C and 0 <= y < H and 0 <= x < W):
        raise ValidationError(f"target (y={y}, x={x}, class={c}) outside evidence of shape {E.shape}")
    contrib = vote_contributions(E[c], vf, (y, x))
    presence = aggregate_gather(E[c], vf)
    write_ppm(args.out, colorize(contrib, presence))
    print(json.dumps({"target": [y, x, c], "presence": float(presence[y, x]), "contribution_sum": float(contrib.sum())}))
    return 0


def cmd_sample(args) -> int:
    ann = load_annotations(args.annotations)
    res = sample_minitrain(ann, args.count, trials=args.trials, seed=args.seed)
    if args.out:
        ann.subset(res.image_ids).save(args.out)
    report = res.report(compute_stats(ann))
    report["seed"] = args.seed
    report["trials"] = args.trials
    if args.report:
        _dump(report, args.report)
    _dump({"divergence": res.divergence, "score": res.score, "images": res.stats.image_count, "objects": res.stats.object_count})
    return 0


def _read_jsonl(path) -> list[dict]:
    recs = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if line.strip():
                try:
                    recs.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValidationError(f"{path}:{n}: {exc.msg}") from exc
    return recs


def cmd_eval(args) -> int:
    gt = load_annotations(args.gt)
    dets = _read_jsonl(args.detections)
    gts = [
        {"image_id": a.image_id, "category_id": a.category_id, "bbox": list(a.bbox), "area": a.area, "iscrowd": a.iscrowd}
        for a in gt.annotations
    ]
    report = evalkit.match_and_score(dets, gts, evalkit.EvalConfig(max_detections=args.max_dets))
    _dump(report.to_dict(), args.out)
    return 0


def cmd_loss(args) -> int:
    ann = load_annotations(args.annotations)
    heat = read_hvt(args.heatmap).astype(np.float64)
    offsets = read_hvt(args.offsets).astype(np.float64)
    sizes = read_hvt(args.sizes).astype(np.float64)
    if heat.ndim != 3:
        raise ShapeError(f"heatmap must be C x H x W, got {heat.shape}")
    cat_index = {c.id: k for k, c in enumerate(ann.categories)}
    items = [a for a in ann.annotations if a.image_id == args.image_id and not a.iscrowd]
    boxes = [(a.bbox[0], a.bbox[1], a.bbox[0] + a.bbox[2], a.bbox[1] + a.bbox[3]) for a in items]
    target, reg = losses.render_targets(boxes, [cat_index[a.category_id] for a in items], heat.shape, stride=args.stride)
    report = losses.compute_losses(heat, offsets, sizes, target, reg)
    _dump(report.to_dict())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="houghvote", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-field", help="build a log-polar vote field and write it as JSON")
    s.add_argument("--angle-bins", type=int, required=True)
    s.add_argument("--ring-extents", type=_int_list, required=True, help="comma-separated ring diameters, e.g. 2,8,16")
    s.add_argument("--mask", type=_mask_arg, default=None, help=f"{', '.join(MASK_MODES)} or comma-separated region ids")
    s.add_argument("--out")
    s.set_defaults(func=cmd_gen_field)

    s = sub.add_parser("vote", help="aggregate C x H x W x R evidence into C x H x W presence maps")
    s.add_argument("--evidence", required=True)
    s.add_argument("--field", required=True)
    s.add_argument("--mode", choices=("scatter", "gather"), default="gather")
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_vote)

    s = sub.add_parser("detect", help="decode presence/offset/size maps into JSON-lines detections")
    s.add_argument("--presence", required=True)
    s.add_argument("--offsets", required=True)
    s.add_argument("--sizes", required=True)
    s.add_argument("--stride", type=int, default=decoder.DEFAULT_STRIDE)
    s.add_argument("--topk", type=int, default=decoder.DEFAULT_TOP_K)
    s.add_argument("--soft-nms-sigma", type=float, default=decoder.DEFAULT_SIGMA)
    s.add_argument("--score-floor", type=float, default=decoder.DEFAULT_SCORE_FLOOR)
    s.add_argument("--logits", action="store_true", help="presence maps are raw logits; apply a sigmoid first")
    s.add_argument("--image-id", type=int, default=0)
    s.add_argument("--category-ids", type=_int_list, default=None, help="category id for each presence plane")
    s.add_argument("--out")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("render-votes", help="render the source pixels voting for one location as a PPM")
    s.add_argument("--evidence", required=True)
    s.add_argument("--field", required=True)
    s.add_argument("--target", type=_int_list, required=True, help="y,x,class")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render_votes)

    s = sub.add_parser("sample", help="draw a stratified minitrain subset from a COCO annotation file")
    s.add_argument("--annotations", required=True)
    s.add_argument("--count", type=int, default=25000)
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="filtered COCO JSON")
    s.add_argument("--report", help="full stats/divergence report JSON")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("eval", help="COCO-style AP of JSON-lines detections against a COCO file")
    s.add_argument("--detections", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--max-dets", type=int, default=100)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("loss", help="evaluate focal/offset/size losses for one image")
    s.add_argument("--heatmap", required=True, help="C x H x W presence probabilities")
    s.add_argument("--offsets", required=True)
    s.add_argument("--sizes", required=True)
    s.add_argument("--annotations", required=True)
    s.add_argument("--image-id", type=int, required=True)
    s.add_argument("--stride", type=int, default=4)
    s.set_defaults(func=cmd_loss)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "render-votes" and len(args.target) != 3:
        parser.error("--target expects y,x,class")
    try:
        return args.func(args)
    except (HoughVoteError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"houghvote {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
