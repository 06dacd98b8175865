"""Command-line pipeline: generate, encode, decode, baseline, eval, render.

Exit codes: 0 ok, 1 invalid input, 2 unreadable or malformed files.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .baseline import DEFAULT_DT, baseline_predict
from .decoding import decode_graph, decode_keypoints
from .encoding import DenseAffinity, EncoderConfig, encode_targets
from .errors import FormatError, TemplateOverflow, ValidationError
from .graph import GridSpec
from .io import (DatasetManifest, ManifestEntry, TensorContainer, canonical_digest,
                 container_to_targets, dumps_json, load_container, load_graph_json, save_container,
                 save_graph_json, sha256_file, targets_to_container)
from .metrics import evaluate, report_by_bucket
from .render import LAYERS, render_scene, save_png, side_by_side
from .synth import NoiseSpec, SceneSpec, Template, generate_scene, rasterize_channels

log = logging.getLogger("roadtopo")


class _Parser(argparse.ArgumentParser):
    """Usage errors print the (sub)command help and exit 1."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(1, f"\n{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("shared options")
    g.add_argument("--grid-size", type=int, choices=(128, 256), default=128)
    g.add_argument("--truncation-px", type=float, default=14.0)
    g.add_argument("--anchor-step", type=int, default=4)
    g.add_argument("--n-max", type=int, default=16)
    g.add_argument("--n-rmax", type=int, default=30)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--out-dir", type=Path, default=Path("."))
    g.add_argument("-v", "--verbose", action="store_true")


def _grid(args) -> GridSpec:
    return GridSpec(args.grid_size, args.grid_size)


def _cfg(args) -> EncoderConfig:
    return EncoderConfig(args.truncation_px, args.anchor_step, args.n_max, args.n_rmax)


def _pmap(fn: Callable, items: Sequence, threads: int) -> list:
    """Ordered map; results never depend on the worker count."""
    if threads < 1:
        raise ValidationError("--threads must be >= 1")
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _seeds(text: str) -> list[int]:
    if ":" in text:
        a, b = text.split(":", 1)
        return list(range(int(a), int(b)))
    return [int(s) for s in text.split(",")]


def _stem(path) -> str:
    name = Path(path).name
    for suf in (".graph.json", ".targets.rtk", ".pred.rtk", ".json", ".rtk"):
        if name.endswith(suf):
            return name[: -len(suf)]
    return Path(path).stem


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    grid = _grid(args)
    templates = list(Template) if args.template == "all" else [Template(args.template)]
    lanes = [int(n) for n in str(args.lanes).split(",")]
    noise = NoiseSpec(args.dropout, args.intensity_sigma, args.occlusion_boxes)
    specs = [SceneSpec(seed, t, n, args.lane_width, args.curvature, noise, grid)
             for seed in _seeds(args.seeds if args.seeds else str(args.seed)) for t in templates for n in lanes]
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)

    def work(spec: SceneSpec):
        stem = f"scene_{spec.seed:06d}_{spec.template.value}_{spec.lanes_per_direction}"
        try:
            g, _ = generate_scene(spec)
        except TemplateOverflow as e:
            return spec, None, str(e)
        bev = rasterize_channels(g, spec)
        grid_c = TensorContainer({"bev": bev.to_array()})
        if bev.occupancy_mass is not None:
            grid_c.add("occupancy_mass", bev.occupancy_mass.astype(np.float32))
        files = {"graph": f"{stem}.graph.json", "grid": f"{stem}.grid.rtk"}
        save_graph_json(out / files["graph"], g)
        save_container(out / files["grid"], grid_c)
        return spec, files, None

    results = _pmap(work, specs, args.threads)
    manifest = DatasetManifest(grid, _cfg(args))
    skipped = []
    for spec, files, err in results:
        if files is None:
            skipped.append(spec)
            log.warning("skipped seed %d %s x%d: %s", spec.seed, spec.template.value, spec.lanes_per_direction, err)
            continue
        d = spec.to_dict()
        manifest.entries.append(ManifestEntry(spec.seed, d, canonical_digest(d), files,
                                              {k: sha256_file(out / v) for k, v in files.items()}))
    manifest.save(out / "manifest.json")
    print(f"wrote {len(manifest.entries)} scenes to {out} (skipped {len(skipped)}), digest {manifest.digest[:16]}")
    if not manifest.entries:
        raise ValidationError("no scene could be generated for these settings")
    return 0


def _graph_inputs(paths: Sequence[str], manifest: str | None) -> list[Path]:
    files = [Path(p) for p in paths]
    if manifest:
        m = DatasetManifest.load(manifest)
        root = Path(manifest).parent
        m.verify(root)
        files += [root / e.files["graph"] for e in m.entries]
    if not files:
        raise ValidationError("no input graphs given")
    return files


def cmd_encode(args) -> int:
    cfg = _cfg(args)
    files = _graph_inputs(args.graphs, args.manifest)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    def work(path: Path):
        t = encode_targets(load_graph_json(path), cfg)
        dst = args.out_dir / f"{_stem(path)}.targets.rtk"
        save_container(dst, targets_to_container(t))
        return dst

    for dst in _pmap(work, files, args.threads):
        print(dst)
    return 0


def _decode_one(c: TensorContainer, args, grid: GridSpec):
    for k in ("K", "aff_conf", "aff_lines"):
        if k not in c:
            raise FormatError(f"container lacks tensor {k!r}")
    K = c["K"].astype(float)
    kps = decode_keypoints(K, args.conf_threshold, cell_size=grid.keypoint_cell, n_max=args.n_max)
    if "aff_index" in c:
        index = tuple(map(tuple, c["aff_index"].tolist()))
    else:
        index = tuple(sorted(k.cell for k in kps))
    aff = DenseAffinity(c["aff_conf"].astype(float), c["aff_lines"].astype(float), index)
    return decode_graph(kps, aff, args.conf_threshold, grid_spec=grid, cfg=_cfg(args))


def cmd_decode(args) -> int:
    grid = _grid(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    def work(path):
        g = _decode_one(load_container(path), args, grid)
        dst = args.out_dir / f"{_stem(path)}.pred.graph.json"
        save_graph_json(dst, g)
        return dst

    for dst in _pmap(work, args.inputs, args.threads):
        print(dst)
    return 0


def cmd_baseline(args) -> int:
    grid = _grid(args)
    if args.graphs and len(args.graphs) != len(args.inputs):
        raise ValidationError("--graphs must give one keypoint graph per input")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    jobs = list(zip(args.inputs, args.graphs or [None] * len(args.inputs)))

    def work(job):
        path, gpath = job
        c = load_container(path)
        if "R" not in c:
            raise FormatError(f"{path}: no 'R' tensor")
        if gpath is not None:
            kps = [n.position for n in load_graph_json(gpath).nodes]
        else:
            kps = [k.position for k in decode_keypoints(c["K"].astype(float), args.conf_threshold,
                                                       cell_size=grid.keypoint_cell, n_max=args.n_max)]
        res = baseline_predict(c["R"].astype(float), kps, args.dt, anchor_step=args.anchor_step)
        dst = args.out_dir / f"{_stem(path)}.baseline.graph.json"
        save_graph_json(dst, res.to_graph(kps, grid))
        return dst

    for dst in _pmap(work, jobs, args.threads):
        print(dst)
    return 0


def cmd_eval(args) -> int:
    if len(args.pred) != len(args.gt):
        raise ValidationError(f"{len(args.pred)} predictions vs {len(args.gt)} ground truths")

    def work(pair):
        p, g = pair
        return evaluate(load_graph_json(p), load_graph_json(g), tol_px=args.tol_px, anchor_step=args.anchor_step)

    reports = _pmap(work, list(zip(args.pred, args.gt)), args.threads)
    table = report_by_bucket(reports)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    dst = args.out_dir / args.report
    dst.write_text(dumps_json(table), encoding="utf-8")
    o = table["overall"]
    print(f"frames={o['frames']} kp_f1={o['kp_metrics']['f1']:.4f} conn_p={o['conn_metrics']['precision']:.4f} "
          f"conn_r={o['conn_metrics']['recall']:.4f} offset_cm={o['conn_metrics']['avg_offset_cm']}")
    print(dst)
    return 0


def cmd_render(args) -> int:
    grid = _grid(args)
    layers = [s for s in args.layers.split(",") if s]
    gt = load_graph_json(args.graph) if args.graph else None
    fields = channels = None
    if args.targets:
        fields = container_to_targets(load_container(args.targets), args.truncation_px).fields
    if args.grid:
        from .synth import CHANNELS
        bev = load_container(args.grid)["bev"]
        channels = {name: bev[..., k] for k, name in enumerate(CHANNELS)}
    spec = gt.grid_spec if gt is not None else grid
    img = render_scene(spec, graph=gt, fields=fields, channels=channels, layers=layers, scale=args.scale)
    if args.pred:
        pred = load_graph_json(args.pred)
        img = side_by_side([img, render_scene(spec, graph=pred, fields=fields, channels=channels,
                                              layers=layers, scale=args.scale)])
    args.out_dir.mkdir(parents=True, exist_ok=True)
    dst = args.out_dir / args.output
    save_png(dst, img)
    print(dst)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="roadtopo", description="Synthetic lane-topology targets, decoding, baseline and evaluation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("generate", help="procedural scenes -> graph JSON, BEV grid and manifest")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", help="range 'a:b' or list 'a,b,c' (overrides --seed)")
    s.add_argument("--template", default="all", choices=["all"] + [t.value for t in Template])
    s.add_argument("--lanes", default="1", help="lanes per direction, comma list")
    s.add_argument("--lane-width", type=float, default=3.65)
    s.add_argument("--curvature", type=float, default=0.0)
    s.add_argument("--dropout", type=float, default=0.0)
    s.add_argument("--intensity-sigma", type=float, default=0.0)
    s.add_argument("--occlusion-boxes", type=int, default=0)
    _common(s)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("encode", help="graph JSON -> RTK1 target tensors")
    s.add_argument("graphs", nargs="*")
    s.add_argument("--manifest")
    _common(s)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", help="RTK1 keypoint/affinity tensors -> graph JSON")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--conf-threshold", type=float, default=0.5)
    _common(s)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("baseline", help="shortest-path connectivity from a distance field")
    s.add_argument("inputs", nargs="+", help="RTK1 files holding an 'R' tensor")
    s.add_argument("--graphs", nargs="*", help="take keypoints from these graphs instead of 'K'")
    s.add_argument("--dt", type=float, default=DEFAULT_DT)
    s.add_argument("--conf-threshold", type=float, default=0.5)
    _common(s)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("eval", help="predicted vs GT graphs -> report JSON")
    s.add_argument("--pred", nargs="+", required=True)
    s.add_argument("--gt", nargs="+", required=True)
    s.add_argument("--tol-px", type=float, default=8.0)
    s.add_argument("--report", default="report.json")
    _common(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("render", help="PNG preview of a scene")
    s.add_argument("--graph")
    s.add_argument("--pred", help="second graph drawn to the right")
    s.add_argument("--targets")
    s.add_argument("--grid")
    s.add_argument("--layers", default="input,connections,keypoints", help=f"comma list from {','.join(LAYERS)}")
    s.add_argument("--scale", type=int, default=4)
    s.add_argument("-o", "--output", default="render.png")
    _common(s)
    s.set_defaults(func=cmd_render)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
