"""Command-line entry point wiring the full workflow.

All artifacts live under a workspace directory:

    workspace/
      images/       generated toy corpora (prepare --toy)
      manifests/    <split>.tsv dataset listings
      checkpoints/  base.ckpt, enh_<lambda>.ckpt, pp_<lambda>_l<l>.ckpt
      pairs/        pairs_<lambda>.ckpt compressed/original patch sets
      bitstreams/   <name>.sicr containers + <name>.txt byte-count sidecars
      decoded/      reconstructions written by decompress/refine
      reports/      report.csv, table.txt, provenance.json
      figures/      RD curves and noise-map images

Exit codes: 0 success, 1 operational failure (message on stderr), 2 usage
errors (argparse text).
"""

import argparse
import logging
import os
import sys
import time

from . import codec as codec_mod
from . import evaluate as evaluate_mod
from . import toydata, training
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import MissingCheckpointError, SicrefError
from .imaging import build_manifest, load_image, read_manifest, save_image, write_manifest
from .postproc import RRDBConfig, postproc_from_checkpoint, refine

log = logging.getLogger(__name__)

class Workspace:
    def __init__(self, root: str):
        self.root = root

    def path(self, dirname: str, filename: str) -> str:
        return os.path.join(self.root, dirname, filename)

    def write_path(self, dirname: str, filename: str) -> str:
        """Like path(), but guarantees the directory exists (for writers)."""
        os.makedirs(os.path.join(self.root, dirname), exist_ok=True)
        return self.path(dirname, filename)

    def manifest_path(self, split: str) -> str:
        return self.path("manifests", f"{split}.tsv")

    def read_split(self, split: str):
        path = self.manifest_path(split)
        if not os.path.exists(path):
            raise MissingCheckpointError(
                f"no manifest for split {split!r}; run prepare first ({path})")
        return read_manifest(path)


def _lam_str(lam: float) -> str:
    return f"{lam:.3f}"


def _base_ckpt_path(ws: Workspace) -> str:
    return ws.path("checkpoints", "base.ckpt")


def _enh_ckpt_path(ws: Workspace, lam: float) -> str:
    return ws.path("checkpoints", f"enh_{_lam_str(lam)}.ckpt")


def _pp_ckpt_path(ws: Workspace, lam: float, l: int) -> str:
    return ws.path("checkpoints", f"pp_{_lam_str(lam)}_l{l}.ckpt")


def _load_required(path: str, what: str):
    if not os.path.exists(path):
        raise MissingCheckpointError(f"{what} not found: {path}")
    return load_checkpoint(path)


def _apply_determinism(args) -> None:
    if getattr(args, "deterministic", False):
        training.set_deterministic(True)


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_prepare(args) -> int:
    ws = Workspace(args.workspace)
    if (args.source is None) == (args.toy is None):
        raise SicrefError("prepare needs exactly one of --source or --toy")
    if args.toy is not None:
        out_dir = ws.path("images", args.split)
        manifest = toydata.generate_corpus(out_dir, count=args.toy, size=args.size,
                                           seed=args.seed, split_tag=args.split)
    else:
        manifest = build_manifest(args.source, split_tag=args.split)
    write_manifest(manifest, ws.write_path("manifests", f"{args.split}.tsv"))
    log.info("split=%s images=%d manifest=%s", args.split, len(manifest.entries),
             ws.manifest_path(args.split))
    return 0


def _cmd_train_codec(args) -> int:
    ws = Workspace(args.workspace)
    preset = training.PRESETS[args.preset]
    manifest = ws.read_split(args.split)
    epochs = args.epochs if args.epochs is not None else preset["codec_epochs"]
    target = "base_codec" if args.target == "base" else "enh_codec"
    config = training.TrainConfig(target=target, lmbda=args.lmbda,
                                  learning_rate=args.learning_rate,
                                  batch_size=args.batch, epochs=epochs,
                                  patch=args.patch, seed=args.seed)
    if target == "base_codec":
        ckpt = training.train_codec(manifest, config, codec_cfg=preset["codec"])
        out = _base_ckpt_path(ws)
    else:
        base = _load_required(_base_ckpt_path(ws), "base checkpoint")
        ckpt = training.train_codec(manifest, config, base_ckpt=base)
        out = _enh_ckpt_path(ws, args.lmbda)
    save_checkpoint(ckpt, out)
    log.info("saved %s", out)
    return 0


def _pairs_path(ws: Workspace, lam: float) -> str:
    return ws.path("pairs", f"pairs_{_lam_str(lam)}.ckpt")


def _cmd_train_postproc(args) -> int:
    ws = Workspace(args.workspace)
    preset = training.PRESETS[args.preset]
    base = _load_required(_base_ckpt_path(ws), "base checkpoint")
    enh = _load_required(_enh_ckpt_path(ws, args.lmbda),
                         f"enhancement checkpoint (lambda={_lam_str(args.lmbda)})")
    pairs_file = _pairs_path(ws, args.lmbda)
    if os.path.exists(pairs_file):
        pairs = training.pairs_from_checkpoint(load_checkpoint(pairs_file))
        log.info("reusing %s (%d pairs)", pairs_file, len(pairs))
    else:
        manifest = ws.read_split(args.split)
        pairs = training.build_pairs(manifest, base, enh, patch=args.pair_patch)
        save_checkpoint(training.pairs_to_checkpoint(pairs), pairs_file)
        log.info("built %d pairs -> %s", len(pairs), pairs_file)
    rrdb = preset["rrdb"]
    model_cfg = RRDBConfig(l=args.l, features=args.features or rrdb.features,
                           growth=args.growth or rrdb.growth)
    epochs = args.epochs if args.epochs is not None else preset["postproc_epochs"]
    lr = args.learning_rate if args.learning_rate is not None else preset["postproc_lr"]
    patch = args.patch if args.patch is not None else preset["postproc_patch"]
    config = training.TrainConfig(target="postproc", learning_rate=lr,
                                  batch_size=args.batch, epochs=epochs,
                                  patch=patch, seed=args.seed)
    ckpt = training.train_postproc(pairs, config, model_cfg)
    out = _pp_ckpt_path(ws, args.lmbda, args.l)
    save_checkpoint(ckpt, out)
    log.info("saved %s", out)
    return 0


def _cmd_compress(args) -> int:
    ws = Workspace(args.workspace)
    base = _load_required(_base_ckpt_path(ws), "base checkpoint")
    enh = _load_required(_enh_ckpt_path(ws, args.lmbda),
                         f"enhancement checkpoint (lambda={_lam_str(args.lmbda)})")
    image = load_image(args.image)
    bs = codec_mod.compress_image(image, base, enh)
    name = args.out or os.path.splitext(os.path.basename(args.image))[0]
    out = ws.write_path("bitstreams", f"{name}.sicr")
    with open(out, "wb") as f:
        f.write(bs.serialize())
    sidecar = ws.write_path("bitstreams", f"{name}.txt")
    with open(sidecar, "w", encoding="utf-8") as f:
        f.write(f"width={bs.width} height={bs.height} "
                f"base_bytes={len(bs.base_payload)} enh_bytes={len(bs.enh_payload)} "
                f"header_bytes={codec_mod.BITSTREAM_HEADER_BYTES} "
                f"total_bytes={bs.total_bytes}\n")
    log.info("wrote %s (%d bytes) and %s", out, bs.total_bytes, sidecar)
    return 0


def _cmd_decompress(args) -> int:
    ws = Workspace(args.workspace)
    base = _load_required(_base_ckpt_path(ws), "base checkpoint")
    enh = _load_required(_enh_ckpt_path(ws, args.lmbda),
                         f"enhancement checkpoint (lambda={_lam_str(args.lmbda)})")
    path = args.bitstream
    if not os.path.exists(path):
        path = ws.path("bitstreams", args.bitstream)
    with open(path, "rb") as f:
        bs = codec_mod.Bitstream.parse(f.read())
    machine, human = codec_mod.decompress_image(bs, base, enh)
    stem = os.path.splitext(os.path.basename(path))[0]
    human_out = args.out or ws.write_path("decoded", f"{stem}_human.png")
    save_image(human, human_out)
    written = [human_out]
    if args.machine_out:
        save_image(machine, args.machine_out)
        written.append(args.machine_out)
    log.info("wrote %s", " and ".join(written))
    return 0


def _cmd_refine(args) -> int:
    ws = Workspace(args.workspace)
    pp = _load_required(_pp_ckpt_path(ws, args.lmbda, args.l),
                        f"postproc checkpoint (lambda={_lam_str(args.lmbda)}, l={args.l})")
    image = load_image(args.image)
    out_img = refine(image, postproc_from_checkpoint(pp))
    stem = os.path.splitext(os.path.basename(args.image))[0]
    out = args.out or ws.write_path("decoded", f"{stem}_refined.png")
    save_image(out_img, out)
    log.info("wrote %s", out)
    return 0


def _discover_lambdas(ws: Workspace):
    found = []
    ckpt_dir = os.path.join(ws.root, "checkpoints")
    if not os.path.isdir(ckpt_dir):
        return found
    for name in sorted(os.listdir(ckpt_dir)):
        if name.startswith("enh_") and name.endswith(".ckpt"):
            found.append(float(name[len("enh_"):-len(".ckpt")]))
    return found


def _cmd_evaluate(args) -> int:
    ws = Workspace(args.workspace)
    manifest = ws.read_split(args.split)
    base = _load_required(_base_ckpt_path(ws), "base checkpoint")
    lambdas = args.lambdas or _discover_lambdas(ws)
    if not lambdas:
        raise MissingCheckpointError("no enhancement checkpoints found; train some first")
    enh_ckpts = {}
    for lam in lambdas:
        enh_ckpts[lam] = _load_required(
            _enh_ckpt_path(ws, lam), f"enhancement checkpoint (lambda={_lam_str(lam)})")
    pp_ckpts = {}
    if args.levels:
        for lam in lambdas:
            for l in args.levels:
                path = _pp_ckpt_path(ws, lam, l)
                if not os.path.exists(path):
                    raise MissingCheckpointError(
                        f"postproc checkpoint for (lambda={_lam_str(lam)}, l={l}) is missing: {path}")
                pp_ckpts[(lam, l)] = load_checkpoint(path)
    else:
        for lam in lambdas:
            for l in (1, 2):
                path = _pp_ckpt_path(ws, lam, l)
                if os.path.exists(path):
                    pp_ckpts[(lam, l)] = load_checkpoint(path)
    report = evaluate_mod.evaluate_rd(manifest, base, enh_ckpts, pp_ckpts,
                                      require_levels=tuple(args.levels or ()))
    csv_path = ws.write_path("reports", "report.csv")
    evaluate_mod.write_report(report, csv_path, ws.write_path("reports", "provenance.json"))
    table = evaluate_mod.render_table(report)
    with open(ws.write_path("reports", "table.txt"), "w", encoding="utf-8") as f:
        f.write(table)
    sys.stdout.write(table)
    log.info("wrote %s", csv_path)
    return 0


def _cmd_plot(args) -> int:
    ws = Workspace(args.workspace)
    report_path = args.report or ws.path("reports", "report.csv")
    report = evaluate_mod.read_report(report_path)
    stamp = time.strftime("%Y%m%dT%H%M%S")
    accountings = evaluate_mod.ACCOUNTINGS if args.accounting == "both" else (args.accounting,)
    for acc in accountings:
        out = ws.write_path("figures", f"rd_{acc}_{stamp}.png")
        written = evaluate_mod.plot_rd(report, acc, out, svg=args.svg)
        log.info("wrote %s", " and ".join(written))
    return 0


def _cmd_noise_maps(args) -> int:
    ws = Workspace(args.workspace)
    manifest = ws.read_split(args.split)
    base = _load_required(_base_ckpt_path(ws), "base checkpoint")
    enh = _load_required(_enh_ckpt_path(ws, args.lmbda),
                         f"enhancement checkpoint (lambda={_lam_str(args.lmbda)})")
    pp = _load_required(_pp_ckpt_path(ws, args.lmbda, args.l),
                        f"postproc checkpoint (lambda={_lam_str(args.lmbda)}, l={args.l})")
    try:
        paths = evaluate_mod.emit_noise_maps(args.id, manifest, base, enh, pp,
                                             ws.path("figures", "noise_maps"))
    except KeyError:
        raise SicrefError(f"unknown image id {args.id!r} in split {args.split!r}")
    for p in sorted(paths.values()):
        log.info("wrote %s", p)
    return 0


def _cmd_grad_check(args) -> int:
    targets = training.GRAD_CHECK_TARGETS if args.target == "all" else (args.target,)
    worst = 0.0
    for t in targets:
        r = training.grad_check(t, seed=args.seed)
        print(f"target={r['target']} max_rel_error={r['max_rel_error']:.3e} "
              f"n_params={r['n_params']} seconds={r['seconds']:.1f}")
        worst = max(worst, r["max_rel_error"])
    if worst >= 1e-4:
        print(f"FAIL: max relative error {worst:.3e} >= 1e-4", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _float_list(text: str):
    return [float(x) for x in text.split(",") if x]


def _int_list(text: str):
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sicref",
                                     description="Two-layer scalable codec with RRDB post-processing")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workspace=True):
        if workspace:
            p.add_argument("--workspace", required=True, help="artifact root directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded, reproducible execution")

    p = sub.add_parser("prepare", help="build a dataset manifest (and optionally a toy corpus)")
    common(p)
    p.add_argument("--split", default="train")
    p.add_argument("--source", help="directory of PNG images")
    p.add_argument("--toy", type=int, help="generate this many synthetic images instead")
    p.add_argument("--size", type=int, default=128, help="toy image side length")
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("train-codec", help="train the base or enhancement layer")
    common(p)
    p.add_argument("--target", choices=("base", "enh"), required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--lambda", dest="lmbda", type=float, default=0.010)
    p.add_argument("--epochs", type=int, default=None, help="default from --preset")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--patch", type=int, default=128)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--preset", choices=sorted(training.PRESETS), default="desk")
    p.set_defaults(func=_cmd_train_codec)

    p = sub.add_parser("train-postproc", help="build pairs (if needed) and train the restoration net")
    common(p)
    p.add_argument("--split", default="train")
    p.add_argument("--lambda", dest="lmbda", type=float, default=0.010)
    p.add_argument("--l", type=int, default=1, help="number of RRDBs")
    p.add_argument("--epochs", type=int, default=None, help="default from --preset")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--pair-patch", type=int, default=128,
                   help="patch size when building the stored pairs")
    p.add_argument("--patch", type=int, default=None,
                   help="training crop size (default from --preset)")
    p.add_argument("--learning-rate", type=float, default=None, help="default from --preset")
    p.add_argument("--features", type=int, default=None, help="override preset trunk width")
    p.add_argument("--growth", type=int, default=None, help="override preset growth channels")
    p.add_argument("--preset", choices=sorted(training.PRESETS), default="desk")
    p.set_defaults(func=_cmd_train_postproc)

    p = sub.add_parser("compress", help="encode one image into a two-layer bitstream")
    common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--lambda", dest="lmbda", type=float, default=0.010)
    p.add_argument("--out", help="bitstream name (default: image stem)")
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("decompress", help="decode a bitstream to PNG")
    common(p)
    p.add_argument("--bitstream", required=True, help="path or name under bitstreams/")
    p.add_argument("--lambda", dest="lmbda", type=float, default=0.010)
    p.add_argument("--out", help="human reconstruction path")
    p.add_argument("--machine-out", help="also write the machine reconstruction here")
    p.set_defaults(func=_cmd_decompress)

    p = sub.add_parser("refine", help="apply a trained post-processor to a decoded image")
    common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--lambda", dest="lmbda", type=float, default=0.010)
    p.add_argument("--l", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("evaluate", help="produce report.csv and the PSNR table")
    common(p)
    p.add_argument("--split", default="val")
    p.add_argument("--lambdas", type=_float_list, default=None,
                   help="comma list; default: all trained enhancement lambdas")
    p.add_argument("--levels", type=_int_list, default=None,
                   help="comma list of required post-processor l values")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("plot", help="draw RD curves from report.csv")
    common(p)
    p.add_argument("--report", help="default: reports/report.csv")
    p.add_argument("--accounting", choices=("additional_only", "total", "both"), default="both")
    p.add_argument("--svg", action="store_true", help="also write vector figures")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("noise-maps", help="write reconstructions and noise maps for one image")
    common(p)
    p.add_argument("--split", default="val")
    p.add_argument("--id", required=True, help="image id from the manifest")
    p.add_argument("--lambda", dest="lmbda", type=float, default=0.010)
    p.add_argument("--l", type=int, default=1)
    p.set_defaults(func=_cmd_noise_maps)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    common(p, workspace=False)
    p.add_argument("--target", choices=training.GRAD_CHECK_TARGETS + ("all",), default="all")
    p.set_defaults(func=_cmd_grad_check)

    return parser


def run(argv) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    _apply_determinism(args)
    try:
        return args.func(args)
    except SicrefError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
