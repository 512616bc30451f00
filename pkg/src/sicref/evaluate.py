"""Rate-distortion evaluation and reporting.

Produces the three reporting surfaces: a PSNR table (method variants by
lambda), RD curves under both bit-accounting conventions (enhancement
payload alone, solid; base + enhancement, dotted), and noise-map image sets
rendered under one shared normalization scale.
"""

import json
import os
import time
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import codec as codec_mod
from .checkpoint import Checkpoint, checkpoint_digest
from .errors import CheckpointMismatchError, EmptyDatasetError, MissingCheckpointError
from .imaging import DatasetManifest, bpp, load_image, noise_map, psnr, save_image, save_noise_map
from .postproc import postproc_from_checkpoint, refine

CSV_COLUMNS = ("lambda", "bpp_additional", "bpp_total", "psnr_machine",
               "psnr_human", "psnr_l1", "psnr_l2", "n_images")


@dataclass(frozen=True)
class RDPoint:
    """Mean metrics for one lambda over an evaluation set.

    bpp_total is defined as bpp_additional + base-layer bpp, so the two
    accounting conventions differ by exactly the base payload at every
    image and in the aggregate.
    """

    lmbda: float
    bpp_additional: float
    bpp_total: float
    psnr_machine: float
    psnr_human: float
    psnr_refined_by_l: dict
    n_images: int

    def __post_init__(self):
        if not 0.0 <= self.bpp_additional <= self.bpp_total:
            raise ValueError("need bpp_total >= bpp_additional >= 0")
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")


@dataclass(frozen=True)
class Report:
    points: tuple
    provenance: dict

    def __post_init__(self):
        lams = [p.lmbda for p in self.points]
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ValueError("report points must be in strictly increasing lambda order")

    @property
    def levels(self) -> tuple:
        ls = sorted({l for p in self.points for l in p.psnr_refined_by_l})
        return tuple(ls)


def evaluate_rd(manifest: DatasetManifest, base_ckpt: Checkpoint, enh_ckpts: dict,
                pp_ckpts: dict = None, require_levels: tuple = ()) -> Report:
    """Run the full pipeline over every manifest image at every lambda.

    enh_ckpts maps lambda -> enhancement checkpoint; pp_ckpts maps
    (lambda, l) -> post-processor checkpoint. When require_levels is given,
    every (lambda, l) cell must be present. Per-image PSNRs and bpps are
    averaged arithmetically; evaluation is deterministic. The report
    provenance keeps a per-image rate row (base and per-lambda additional
    bpp) so the additional/total accounting can be audited image by image.
    """
    pp_ckpts = pp_ckpts or {}
    if not manifest.entries:
        raise EmptyDatasetError("manifest is empty")
    if not enh_ckpts:
        raise MissingCheckpointError("no enhancement checkpoints supplied")
    lambdas = sorted(enh_ckpts)
    for lam in lambdas:
        codec_mod.check_layer_pair(base_ckpt, enh_ckpts[lam])
        for l in require_levels:
            if (lam, l) not in pp_ckpts:
                raise MissingCheckpointError(
                    f"postproc checkpoint for (lambda={lam:.3f}, l={l}) is missing")
    pp_models = {}
    for (lam, l), ck in pp_ckpts.items():
        if lam not in enh_ckpts:
            raise MissingCheckpointError(
                f"postproc cell (lambda={lam:.3f}, l={l}) has no matching enhancement checkpoint")
        want = ck.meta.get("enh_digest")
        if want is not None and want != checkpoint_digest(enh_ckpts[lam]):
            raise CheckpointMismatchError(
                f"postproc (lambda={lam:.3f}, l={l}) was trained against a different enhancement layer")
        pp_models[(lam, l)] = postproc_from_checkpoint(ck)

    sums = {lam: {"add": 0.0, "base": 0.0, "machine": 0.0, "human": 0.0,
                  "refined": {l: 0.0 for (lm, l) in pp_ckpts if lm == lam}}
            for lam in lambdas}
    n = len(manifest.entries)
    per_image = []
    for entry in manifest.entries:
        image = load_image(entry.path)
        _, base_payload = codec_mod.encode_base(image, base_ckpt)
        machine = codec_mod.decode_base(base_payload, base_ckpt, image.height, image.width)
        bpp_base = bpp(len(base_payload), image.width, image.height)
        psnr_machine = psnr(image, machine)
        row = {"id": entry.image_id, "bpp_base": bpp_base, "bpp_additional": {}}
        per_image.append(row)
        for lam in lambdas:
            enh_payload = codec_mod.encode_enhancement(image, machine, enh_ckpts[lam])
            human = codec_mod.decode_human(machine, enh_payload, enh_ckpts[lam])
            acc = sums[lam]
            bpp_add = bpp(len(enh_payload), image.width, image.height)
            row["bpp_additional"][f"{lam:.3f}"] = bpp_add
            acc["add"] += bpp_add
            acc["base"] += bpp_base
            acc["machine"] += psnr_machine
            acc["human"] += psnr(image, human)
            for l in acc["refined"]:
                refined = refine(human, pp_models[(lam, l)])
                acc["refined"][l] += psnr(image, refined)

    points = []
    for lam in lambdas:
        acc = sums[lam]
        add = acc["add"] / n
        points.append(RDPoint(
            lmbda=lam,
            bpp_additional=add,
            bpp_total=add + acc["base"] / n,
            psnr_machine=acc["machine"] / n,
            psnr_human=acc["human"] / n,
            psnr_refined_by_l={l: v / n for l, v in sorted(acc["refined"].items())},
            n_images=n,
        ))
    provenance = {
        "split": manifest.split_tag,
        "n_images": n,
        "per_image": per_image,
        "base_digest": checkpoint_digest(base_ckpt),
        "enh_digests": {f"{lam:.3f}": checkpoint_digest(enh_ckpts[lam]) for lam in lambdas},
        "pp_digests": {f"{lam:.3f}:{l}": checkpoint_digest(ck)
                       for (lam, l), ck in sorted(pp_ckpts.items())},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    return Report(points=tuple(points), provenance=provenance)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_table(report: Report) -> str:
    """Fixed-width PSNR table: method-variant rows, ascending-lambda columns."""
    if not report.points:
        raise ValueError("report is empty")
    levels = report.levels
    rows = [("w/o post-processing", lambda p: p.psnr_human)]
    for l in levels:
        rows.append((f"w/ post-processing (l={l})",
                     lambda p, l=l: p.psnr_refined_by_l.get(l)))
    label_w = max(len(r[0]) for r in rows + [("lambda", None)])
    cells_w = 8
    lines = ["lambda".ljust(label_w) + "".join(f"{p.lmbda:>{cells_w}.3f}" for p in report.points)]
    for label, get in rows:
        cells = []
        for p in report.points:
            v = get(p)
            cells.append(f"{v:>{cells_w}.2f}" if v is not None else f"{'-':>{cells_w}}")
        lines.append(label.ljust(label_w) + "".join(cells))
    return "\n".join(lines) + "\n"


def render_csv(report: Report) -> str:
    """Canonical machine-readable rendering with the fixed column set."""
    lines = [",".join(CSV_COLUMNS)]
    for p in report.points:
        l1 = p.psnr_refined_by_l.get(1)
        l2 = p.psnr_refined_by_l.get(2)
        lines.append(",".join([
            f"{p.lmbda:.3f}",
            f"{p.bpp_additional:.6f}",
            f"{p.bpp_total:.6f}",
            f"{p.psnr_machine:.2f}",
            f"{p.psnr_human:.2f}",
            "" if l1 is None else f"{l1:.2f}",
            "" if l2 is None else f"{l2:.2f}",
            str(p.n_images),
        ]))
    return "\n".join(lines) + "\n"


def write_report(report: Report, csv_path: str, provenance_path: str = None) -> None:
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(render_csv(report))
    if provenance_path:
        with open(provenance_path, "w", encoding="utf-8") as f:
            json.dump(report.provenance, f, indent=2, sort_keys=True)
            f.write("\n")


def read_report(csv_path: str) -> Report:
    """Rebuild a Report from its CSV rendering (provenance not recoverable)."""
    with open(csv_path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != ",".join(CSV_COLUMNS):
        raise ValueError(f"{csv_path} is not a report.csv (bad header)")
    points = []
    for ln in lines[1:]:
        parts = ln.split(",")
        refined = {}
        if parts[5]:
            refined[1] = float(parts[5])
        if parts[6]:
            refined[2] = float(parts[6])
        points.append(RDPoint(
            lmbda=float(parts[0]), bpp_additional=float(parts[1]), bpp_total=float(parts[2]),
            psnr_machine=float(parts[3]), psnr_human=float(parts[4]),
            psnr_refined_by_l=refined, n_images=int(parts[7])))
    return Report(points=tuple(points), provenance={})


ACCOUNTINGS = ("additional_only", "total")


def rd_series(report: Report, accounting: str) -> list:
    """(label, xs, ys, linestyle, marker) tuples, one per method variant.

    Solid lines for additional_only (enhancement payload alone), dotted for
    total, following the convention that the dotted curve includes the
    machine layer's bits.
    """
    if accounting not in ACCOUNTINGS:
        raise ValueError(f"accounting must be one of {ACCOUNTINGS}")
    xs = [p.bpp_additional if accounting == "additional_only" else p.bpp_total
          for p in report.points]
    style = "-" if accounting == "additional_only" else ":"
    series = [("w/o post-processing", xs, [p.psnr_human for p in report.points], style, "o")]
    for l in report.levels:
        ys = [p.psnr_refined_by_l.get(l) for p in report.points]
        if all(v is not None for v in ys):
            series.append((f"w/ post-processing (l={l})", xs, ys, style, "s" if l == 1 else "^"))
    return series


def plot_rd(report: Report, accounting: str, out: str, svg: bool = False) -> list:
    """PSNR-vs-bpp curves; returns the written file paths."""
    if len(report.points) < 2:
        raise ValueError("need at least 2 RD points to draw a curve")
    out = os.fspath(out)
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for label, xs, ys, style, marker in rd_series(report, accounting):
        ax.plot(xs, ys, style, marker=marker, label=label)
    ax.set_xlabel("bpp (enhancement only)" if accounting == "additional_only"
                  else "bpp (base + enhancement)")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    written = []
    fig.savefig(out, dpi=120)
    written.append(out)
    if svg:
        alt = out.rsplit(".", 1)[0] + ".svg"
        fig.savefig(alt)
        written.append(alt)
    plt.close(fig)
    return written


def emit_noise_maps(image_id: str, manifest: DatasetManifest, base_ckpt: Checkpoint,
                    enh_ckpt: Checkpoint, pp_ckpt: Checkpoint, out_dir: str) -> dict:
    """Write the human and refined reconstructions of one image plus their
    noise maps against the original, normalized by one shared scale so the
    two maps' brightnesses are directly comparable."""
    entry = manifest.entry(image_id)  # unknown id -> KeyError
    image = load_image(entry.path)
    bs = codec_mod.compress_image(image, base_ckpt, enh_ckpt)
    _, human = codec_mod.decompress_image(bs, base_ckpt, enh_ckpt)
    refined = refine(human, postproc_from_checkpoint(pp_ckpt))
    err_h = np.mean(np.abs(image.pixels - human.pixels), axis=2)
    err_r = np.mean(np.abs(image.pixels - refined.pixels), axis=2)
    scale = float(max(err_h.max(), err_r.max()))
    if scale == 0.0:
        scale = 1.0
    stem = os.path.splitext(image_id)[0]
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "human": os.path.join(out_dir, f"{stem}_human.png"),
        "refined": os.path.join(out_dir, f"{stem}_refined.png"),
        "noise_human": os.path.join(out_dir, f"{stem}_noise_human.png"),
        "noise_refined": os.path.join(out_dir, f"{stem}_noise_refined.png"),
    }
    save_image(human, paths["human"])
    save_image(refined, paths["refined"])
    save_noise_map(noise_map(image, human, scale=scale), paths["noise_human"])
    save_noise_map(noise_map(image, refined, scale=scale), paths["noise_refined"])
    return paths
