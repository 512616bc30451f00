"""The full command-line workflow, end to end, in one sitting.

Every step below is exactly what you would type at a shell with the
installed `sicref` entry point; the script drives the same argv interface
in-process so it can be run as plain `python3 demos/cli_workflow.py`.

The workspace it builds (under ./demo_workspace) survives the run so you
can poke at the artifacts afterwards: manifests/, checkpoints/, pairs/,
bitstreams/, decoded/, reports/ and figures/.  Takes a few minutes on one
CPU core at this miniature scale.
"""

import glob
import os
import sys

from sicref.cli import run

WS = os.path.abspath("demo_workspace")


def sh(*argv):
    print(f"\n$ sicref {' '.join(argv)}")
    rc = run(list(argv))
    if rc != 0:
        sys.exit(f"step failed with exit code {rc}")


# 1. Data: a synthetic training split and a smaller held-out split.
sh("prepare", "--workspace", WS, "--toy", "32", "--size", "96", "--split", "train",
   "--seed", "0")
sh("prepare", "--workspace", WS, "--toy", "8", "--size", "96", "--split", "val",
   "--seed", "1")

# 2. Codecs: one base layer, then enhancement layers at two operating points.
common = ("--workspace", WS, "--patch", "96", "--batch", "8", "--epochs", "60",
          "--learning-rate", "3e-4")
sh("train-codec", "--target", "base", "--lambda", "0.010", *common)
sh("train-codec", "--target", "enh", "--lambda", "0.010", *common)
sh("train-codec", "--target", "enh", "--lambda", "0.030", *common)

# 3. Restoration: build compressed/original pairs and train a small l=1 net.
sh("train-postproc", "--lambda", "0.010", "--l", "1", "--features", "16",
   "--growth", "8", "--pair-patch", "96", *common)

# 4. One concrete file through the codec and back.
src = os.path.join(WS, "images", "val", "img_0000.png")
sh("compress", "--workspace", WS, "--image", src, "--lambda", "0.010")
sh("decompress", "--workspace", WS,
   "--bitstream", os.path.join(WS, "bitstreams", "img_0000.sicr"),
   "--lambda", "0.010")
decoded = os.path.join(WS, "decoded", "img_0000_human.png")
sh("refine", "--workspace", WS, "--image", decoded, "--lambda", "0.010", "--l", "1")

# 5. Reporting: PSNR table, RD curves under both accountings, noise maps.
sh("evaluate", "--workspace", WS, "--split", "val")
sh("plot", "--workspace", WS, "--accounting", "both")
sh("noise-maps", "--workspace", WS, "--split", "val", "--id", "img_0001.png",
   "--lambda", "0.010", "--l", "1")

print("\nArtifacts now in", WS)
for pattern in ("reports/*", "figures/*.png", "figures/noise_maps/*"):
    for path in sorted(glob.glob(os.path.join(WS, pattern))):
        print("  ", os.path.relpath(path, WS))
