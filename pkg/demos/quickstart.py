"""Smallest possible tour of the library API.

Generates a synthetic corpus, trains both codec layers at one operating
point for a couple of epochs, then compresses a held-out image and reports
what each layer paid and what quality each reconstruction reached.  Runs in
about a minute on one CPU core; the point is the shape of the workflow, not
the numbers.
"""

import os
import tempfile

from sicref.codec import CodecConfig, compress_image, decompress_image
from sicref.imaging import load_image, psnr
from sicref.toydata import generate_corpus, toy_image
from sicref.training import TrainConfig, set_deterministic, train_codec

set_deterministic(True)

# A small codec keeps the demo fast: 8 latent channels, 4x downsampling.
codec_cfg = CodecConfig(base_latent_channels=8, enh_latent_channels=8,
                        downsample_factor=4, hidden_channels=16)

with tempfile.TemporaryDirectory() as root:
    manifest = generate_corpus(os.path.join(root, "train"), count=24, size=64,
                               seed=0, split_tag="train")

    print("== training the base (machine) layer ==")
    base = train_codec(manifest,
                       TrainConfig(target="base_codec", lmbda=0.01, epochs=60,
                                   batch_size=8, patch=64, seed=1,
                                   learning_rate=3e-4),
                       codec_cfg=codec_cfg)

    print("== training the enhancement (human) layer on top of it ==")
    enh = train_codec(manifest,
                      TrainConfig(target="enh_codec", lmbda=0.01, epochs=60,
                                  batch_size=8, patch=64, seed=2,
                                  learning_rate=3e-4),
                      base_ckpt=base)

    # Compress an image the codec never saw.
    image = toy_image(seed=999, size=64)
    bitstream = compress_image(image, base, enh)
    machine, human = decompress_image(bitstream, base, enh)

    pixels = image.width * image.height
    print()
    print(f"base payload:        {len(bitstream.base_payload):5d} bytes "
          f"({8 * len(bitstream.base_payload) / pixels:.3f} bpp)")
    print(f"enhancement payload: {len(bitstream.enh_payload):5d} bytes "
          f"({8 * len(bitstream.enh_payload) / pixels:.3f} bpp)")
    print(f"machine reconstruction: {psnr(image, machine):.2f} dB")
    print(f"human reconstruction:   {psnr(image, human):.2f} dB "
          "(base + additional information)")
