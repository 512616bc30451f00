"""Two-layer scalable learned image codec with RRDB post-processing.

The base layer serves machine consumption; the enhancement layer adds the
information needed for a human-viewable reconstruction; an RRDB restoration
network trained with MSE removes the remaining coding noise. The evaluation
harness reports PSNR/bpp tables, RD curves under both bit-accounting
conventions, and noise-map visualizations.
"""

from .checkpoint import Checkpoint, checkpoint_digest, load_checkpoint, save_checkpoint
from .codec import (Bitstream, CodecConfig, EntropyModel, Latent, compress_image,
                    decode_base, decode_human, decompress_image, encode_base,
                    encode_enhancement, entropy_decode, entropy_encode, estimate_rate,
                    quantize)
from .errors import (CheckpointMismatchError, ConfigError, DecodeError,
                     EmptyDatasetError, MissingCheckpointError, SicrefError,
                     UnsupportedDepthError)
from .evaluate import (RDPoint, Report, emit_noise_maps, evaluate_rd, plot_rd,
                       read_report, render_csv, render_table, write_report)
from .imaging import (PSNR_SENTINEL, DatasetManifest, Image, ManifestEntry, NoiseMap,
                      bpp, build_manifest, extract_patches, load_image, mse, noise_map,
                      psnr, read_manifest, save_image, save_noise_map, write_manifest)
from .postproc import (PostprocModel, RRDBConfig, build_postproc, parameter_count,
                       postproc_from_checkpoint, refine, residual_of)
from .training import (PairSet, TrainConfig, build_pairs, grad_check,
                       pairs_from_checkpoint, pairs_to_checkpoint, set_deterministic,
                       train_codec, train_postproc)

__version__ = "0.1.0"
