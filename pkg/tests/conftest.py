import pytest

from sicref import codec, toydata, training
from sicref.postproc import RRDBConfig

# Small sizes everywhere: unit tests exercise contracts, not quality.
TINY_CODEC = codec.CodecConfig(base_latent_channels=4, enh_latent_channels=4,
                               downsample_factor=4, hidden_channels=8)
TINY_RRDB = RRDBConfig(l=1, features=8, growth=4)


@pytest.fixture(scope="session", autouse=True)
def _deterministic():
    training.set_deterministic(True)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny_corpus")
    return toydata.generate_corpus(str(d), count=8, size=48, seed=7, split_tag="tiny")


@pytest.fixture(scope="session")
def tiny_base(tiny_corpus):
    cfg = training.TrainConfig(target="base_codec", lmbda=0.01, epochs=2,
                               batch_size=4, patch=48, seed=11)
    return training.train_codec(tiny_corpus, cfg, codec_cfg=TINY_CODEC)


@pytest.fixture(scope="session")
def tiny_enh(tiny_corpus, tiny_base):
    cfg = training.TrainConfig(target="enh_codec", lmbda=0.01, epochs=2,
                               batch_size=4, patch=48, seed=12)
    return training.train_codec(tiny_corpus, cfg, base_ckpt=tiny_base)


@pytest.fixture(scope="session")
def tiny_pairs(tiny_corpus, tiny_base, tiny_enh):
    return training.build_pairs(tiny_corpus, tiny_base, tiny_enh, patch=48)


@pytest.fixture(scope="session")
def tiny_pp(tiny_pairs):
    cfg = training.TrainConfig(target="postproc", epochs=2, batch_size=4,
                               patch=48, seed=13)
    return training.train_postproc(tiny_pairs, cfg, TINY_RRDB)
