import sys
from pathlib import Path

import pytest

FILE_PATH = Path(__file__).resolve()
ROOT_DIR = None
for parent in FILE_PATH.parents:
    if (parent / "anyres").is_dir() and (parent / "pyproject.toml").is_file():
        ROOT_DIR = parent
        break
if ROOT_DIR is None:
    ROOT_DIR = FILE_PATH.parents[2]
SRC_DIR = FILE_PATH.parents[1] / "src"
MODULES = (
    "checkpoint",
    "config",
    "corpus",
    "datapipe",
    "embedder",
    "errors",
    "evaluate",
    "geometry",
    "image_io",
    "losses",
    "main",
    "metrics",
    "models",
    "netcore",
    "provenance",
    "resample",
    "trainer",
)

# Native sizes of the shared test corpus; p = 16 makes all but the first HR.
CORPUS_SIZES = (12, 16, 20, 24, 32, 40, 48, 64)


def _remove_src_path() -> None:
    cand_str = str(SRC_DIR)
    while cand_str in sys.path:
        sys.path.remove(cand_str)


@pytest.fixture(autouse=True)
def _isolate_imports():
    _remove_src_path()
    sys.path.insert(0, str(SRC_DIR))
    for name in MODULES:
        sys.modules.pop(name, None)
    yield
    _remove_src_path()


@pytest.fixture
def corpus_dir(tmp_path):
    from config import CorpusConfig
    from corpus import generate_corpus

    root = tmp_path / "corpus"
    generate_corpus(root, sizes=CORPUS_SIZES, config=CorpusConfig(seed=7), corrupt=1)
    return root


@pytest.fixture
def manifest(corpus_dir):
    from datapipe import ingest

    return ingest(corpus_dir, p=16)


@pytest.fixture
def generator_config():
    from models import GeneratorConfig

    return GeneratorConfig(
        p=16,
        s_max=64,
        z_dim=8,
        w_dim=16,
        mapping_layers=2,
        fourier_channels=16,
        fourier_bandwidth=6.0,
        num_layers=2,
        channels=16,
        d_channels=8,
        seed=0,
    )


@pytest.fixture
def train_config():
    from models import TrainConfig

    return TrainConfig(
        p=16,
        batch_size=2,
        pretrain_steps=3,
        patch_steps=3,
        z_dim=8,
        w_dim=16,
        mapping_layers=2,
        fourier_channels=16,
        fourier_bandwidth=6.0,
        num_layers=2,
        channels=16,
        d_channels=8,
        r1_interval=2,
        log_every=1,
        eval_every=3,
        snapshot_every=2,
        sample_every=3,
        proxy_pfid_n=4,
        log_wallclock=False,
    )
