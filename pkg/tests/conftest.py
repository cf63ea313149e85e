from __future__ import annotations

import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))

from gripsim import classifier, cli, datagen  # noqa: E402
from gripsim.core import CampaignParams, RunConfig  # noqa: E402
from gripsim.features import FeatureLayout  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_campaign():
    """Six short BioTac trials (one per object x pressure cell), kept in memory."""
    cfg = RunConfig(seed=7, campaign=CampaignParams(trials_per_cell=1, duration=20.0))
    results, manifest = datagen.run_campaign(cfg)
    streams = {(r.spec.trial_id, f): recs for r in results for f, recs in r.records.items()}
    return cfg, results, manifest, streams


@pytest.fixture(scope="session")
def small_model(small_campaign):
    cfg, _, _, streams = small_campaign
    train_keys, test_keys = datagen.split_keys(list(streams), 0.2, cfg.seed)
    X, y = datagen.build_training_set([streams[k] for k in train_keys], 10, 3)
    model = classifier.train(X, y, FeatureLayout("BioTac", 10), 3, seed=cfg.seed)
    Xt, yt = datagen.build_training_set([streams[k] for k in test_keys], 10, 3)
    return model, (X, y), (Xt, yt)


# ---------------------------------------------------------------------------
# Full pipeline through the CLI, shared by the harness and acceptance tests

os.environ.pop("GRIPSIM_CONFIG", None)

SP_CONFIG = {"sensor_variant": "BioTacSP", "campaign": {"trials_per_cell": 1, "duration": 15.0}}


@dataclass
class Stage:
    path: Path
    code: int
    seconds: float


def timed_cli(argv: list[str]) -> tuple[int, float]:
    t0 = time.perf_counter()
    code = cli.main(argv)
    return code, time.perf_counter() - t0


@pytest.fixture(scope="session")
def pipeline_dir(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("pipeline")


@pytest.fixture(scope="session")
def default_collect(pipeline_dir) -> Stage:
    out = pipeline_dir / "data"
    code, secs = timed_cli(["collect", "--out", str(out)])
    return Stage(out, code, secs)


@pytest.fixture(scope="session")
def default_train(default_collect, pipeline_dir) -> Stage:
    out = pipeline_dir / "biotac_tf3.json"
    code, secs = timed_cli(["train", "--data", str(default_collect.path), "--out", str(out), "--tau-f", "3"])
    return Stage(out, code, secs)


@pytest.fixture(scope="session")
def default_eval(default_train, default_collect, pipeline_dir) -> Stage:
    out = pipeline_dir / "eval.csv"
    code, secs = timed_cli(["eval", "--model", str(default_train.path), "--data", str(default_collect.path),
                            "--out", str(out)])
    return Stage(out, code, secs)


@pytest.fixture(scope="session")
def biotac_model(default_train):
    assert default_train.code == 0
    return classifier.load_model(default_train.path)


@pytest.fixture(scope="session")
def sp_model_path(pipeline_dir) -> Path:
    cfg = pipeline_dir / "sp.yaml"
    cfg.write_text(yaml.safe_dump(SP_CONFIG))
    data = pipeline_dir / "sp_data"
    out = pipeline_dir / "biotacsp_tf3.json"
    assert cli.main(["--config", str(cfg), "collect", "--out", str(data)]) == 0
    assert cli.main(["--config", str(cfg), "train", "--data", str(data), "--out", str(out), "--tau-f", "3"]) == 0
    return out


@pytest.fixture(scope="session")
def sp_model(sp_model_path):
    return classifier.load_model(sp_model_path)
