"""Shared fixtures for the trainer suite.

The engine is driven only through its command line and its file
formats (WAV, manifest, tensor container). The simulated corpus and
the one long training run are session-scoped so every test reuses
them.
"""

import json
import subprocess
import sys
from types import SimpleNamespace

import pytest

from nwftrain.train import config_for, train

SCENE = {
    "mics": 2,
    "utterance_seconds": 0.5,
    "image_order": 2,
    "room_length": [4.0, 6.0],
    "room_width": [3.0, 5.0],
    "room_height": [2.4, 3.0],
    "absorption": [0.3, 0.5],
    "snr_db": [0.0, 5.0],
    "noise_sources": [1, 2],
}


def run_engine(*args):
    """Run one engine CLI command, failing loudly on a bad exit."""
    cmd = [sys.executable, "-m", "nwfbeam", *[str(a) for a in args]]
    result = subprocess.run(cmd, capture_output=True, text=True)
    assert result.returncode == 0, (
        f"{' '.join(cmd)} exited {result.returncode}\n{result.stderr}"
    )
    return result.stdout


def simulate(out_dir, count, seed, **overrides):
    """Generate a dataset through the engine CLI; returns the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_path = out_dir / "scene.json"
    scene_path.write_text(json.dumps({**SCENE, **overrides}))
    run_engine(
        "simulate", "--config", scene_path, "--count", count,
        "--seed", seed, "--out-dir", out_dir,
    )
    return out_dir / "manifest.jsonl"


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Toy train/val split: 24 + 6 half-second two-channel mixtures."""
    root = tmp_path_factory.mktemp("corpus")
    return SimpleNamespace(
        train=simulate(root / "train", 24, 100),
        val=simulate(root / "val", 6, 200),
    )


@pytest.fixture(scope="session")
def trained_full(corpus, tmp_path_factory):
    """One full-stack training run (setup 6C'), shared across tests."""
    root = tmp_path_factory.mktemp("trained")
    log_path = root / "train_log.jsonl"
    config = config_for("6C'", epochs=10, seed=0)
    model, records = train(config, corpus.train, corpus.val, log_path)
    return SimpleNamespace(
        model=model, records=records, config=config, log_path=log_path
    )


@pytest.fixture(scope="session")
def parity_utterance(tmp_path_factory):
    """One simulated 1 s utterance for cross-implementation checks."""
    root = tmp_path_factory.mktemp("parity")
    manifest = simulate(root, 1, 300, utterance_seconds=1.0)
    record = json.loads(manifest.read_text().splitlines()[0])
    return SimpleNamespace(
        noisy=manifest.parent / record["noisy_path"],
        target=manifest.parent / record["target_path"],
    )
