import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from aiaudit.catalogue import load_exemplar_catalogue  # noqa: E402

# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def exemplar():
    return load_exemplar_catalogue()


@pytest.fixture(scope="session")
def tiny_items():
    """Small 5-class synthetic dataset, in memory."""
    import synth

    return synth.make_dataset(
        num_classes=5, tracks_per_class=8, frames_per_track=4, seed=7
    )


@pytest.fixture(scope="session")
def audit_env(tmp_path_factory, tiny_items):
    """On-disk dataset, trained tiny checkpoint and audit config."""
    import json

    import synth

    from aiaudit.catalogue import exemplar_catalogue_path
    from aiaudit.dataset import load_image_folder, split_dataset
    from aiaudit.model import TrainConfig, train_reference

    root = tmp_path_factory.mktemp("auditenv")
    data_root = synth.write_image_folder(tiny_items, root / "data")
    loaded = load_image_folder(data_root, 5)
    train, val, _test = split_dataset(loaded, (0.6, 0.2, 0.2), seed=0)
    model = train_reference(train, val, TrainConfig(epochs=4, seed=0), num_classes=5)
    checkpoint = root / "model.pt"
    model.save(checkpoint)

    config = {
        "catalogue": str(exemplar_catalogue_path()),
        "risk_level": "A",
        "min_grade": "++",
        "model_checkpoint": str(checkpoint),
        "dataset_root": str(data_root),
        "split": {"fractions": [0.6, 0.2, 0.2], "seed": 0},
        "requirements": [
            {
                "id": 7,
                "specification": "rain",
                "parameters": {
                    "rain": {"seed": 0},
                    "accuracy_threshold": 0.9,
                },
                "rationale": "Heavy rain is a common worst case for the use case.",
            },
            {
                "id": 7,
                "specification": "pgd",
                "parameters": {
                    "pgd": {"epsilon": 0.3, "iterations": 5, "seed": 0},
                    "accuracy_threshold": 0.9,
                },
                "rationale": "Digital adversarial perturbations as second worst case.",
            },
            {
                "id": 30,
                "specification": "independence",
                "parameters": {"phash_hamming_max": 4, "tv_max": 0.1},
                "rationale": "Leakage-free splits are required for fair evaluation.",
            },
            {
                "id": 33,
                "specification": "center_focus",
                "parameters": {
                    "center_check": {"samples_per_class": 5, "seed": 0},
                },
                "rationale": "Sign content sits at the image center.",
            },
        ],
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2))
    return {
        "root": root,
        "data_root": data_root,
        "checkpoint": checkpoint,
        "config_path": config_path,
        "config": config,
        "model": model,
    }
