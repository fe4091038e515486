import json

import pytest

from htmsp import dataset
from htmsp.experiment import clear_encoding_cache

TINY_SPEC = dataset.DatasetSpec(classes=("cube", "sphere", "torus"), videos_per_class=5,
                                frames_per_video=6, frame_width=48, frame_height=32, rng_seed=3)


def tiny_config(root, out, **overrides):
    raw = {
        "sp": {"num_columns": 64, "synapses_per_column": 32, "min_overlap": 4,
               "winners_set_size": 5, "initial_inhibition_radius": 8, "rng_seed": 11},
        "encoder": {"target_width": 48, "target_height": 32, "block_size": 5},
        "dataset": {"root": str(root)},
        "output_dir": str(out),
        "classifier": {"epochs": 20},
    }
    raw.update(overrides)
    return raw


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_dataset")
    dataset.build_dataset(TINY_SPEC, root)
    return root


@pytest.fixture
def write_config(tmp_path, tiny_root):
    def make(name="cfg.json", **overrides):
        path = tmp_path / name
        path.write_text(json.dumps(tiny_config(tiny_root, tmp_path / "out", **overrides)))
        return path
    return make


@pytest.fixture(autouse=True)
def _fresh_encoding_cache():
    yield
    clear_encoding_cache()


# One summary line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
