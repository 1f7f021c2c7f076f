from pathlib import Path

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]
FIXTURE_DIR = REPO_ROOT / "tests" / "fixtures"

FIXTURE_CHECKPOINT = FIXTURE_DIR / "digits_cnn.pt"
FIXTURE_MODEL = FIXTURE_DIR / "digits_cnn.lgtw"
FIXTURE_DATASET = FIXTURE_DIR / "digits_eval.lgtd"
FIXTURE_LOGITS = FIXTURE_DIR / "reference_logits.json"
FIXTURE_BASELINE = FIXTURE_DIR / "baseline.json"


def require_fixture(path: Path):
    if not path.is_file():
        pytest.fail(
            f"missing committed fixture {path}; run legobridge-fixtures to regenerate",
            pytrace=False,
        )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
