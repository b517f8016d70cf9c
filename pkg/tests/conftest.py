import hashlib
import textwrap

import pytest

from walkbo import cli

SMALL_CONFIG = """\
[experiment]
family = raibert5
kernels = SE, asymNN, trajNN
cost = atrias
seeds = 0-2
budget = 10
candidates = 400
fit_starts = 2

[data]
points = 400

[train]
score_hidden = 16, 8
traj_hidden = 16, 8
epochs = 8

[paths]
dataset = out/data.csv
score_model = out/score.txt
traj_model = out/traj.txt
results = out/results.csv
"""


def sha(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_config(directory, text=SMALL_CONFIG, name="exp.ini"):
    p = directory / name
    p.write_text(textwrap.dedent(text))
    return p


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """A small experiment directory with dataset and both feature nets already built."""
    d = tmp_path_factory.mktemp("pipeline")
    cfg = write_config(d)
    assert cli.main(["-q", "generate", "--config", str(cfg)]) == 0
    assert cli.main(["-q", "train", "--config", str(cfg), "--target", "score"]) == 0
    assert cli.main(["-q", "train", "--config", str(cfg), "--target", "traj"]) == 0
    return d, cfg


# criterion number -> (passed, detail); filled by test_acceptance and echoed after the run
ACCEPTANCE: dict = {}


def record(n: int, ok: bool, detail: str):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
