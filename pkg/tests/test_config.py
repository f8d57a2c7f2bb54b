from pathlib import Path

import pytest

from v2xcollab import config
from v2xcollab.config import ConfigError, ExperimentConfig, load, loads

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_default_file_documents_defaults():
    assert load(CONFIGS / "default_config.toml") == ExperimentConfig().validate()


@pytest.mark.parametrize("name", sorted(config.NAMED))
def test_named_files_match_builders(name):
    assert load(CONFIGS / f"{name}.toml") == config.NAMED[name]()


def test_empty_file_is_default():
    assert loads("") == ExperimentConfig().validate()


def test_overrides():
    cfg = loads(
        """
[experiment]
seeds = [3]
strategies = ["none", "late_early"]
lag = 0.4

[scenario]
object_count = 10

[scenario.lidar]
vertical_fov_deg = [-20.0, 5.0]

[agents.profiles]
0 = "profile-S"

[profiles.custom]
pos_sigma = 0.1
"""
    )
    assert cfg.seeds == (3,) and cfg.strategies == ("NONE", "LATE_EARLY") and cfg.lag == 0.4
    assert cfg.scenario.object_count == 10 and cfg.scenario.agent_profiles == {0: "profile-S"}
    assert cfg.scenario.lidar.vertical_fov == pytest.approx((-0.349066, 0.0872665), abs=1e-6)
    assert cfg.profiles["custom"].pos_sigma == 0.1 and "profile-P" in cfg.profiles


@pytest.mark.parametrize(
    "text, match",
    [
        ("[experiment]\nlag = \"soon\"\n", r"<config>:2: experiment.lag: expected a number"),
        ("[experiment]\n\nbogus = 1\n", r"<config>:3: experiment.bogus: unknown key"),
        ("[scenery]\n", "unknown section"),
        ("[experiment]\nstrategies = [\"MID\"]\n", "unknown strategy"),
        ("[experiment]\nestimator = \"magic\"\n", "experiment.estimator"),
        ("[agents]\ndefault_profile = \"profile-X\"\n", "profile-X"),
        ("[scenario]\nagent_count = 9\n", "agent_count"),
        ("[experiment]\nseeds = []\n", "at least one seed"),
        ("[profiles.profile-P]\nfn_base = 2.0\n", r"profiles.profile-P"),
        ("[agents.profiles]\nego = \"profile-P\"\n", "agent ids must be integers"),
        ("[experiment\n", "<config>"),
        ("[experiment]\nagents = 0\n", "experiment.agents"),
    ],
)
def test_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        loads(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load(tmp_path / "nope.toml")


def test_collab_participants():
    cfg = ExperimentConfig(agents=2).validate()
    assert cfg.collab().participants == (1, 0)
    assert ExperimentConfig().collab().participants is None
