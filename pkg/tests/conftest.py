import csv
from pathlib import Path

import pytest

from satwelfare.synth import SynthConfig, WorldPaths, generate_world

# a few hundred households: fast enough to run the whole pipeline in a unit test
SMALL = SynthConfig(seed=3, n_village_groups=6, villages_per_group=(3, 4),
                    households_per_village=40.0, n_gps_outliers=5, n_missing_gps=2,
                    survey_eligible_fraction=0.6, survey_ineligible_fraction=0.2)


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    root = tmp_path_factory.mktemp("world")
    truth = generate_world(SMALL, root)
    return WorldPaths(root), truth


def write_csv(path: Path, header, rows) -> Path:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return Path(path)
