import math

import numpy as np
import pytest
from pydantic import ValidationError

from blackbox_comm.cli.results import encode_extra, read_results, rows_to_frame, write_results
from blackbox_comm.models.reports import ResultRow
from blackbox_comm.utils.stats import clopper_pearson, mean_interval


def test_extra_is_sorted_and_finite():
    assert encode_extra({"b": 1, "a": math.inf, "c": [np.float64(0.5), -math.inf]}) == '{"a":null,"b":1,"c":[0.5,null]}'


def test_numbers_are_written_exactly():
    row = ResultRow(experiment="exponent", cell="eps=0", param=0.1, estimate=math.inf, ci_low=math.inf,
                    ci_high=math.inf, wall_time=1.5)
    frame = rows_to_frame([row])
    assert frame.loc[0, "param"] == repr(0.1)
    assert frame.loc[0, "estimate"] == "inf"
    assert frame.loc[0, "n"] == ""
    assert frame.loc[0, "wall_time"] == ""
    assert rows_to_frame([row], timing=True).loc[0, "wall_time"] == "1.5"


def test_write_and_read_back(tmp_path):
    rows = [
        ResultRow(experiment="source", cell="n=10", n=10, rate=0.4, param=0.2, estimate=0.25, ci_low=0.1,
                  ci_high=0.4, trials=100, extra={"mean_distortion": 0.19}),
        ResultRow(experiment="source", cell="n=20", n=20, rate=0.4, param=0.2, estimate=0.0, ci_low=0.0,
                  ci_high=0.03, trials=100),
    ]
    path = write_results(rows, tmp_path / "nested" / "source.csv")
    frame = read_results(path)
    assert frame["n"].tolist() == [10, 20]
    assert frame["extra"][0] == {"mean_distortion": 0.19}
    assert frame["extra"][1] == {}
    assert path.read_bytes().endswith(b"\n")
    assert b"\r" not in path.read_bytes()


def test_row_interval_must_contain_the_estimate():
    with pytest.raises(ValidationError):
        ResultRow(experiment="source", cell="n=10", estimate=0.5, ci_low=0.0, ci_high=0.4)


def test_clopper_pearson_edges():
    assert clopper_pearson(0, 100)[0] == 0.0
    assert clopper_pearson(100, 100)[1] == 1.0
    low, high = clopper_pearson(0, 100)
    assert high == pytest.approx(0.0362, abs=1e-3)
    low, high = clopper_pearson(50, 100)
    assert low < 0.5 < high
    assert clopper_pearson(0, 0) == (0.0, 1.0)


def test_mean_interval():
    mean, low, high = mean_interval(np.array([0.1, 0.2, 0.3]))
    assert mean == pytest.approx(0.2)
    assert low < mean < high
    assert mean_interval(np.array([0.4])) == (0.4, 0.4, 0.4)
