import json

import numpy as np
import pytest

from polyvb.attributes import QMatrix, build_gmatrices, enumerate_profiles
from polyvb.io import (InputError, atomic_write_text, draws_csv, effects_csv, fit_report_dict,
                       gmatrix_csv, parse_fit_config, pi_table_csv, read_qmatrix, read_responses,
                       theta_table_csv, write_json, write_qmatrix, write_responses)
from polyvb.vb import FitConfig, fit


def test_qmatrix_round_trip_with_sidecar(tmp_path):
    q = QMatrix(np.array([[1, 0, 1], [0, 2, 0]]), np.array([2, 3, 2]))
    write_qmatrix(tmp_path / "q.csv", q, tmp_path / "levels.json")
    back = read_qmatrix(tmp_path / "q.csv")
    assert np.array_equal(back.entries, q.entries) and np.array_equal(back.levels, q.levels)
    assert (tmp_path / "q.csv").read_text().splitlines()[0] == "k1,k2,k3"


def test_qmatrix_levels_inferred_without_sidecar(tmp_path):
    (tmp_path / "q.csv").write_text("k1,k2\n1,0\n0,1\n")
    assert read_qmatrix(tmp_path / "q.csv").levels.tolist() == [2, 2]


def test_qmatrix_errors(tmp_path):
    (tmp_path / "a.csv").write_text("k1,k2\n1,x\n")
    with pytest.raises(InputError):
        read_qmatrix(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("k1,k2\n0,0\n")
    with pytest.raises(InputError):
        read_qmatrix(tmp_path / "b.csv")
    with pytest.raises(InputError):
        read_qmatrix(tmp_path / "missing.csv")


def test_responses_round_trip_with_ids(tmp_path):
    X = np.array([[0, 1, 1], [1, 0, 0]])
    write_responses(tmp_path / "x.csv", X, ["a", "b"])
    back, ids = read_responses(tmp_path / "x.csv")
    assert np.array_equal(back, X) and ids == ["a", "b"]
    write_responses(tmp_path / "y.csv", X)
    back, ids = read_responses(tmp_path / "y.csv")
    assert np.array_equal(back, X) and ids is None


def test_responses_reject_bad_values(tmp_path):
    (tmp_path / "x.csv").write_text("j1,j2\n0,2\n")
    with pytest.raises(InputError):
        read_responses(tmp_path / "x.csv")
    (tmp_path / "y.csv").write_text("j1,j2\n0,1\n1\n")
    with pytest.raises(InputError):
        read_responses(tmp_path / "y.csv")


def test_parse_fit_config():
    cfg, flavor, scheme = parse_fit_config({"tol": 1e-6, "init": {"dirichlet_seed": 4},
                                            "flavor": "reduced", "prior_scheme": "noninformative"})
    assert cfg.tol == 1e-6 and cfg.init == "dirichlet" and cfg.seed == 4
    assert (flavor, scheme) == ("reduced", "noninformative")
    assert parse_fit_config({})[0] == FitConfig()
    with pytest.raises(InputError):
        parse_fit_config({"bogus": 1})
    with pytest.raises(InputError):
        parse_fit_config({"init": "random"})
    with pytest.raises(InputError):
        parse_fit_config({"tol": -1})


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write_text(tmp_path / "sub" / "f.txt", "hello")
    assert (tmp_path / "sub" / "f.txt").read_text() == "hello"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]
    write_json(tmp_path / "j.json", {"a": np.arange(3), "b": np.float64(0.5)})
    assert json.loads((tmp_path / "j.json").read_text()) == {"a": [0, 1, 2], "b": 0.5}


def test_tables_and_report():
    q = QMatrix.uniform([[1, 2], [2, 0]], 3)
    X = np.random.default_rng(0).integers(0, 2, size=(40, 2))
    rpt = fit(X, q, config=FitConfig(cores=1))
    theta_csv = theta_table_csv(rpt.gmatrices, rpt.eap_theta, rpt.sd_theta).splitlines()
    assert theta_csv[0] == "item,q_attributes,P1,P2,P3,P4"
    assert theta_csv[1].startswith("1,1 2,P(00): ")
    assert theta_csv[2].endswith(",,")
    assert len(pi_table_csv(rpt.space, rpt.eap_pi, rpt.sd_pi).splitlines()) == 10
    eff = effects_csv(rpt.gmatrices, rpt.eap_theta).splitlines()
    assert eff[0] == "item,d0,d1,d2,d12"
    d = fit_report_dict(rpt)
    assert d["profiles"][:3] == ["00", "01", "02"]
    assert len(d["theta"]) == 2 and d["theta"][1]["patterns"] == ["0", "1"]
    json.dumps(d)


def test_gmatrix_export_layout():
    space = enumerate_profiles([3, 3])
    g = build_gmatrices(QMatrix.uniform([[2, 0]], 3), space, "reduced")[0]
    lines = gmatrix_csv(g, space).splitlines()
    assert lines[0] == "a1,00,01,02,10,11,12,20,21,22"
    assert lines[2] == "1,0,0,0,1,1,1,0,0,0"


def test_draws_csv():
    d = np.arange(12, dtype=float).reshape(2, 3, 2)
    lines = draws_csv(d, ["x", "y"]).splitlines()
    assert lines[0] == "chain,draw,x,y" and lines[1] == "1,1,0.0,1.0" and len(lines) == 7
