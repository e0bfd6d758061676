import numpy as np
import pytest

from mrpkit.data import (
    CellTable,
    DataError,
    StateTable,
    Survey,
    compute_voter_weights,
    load_cells,
    load_states,
    load_survey,
    write_cells,
    write_states,
    write_survey,
)
from mrpkit.design import ModelSpec

from conftest import make_cell_table, make_state_table


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


# ---------------------------------------------------------------------------
# load_survey

def test_load_survey_direct_parse(tmp_path):
    p = _write(tmp_path / "survey.csv",
               "state,income,vote\n5,4,1\n5,1,0\n")
    sv = load_survey(p, ModelSpec("M1"))
    assert len(sv) == 2
    assert sv.n_dropped == 0
    assert sv[0].state_id == 5 and sv[0].income_cat == 4 and sv[0].vote == 1
    assert sv[1].state_id == 5 and sv[1].income_cat == 1 and sv[1].vote == 0


def test_load_survey_drops_empty_vote_with_warning(tmp_path):
    p = _write(tmp_path / "survey.csv",
               "state,income,vote\n1,2,1\n1,3,\n")
    with pytest.warns(UserWarning, match="dropped 1"):
        sv = load_survey(p, ModelSpec("M1"))
    assert len(sv) == 1
    assert sv.n_dropped == 1


def test_load_survey_bad_income_names_row(tmp_path):
    p = _write(tmp_path / "survey.csv",
               "state,income,vote\n1,2,1\n1,6,0\n")
    with pytest.raises(DataError, match="row 3"):
        load_survey(p, ModelSpec("M1"))


def test_load_survey_unknown_state_label(tmp_path):
    states = make_state_table(3)
    p = _write(tmp_path / "survey.csv",
               "state,income,vote\nS01,2,1\nZZ,3,0\n")
    with pytest.raises(DataError, match="ZZ"):
        load_survey(p, ModelSpec("M1"), states)


def test_load_survey_deterministic(tmp_path):
    text = "state,income,vote\n" + "".join(
        f"{s},{i},{v}\n" for s, i, v in
        [(1, 2, 1), (2, 5, 0), (1, 1, 1), (2, 3, 0)])
    p1 = _write(tmp_path / "a.csv", text)
    p2 = _write(tmp_path / "b.csv", text)
    s1 = load_survey(p1, ModelSpec("M1"))
    s2 = load_survey(p2, ModelSpec("M1"))
    assert np.array_equal(s1.state_id, s2.state_id)
    assert np.array_equal(s1.income_cat, s2.income_cat)
    assert np.array_equal(s1.vote, s2.vote)


# ---------------------------------------------------------------------------
# load_cells

def _cells_csv(S, eth=False, skip=None):
    lines = ["state,income" + (",ethnicity" if eth else "")
             + ",n_adults,turnout_rate"]
    for s in range(1, S + 1):
        for i in range(1, 6):
            for e in (range(1, 5) if eth else (None,)):
                if skip and (s, i) == skip:
                    continue
                key = f"{s},{i}" + (f",{e}" if eth else "")
                lines.append(f"{key},1000,0.6")
    return "\n".join(lines) + "\n"


def test_load_cells_250(tmp_path):
    p = _write(tmp_path / "cells.csv", _cells_csv(50))
    cells = load_cells(p, ModelSpec("M1"))
    assert len(cells) == 250


def test_load_cells_1000_with_ethnicity(tmp_path):
    p = _write(tmp_path / "cells.csv", _cells_csv(50, eth=True))
    cells = load_cells(p, ModelSpec("M1", use_ethnicity=True))
    assert len(cells) == 1000


def test_load_cells_missing_cell_named(tmp_path):
    p = _write(tmp_path / "cells.csv", _cells_csv(5, skip=(3, 2)))
    with pytest.raises(DataError, match=r"state=3, income=2"):
        load_cells(p, ModelSpec("M1"))


def test_load_cells_duplicate_key(tmp_path):
    text = _cells_csv(2) + "2,5,1000,0.6\n"
    p = _write(tmp_path / "cells.csv", text)
    with pytest.raises(DataError, match="duplicate"):
        load_cells(p, ModelSpec("M1"))


def test_load_cells_bad_turnout(tmp_path):
    text = _cells_csv(2).replace("2,5,1000,0.6", "2,5,1000,1.4")
    p = _write(tmp_path / "cells.csv", text)
    with pytest.raises(DataError, match="turnout_rate"):
        load_cells(p, ModelSpec("M1"))


def test_load_cells_direct_n_voters(tmp_path):
    lines = ["state,income,n_voters"]
    for s in (1, 2):
        for i in range(1, 6):
            lines.append(f"{s},{i},{100 * s + i}")
    p = _write(tmp_path / "cells.csv", "\n".join(lines) + "\n")
    cells = load_cells(p, ModelSpec("M1"))
    assert cells.n_voters[0] == 101.0
    assert cells.n_voters[-1] == 205.0


# ---------------------------------------------------------------------------
# compute_voter_weights

def test_voter_weights_product():
    cells = CellTable([1, 1, 1, 1, 1], [1, 2, 3, 4, 5],
                      [0] * 5, [1000, 0, 500, 200, 10],
                      [0.6, 0.9, 0.5, 1.0, 0.0])
    out = compute_voter_weights(cells)
    assert out.n_voters[0] == 600.0
    assert out.n_voters[1] == 0.0


def test_voter_weights_brute_force_oracle():
    cells = make_cell_table(50)
    assert len(cells) == 250
    out = compute_voter_weights(cells)
    # independent row-by-row recomputation
    for i in range(len(cells)):
        r = cells.row(i)
        assert out.n_voters[i] == r.n_adults * r.turnout_rate


def test_voter_weights_rejects_bad_turnout():
    cells = CellTable([1], [1], [0], [10.0], [1.0])
    cells.turnout_rate = np.array([1.5])
    with pytest.raises(DataError):
        compute_voter_weights(cells)


# ---------------------------------------------------------------------------
# load_states and round trips

def test_load_states_standardizes(tmp_path):
    p = _write(tmp_path / "states.csv",
               "state,avg_income,prev_rep_share,region\n"
               "AA,10,0.4,1\nBB,20,0.5,1\nCC,30,0.6,2\n")
    st = load_states(p)
    assert st.labels == ["AA", "BB", "CC"]
    assert abs(st.avg_income.mean()) < 1e-12
    assert abs(st.avg_income.std(ddof=1) - 1.0) < 1e-12
    assert st.index_of("CC") == 3


def test_load_states_rejects_degenerate_share(tmp_path):
    p = _write(tmp_path / "states.csv",
               "state,avg_income,prev_rep_share,region\n"
               "AA,10,0.0,1\nBB,20,0.5,1\n")
    with pytest.raises(DataError, match="AA"):
        load_states(p)


def test_round_trip_states(tmp_path):
    st = make_state_table(7, seed=3)
    path = tmp_path / "states.csv"
    write_states(st, path)
    back = load_states(path)
    assert back.labels == st.labels
    assert np.allclose(back.avg_income, st.avg_income)
    assert np.allclose(back.prev_rep_share, st.prev_rep_share)
    assert np.array_equal(back.region_id, st.region_id)


def test_round_trip_survey_and_cells(tmp_path):
    spec = ModelSpec("M1")
    states = make_state_table(3)
    rng = np.random.default_rng(5)
    sv = Survey(rng.integers(1, 4, 40), rng.integers(1, 6, 40),
                np.zeros(40, dtype=int), rng.integers(0, 2, 40))
    cells = make_cell_table(3, seed=5)
    sp, cp = tmp_path / "survey.csv", tmp_path / "cells.csv"
    write_survey(sv, sp, states)
    write_cells(cells, cp, states)
    sv2 = load_survey(sp, spec, states)
    cells2 = load_cells(cp, spec, states)
    assert np.array_equal(sv2.state_id, sv.state_id)
    assert np.array_equal(sv2.vote, sv.vote)
    assert np.allclose(cells2.n_adults, cells.n_adults)
    assert np.allclose(cells2.n_voters, cells.n_voters)
