"""Input tables: survey microdata, poststratification cells, state predictors.

All three tables are ingested from comma-delimited text with a header row.
Tables are immutable numpy-array containers after construction; loaders
validate category ranges, key uniqueness, and cross completeness up front so
downstream code can index without checks.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

N_INCOME = 5
N_ETH = 4


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class SurveyResponse:
    """One respondent: state index (1-based), income category 1..5,
    ethnicity 1..4 (0 when the dimension is inactive), and binary vote
    (1 = Republican candidate, 0 = Democratic candidate)."""

    state_id: int
    income_cat: int
    ethnicity: int
    vote: int


@dataclass(frozen=True)
class PoststratCell:
    """One population cell with its adult count, turnout rate, and the
    derived voter count n_voters = n_adults * turnout_rate."""

    state_id: int
    income_cat: int
    ethnicity: int
    n_adults: float
    turnout_rate: float
    n_voters: float


@dataclass
class StateTable:
    """Per-state predictors: standardized average income, previous
    Republican two-party share, and region id (1..R).

    ``labels`` maps row position -> state label as it appears in the files;
    state index i (1-based) refers to labels[i-1].
    """

    labels: list[str]
    avg_income: np.ndarray      # standardized: mean 0, sd 1 across states
    prev_rep_share: np.ndarray  # fraction in (0, 1)
    region_id: np.ndarray       # int, 1..R

    def __post_init__(self):
        self.avg_income = np.asarray(self.avg_income, dtype=float)
        self.prev_rep_share = np.asarray(self.prev_rep_share, dtype=float)
        self.region_id = np.asarray(self.region_id, dtype=int)

    @property
    def n_states(self) -> int:
        return len(self.labels)

    @property
    def n_regions(self) -> int:
        return int(self.region_id.max())

    def index_of(self, label: str) -> int:
        """1-based state index for a label; DataError if unknown."""
        try:
            return self.labels.index(label) + 1
        except ValueError:
            raise DataError(f"unknown state label {label!r}") from None


class Survey(Sequence):
    """Validated survey responses stored as parallel arrays."""

    def __init__(self, state_id, income_cat, ethnicity, vote, n_dropped: int = 0):
        self.state_id = np.asarray(state_id, dtype=int)
        self.income_cat = np.asarray(income_cat, dtype=int)
        self.ethnicity = np.asarray(ethnicity, dtype=int)
        self.vote = np.asarray(vote, dtype=int)
        self.n_dropped = n_dropped

    def __len__(self) -> int:
        return len(self.vote)

    def __getitem__(self, i) -> SurveyResponse:
        return SurveyResponse(
            int(self.state_id[i]), int(self.income_cat[i]),
            int(self.ethnicity[i]), int(self.vote[i]),
        )

    def __iter__(self) -> Iterator[SurveyResponse]:
        for i in range(len(self)):
            yield self[i]


class CellTable:
    """Full cross of poststratification cells in canonical order
    (state, income, ethnicity)."""

    def __init__(self, state_id, income_cat, ethnicity, n_adults, turnout_rate,
                 n_voters=None):
        self.state_id = np.asarray(state_id, dtype=int)
        self.income_cat = np.asarray(income_cat, dtype=int)
        self.ethnicity = np.asarray(ethnicity, dtype=int)
        self.n_adults = np.asarray(n_adults, dtype=float)
        self.turnout_rate = np.asarray(turnout_rate, dtype=float)
        if n_voters is None:
            n_voters = self.n_adults * self.turnout_rate
        self.n_voters = np.asarray(n_voters, dtype=float)

    def __len__(self) -> int:
        return len(self.state_id)

    @property
    def use_ethnicity(self) -> bool:
        return bool(self.ethnicity.max() > 0)

    @property
    def n_states(self) -> int:
        return int(self.state_id.max())

    def row(self, i: int) -> PoststratCell:
        return PoststratCell(
            int(self.state_id[i]), int(self.income_cat[i]), int(self.ethnicity[i]),
            float(self.n_adults[i]), float(self.turnout_rate[i]),
            float(self.n_voters[i]),
        )

    def cell_index(self, state_id, income_cat, ethnicity) -> np.ndarray:
        """Row position of cells in canonical order for the given keys."""
        n_eth = N_ETH if self.use_ethnicity else 1
        e = np.asarray(ethnicity, dtype=int)
        e0 = np.where(e > 0, e - 1, 0)
        return ((np.asarray(state_id) - 1) * N_INCOME
                + (np.asarray(income_cat) - 1)) * n_eth + e0


@dataclass
class Dataset:
    """Everything needed to fit one model: responses, cells, state predictors."""

    survey: Survey
    cells: CellTable
    states: StateTable

    def __post_init__(self):
        # every observed combination must exist in the cell cross
        s = self.survey
        if len(s) and (s.state_id.max() > self.states.n_states):
            bad = int(s.state_id.max())
            raise DataError(f"survey references state index {bad} "
                            f"but only {self.states.n_states} states are defined")


# ---------------------------------------------------------------------------
# loaders

def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    return [h.strip() for h in header], rows


def _col(header: list[str], name: str, path) -> int:
    try:
        return header.index(name)
    except ValueError:
        raise DataError(f"{path}: missing required column {name!r}") from None


def _parse_int(value: str, row_num: int, col: str, lo: int, hi: int, path) -> int:
    try:
        v = int(value)
    except ValueError:
        raise DataError(f"{path}: row {row_num}, column {col!r}: "
                        f"cannot parse {value!r} as integer") from None
    if not lo <= v <= hi:
        raise DataError(f"{path}: row {row_num}, column {col!r}: "
                        f"value {v} outside {lo}..{hi}")
    return v


def _state_index(value: str, states: StateTable | None, row_num: int, path) -> int:
    if states is not None:
        if value not in states.labels:
            raise DataError(f"{path}: row {row_num}: unknown state label {value!r}")
        return states.labels.index(value) + 1
    return _parse_int(value, row_num, "state", 1, 10 ** 6, path)


def load_states(path) -> StateTable:
    """Read states.csv (state,avg_income,prev_rep_share,region).

    avg_income is standardized (mean 0, sd 1 across states) at load time so
    hierarchical coefficients are on comparable scales.
    """
    header, rows = _read_rows(path)
    ci = {name: _col(header, name, path) for name in
          ("state", "avg_income", "prev_rep_share", "region")}
    labels, inc, share, region = [], [], [], []
    for r, row in enumerate(rows, start=2):
        label = row[ci["state"]].strip()
        if label in labels:
            raise DataError(f"{path}: row {r}: duplicate state {label!r}")
        labels.append(label)
        try:
            inc.append(float(row[ci["avg_income"]]))
            share.append(float(row[ci["prev_rep_share"]]))
        except ValueError:
            raise DataError(f"{path}: row {r}: non-numeric predictor value") from None
        region.append(_parse_int(row[ci["region"]], r, "region", 1, 99, path))
    inc = np.asarray(inc)
    share = np.asarray(share)
    if np.any((share <= 0) | (share >= 1)):
        bad = int(np.argmax((share <= 0) | (share >= 1)))
        raise DataError(f"{path}: prev_rep_share for state {labels[bad]!r} "
                        f"not strictly inside (0, 1)")
    sd = inc.std(ddof=1) if len(inc) > 1 else 1.0
    if sd > 0:
        inc = (inc - inc.mean()) / sd
    return StateTable(labels, inc, share, np.asarray(region))


def load_survey(path, spec, states: StateTable | None = None) -> Survey:
    """Read survey.csv (state,income[,ethnicity],vote).

    Rows with an empty vote field (no stated preference) are dropped and
    counted; a warning reports the count. Any other malformed field is an
    error naming the row and column.
    """
    header, rows = _read_rows(path)
    c_state = _col(header, "state", path)
    c_income = _col(header, "income", path)
    c_vote = _col(header, "vote", path)
    c_eth = header.index("ethnicity") if "ethnicity" in header else None
    if spec.use_ethnicity and c_eth is None:
        raise DataError(f"{path}: model uses ethnicity but column is missing")

    state, income, eth, vote = [], [], [], []
    n_dropped = 0
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r}: expected {len(header)} fields, "
                            f"got {len(row)}")
        if row[c_vote].strip() == "":
            n_dropped += 1
            continue
        state.append(_state_index(row[c_state].strip(), states, r, path))
        income.append(_parse_int(row[c_income], r, "income", 1, N_INCOME, path))
        eth.append(_parse_int(row[c_eth], r, "ethnicity", 1, N_ETH, path)
                   if (spec.use_ethnicity and c_eth is not None) else 0)
        vote.append(_parse_int(row[c_vote], r, "vote", 0, 1, path))
    if n_dropped:
        warnings.warn(f"{path}: dropped {n_dropped} row(s) with missing vote",
                      stacklevel=2)
    return Survey(state, income, eth, vote, n_dropped=n_dropped)


def load_cells(path, spec, states: StateTable | None = None) -> CellTable:
    """Read cells.csv; either n_voters directly or (n_adults, turnout_rate).

    The table must contain exactly the full cross of declared categories;
    missing or duplicate keys are errors.
    """
    header, rows = _read_rows(path)
    c_state = _col(header, "state", path)
    c_income = _col(header, "income", path)
    c_eth = header.index("ethnicity") if "ethnicity" in header else None
    if spec.use_ethnicity and c_eth is None:
        raise DataError(f"{path}: model uses ethnicity but column is missing")
    direct = "n_voters" in header
    if direct:
        c_nv = header.index("n_voters")
    else:
        c_na = _col(header, "n_adults", path)
        c_tr = _col(header, "turnout_rate", path)

    recs = {}
    for r, row in enumerate(rows, start=2):
        s = _state_index(row[c_state].strip(), states, r, path)
        i = _parse_int(row[c_income], r, "income", 1, N_INCOME, path)
        e = (_parse_int(row[c_eth], r, "ethnicity", 1, N_ETH, path)
             if (spec.use_ethnicity and c_eth is not None) else 0)
        if direct:
            nv = float(row[c_nv])
            if nv < 0:
                raise DataError(f"{path}: row {r}: negative n_voters")
            na, tr = nv, 1.0
        else:
            na = float(row[c_na])
            tr = float(row[c_tr])
            if na < 0:
                raise DataError(f"{path}: row {r}: negative n_adults")
            if not 0.0 <= tr <= 1.0:
                raise DataError(f"{path}: row {r}: turnout_rate {tr} "
                                f"outside [0, 1]")
        key = (s, i, e)
        if key in recs:
            raise DataError(f"{path}: row {r}: duplicate cell key {key}")
        recs[key] = (na, tr)

    n_states = states.n_states if states is not None else max(k[0] for k in recs)
    eth_cats = range(1, N_ETH + 1) if spec.use_ethnicity else (0,)
    missing = [(s, i, e)
               for s in range(1, n_states + 1)
               for i in range(1, N_INCOME + 1)
               for e in eth_cats
               if (s, i, e) not in recs]
    if missing:
        shown = ", ".join(f"(state={s}, income={i})" if e == 0
                          else f"(state={s}, income={i}, ethnicity={e})"
                          for s, i, e in missing[:10])
        more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
        raise DataError(f"{path}: missing cells: {shown}{more}")
    extra = len(recs) - n_states * N_INCOME * len(list(eth_cats))
    if extra:
        raise DataError(f"{path}: {extra} cell(s) outside the declared cross")

    keys = sorted(recs)  # canonical (state, income, ethnicity) order
    na = np.array([recs[k][0] for k in keys])
    tr = np.array([recs[k][1] for k in keys])
    ks = np.array(keys)
    return CellTable(ks[:, 0], ks[:, 1], ks[:, 2], na, tr)


def load_dataset(survey_path, cells_path, states_path, spec) -> Dataset:
    states = load_states(states_path)
    survey = load_survey(survey_path, spec, states)
    cells = load_cells(cells_path, spec, states)
    if cells.n_states != states.n_states:
        raise DataError("cells table does not cover every state in states.csv")
    return Dataset(survey, cells, states)


def compute_voter_weights(cells: CellTable) -> CellTable:
    """Recompute n_voters = n_adults * turnout_rate, leaving all else as is."""
    if np.any(cells.n_adults < 0):
        raise DataError("negative n_adults")
    if np.any((cells.turnout_rate < 0) | (cells.turnout_rate > 1)):
        raise DataError("turnout_rate outside [0, 1]")
    return CellTable(cells.state_id, cells.income_cat, cells.ethnicity,
                     cells.n_adults, cells.turnout_rate)


# ---------------------------------------------------------------------------
# writers (round-trip support and synthetic-data output)

def _state_label(states: StateTable | None, idx: int) -> str:
    return states.labels[idx - 1] if states is not None else str(idx)


def write_states(states: StateTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["state", "avg_income", "prev_rep_share", "region"])
        for i, label in enumerate(states.labels):
            w.writerow([label, repr(float(states.avg_income[i])),
                        repr(float(states.prev_rep_share[i])),
                        int(states.region_id[i])])


def write_survey(survey: Survey, path, states: StateTable | None = None) -> None:
    use_eth = bool(survey.ethnicity.max() > 0) if len(survey) else False
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        cols = ["state", "income"] + (["ethnicity"] if use_eth else []) + ["vote"]
        w.writerow(cols)
        for i in range(len(survey)):
            row = [_state_label(states, int(survey.state_id[i])),
                   int(survey.income_cat[i])]
            if use_eth:
                row.append(int(survey.ethnicity[i]))
            row.append(int(survey.vote[i]))
            w.writerow(row)


def write_cells(cells: CellTable, path, states: StateTable | None = None) -> None:
    use_eth = cells.use_ethnicity
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        cols = ["state", "income"] + (["ethnicity"] if use_eth else []) \
            + ["n_adults", "turnout_rate"]
        w.writerow(cols)
        for i in range(len(cells)):
            row = [_state_label(states, int(cells.state_id[i])),
                   int(cells.income_cat[i])]
            if use_eth:
                row.append(int(cells.ethnicity[i]))
            row += [repr(float(cells.n_adults[i])),
                    repr(float(cells.turnout_rate[i]))]
            w.writerow(row)
