"""Bundled trial datasets and the delimited dataset-file format.

Files carry a ``participant_id,dose,dlt,pk`` header; the pk column may be
omitted for dose-only analyses. The two bundled datasets are stored as
verbatim text so the ``datasets`` subcommand can emit them bit-exactly.
"""

from __future__ import annotations

from .model import DoseGrid, SubjectRecord, TrialDataset

HEADER_PK = "participant_id,dose,dlt,pk"
HEADER_NOPK = "participant_id,dose,dlt"

APP1_GRID = DoseGrid(doses=(0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 50.0), ref_dose=50.0)
APP2_GRID = DoseGrid(doses=(0.13, 0.33, 0.83, 1.40, 1.87, 2.10, 2.47, 2.80, 3.2),
                     ref_dose=3.2)

# First-in-human escalation cohort, 20 subjects, Cmax rising with dose.
APP1_CSV = """\
participant_id,dose,dlt,pk
1,0.1,0,2.82
2,0.1,0,1.68
3,0.3,0,2.87
4,0.3,0,8.14
5,0.3,0,4.39
6,1.0,0,13.30
7,1.0,0,12.20
8,3.0,0,79.70
9,3.0,0,47.20
10,3.0,0,41.00
11,10.0,0,297.00
12,10.0,0,164.00
13,30.0,0,401.00
14,30.0,0,766.00
15,30.0,0,592.00
16,30.0,1,769.00
17,30.0,0,577.00
18,50.0,0,834.00
19,50.0,0,1160.00
20,50.0,1,1160.00
"""

# Escalation part of a 39-subject study; Cmax plateaus across the top doses.
APP2_CSV = """\
participant_id,dose,dlt,pk
1,0.13,0,5170
2,0.13,0,4220
3,0.33,0,8500
4,0.33,0,14500
5,0.83,0,29600
6,1.40,0,71600
7,1.40,0,60200
8,1.87,0,78400
9,2.47,0,102000
10,2.47,0,115000
11,0.83,1,20100
12,1.87,0,50700
13,2.47,0,110000
14,1.40,1,49400
15,1.87,0,31200
16,2.47,0,40600
17,1.40,0,87900
18,1.87,0,81400
19,2.47,0,101000
20,2.47,0,149000
21,3.20,0,120000
22,2.80,0,57800
23,2.80,0,118000
24,2.80,1,73900
25,2.80,0,113000
26,2.80,0,96000
27,2.80,0,85200
28,3.20,0,104000
29,3.20,0,89600
30,2.10,0,109000
31,2.80,0,92100
32,2.10,0,84100
33,2.10,0,102000
34,2.80,0,179000
35,2.80,1,98200
36,2.80,0,129000
37,3.20,1,93300
38,3.20,1,123000
39,3.20,0,90300
"""

_BUNDLED = {"app1": (APP1_CSV, APP1_GRID), "app2": (APP2_CSV, APP2_GRID)}


class DatasetError(ValueError):
    """Malformed dataset file; the message names the offending line."""


def bundled_names() -> tuple[str, ...]:
    return tuple(sorted(_BUNDLED))


def bundled_text(name: str) -> str:
    if name not in _BUNDLED:
        raise DatasetError(f"unknown dataset {name!r}; available: {', '.join(bundled_names())}")
    return _BUNDLED[name][0]


def bundled_dataset(name: str) -> TrialDataset:
    text, grid = _BUNDLED[name][0], _BUNDLED[name][1]
    return parse_dataset_text(text, grid)


def parse_dataset_text(text: str, grid: DoseGrid, require_pk: bool = False) -> TrialDataset:
    """Parse delimited trial data against ``grid``.

    Raises DatasetError with a 1-based line number on the first bad row.
    """
    lines = text.splitlines()
    if not lines:
        raise DatasetError("line 1: empty file, expected header "
                           f"{HEADER_PK!r} or {HEADER_NOPK!r}")
    header = lines[0].strip()
    if header == HEADER_PK:
        has_pk = True
    elif header == HEADER_NOPK:
        has_pk = False
    else:
        raise DatasetError(f"line 1: bad header {header!r}, expected "
                           f"{HEADER_PK!r} or {HEADER_NOPK!r}")
    if require_pk and not has_pk:
        raise DatasetError("line 1: a pk column is required for the joint model")

    records = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != (4 if has_pk else 3):
            raise DatasetError(f"line {lineno}: expected {4 if has_pk else 3} fields, "
                               f"got {len(parts)}")
        _, dose_s, dlt_s, *pk_part = parts
        try:
            dose = float(dose_s)
        except ValueError:
            raise DatasetError(f"line {lineno}: bad dose {dose_s!r}") from None
        if dose <= 0:
            raise DatasetError(f"line {lineno}: dose must be positive, got {dose_s}")
        if not grid.contains(dose):
            raise DatasetError(f"line {lineno}: dose {dose_s} is not on the grid "
                               f"{list(grid.doses)}")
        if dlt_s not in ("0", "1"):
            raise DatasetError(f"line {lineno}: dlt must be 0 or 1, got {dlt_s!r}")
        pk = None
        if has_pk:
            try:
                pk = float(pk_part[0])
            except ValueError:
                raise DatasetError(f"line {lineno}: bad pk {pk_part[0]!r}") from None
            if pk <= 0:
                raise DatasetError(f"line {lineno}: pk must be positive, got {pk_part[0]}")
        records.append(SubjectRecord(dose=dose, dlt=int(dlt_s), pk=pk))
    return TrialDataset(records=tuple(records), grid=grid)
