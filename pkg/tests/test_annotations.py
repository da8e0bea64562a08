import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from indrnn_eeg.annotations import (EXCLUDED_FILES, SeizureAnnotation, SummaryError, case_of, discover_catalogs,
                                    format_chbmit_summary, parse_chbmit_summary)
from indrnn_eeg.edf import make_header, write_edf

FIXTURE = """Data Sampling Rate: 256 Hz
*************************

Channels in EDF Files:
**********************
Channel 1: FP1-F7
Channel 2: F7-T7

File Name: chb01_03.edf
File Start Time: 13:43:04
File End Time: 14:43:04
Number of Seizures in File: 1
Seizure Start Time: 2996 seconds
Seizure End Time: 3036 seconds

File Name: chb01_04.edf
File Start Time: 14:43:12
File End Time: 15:43:12
Number of Seizures in File: 0

File Name: chb06_01.edf
File Start Time: 04:23:01
File End Time: 08:23:01
Number of Seizures in File: 2
Seizure 1 Start Time: 1724 seconds
Seizure 1 End Time: 1738 seconds
Seizure 2 Start Time: 7461 seconds
Seizure 2 End Time: 7476 seconds
"""


def test_fixture_entries():
    anns = parse_chbmit_summary(FIXTURE)
    assert [a.file_name for a in anns] == ["chb01_03.edf", "chb01_04.edf", "chb06_01.edf"]
    assert anns[0].intervals == [(2996, 3036)]
    assert anns[1].intervals == []
    assert anns[2].intervals == [(1724, 1738), (7461, 7476)]
    assert anns[2].case_id == "chb06" and case_of("chb12_27.edf") == "chb12"


def test_count_mismatch_reports_line():
    text = FIXTURE.replace("Number of Seizures in File: 1", "Number of Seizures in File: 2")
    with pytest.raises(SummaryError, match=r"line 9: chb01_03.edf declares 2 seizures"):
        parse_chbmit_summary(text)


def test_end_before_start_and_garbage():
    with pytest.raises(SummaryError, match="line 4: seizure end 10.0 <= start 20.0"):
        parse_chbmit_summary("File Name: a_01.edf\nNumber of Seizures in File: 1\n"
                             "Seizure Start Time: 20 seconds\nSeizure End Time: 10 seconds\n")
    with pytest.raises(SummaryError, match="line 2: cannot parse"):
        parse_chbmit_summary("File Name: a_01.edf\nSeizure began around noon\n")
    with pytest.raises(SummaryError, match="outside a file entry"):
        parse_chbmit_summary("Seizure Start Time: 5 seconds\n")
    with pytest.raises(SummaryError, match="overlap"):
        parse_chbmit_summary("File Name: a_01.edf\nNumber of Seizures in File: 2\n"
                             "Seizure 1 Start Time: 1\nSeizure 1 End Time: 10\n"
                             "Seizure 2 Start Time: 5\nSeizure 2 End Time: 20\n")


@st.composite
def annotation_lists(draw):
    anns = []
    for f in range(draw(st.integers(1, 4))):
        cuts = sorted(set(draw(st.lists(st.integers(0, 4000), max_size=8))))
        cuts = cuts[:len(cuts) // 2 * 2]
        anns.append(SeizureAnnotation(f"chb03_{f + 1:02d}.edf",
                                      [(float(a), float(b)) for a, b in zip(cuts[::2], cuts[1::2])]))
    return anns


@given(annotation_lists(), st.booleans())
@settings(max_examples=100, deadline=None)
def test_format_parse_round_trip(anns, numbered):
    parsed = parse_chbmit_summary(format_chbmit_summary(anns, channels=["FP1-F7"], numbered=numbered))
    assert [(a.file_name, a.intervals) for a in parsed] == [(a.file_name, a.intervals) for a in anns]
    for a in parsed:
        assert all(0 <= s < e for s, e in a.intervals)
        assert all(e1 <= s2 for (_, e1), (s2, _) in zip(a.intervals, a.intervals[1:]))


def test_validate_against_duration():
    with pytest.raises(SummaryError, match="exceeds duration"):
        SeizureAnnotation("x.edf", [(10, 700)]).validate(600)
    SeizureAnnotation("x.edf", [(10, 600)]).validate(600)


def _edf(path):
    header = make_header(["A"], 4, 2)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_edf(header, [np.arange(8, dtype=np.int16)]))


def test_discover_catalogs_and_exclusions(tmp_path):
    for name in ("chb12_26.edf", "chb12_27.edf", "chb12_28.edf", "chb12_29.edf", "chb12_99.edf"):
        _edf(tmp_path / "chb12" / name)
    _edf(tmp_path / "chb02" / "chb02_01.edf")
    anns = [SeizureAnnotation(n, []) for n in ("chb12_26.edf", "chb12_27.edf", "chb12_28.edf", "chb12_29.edf",
                                               "chb12_40.edf")]
    (tmp_path / "chb12" / "chb12-summary.txt").write_text(format_chbmit_summary(anns))
    (tmp_path / "chb02" / "chb02-summary.txt").write_text(
        format_chbmit_summary([SeizureAnnotation("chb02_01.edf", [(1.0, 2.0)])]))
    catalogs, problems = discover_catalogs(tmp_path)
    assert [c.case_id for c in catalogs] == ["chb02", "chb12"]
    assert [p.name for p, _ in catalogs[1].files()] == ["chb12_26.edf"]
    assert {"chb12_27.edf", "chb12_28.edf", "chb12_29.edf"} == EXCLUDED_FILES
    assert any("chb12_40.edf not found" in p for p in problems)
    assert any("chb12_99.edf: no summary entry" in p for p in problems)
    assert catalogs[0].files()[0][1].intervals == [(1.0, 2.0)]


def test_separate_summary_dir(tmp_path):
    _edf(tmp_path / "data" / "chb05_01.edf")
    (tmp_path / "notes").mkdir()
    (tmp_path / "notes" / "chb05-summary.txt").write_text(format_chbmit_summary([SeizureAnnotation("chb05_01.edf")]))
    catalogs, problems = discover_catalogs(tmp_path / "data", tmp_path / "notes")
    assert len(catalogs) == 1 and not problems
