"""领域模型测试 - 编码分组、病例定义、时间线读写"""

from datetime import date

import pytest

from claims_vgnn.services.domain import (
    CaseDefinition,
    CodeMap,
    CodeMapEntry,
    CodeSystem,
    Gender,
    MedicalCode,
    first_case_date,
    is_case_evidence,
    load_timelines,
    map_code,
    map_timelines,
    timelines_to_frames,
    validate_pattern,
)
from claims_vgnn.services.error_utils import DataError
from tests.utils.test_helpers import TimelineFactory


def _map(*entries: tuple[str, str, str]) -> CodeMap:
    return CodeMap(
        [CodeMapEntry(CodeSystem.DIAGNOSIS, pattern, group, f"label {group}") for pattern, group, _ in entries]
    )


class TestCodeMapLookup:
    """前缀模式映射"""

    @pytest.mark.unit
    def test_longest_prefix_wins(self):
        """E11.9* 比 E11* 更具体"""
        code_map = _map(("E11*", "CCS50", ""), ("E11.9*", "CCS49", ""))
        assert code_map.lookup(CodeSystem.DIAGNOSIS, "E11.9") == "CCS49"
        assert code_map.lookup(CodeSystem.DIAGNOSIS, "E11.65") == "CCS50"

    @pytest.mark.unit
    def test_star_matches_bare_prefix(self):
        code_map = _map(("401*", "CCS98", ""))
        assert code_map.lookup(CodeSystem.DIAGNOSIS, "401") == "CCS98"

    @pytest.mark.unit
    def test_exact_pattern_beats_prefix(self):
        code_map = _map(("G31*", "OTHER", ""), ("G31.83", "ADRD_DX", ""))
        assert code_map.lookup(CodeSystem.DIAGNOSIS, "G31.83") == "ADRD_DX"
        assert code_map.lookup(CodeSystem.DIAGNOSIS, "G31.831") == "OTHER"

    @pytest.mark.unit
    def test_systems_are_separate(self):
        code_map = _map(("401*", "CCS98", ""))
        assert code_map.lookup(CodeSystem.PROCEDURE, "401") is None

    @pytest.mark.unit
    def test_unmapped_code_returns_none(self):
        code_map = _map(("401*", "CCS98", ""))
        assert map_code(MedicalCode(CodeSystem.DIAGNOSIS, "999"), code_map) is None

    @pytest.mark.unit
    def test_duplicate_pattern_rejected(self):
        with pytest.raises(DataError) as exc:
            _map(("401*", "CCS98", ""), ("401*", "CCS99", ""))
        assert exc.value.code == "invalid_code_map"

    @pytest.mark.unit
    def test_conflicting_labels_rejected(self):
        with pytest.raises(DataError):
            CodeMap(
                [
                    CodeMapEntry(CodeSystem.DIAGNOSIS, "401*", "CCS98", "Hypertension"),
                    CodeMapEntry(CodeSystem.DIAGNOSIS, "I10*", "CCS98", "Something else"),
                ]
            )

    @pytest.mark.unit
    @pytest.mark.parametrize("pattern", ["", "4*01", "**"])
    def test_invalid_patterns(self, pattern):
        with pytest.raises(DataError):
            validate_pattern(pattern)

    @pytest.mark.unit
    def test_bundled_sample_map(self, sample_code_map):
        """内置示例表把 ADRD 诊断映射到 ADRD_DX"""
        assert sample_code_map.lookup(CodeSystem.DIAGNOSIS, "G30.9") == "ADRD_DX"
        assert sample_code_map.groups == sorted(sample_code_map.groups)


class TestCaseDefinition:
    """病例证据判定"""

    @pytest.mark.unit
    def test_bundled_definition_dedupes_names(self, case_definition):
        assert "memantine" in case_definition.medication_names
        assert len(case_definition.medication_names) == len(set(case_definition.medication_names))

    @pytest.mark.unit
    def test_diagnosis_evidence(self, case_definition):
        timeline = TimelineFactory.timeline(
            visits=[
                (date(2010, 1, 5), [TimelineFactory.code("401.1")]),
                (date(2012, 3, 1), [TimelineFactory.code("331.0")]),
                (date(2013, 3, 1), [TimelineFactory.code("G30.9")]),
            ]
        )
        assert first_case_date(timeline, case_definition) == date(2012, 3, 1)

    @pytest.mark.unit
    def test_medication_name_is_case_insensitive_substring(self, case_definition):
        drug = TimelineFactory.code("00000000001", CodeSystem.MEDICATION, drug_name="ARICEPT 5 MG")
        timeline = TimelineFactory.timeline(visits=[(date(2011, 2, 2), [drug])])
        assert is_case_evidence(timeline.records[0], case_definition)

    @pytest.mark.unit
    def test_procedure_never_counts(self, case_definition):
        timeline = TimelineFactory.timeline(
            visits=[(date(2011, 2, 2), [TimelineFactory.code("331.0", CodeSystem.PROCEDURE)])]
        )
        assert first_case_date(timeline, case_definition) is None

    @pytest.mark.unit
    def test_empty_definition_rejected(self):
        with pytest.raises(DataError):
            CaseDefinition(diagnosis_patterns=(), medication_names=("x",))


class TestTimelines:
    """时间线与 CSV 读写"""

    @pytest.mark.unit
    def test_unsorted_records_rejected(self):
        from claims_vgnn.services.domain import ClaimRecord, PatientTimeline

        records = (
            ClaimRecord(date(2012, 1, 1), (TimelineFactory.code("1"),)),
            ClaimRecord(date(2011, 1, 1), (TimelineFactory.code("2"),)),
        )
        with pytest.raises(DataError):
            PatientTimeline("P1", 1940, Gender.F, records)

    @pytest.mark.unit
    def test_map_timelines_counts_unmapped(self, sample_code_map, logger):
        timeline = TimelineFactory.timeline(
            visits=[(date(2010, 1, 5), [TimelineFactory.code("401.9"), TimelineFactory.code("ZZZ")])]
        )
        mapped, report = map_timelines([timeline], sample_code_map, logger)
        groups = [code.group for code in mapped[0].records[0].codes]
        assert groups == ["CCS98", None]
        assert report.codes == 2
        assert report.mapped == 1
        assert report.unmapped_by_system == {"Diagnosis": 1}
        assert report.top_unmapped == [("Diagnosis:ZZZ", 1)]

    @pytest.mark.unit
    def test_csv_round_trip_preserves_groups(self, tmp_path, logger):
        """带 group 列写出后再读回，分组与日期保持不变"""
        timeline = TimelineFactory.timeline(
            patient_id="P7",
            gender=Gender.M,
            visits=[
                (date(2010, 1, 5), [TimelineFactory.code("401.9", group="CCS98")]),
                (date(2010, 2, 5), [TimelineFactory.code("ZZZ")]),
            ],
        )
        patients, claims = timelines_to_frames([timeline], include_group=True)
        patients.to_csv(tmp_path / "patients.csv", index=False)
        claims.to_csv(tmp_path / "claims.csv", index=False)

        loaded = load_timelines(tmp_path / "patients.csv", tmp_path / "claims.csv", logger)
        assert loaded[0].gender is Gender.M
        assert [r.date for r in loaded[0].records] == [date(2010, 1, 5), date(2010, 2, 5)]
        assert loaded[0].records[0].codes[0].group == "CCS98"
        assert loaded[0].records[1].codes[0].group is None

    @pytest.mark.unit
    def test_missing_column_is_data_error(self, tmp_path):
        (tmp_path / "patients.csv").write_text("patient_id,gender\nP1,F\n", encoding="utf-8")
        (tmp_path / "claims.csv").write_text(
            "patient_id,date,system,raw_code,drug_name\n", encoding="utf-8"
        )
        with pytest.raises(DataError) as exc:
            load_timelines(tmp_path / "patients.csv", tmp_path / "claims.csv")
        assert exc.value.code == "invalid_input"

    @pytest.mark.unit
    def test_orphan_claims_are_ignored(self, tmp_path, logger):
        (tmp_path / "patients.csv").write_text("patient_id,birth_year,gender\nP1,1940,F\n", encoding="utf-8")
        (tmp_path / "claims.csv").write_text(
            "patient_id,date,system,raw_code,drug_name\n"
            "P1,2010-01-01,Diagnosis,401.9,\n"
            "P9,2010-01-01,Diagnosis,401.9,\n",
            encoding="utf-8",
        )
        timelines = load_timelines(tmp_path / "patients.csv", tmp_path / "claims.csv", logger)
        assert [t.patient_id for t in timelines] == ["P1"]
        assert len(timelines[0].records) == 1

    @pytest.mark.unit
    @pytest.mark.parametrize(
        "value", ["2015-W01-1", "20150101", "2015-01", "2015-01-01T10:00", "2015-1-1", "2015-02-30"]
    )
    def test_non_calendar_dates_rejected(self, tmp_path, value):
        """只接受 YYYY-MM-DD 形式的合法日历日期"""
        (tmp_path / "patients.csv").write_text("patient_id,birth_year,gender\nP1,1940,F\n", encoding="utf-8")
        (tmp_path / "claims.csv").write_text(
            f"patient_id,date,system,raw_code,drug_name\nP1,{value},Diagnosis,401.9,\n",
            encoding="utf-8",
        )
        with pytest.raises(DataError) as exc:
            load_timelines(tmp_path / "patients.csv", tmp_path / "claims.csv")
        assert exc.value.code == "invalid_date"
