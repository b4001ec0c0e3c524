"""队列构建测试 - 窗口、排除原因与确定性"""

from collections import Counter
from datetime import date

import numpy as np
import pytest
from dateutil.relativedelta import relativedelta

from claims_vgnn.services.cohort import (
    Cohort,
    CohortSample,
    ScenarioConfig,
    anchor_date,
    build_cohort,
    build_sample,
    cohort_to_frames,
    draw_index_date,
    load_samples,
    patient_rng,
)
from claims_vgnn.services.datagen import build_code_map
from claims_vgnn.services.domain import map_timelines
from tests.utils.test_helpers import TimelineFactory


def brute_force_sample(timeline, definition, cfg, index_date):
    """逐条重新筛选：给定索引日期时样本应有的编码计数与合格月份"""
    anchor, label = anchor_date(timeline, definition)
    window_start = index_date - relativedelta(years=cfg.feature_years)
    counts = Counter()
    months = Counter()
    for record in timeline.records:
        if window_start <= record.date <= index_date:
            for code in record.codes:
                if code.group is not None:
                    counts[code.group] += 1
                    months[(record.date.year, record.date.month)] += 1
    qualifying = sum(1 for v in months.values() if v >= cfg.min_codes_per_month)
    return label, dict(counts), qualifying


class TestIndexDate:
    """索引日期抽样"""

    @pytest.mark.unit
    def test_index_strictly_before_anchor(self):
        rng = np.random.default_rng(0)
        anchor = date(2016, 3, 1)
        for _ in range(200):
            index = draw_index_date(anchor, 2, rng)
            assert anchor - relativedelta(years=2) <= index < anchor

    @pytest.mark.unit
    def test_window_covers_every_day(self):
        """窗口为 3 天时三个候选日期都会被抽到"""
        rng = np.random.default_rng(1)
        anchor = date(2016, 3, 10)
        drawn = {draw_index_date(anchor, 1, rng, window_days=3) for _ in range(200)}
        assert drawn == {date(2016, 3, 7), date(2016, 3, 8), date(2016, 3, 9)}

    @pytest.mark.unit
    def test_patient_rng_is_order_independent(self):
        a = patient_rng(3, "P000001").integers(0, 1 << 30, size=4)
        b = patient_rng(3, "P000001").integers(0, 1 << 30, size=4)
        c = patient_rng(3, "P000002").integers(0, 1 << 30, size=4)
        assert a.tolist() == b.tolist()
        assert a.tolist() != c.tolist()


class TestBuildSample:
    """单个患者的纳入与排除"""

    def _case(self, birth_year=1940, start=date(2008, 1, 1), months=96):
        visits = TimelineFactory.monthly_visits(start, months, codes_per_visit=3)
        visits.append(TimelineFactory.evidence(date(2015, 6, 20)))
        return TimelineFactory.timeline(birth_year=birth_year, visits=visits)

    @pytest.mark.unit
    def test_case_sample_counts_feature_window_only(self, case_definition):
        timeline = self._case()
        cfg = ScenarioConfig(scenario_id=2)
        rng = np.random.default_rng(4)
        sample = build_sample(timeline, case_definition, cfg, rng)
        assert isinstance(sample, CohortSample)
        assert sample.label == 1
        assert date(2013, 6, 20) <= sample.index_date < date(2015, 6, 20)

        label, counts, qualifying = brute_force_sample(timeline, case_definition, cfg, sample.index_date)
        assert sample.codes == counts
        assert sample.qualifying_month_count == qualifying
        # 证据编码在索引日期之后，不会泄漏进特征
        assert "ADRD_DX" not in sample.codes

    @pytest.mark.unit
    def test_control_anchor_is_last_record(self, case_definition):
        timeline = TimelineFactory.timeline(
            visits=TimelineFactory.monthly_visits(date(2008, 1, 1), 100)
        )
        anchor, label = anchor_date(timeline, case_definition)
        assert label == 0
        assert anchor == timeline.last_date

    @pytest.mark.unit
    def test_no_records(self, case_definition):
        timeline = TimelineFactory.timeline(visits=[])
        outcome = build_sample(timeline, case_definition, ScenarioConfig(), np.random.default_rng(0))
        assert outcome.reason == "no_records"

    @pytest.mark.unit
    def test_under_age(self, case_definition):
        timeline = self._case(birth_year=1960)
        outcome = build_sample(timeline, case_definition, ScenarioConfig(), np.random.default_rng(0))
        assert outcome.reason == "under_age"

    @pytest.mark.unit
    def test_short_history(self, case_definition):
        visits = TimelineFactory.monthly_visits(date(2014, 1, 1), 12)
        visits.append(TimelineFactory.evidence(date(2015, 2, 1)))
        timeline = TimelineFactory.timeline(visits=visits)
        outcome = build_sample(timeline, case_definition, ScenarioConfig(), np.random.default_rng(0))
        assert outcome.reason == "short_history"

    @pytest.mark.unit
    def test_insufficient_months(self, case_definition):
        """每月只有 2 个编码，低于阈值 3"""
        visits = TimelineFactory.monthly_visits(date(2008, 1, 1), 96, codes_per_visit=2)
        visits.append(TimelineFactory.evidence(date(2015, 6, 20)))
        timeline = TimelineFactory.timeline(visits=visits)
        outcome = build_sample(timeline, case_definition, ScenarioConfig(), np.random.default_rng(0))
        assert outcome.reason == "insufficient_months"

    @pytest.mark.unit
    def test_require_all_months(self, case_definition):
        """特征窗口内有一个月只有 1 个编码时，严格模式排除该患者"""
        visits = [
            visit
            for visit in TimelineFactory.monthly_visits(date(2008, 1, 1), 96)
            if visit[0] != date(2014, 6, 15)
        ]
        visits.append((date(2014, 6, 15), [TimelineFactory.code("Y1", group="G2")]))
        visits.append(TimelineFactory.evidence(date(2015, 6, 20)))
        timeline = TimelineFactory.timeline(visits=visits)

        lenient = build_sample(timeline, case_definition, ScenarioConfig(), np.random.default_rng(0))
        assert isinstance(lenient, CohortSample)
        strict = build_sample(
            timeline, case_definition, ScenarioConfig(require_all_months=True), np.random.default_rng(0)
        )
        assert strict.reason == "insufficient_months"


class TestBuildCohort:
    """合成数据上的整体队列"""

    @pytest.fixture
    def mapped(self, generated, small_generator_config, case_definition):
        timelines, truth = generated
        code_map = build_code_map(small_generator_config, case_definition)
        mapped, _ = map_timelines(timelines, code_map)
        return mapped, truth

    @pytest.mark.unit
    def test_counts_add_up(self, mapped, case_definition):
        timelines, _ = mapped
        cohort = build_cohort(timelines, case_definition, ScenarioConfig(seed=3))
        assert cohort.input_patients == len(timelines)
        assert cohort.n_cases > 0
        assert cohort.n_controls > 0
        assert all(count > 0 for count in cohort.exclusion_report.values())

    @pytest.mark.unit
    def test_labels_follow_ground_truth(self, mapped, case_definition):
        timelines, truth = mapped
        cohort = build_cohort(timelines, case_definition, ScenarioConfig(seed=3))
        for sample in cohort.samples:
            assert sample.label == (truth.labels[sample.patient_id] == "case")

    @pytest.mark.unit
    def test_brute_force_refilter(self, mapped, case_definition):
        """用样本的索引日期重新筛选，编码计数完全一致"""
        timelines, _ = mapped
        by_id = {t.patient_id: t for t in timelines}
        cfg = ScenarioConfig(scenario_id=3, seed=8)
        cohort = build_cohort(timelines, case_definition, cfg)
        for sample in cohort.samples:
            label, counts, qualifying = brute_force_sample(
                by_id[sample.patient_id], case_definition, cfg, sample.index_date
            )
            assert sample.label == label
            assert sample.codes == counts
            assert sample.qualifying_month_count == qualifying
            assert sample.age_at_index >= cfg.min_age_at_index

    @pytest.mark.unit
    def test_deterministic_and_thread_independent(self, mapped, case_definition):
        timelines, _ = mapped
        cfg = ScenarioConfig(scenario_id=2, seed=9)
        serial = build_cohort(timelines, case_definition, cfg)
        parallel = build_cohort(timelines, case_definition, cfg, threads=4)
        assert serial.samples == parallel.samples
        assert serial.exclusion_report == parallel.exclusion_report

    @pytest.mark.unit
    def test_index_dates_depend_on_seed(self, mapped, case_definition):
        timelines, _ = mapped
        a = build_cohort(timelines, case_definition, ScenarioConfig(seed=1))
        b = build_cohort(timelines, case_definition, ScenarioConfig(seed=2))
        assert [s.index_date for s in a.samples] != [s.index_date for s in b.samples]

    @pytest.mark.unit
    def test_frames_round_trip(self, tmp_path, mapped, case_definition):
        timelines, _ = mapped
        cohort = build_cohort(timelines, case_definition, ScenarioConfig(seed=3))
        frames = cohort_to_frames(cohort)
        frames["cohort"].to_csv(tmp_path / "cohort.csv", index=False)
        frames["cohort_codes"].to_csv(tmp_path / "cohort_codes.csv", index=False)
        counts = frames["cohort_counts"].iloc[0]
        assert counts["cases"] == cohort.n_cases
        assert counts["input_patients"] == len(timelines)

        loaded = load_samples(tmp_path / "cohort.csv", tmp_path / "cohort_codes.csv")
        assert [s.patient_id for s in loaded] == [s.patient_id for s in cohort.samples]
        for before, after in zip(cohort.samples, loaded):
            assert after.index_date == before.index_date
            assert after.grouped_codes == before.grouped_codes
            assert after.label == before.label

    @pytest.mark.unit
    def test_empty_cohort_report(self, case_definition):
        cohort = Cohort(scenario=ScenarioConfig(), samples=[], exclusion_report={"no_records": 2})
        assert cohort.input_patients == 2
        assert cohort.n_cases == 0
