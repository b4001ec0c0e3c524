"""队列构建 - 四窗口划分、三种场景、纳入标准与索引日期抽样

时间轴（从左到右）：
    历史窗口 | 特征窗口 [index - feature_years, index] | 预测窗口 (index, index + prediction_years]
索引日期在选择窗口 [anchor - selection_years, anchor - 1 天] 内按天均匀抽样。
锚点：病例为首次病例证据日期，对照为最后一条记录日期。
"""

import hashlib
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
from dateutil.relativedelta import relativedelta

from .domain import CaseDefinition, Gender, PatientTimeline, first_case_date, read_table
from .error_utils import DataError

EXCLUSION_REASONS = ("no_records", "under_age", "short_history", "insufficient_months")

COHORT_COLUMNS = ["patient_id", "index_date", "label", "age_at_index", "gender", "qualifying_months"]
COHORT_CODES_COLUMNS = ["patient_id", "group", "count"]
EXCLUSIONS_COLUMNS = ["reason", "count"]
COHORT_COUNTS_COLUMNS = ["scenario", "input_patients", *EXCLUSION_REASONS, "cases", "controls"]


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: int = 1
    feature_years: int = 3
    min_age_at_index: int = 65
    min_record_span_years: int = 3
    min_qualifying_months: int = 2
    min_codes_per_month: int = 3
    require_all_months: bool = False
    seed: int = 0

    @property
    def selection_years(self) -> int:
        return self.scenario_id

    @property
    def prediction_years(self) -> int:
        return self.scenario_id

    def validate(self) -> list[str]:
        problems = []
        if self.scenario_id not in (1, 2, 3):
            problems.append(f"场景编号必须为 1、2 或 3，当前为 {self.scenario_id}")
        for name in (
            "feature_years",
            "min_age_at_index",
            "min_record_span_years",
            "min_qualifying_months",
            "min_codes_per_month",
        ):
            if getattr(self, name) < 1:
                problems.append(f"cohort.{name} 必须为正整数")
        return problems


@dataclass(frozen=True)
class CohortSample:
    patient_id: str
    index_date: date
    label: int
    age_at_index: int
    gender: Gender
    grouped_codes: tuple[tuple[str, int], ...]
    qualifying_month_count: int
    history_record_count: int = 0

    @property
    def codes(self) -> dict[str, int]:
        return dict(self.grouped_codes)


@dataclass(frozen=True)
class Exclusion:
    patient_id: str
    reason: str


@dataclass
class Cohort:
    scenario: ScenarioConfig
    samples: list[CohortSample]
    exclusion_report: dict[str, int] = field(default_factory=dict)

    @property
    def n_cases(self) -> int:
        return sum(sample.label for sample in self.samples)

    @property
    def n_controls(self) -> int:
        return len(self.samples) - self.n_cases

    @property
    def input_patients(self) -> int:
        return len(self.samples) + sum(self.exclusion_report.values())


def patient_rng(seed: int, patient_id: str) -> np.random.Generator:
    """按 (seed, patient_id) 派生的独立随机流，与遍历顺序无关"""
    digest = hashlib.sha256(patient_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([seed, key]))


def anchor_date(timeline: PatientTimeline, definition: CaseDefinition) -> tuple[date, int]:
    """病例: (首次证据日期, 1)；对照: (最后一条记录日期, 0)"""
    if not timeline.records:
        raise DataError("no_records", f"患者 {timeline.patient_id} 没有任何记录")
    onset = first_case_date(timeline, definition)
    if onset is not None:
        return onset, 1
    return timeline.records[-1].date, 0


def draw_index_date(
    anchor: date,
    selection_years: int,
    rng: np.random.Generator,
    *,
    window_days: int | None = None,
) -> date:
    """在 [anchor - selection_years, anchor - 1 天] 内按天均匀抽取索引日期

    Args:
        anchor: 锚点日期
        selection_years: 选择窗口长度（年）
        rng: 随机数生成器
        window_days: 覆盖窗口天数（测试用）

    Returns:
        索引日期
    """
    if window_days is None:
        start = anchor - relativedelta(years=selection_years)
        window_days = (anchor - start).days
    if window_days < 1:
        raise DataError("invalid_window", "选择窗口至少需要 1 天")
    offset = int(rng.integers(1, window_days + 1))
    return anchor - timedelta(days=offset)


def build_sample(
    timeline: PatientTimeline,
    definition: CaseDefinition,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
) -> CohortSample | Exclusion:
    try:
        anchor, label = anchor_date(timeline, definition)
    except DataError:
        return Exclusion(timeline.patient_id, "no_records")

    index_date = draw_index_date(anchor, cfg.selection_years, rng)

    age_at_index = index_date.year - timeline.birth_year
    if age_at_index < cfg.min_age_at_index:
        return Exclusion(timeline.patient_id, "under_age")

    first, last = timeline.records[0].date, timeline.records[-1].date
    if first + relativedelta(years=cfg.min_record_span_years) > last:
        return Exclusion(timeline.patient_id, "short_history")

    window_start = index_date - relativedelta(years=cfg.feature_years)
    month_counts: Counter[tuple[int, int]] = Counter()
    record_months: set[tuple[int, int]] = set()
    grouped: Counter[str] = Counter()
    history = 0
    for record in timeline.records:
        if record.date < window_start:
            history += 1
            continue
        if record.date > index_date:
            break
        month = (record.date.year, record.date.month)
        record_months.add(month)
        for code in record.mapped_codes:
            grouped[code.group] += 1  # type: ignore[index]
            month_counts[month] += 1

    qualifying = sum(1 for count in month_counts.values() if count >= cfg.min_codes_per_month)
    if qualifying < cfg.min_qualifying_months:
        return Exclusion(timeline.patient_id, "insufficient_months")
    if cfg.require_all_months and qualifying < len(record_months):
        return Exclusion(timeline.patient_id, "insufficient_months")

    return CohortSample(
        patient_id=timeline.patient_id,
        index_date=index_date,
        label=label,
        age_at_index=age_at_index,
        gender=timeline.gender,
        grouped_codes=tuple(sorted(grouped.items())),
        qualifying_month_count=qualifying,
        history_record_count=history,
    )


def build_cohort(
    timelines: list[PatientTimeline],
    definition: CaseDefinition,
    cfg: ScenarioConfig,
    threads: int = 1,
    logger: logging.Logger | None = None,
) -> Cohort:
    """对全部患者应用 build_sample，并以确定的顺序汇总排除统计"""
    logger = logger or logging.getLogger(__name__)

    def one(timeline: PatientTimeline) -> CohortSample | Exclusion:
        return build_sample(timeline, definition, cfg, patient_rng(cfg.seed, timeline.patient_id))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, timelines))
    else:
        outcomes = [one(timeline) for timeline in timelines]

    samples = [o for o in outcomes if isinstance(o, CohortSample)]
    reasons = Counter(o.reason for o in outcomes if isinstance(o, Exclusion))
    report = {reason: reasons[reason] for reason in EXCLUSION_REASONS if reasons[reason]}

    ids = [sample.patient_id for sample in samples]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate_patient", "队列中存在重复的患者 id")

    cohort = Cohort(scenario=cfg, samples=samples, exclusion_report=report)
    logger.info(
        f"场景 {cfg.scenario_id} 队列: 输入 {len(timelines)} 名患者, "
        f"病例 {cohort.n_cases}, 对照 {cohort.n_controls}, 排除 {report}"
    )
    return cohort


# ========== CSV 读写 ==========


def cohort_to_frames(cohort: Cohort) -> dict[str, pd.DataFrame]:
    """cohort.csv / cohort_codes.csv / exclusions.csv / cohort_counts.csv"""
    samples = cohort.samples
    cohort_frame = pd.DataFrame(
        [
            [
                s.patient_id,
                s.index_date.isoformat(),
                s.label,
                s.age_at_index,
                s.gender.value,
                s.qualifying_month_count,
            ]
            for s in samples
        ],
        columns=COHORT_COLUMNS,
    )
    codes_frame = pd.DataFrame(
        [[s.patient_id, group, count] for s in samples for group, count in s.grouped_codes],
        columns=COHORT_CODES_COLUMNS,
    )
    exclusions = pd.DataFrame(
        [[reason, count] for reason, count in cohort.exclusion_report.items()],
        columns=EXCLUSIONS_COLUMNS,
    )
    counts = pd.DataFrame(
        [
            [
                cohort.scenario.scenario_id,
                cohort.input_patients,
                *[cohort.exclusion_report.get(reason, 0) for reason in EXCLUSION_REASONS],
                cohort.n_cases,
                cohort.n_controls,
            ]
        ],
        columns=COHORT_COUNTS_COLUMNS,
    )
    return {
        "cohort": cohort_frame,
        "cohort_codes": codes_frame,
        "exclusions": exclusions,
        "cohort_counts": counts,
    }


def load_samples(cohort_path: Path | str, codes_path: Path | str) -> list[CohortSample]:
    frame = read_table(cohort_path, COHORT_COLUMNS)
    codes = read_table(codes_path, COHORT_CODES_COLUMNS)

    by_patient: dict[str, list[tuple[str, int]]] = {}
    for row in codes.itertuples(index=False):
        by_patient.setdefault(row.patient_id, []).append((row.group, int(row.count)))

    samples = []
    for row in frame.itertuples(index=False):
        samples.append(
            CohortSample(
                patient_id=row.patient_id,
                index_date=date.fromisoformat(row.index_date),
                label=int(row.label),
                age_at_index=int(row.age_at_index),
                gender=Gender(row.gender),
                grouped_codes=tuple(sorted(by_patient.get(row.patient_id, []))),
                qualifying_month_count=int(row.qualifying_months),
            )
        )
    return samples
