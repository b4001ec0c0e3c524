"""合成理赔数据生成器 - 带可恢复的植入风险信号

随机数约定：
- 标签分配使用独立的随机流 SeedSequence(seed, spawn_key=(0,))
- 第 i 名患者的时间线使用 SeedSequence(seed, spawn_key=(1, i))
每名患者的抽样与其他患者无关，因此并行与串行生成结果一致。
"""

import logging
import math
from calendar import monthrange
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
from dateutil.relativedelta import relativedelta

from .domain import (
    CaseDefinition,
    ClaimRecord,
    CodeMap,
    CodeMapEntry,
    CodeSystem,
    Gender,
    MedicalCode,
    PatientTimeline,
    code_map_to_frame,
    timelines_to_frames,
)
from .error_utils import ConfigError

GROUP_PREFIXES = {
    CodeSystem.DIAGNOSIS: ("DX", "D"),
    CodeSystem.PROCEDURE: ("PR", "P"),
    CodeSystem.MEDICATION: ("RX", "M"),
}
ADRD_DX_GROUP = "ADRD_DX"
ADRD_RX_GROUP = "ADRD_RX"
EVIDENCE_DIAGNOSES = ("331.0", "G30.9", "290.40", "F01.50", "331.11", "G31.83", "290.0", "290.9")
EVIDENCE_MEDICATIONS = (
    ("62856024501", "Aricept 10 mg"),
    ("00456320063", "Namenda 10 mg"),
    ("62856024502", "Donepezil HCl 5 mg"),
    ("00456320064", "Memantine 28 mg ER"),
)
ONSET_TAIL_FRACTION = 0.4
MIN_SPAN_YEARS = 10
EVIDENCE_REPEAT_RATE = 0.5

GROUND_TRUTH_COLUMNS = ["patient_id", "label", "onset_date"]


@dataclass(frozen=True)
class PlantedPair:
    group_a: str
    group_b: str
    p_case: float
    p_control: float


@dataclass
class GeneratorConfig:
    n_patients: int = 1000
    case_fraction: float = 0.5
    n_groups: dict[str, int] = field(
        default_factory=lambda: {"Diagnosis": 40, "Procedure": 30, "Medication": 30}
    )
    raw_codes_per_group: int = 3
    planted_pairs: list[PlantedPair] = field(
        default_factory=lambda: [PlantedPair("DX001", "RX002", 0.8, 0.1)]
    )
    visits_per_year: float = 6.0
    codes_per_visit: tuple[int, int] = (2, 5)
    span: tuple[date, date] = (date(2007, 1, 1), date(2019, 12, 31))
    age_range: tuple[int, int] = (65, 90)
    signal_window_years: int = 3
    pair_visit_rate: float = 0.5
    seed: int = 0

    @property
    def vocabulary_size(self) -> int:
        return sum(self.n_groups.values())

    def group_ids(self) -> dict[CodeSystem, list[str]]:
        ids = {}
        for system_name, count in self.n_groups.items():
            system = CodeSystem(system_name)
            prefix = GROUP_PREFIXES[system][0]
            ids[system] = [f"{prefix}{i:03d}" for i in range(count)]
        return ids

    def validate_fields(self) -> list[str]:
        """只检查生成器自身字段，不涉及队列的纳入标准"""
        problems = []
        if self.n_patients < 1:
            problems.append("generator.n_patients 必须为正整数")
        if not 0 < self.case_fraction < 1:
            problems.append("generator.case_fraction 必须在 (0, 1) 内")
        if any(count < 0 for count in self.n_groups.values()):
            problems.append("generator.n_groups 不能为负数")
        unknown = [name for name in self.n_groups if name not in CodeSystem._value2member_map_]
        if unknown:
            problems.append(f"generator.n_groups 含有未知编码体系: {unknown}")
        if self.vocabulary_size < 4:
            problems.append("generator 词表大小 V 必须 >= 4")
        if self.raw_codes_per_group < 1:
            problems.append("generator.raw_codes_per_group 必须为正整数")
        if self.visits_per_year <= 0:
            problems.append("generator.visits_per_year 必须为正数")
        low, high = self.codes_per_visit
        if low < 1 or high < low:
            problems.append("generator.codes_per_visit 必须满足 1 <= min <= max")
        start, end = self.span
        if start >= end:
            problems.append("generator.span 起始日期必须早于结束日期")
        elif relativedelta(end, start).years < MIN_SPAN_YEARS:
            problems.append(f"generator.span 至少需要 {MIN_SPAN_YEARS} 年")
        if self.age_range[1] - self.age_range[0] < 3:
            problems.append("generator.age_range 上下限至少相差 3 岁")
        if self.signal_window_years < 1:
            problems.append("generator.signal_window_years 必须 >= 1")
        if not 0 <= self.pair_visit_rate <= 1:
            problems.append("generator.pair_visit_rate 必须在 [0, 1] 内")
        if not 0 <= self.seed < 2**64:
            problems.append("generator.seed 必须是 64 位无符号整数")

        known_groups = {g for ids in self.group_ids().values() for g in ids}
        for pair in self.planted_pairs:
            for group in (pair.group_a, pair.group_b):
                if group not in known_groups:
                    problems.append(f"植入关系的分组 {group} 不在生成词表中")
            if pair.group_a == pair.group_b:
                problems.append(f"植入关系 {pair.group_a} 的两端不能相同")
            if not (0 <= pair.p_control <= 1 and 0 <= pair.p_case <= 1):
                problems.append("植入关系的概率必须在 [0, 1] 内")
            elif pair.p_case < pair.p_control:
                problems.append(f"植入关系 {pair.group_a}-{pair.group_b} 要求 p_case >= p_control")

        planted = {g for pair in self.planted_pairs for g in (pair.group_a, pair.group_b)}
        if len(known_groups - planted) < 1:
            problems.append("除植入分组外至少需要一个背景分组")
        return problems

    def validate(
        self,
        min_qualifying_months: int = 2,
        min_codes_per_month: int = 3,
        feature_years: int = 3,
    ) -> list[str]:
        """返回全部配置问题（空列表表示有效），包括与纳入标准的兼容性"""
        problems = self.validate_fields()
        high = self.codes_per_visit[1]
        # 期望记录数达不到纳入标准时，队列必然为空
        if high < min_codes_per_month:
            problems.append(
                f"generator.codes_per_visit 上限 {high} 小于每月最少编码数 {min_codes_per_month}"
            )
        if min(self.visits_per_year, 12.0) * feature_years < min_qualifying_months:
            problems.append("generator.visits_per_year 过低，特征窗口内达不到最少合格月份数")
        return problems


@dataclass
class GroundTruth:
    labels: dict[str, str]
    onset_dates: dict[str, date]
    planted_pairs: list[PlantedPair]
    pseudo_onsets: dict[str, date] = field(default_factory=dict)
    planted_flags: dict[str, tuple[bool, ...]] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            [pid, label, self.onset_dates[pid].isoformat() if pid in self.onset_dates else ""]
            for pid, label in self.labels.items()
        ]
        return pd.DataFrame(rows, columns=GROUND_TRUTH_COLUMNS)

    @property
    def n_cases(self) -> int:
        return sum(1 for label in self.labels.values() if label == "case")


def build_code_map(config: GeneratorConfig, case_definition: CaseDefinition) -> CodeMap:
    """生成覆盖所有合成原始编码的分组表"""
    entries = []
    for system, ids in config.group_ids().items():
        raw_prefix = GROUP_PREFIXES[system][1]
        kind = system.value.lower()
        for group in ids:
            number = group[2:]
            entries.append(
                CodeMapEntry(
                    system=system,
                    pattern=f"{raw_prefix}{number}.*",
                    group=group,
                    label=f"Synthetic {kind} group {number}",
                )
            )
    adrd_label = "Alzheimer's disease and related dementias"
    for pattern in case_definition.diagnosis_patterns:
        entries.append(CodeMapEntry(CodeSystem.DIAGNOSIS, pattern, ADRD_DX_GROUP, adrd_label))
    adrd_drug_label = "Cholinesterase inhibitors and NMDA antagonists"
    for prefix in sorted({raw[:8] for raw, _ in EVIDENCE_MEDICATIONS}):
        entries.append(
            CodeMapEntry(CodeSystem.MEDICATION, f"{prefix}*", ADRD_RX_GROUP, adrd_drug_label)
        )
    return CodeMap(entries)


class SyntheticClaimsGenerator:
    """合成理赔数据生成器"""

    def __init__(self, config: GeneratorConfig, logger: logging.Logger | None = None):
        problems = config.validate_fields()
        if problems:
            raise ConfigError("invalid_generator_config", "; ".join(problems))
        self.config = config
        self.logger = logger or logging.getLogger(__name__)

        planted = {g for pair in config.planted_pairs for g in (pair.group_a, pair.group_b)}
        self._group_system: dict[str, CodeSystem] = {}
        self._background: list[str] = []
        for system, ids in config.group_ids().items():
            for group in ids:
                self._group_system[group] = system
                if group not in planted:
                    self._background.append(group)

    def assign_labels(self) -> list[bool]:
        """恰好 round(n * case_fraction) 名病例"""
        n = self.config.n_patients
        n_cases = int(round(n * self.config.case_fraction))
        rng = np.random.default_rng(np.random.SeedSequence(self.config.seed, spawn_key=(0,)))
        is_case = np.zeros(n, dtype=bool)
        is_case[rng.permutation(n)[:n_cases]] = True
        return is_case.tolist()

    def generate(
        self, threads: int = 1
    ) -> tuple[list[PatientTimeline], GroundTruth]:
        labels = self.assign_labels()
        indices = range(self.config.n_patients)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda i: self._generate_patient(i, labels[i]), indices))
        else:
            results = [self._generate_patient(i, labels[i]) for i in indices]

        timelines = [timeline for timeline, _, _ in results]
        truth = GroundTruth(labels={}, onset_dates={}, planted_pairs=list(self.config.planted_pairs))
        for timeline, anchor, flags in results:
            pid = timeline.patient_id
            is_case = labels[int(pid[1:])]
            truth.labels[pid] = "case" if is_case else "control"
            if is_case:
                truth.onset_dates[pid] = anchor
            else:
                truth.pseudo_onsets[pid] = anchor
            truth.planted_flags[pid] = flags

        n_cases = sum(labels)
        self.logger.info(
            f"合成数据生成完成: {len(timelines)} 名患者 ({n_cases} 病例 / {len(timelines) - n_cases} 对照)"
        )
        return timelines, truth

    # ---------- 单个患者 ----------

    def _generate_patient(
        self, index: int, is_case: bool
    ) -> tuple[PatientTimeline, date, tuple[bool, ...]]:
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, index)))
        patient_id = f"P{index:06d}"

        span_start, span_end = cfg.span
        total_days = (span_end - span_start).days
        record_start = span_start + timedelta(days=int(rng.integers(0, int(total_days * 0.15) + 1)))
        record_end = span_end - timedelta(days=int(rng.integers(0, int(total_days * 0.05) + 1)))
        length = (record_end - record_start).days

        if is_case:
            offset = int(rng.integers(math.ceil(length * (1 - ONSET_TAIL_FRACTION)), length))
            anchor = record_start + timedelta(days=offset)
        else:
            anchor = record_end

        gender = Gender.F if rng.random() < 0.5 else Gender.M
        age_at_anchor = int(rng.integers(cfg.age_range[0] + 3, cfg.age_range[1] + 1))
        birth_year = anchor.year - age_at_anchor

        visits: dict[date, list[MedicalCode]] = {}
        for day in self._visit_days(rng, record_start, record_end):
            visits[day] = self._background_codes(rng)
        # 记录末尾一次必然就诊，使对照组的锚点恰好等于 record_end
        visits.setdefault(record_end, self._background_codes(rng))

        if is_case:
            visits.setdefault(anchor, self._background_codes(rng))
            visits[anchor].append(self._evidence_code(rng))
            for day in visits:
                if day > anchor and rng.random() < EVIDENCE_REPEAT_RATE:
                    visits[day].append(self._evidence_code(rng))

        flags = []
        window_start = max(anchor - relativedelta(years=cfg.signal_window_years), record_start)
        for pair in cfg.planted_pairs:
            probability = pair.p_case if is_case else pair.p_control
            planted = bool(rng.random() < probability)
            flags.append(planted)
            if not planted:
                continue
            window_days = (anchor - window_start).days
            pair_day = window_start + timedelta(days=int(rng.integers(0, window_days)))
            visits.setdefault(pair_day, self._background_codes(rng))
            visits[pair_day].extend(self._pair_codes(rng, pair))
            for day in sorted(visits):
                if window_start <= day < anchor and day != pair_day:
                    if rng.random() < cfg.pair_visit_rate:
                        visits[day].extend(self._pair_codes(rng, pair))

        records = tuple(ClaimRecord(date=day, codes=tuple(visits[day])) for day in sorted(visits))
        timeline = PatientTimeline(
            patient_id=patient_id, birth_year=birth_year, gender=gender, records=records
        )
        return timeline, anchor, tuple(flags)

    def _visit_days(self, rng: np.random.Generator, start: date, end: date) -> list[date]:
        """逐月伯努利就诊，概率由 visits_per_year 校准"""
        p_visit = min(1.0, self.config.visits_per_year / 12.0)
        days = []
        year, month = start.year, start.month
        while (year, month) <= (end.year, end.month):
            if rng.random() < p_visit:
                last = monthrange(year, month)[1]
                day = date(year, month, int(rng.integers(1, last + 1)))
                if start <= day <= end:
                    days.append(day)
            month += 1
            if month > 12:
                year, month = year + 1, 1
        return days

    def _raw_code(self, rng: np.random.Generator, group: str) -> MedicalCode:
        system = self._group_system[group]
        raw_prefix = GROUP_PREFIXES[system][1]
        variant = int(rng.integers(0, self.config.raw_codes_per_group))
        raw = f"{raw_prefix}{group[2:]}.{variant}"
        drug_name = f"Synthdrug {group[2:]}-{variant}" if system is CodeSystem.MEDICATION else ""
        return MedicalCode(system=system, raw=raw, drug_name=drug_name)

    def _background_codes(self, rng: np.random.Generator) -> list[MedicalCode]:
        low, high = self.config.codes_per_visit
        count = int(rng.integers(low, high + 1))
        picks = rng.integers(0, len(self._background), size=count)
        return [self._raw_code(rng, self._background[int(i)]) for i in picks]

    def _pair_codes(self, rng: np.random.Generator, pair: PlantedPair) -> list[MedicalCode]:
        return [self._raw_code(rng, pair.group_a), self._raw_code(rng, pair.group_b)]

    def _evidence_code(self, rng: np.random.Generator) -> MedicalCode:
        if rng.random() < 0.5:
            raw = EVIDENCE_DIAGNOSES[int(rng.integers(0, len(EVIDENCE_DIAGNOSES)))]
            return MedicalCode(system=CodeSystem.DIAGNOSIS, raw=raw)
        raw, name = EVIDENCE_MEDICATIONS[int(rng.integers(0, len(EVIDENCE_MEDICATIONS)))]
        return MedicalCode(system=CodeSystem.MEDICATION, raw=raw, drug_name=name)


def generate(
    config: GeneratorConfig, threads: int = 1, logger: logging.Logger | None = None
) -> tuple[list[PatientTimeline], GroundTruth]:
    """便捷函数：按配置生成合成时间线与真值"""
    return SyntheticClaimsGenerator(config, logger).generate(threads=threads)


def write_dataset(
    out_dir: Path | str,
    timelines: list[PatientTimeline],
    truth: GroundTruth,
    code_map: CodeMap,
    case_definition_frame: pd.DataFrame,
) -> dict[str, Path]:
    """写出 patients/claims/ground_truth/code_map/case_definition 五个 CSV"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    patients, claims = timelines_to_frames(timelines)
    paths = {
        "patients": out_dir / "patients.csv",
        "claims": out_dir / "claims.csv",
        "ground_truth": out_dir / "ground_truth.csv",
        "code_map": out_dir / "code_map.csv",
        "case_definition": out_dir / "case_definition.csv",
    }
    patients.to_csv(paths["patients"], index=False, lineterminator="\n")
    claims.to_csv(paths["claims"], index=False, lineterminator="\n")
    truth.to_frame().to_csv(paths["ground_truth"], index=False, lineterminator="\n")
    code_map_to_frame(code_map).to_csv(paths["code_map"], index=False, lineterminator="\n")
    case_definition_frame.to_csv(paths["case_definition"], index=False, lineterminator="\n")
    return paths
