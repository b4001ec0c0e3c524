"""理赔数据领域模型 - 患者、理赔记录、编码体系、编码分组与病例定义

编码分组规则：
- 模式 "P*" 匹配任何以 P 开头的原始编码（包括 P 本身）
- 不带 '*' 的模式精确匹配
- 多个模式同时匹配时，最长前缀优先
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Any

import pandas as pd
from dateutil.parser import isoparse

from .error_utils import DataError

PATIENTS_COLUMNS = ["patient_id", "birth_year", "gender"]
CLAIMS_COLUMNS = ["patient_id", "date", "system", "raw_code", "drug_name"]
CODE_MAP_COLUMNS = ["system", "pattern", "group", "label"]
CASE_DEFINITION_COLUMNS = ["kind", "value"]
MAPPED_CLAIMS_COLUMNS = CLAIMS_COLUMNS + ["group"]
ISO_DATE = re.compile(r"[0-9]{4}-[0-9]{2}-[0-9]{2}")


class CodeSystem(str, Enum):
    DIAGNOSIS = "Diagnosis"
    PROCEDURE = "Procedure"
    MEDICATION = "Medication"


class Gender(str, Enum):
    F = "F"
    M = "M"


@dataclass(frozen=True)
class MedicalCode:
    system: CodeSystem
    raw: str
    group: str | None = None
    drug_name: str = ""

    def __post_init__(self) -> None:
        if not self.raw:
            raise DataError("invalid_code", "原始编码不能为空")

    @property
    def is_mapped(self) -> bool:
        return self.group is not None


@dataclass(frozen=True)
class ClaimRecord:
    date: date
    codes: tuple[MedicalCode, ...]

    def __post_init__(self) -> None:
        if not self.codes:
            raise DataError("invalid_record", f"{self.date} 的理赔记录不包含任何编码")

    @property
    def mapped_codes(self) -> tuple[MedicalCode, ...]:
        return tuple(code for code in self.codes if code.is_mapped)


@dataclass(frozen=True)
class PatientTimeline:
    patient_id: str
    birth_year: int
    gender: Gender
    records: tuple[ClaimRecord, ...] = ()

    def __post_init__(self) -> None:
        dates = [record.date for record in self.records]
        if dates != sorted(dates):
            raise DataError("unsorted_records", f"患者 {self.patient_id} 的记录未按日期排序")

    @property
    def first_date(self) -> date | None:
        return self.records[0].date if self.records else None

    @property
    def last_date(self) -> date | None:
        return self.records[-1].date if self.records else None


def validate_pattern(pattern: str) -> None:
    """模式语法检查：非空，最多一个 '*' 且只能在末尾"""
    if not pattern:
        raise DataError("invalid_pattern", "编码模式不能为空")
    if "*" in pattern[:-1]:
        raise DataError("invalid_pattern", f"编码模式 {pattern!r} 中的 '*' 只能出现在末尾")


def pattern_matches(pattern: str, raw: str) -> bool:
    if pattern.endswith("*"):
        return raw.startswith(pattern[:-1])
    return raw == pattern


def pattern_prefix_length(pattern: str) -> int:
    return len(pattern) - 1 if pattern.endswith("*") else len(pattern)


@dataclass(frozen=True)
class CodeMapEntry:
    system: CodeSystem
    pattern: str
    group: str
    label: str


class CodeMap:
    """CCS/AHFS 风格的前缀模式分组表"""

    def __init__(self, entries: list[CodeMapEntry]):
        self.entries: tuple[CodeMapEntry, ...] = tuple(entries)
        self._exact: dict[CodeSystem, dict[str, str]] = {system: {} for system in CodeSystem}
        self._prefix: dict[CodeSystem, dict[str, str]] = {system: {} for system in CodeSystem}
        self._labels: dict[str, str] = {}

        seen: set[tuple[CodeSystem, str]] = set()
        for entry in self.entries:
            validate_pattern(entry.pattern)
            key = (entry.system, entry.pattern)
            if key in seen:
                raise DataError(
                    "invalid_code_map",
                    f"{entry.system.value} 中存在重复模式 {entry.pattern!r}",
                )
            seen.add(key)

            known_label = self._labels.setdefault(entry.group, entry.label)
            if known_label != entry.label:
                raise DataError(
                    "invalid_code_map",
                    f"分组 {entry.group} 存在多个标签: {known_label!r} / {entry.label!r}",
                )

            if entry.pattern.endswith("*"):
                self._prefix[entry.system][entry.pattern[:-1]] = entry.group
            else:
                self._exact[entry.system][entry.pattern] = entry.group

    @property
    def groups(self) -> list[str]:
        """全部分组 id（排序后）"""
        return sorted(self._labels)

    def label(self, group: str) -> str:
        return self._labels.get(group, group)

    def labels(self) -> dict[str, str]:
        return dict(self._labels)

    def lookup(self, system: CodeSystem, raw: str) -> str | None:
        """最长前缀匹配；精确模式的前缀长度等于 len(raw)，因此总是优先"""
        exact = self._exact[system].get(raw)
        if exact is not None:
            return exact
        prefixes = self._prefix[system]
        for length in range(len(raw), -1, -1):
            group = prefixes.get(raw[:length])
            if group is not None:
                return group
        return None


def map_code(code: MedicalCode, code_map: CodeMap) -> MedicalCode | None:
    """把原始编码映射到分组；无法映射时返回 None（未映射标记）"""
    group = code_map.lookup(code.system, code.raw)
    if group is None:
        return None
    return MedicalCode(system=code.system, raw=code.raw, group=group, drug_name=code.drug_name)


@dataclass(frozen=True)
class CaseDefinition:
    """病例定义：诊断编码模式 + 药物名称（大小写不敏感）"""

    diagnosis_patterns: tuple[str, ...]
    medication_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.diagnosis_patterns or not self.medication_names:
            raise DataError("invalid_case_definition", "诊断模式与药物名称列表都不能为空")
        for pattern in self.diagnosis_patterns:
            validate_pattern(pattern)
        object.__setattr__(
            self, "diagnosis_patterns", tuple(dict.fromkeys(self.diagnosis_patterns))
        )
        object.__setattr__(
            self,
            "medication_names",
            tuple(dict.fromkeys(name.strip().lower() for name in self.medication_names)),
        )


def is_case_evidence(record: ClaimRecord, definition: CaseDefinition) -> bool:
    for code in record.codes:
        if code.system is CodeSystem.DIAGNOSIS:
            if any(pattern_matches(p, code.raw) for p in definition.diagnosis_patterns):
                return True
        elif code.system is CodeSystem.MEDICATION:
            drug_name = code.drug_name.lower()
            raw = code.raw.lower()
            for name in definition.medication_names:
                if raw == name or (drug_name and name in drug_name):
                    return True
    return False


def first_case_date(timeline: PatientTimeline, definition: CaseDefinition) -> date | None:
    for record in timeline.records:
        if is_case_evidence(record, definition):
            return record.date
    return None


# ========== 摄取统计 ==========


@dataclass
class IngestReport:
    patients: int = 0
    records: int = 0
    codes: int = 0
    mapped: int = 0
    unmapped: int = 0
    unmapped_by_system: dict[str, int] = field(default_factory=dict)
    top_unmapped: list[tuple[str, int]] = field(default_factory=list)
    orphan_claims: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "patients": self.patients,
            "records": self.records,
            "codes": self.codes,
            "mapped": self.mapped,
            "unmapped": self.unmapped,
            "unmapped_by_system": dict(sorted(self.unmapped_by_system.items())),
            "top_unmapped": [[raw, count] for raw, count in self.top_unmapped],
            "orphan_claims": self.orphan_claims,
        }


def map_timelines(
    timelines: list[PatientTimeline],
    code_map: CodeMap,
    logger: logging.Logger | None = None,
    top_n: int = 20,
) -> tuple[list[PatientTimeline], IngestReport]:
    """为所有编码填充分组；未映射编码保留 group=None 并计数"""
    logger = logger or logging.getLogger(__name__)
    report = IngestReport(patients=len(timelines))
    unmapped_by_system: Counter[str] = Counter()
    unmapped_raw: Counter[str] = Counter()

    mapped_timelines = []
    for timeline in timelines:
        records = []
        for record in timeline.records:
            codes = []
            for code in record.codes:
                mapped = map_code(code, code_map)
                if mapped is None:
                    unmapped_by_system[code.system.value] += 1
                    unmapped_raw[f"{code.system.value}:{code.raw}"] += 1
                    codes.append(
                        MedicalCode(system=code.system, raw=code.raw, drug_name=code.drug_name)
                    )
                else:
                    codes.append(mapped)
            records.append(ClaimRecord(date=record.date, codes=tuple(codes)))
            report.records += 1
            report.codes += len(codes)
        mapped_timelines.append(
            PatientTimeline(
                patient_id=timeline.patient_id,
                birth_year=timeline.birth_year,
                gender=timeline.gender,
                records=tuple(records),
            )
        )

    report.unmapped = sum(unmapped_by_system.values())
    report.mapped = report.codes - report.unmapped
    report.unmapped_by_system = dict(unmapped_by_system)
    report.top_unmapped = sorted(unmapped_raw.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]
    if report.unmapped:
        logger.warning(f"{report.unmapped}/{report.codes} 个编码未能映射到分组，已从模型输入中剔除")
    logger.info(f"编码映射完成: {report.patients} 名患者, {report.records} 条记录")
    return mapped_timelines, report


# ========== CSV 读写 ==========


def read_table(path: Path | str, columns: list[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError("missing_input", f"输入文件不存在: {path}", {"path": str(path)})
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise DataError(
            "invalid_input",
            f"{path.name} 缺少列: {', '.join(missing)}",
            {"path": str(path), "expected": columns},
        )
    return frame


def _parse_date(value: str, where: str) -> date:
    # isoparse 也接受 20150101、2015-W01-1 等 ISO 变体
    if not ISO_DATE.fullmatch(value):
        raise DataError("invalid_date", f"{where} 的日期 {value!r} 不是 YYYY-MM-DD 格式")
    try:
        return isoparse(value).date()
    except ValueError:
        raise DataError("invalid_date", f"{where} 的日期 {value!r} 不是 YYYY-MM-DD 格式")


def _parse_system(value: str, where: str) -> CodeSystem:
    try:
        return CodeSystem(value)
    except ValueError:
        raise DataError("invalid_system", f"{where} 的编码体系 {value!r} 无效")


def load_code_map(path: Path | str) -> CodeMap:
    frame = read_table(path, CODE_MAP_COLUMNS)
    entries = [
        CodeMapEntry(
            system=_parse_system(row.system, f"code map 第 {i + 2} 行"),
            pattern=row.pattern.strip(),
            group=row.group.strip(),
            label=row.label.strip(),
        )
        for i, row in enumerate(frame.itertuples(index=False))
    ]
    return CodeMap(entries)


def code_map_to_frame(code_map: CodeMap) -> pd.DataFrame:
    return pd.DataFrame(
        [[e.system.value, e.pattern, e.group, e.label] for e in code_map.entries],
        columns=CODE_MAP_COLUMNS,
    )


def load_case_definition(path: Path | str) -> CaseDefinition:
    frame = read_table(path, CASE_DEFINITION_COLUMNS)
    patterns: list[str] = []
    names: list[str] = []
    for i, row in enumerate(frame.itertuples(index=False)):
        value = row.value.strip()
        if row.kind == "diagnosis_pattern":
            patterns.append(value)
        elif row.kind == "medication_name":
            names.append(value)
        else:
            raise DataError("invalid_case_definition", f"第 {i + 2} 行的 kind {row.kind!r} 无效")
    return CaseDefinition(diagnosis_patterns=tuple(patterns), medication_names=tuple(names))


def load_timelines(
    patients_path: Path | str,
    claims_path: Path | str,
    logger: logging.Logger | None = None,
) -> list[PatientTimeline]:
    """读取 patients/claims CSV（或带 group 列的 claims_mapped.csv）"""
    logger = logger or logging.getLogger(__name__)
    patients = read_table(patients_path, PATIENTS_COLUMNS)
    claims = read_table(claims_path, CLAIMS_COLUMNS)
    has_group = "group" in claims.columns

    if patients["patient_id"].duplicated().any():
        duplicated = patients.loc[patients["patient_id"].duplicated(), "patient_id"].iloc[0]
        raise DataError("duplicate_patient", f"患者 id 重复: {duplicated}")

    known = set(patients["patient_id"])
    orphan = ~claims["patient_id"].isin(known)
    if orphan.any():
        logger.warning(f"{int(orphan.sum())} 条理赔记录的患者不在 patients 文件中，已忽略")
        claims = claims.loc[~orphan]

    codes_by_patient: dict[str, dict[date, list[MedicalCode]]] = {}
    for i, row in enumerate(claims.itertuples(index=False)):
        where = f"claims 第 {i + 2} 行"
        code = MedicalCode(
            system=_parse_system(row.system, where),
            raw=row.raw_code.strip(),
            group=(row.group or None) if has_group else None,
            drug_name=row.drug_name.strip(),
        )
        day = _parse_date(row.date, where)
        codes_by_patient.setdefault(row.patient_id, {}).setdefault(day, []).append(code)

    timelines = []
    for row in patients.itertuples(index=False):
        try:
            birth_year = int(row.birth_year)
            gender = Gender(row.gender)
        except ValueError:
            raise DataError("invalid_patient", f"患者 {row.patient_id} 的出生年份或性别无效")
        by_day = codes_by_patient.get(row.patient_id, {})
        records = tuple(ClaimRecord(date=day, codes=tuple(by_day[day])) for day in sorted(by_day))
        timelines.append(
            PatientTimeline(
                patient_id=row.patient_id, birth_year=birth_year, gender=gender, records=records
            )
        )
    return timelines


def timelines_to_frames(
    timelines: list[PatientTimeline], include_group: bool = False
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """把时间线还原为 patients / claims 两张表（行序确定）"""
    patients = pd.DataFrame(
        [[t.patient_id, str(t.birth_year), t.gender.value] for t in timelines],
        columns=PATIENTS_COLUMNS,
    )
    rows = []
    for timeline in timelines:
        for record in timeline.records:
            for code in record.codes:
                row = [
                    timeline.patient_id,
                    record.date.isoformat(),
                    code.system.value,
                    code.raw,
                    code.drug_name,
                ]
                if include_group:
                    row.append(code.group or "")
                rows.append(row)
    columns = MAPPED_CLAIMS_COLUMNS if include_group else CLAIMS_COLUMNS
    return patients, pd.DataFrame(rows, columns=columns)
