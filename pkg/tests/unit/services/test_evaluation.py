"""AUROC 与结果表测试"""

import numpy as np
import pandas as pd
import pytest

from claims_vgnn.services.error_utils import DataError
from claims_vgnn.services.evaluation import (
    ABSENT,
    RESULTS_COLUMNS,
    ResultRow,
    auroc,
    relative_improvement,
    scenario_report,
    text_summary,
)
from tests.utils.test_helpers import brute_force_auroc


class TestAuroc:
    """平均秩 AUROC"""

    @pytest.mark.unit
    def test_matches_pairwise_count_with_ties(self):
        """100 组带大量平局的随机实例与 O(n²) 成对比较一致"""
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 60))
            labels = rng.integers(0, 2, size=n)
            labels[0], labels[1] = 0, 1
            scores = rng.integers(0, 5, size=n) / 4.0
            assert auroc(scores, labels) == pytest.approx(brute_force_auroc(scores, labels), abs=1e-12)

    @pytest.mark.unit
    def test_perfect_and_inverted(self):
        assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    @pytest.mark.unit
    @pytest.mark.parametrize("seed", range(10))
    def test_negated_scores_are_complement(self, seed):
        """评分取负后 AUROC 互补，平局两边各计一半"""
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 80))
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, 6, size=n) / 5.0
        assert auroc(scores, labels) + auroc(-scores, labels) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.unit
    def test_all_tied_is_one_half(self):
        assert auroc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    @pytest.mark.unit
    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.random(50)
        labels = rng.integers(0, 2, size=50)
        assert auroc(scores, labels) == pytest.approx(auroc(np.log(scores), labels))

    @pytest.mark.unit
    @pytest.mark.parametrize("labels", [[1, 1, 1], [0, 0], [1]])
    def test_single_class_is_undefined(self, labels):
        with pytest.raises(DataError) as exc:
            auroc([0.5] * len(labels), labels)
        assert exc.value.code == "undefined_auroc"

    @pytest.mark.unit
    def test_length_mismatch(self):
        with pytest.raises(DataError):
            auroc([0.1, 0.2, 0.3], [0, 1])


class TestScenarioReport:
    """结果表"""

    def _rows(self):
        return [
            ResultRow(1, "vgnn", "matched", 0.8, 100, 50, 12.5),
            ResultRow(1, "rf", "matched", 0.64, 100, 50, 0.5),
            ResultRow(1, "gbm", "matched", 0.7, 100, 50, 0.8),
        ]

    @pytest.mark.unit
    def test_absent_cells_are_explicit(self):
        frame = scenario_report(self._rows(), scenarios=[1])
        assert frame.columns.tolist() == RESULTS_COLUMNS
        assert len(frame) == 6
        subset = frame.loc[frame["regime"] == "subset"]
        assert (subset["auroc"] == ABSENT).all()
        matched = frame.loc[frame["regime"] == "matched"].set_index("model")
        assert matched.loc["vgnn", "auroc"] == "0.800000"
        assert matched.loc["vgnn", "wall_seconds"] == ""

    @pytest.mark.unit
    def test_row_order_and_wall_time(self):
        frame = scenario_report(self._rows(), scenarios=[1, 2], record_wall_time=True)
        assert len(frame) == 12
        assert frame[["scenario", "model", "regime"]].values.tolist()[:2] == [
            [1, "vgnn", "matched"],
            [1, "vgnn", "subset"],
        ]
        assert frame.iloc[0]["wall_seconds"] == "12.500"
        assert (frame.loc[frame["scenario"] == 2, "auroc"] == ABSENT).all()

    @pytest.mark.unit
    def test_relative_improvement(self):
        frame = scenario_report(self._rows(), scenarios=[1])
        improvements = relative_improvement(frame).set_index("baseline")
        assert improvements.loc["rf", "improvement_pct"] == pytest.approx(25.0)
        assert improvements.loc["gbm", "improvement_pct"] == pytest.approx(14.29)

    @pytest.mark.unit
    def test_text_summary(self):
        summary = text_summary(scenario_report(self._rows(), scenarios=[1]))
        assert "scenario 1 / matched" in summary
        assert "0.8000" in summary
        assert "vs rf: +25.00" in summary
        assert f"vgnn  {ABSENT}" in summary

    @pytest.mark.unit
    def test_round_trip_through_csv(self, tmp_path):
        frame = scenario_report(self._rows(), scenarios=[1])
        frame.to_csv(tmp_path / "results.csv", index=False)
        loaded = pd.read_csv(tmp_path / "results.csv", dtype=str, keep_default_na=False)
        assert loaded["auroc"].tolist() == frame["auroc"].astype(str).tolist()
