"""
점수 JSONL 사이드카 / ROC 결과 저장소
"""

import json
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pandas as pd

from src.app.influence.models import InfluenceScores, RocReport
from src.common.error import ArtifactMissingError, ErrorCode, ParseError, SchemaError
from src.common.utils.json_sanitizer import dumps_canonical
from src.common.utils.logger import set_logger

logger = set_logger("influence_repository")

FORMAT_NAME = "caiac-scores"


def dumps_scores(scores: InfluenceScores, theta: float | None = None) -> str:
    header = {
        "format": FORMAT_NAME,
        "k": scores.action_sample_count,
        "scorer_id": scores.scorer_id,
        "lengths": scores.lengths,
        "theta": theta,
    }
    lines = [dumps_canonical(header)]
    for trajectory, length in enumerate(scores.lengths):
        block = scores.for_trajectory(trajectory)
        for step in range(length):
            record: Dict[str, Any] = {"trajectory": trajectory, "step": step, "scores": block[step]}
            if theta is not None:
                record["uncontrollable"] = [j for j in range(1, block.shape[1]) if block[step, j] <= theta]
            lines.append(dumps_canonical(record))
    return "\n".join(lines) + "\n"


def save_scores(scores: InfluenceScores, path: str | Path, theta: float | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_scores(scores, theta), encoding="utf-8")
    logger.info(f"점수 저장: {path} ({len(scores)}개 상태)")
    return path


def loads_scores(text: str) -> InfluenceScores:
    lines = [line for line in text.split("\n") if line]
    if not lines:
        raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=1, reason="empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=1, reason=e.msg)
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=1, reason="missing scores header")

    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line)
            rows.append(record["scores"])
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=line_no, reason=str(e))
    lengths = header["lengths"]
    if len(rows) != sum(lengths):
        raise ParseError.of(
            ErrorCode.Dataset.PARSE_ERROR, line=len(lines) + 1, reason=f"expected {sum(lengths)} rows, found {len(rows)}"
        )
    try:
        values = np.asarray(rows, dtype=np.float64)
    except ValueError as e:
        raise SchemaError.of(ErrorCode.Dataset.SCHEMA_ERROR, reason=str(e))
    return InfluenceScores(
        scores=values.reshape(len(rows), -1),
        lengths=lengths,
        action_sample_count=header["k"],
        scorer_id=header["scorer_id"],
    )


def load_scores(path: str | Path) -> InfluenceScores:
    path = Path(path)
    if not path.exists():
        raise ArtifactMissingError.of(ErrorCode.Common.ARTIFACT_MISSING, path=str(path))
    return loads_scores(path.read_text(encoding="utf-8"))


def save_roc(
    roc: RocReport,
    out_dir: str | Path,
    name: str,
    selected_theta: float | None = None,
    sweep: pd.DataFrame | None = None,
) -> Dict[str, Path]:
    """{name}.csv (threshold, tpr, fpr), {name}.json 요약, 선택적으로 {name}_sweep.csv"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out_dir / f"{name}.csv", "json": out_dir / f"{name}.json"}
    roc.to_frame().to_csv(paths["csv"], index=False, float_format="%.17g")
    summary = {
        "auc": roc.auc,
        "n_positive": roc.n_positive,
        "n_negative": roc.n_negative,
        "selected_theta": selected_theta,
    }
    if sweep is not None:
        paths["sweep"] = out_dir / f"{name}_sweep.csv"
        sweep.to_csv(paths["sweep"], index=False, float_format="%.17g")
        summary["sweep"] = sweep.to_dict(orient="records")
    paths["json"].write_text(dumps_canonical(summary) + "\n", encoding="utf-8")
    logger.info(f"ROC 저장: {paths['json']} (AUC={roc.auc:.4f})")
    return paths
