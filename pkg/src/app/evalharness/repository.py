"""
평가 리포트 저장소 (JSON 요약 + CSV 상세)

파일 이름: {name}_{method_id}_{config_hash}.json / .csv
"""

from pathlib import Path
from typing import Any, Dict

import pandas as pd

from src.common.utils.json_sanitizer import dumps_canonical
from src.common.utils.logger import set_logger

logger = set_logger("evalharness_repository")


def report_stem(name: str, method_id: str, config_hash: str) -> str:
    return f"{name}_{method_id}_{config_hash}"


def save_report(
    summary: Dict[str, Any],
    detail: pd.DataFrame | None,
    out_dir: str | Path,
    name: str,
    method_id: str,
    config_hash: str,
) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = report_stem(name, method_id, config_hash)
    paths = {"json": out_dir / f"{stem}.json"}
    paths["json"].write_text(dumps_canonical({**summary, "config_hash": config_hash}) + "\n", encoding="utf-8")
    if detail is not None:
        paths["csv"] = out_dir / f"{stem}.csv"
        detail.to_csv(paths["csv"], index=False, float_format="%.17g")
    logger.info(f"리포트 저장: {paths['json']}")
    return paths
