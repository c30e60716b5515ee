"""
정책 체크포인트 / 평가 리포트 저장소
"""

from pathlib import Path
from typing import Dict, Sequence

import pandas as pd

from src.app.neural.repository import load_checkpoint, save_checkpoint
from src.app.policy.models import BcPolicy, EvalReport
from src.app.world.models import WorldConfig
from src.common.error import ErrorCode, SchemaError
from src.common.utils.json_sanitizer import dumps_canonical
from src.common.utils.logger import set_logger

logger = set_logger("policy_repository")

POLICY_KIND = "bc_policy"


def save_policy(policy: BcPolicy, path: str | Path, config_hash: str = "") -> Path:
    meta = {
        "kind": POLICY_KIND,
        "world": policy.world.model_dump(mode="json"),
        "training": policy.training,
        "config_hash": config_hash,
    }
    return save_checkpoint(policy.params, path, meta)


def load_policy(path: str | Path) -> BcPolicy:
    params, meta = load_checkpoint(path)
    if meta.get("kind") != POLICY_KIND:
        raise SchemaError.of(ErrorCode.Dataset.SCHEMA_ERROR, path=str(path), kind=meta.get("kind"))
    return BcPolicy(params=params, world=WorldConfig.model_validate(meta["world"]), training=meta.get("training", {}))


def save_eval_reports(reports: Sequence[EvalReport], out_dir: str | Path, name: str, config_hash: str) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{name}_{config_hash}"
    paths = {"json": out_dir / f"{stem}.json", "csv": out_dir / f"{stem}.csv"}
    rows = [r.summary() for r in reports]
    paths["json"].write_text(dumps_canonical({"reports": rows, "config_hash": config_hash}) + "\n", encoding="utf-8")
    pd.DataFrame(rows).to_csv(paths["csv"], index=False, float_format="%.17g")
    logger.info(f"평가 리포트 저장: {paths['json']}")
    return paths
