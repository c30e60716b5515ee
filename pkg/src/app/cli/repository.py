"""
실행 설정 (INI) 로더와 산출물 경로 / 매니페스트
"""

import configparser
from pathlib import Path
from typing import Any, Dict, List

from src.app.cli.models import RunConfig
from src.common.error import ArtifactMissingError, ConfigError, ErrorCode
from src.common.utils.json_sanitizer import config_hash, dumps_canonical, sha256_file
from src.common.utils.logger import set_logger

logger = set_logger("cli_repository")

SECTIONS = ("run", "world", "dataset", "model", "influence", "augment", "eval", "policy")
TASK_PREFIX = "task:"


def parse_run_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError.of(ErrorCode.Common.INVALID_CONFIG, source=source, reason=str(e))

    data: Dict[str, Any] = {}
    tasks: List[Dict[str, Any]] = []
    for section in parser.sections():
        values = dict(parser.items(section))
        if section.startswith(TASK_PREFIX):
            tasks.append({"task_id": section[len(TASK_PREFIX):], **values})
        elif section in SECTIONS:
            data[section] = values
        else:
            raise ConfigError.of(ErrorCode.Common.INVALID_CONFIG, source=source, unknown_section=section)
    if tasks:
        data["tasks"] = tasks
    # pydantic ValidationError 는 모르는 키 이름을 그대로 담아 올라간다
    return RunConfig.model_validate(data)


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ArtifactMissingError.of(ErrorCode.Common.ARTIFACT_MISSING, path=str(path))
    return parse_run_config(path.read_text(encoding="utf-8"), str(path))


def run_config_hash(config: RunConfig) -> str:
    return config_hash(config.hashable())


class ArtifactPaths:
    """out_dir 아래 고정된 산출물 위치 (서브커맨드끼리 이어지도록)"""

    def __init__(self, out_dir: str | Path, config_hash: str):
        self.root = Path(out_dir)
        self.config_hash = config_hash

    @property
    def dataset(self) -> Path:
        return self.root / "data" / "dataset.jsonl"

    @property
    def heldout(self) -> Path:
        return self.root / "data" / "heldout.jsonl"

    @property
    def augmented(self) -> Path:
        return self.root / "data" / "augmented.jsonl"

    @property
    def model(self) -> Path:
        return self.root / "model" / "transition.ckpt"

    @property
    def loss_curve(self) -> Path:
        return self.root / "model" / f"loss_curve_{self.config_hash}.csv"

    @property
    def scores(self) -> Path:
        return self.root / "scores" / "scores.jsonl"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    def roc_summary(self, scorer: str = "cai") -> Path:
        return self.reports / f"roc_{scorer}_{self.config_hash}.json"

    def policy(self, name: str) -> Path:
        return self.root / "policy" / f"{name}.ckpt"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    def require(self, path: Path) -> Path:
        if not path.exists():
            raise ArtifactMissingError.of(ErrorCode.Common.ARTIFACT_MISSING, path=str(path))
        return path


def write_manifest(paths: ArtifactPaths, artifacts: List[Path]) -> Path:
    """상대 경로와 sha256 (타임스탬프 없음)"""
    entries = [
        {"path": p.relative_to(paths.root).as_posix(), "sha256": sha256_file(p)}
        for p in sorted(set(artifacts))
    ]
    manifest = {"config_hash": paths.config_hash, "artifacts": entries}
    paths.manifest.write_text(dumps_canonical(manifest) + "\n", encoding="utf-8")
    logger.info(f"매니페스트 저장: {paths.manifest} ({len(entries)}개 산출물)")
    return paths.manifest
