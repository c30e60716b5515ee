"""
데이터셋 JSONL 저장소

첫 줄은 헤더 (WorldConfig + provenance + 궤적 수), 이후 한 줄에 궤적 하나.
float 는 repr (최대 17자리 유효숫자) 로 기록되어 정확히 복원된다.
"""

import json
from pathlib import Path
from typing import Any, Dict

import numpy as np
from pydantic import ValidationError

from src.app.dataio.models import AugmentationInfo, Dataset, Provenance, Trajectory
from src.app.world.models import WorldConfig
from src.common.error import ArtifactMissingError, ErrorCode, ParseError, SchemaError
from src.common.utils.json_sanitizer import dumps_canonical
from src.common.utils.logger import set_logger

logger = set_logger("dataio_repository")

FORMAT_NAME = "caiac-dataset"
FORMAT_VERSION = 1


def _trajectory_record(trajectory: Trajectory, config: WorldConfig) -> Dict[str, Any]:
    record = {
        "task_id": trajectory.task_id,
        "regime": trajectory.regime.value,
        "seed": trajectory.seed,
        "behavior": trajectory.behavior,
        "entity_dims": [config.entity_dim] * config.n_entities,
        "states": trajectory.states,
        "actions": trajectory.actions,
    }
    if trajectory.goal_state is not None:
        record["goal_state"] = trajectory.goal_state
    if trajectory.augmentation is not None:
        record["augmentation"] = trajectory.augmentation.model_dump(mode="json")
    return record


def dumps_dataset(dataset: Dataset) -> str:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": dataset.config.model_dump(mode="json"),
        "provenance": dataset.provenance.model_dump(mode="json"),
        "n_trajectories": len(dataset),
    }
    lines = [dumps_canonical(header)]
    lines += [dumps_canonical(_trajectory_record(t, dataset.config)) for t in dataset.trajectories]
    return "\n".join(lines) + "\n"


def save(dataset: Dataset, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_dataset(dataset), encoding="utf-8")
    logger.info(f"데이터셋 저장: {path} ({len(dataset)}개 궤적)")
    return path


def _parse_trajectory(record: Dict[str, Any], config: WorldConfig, line_no: int) -> Trajectory:
    if not isinstance(record, dict):
        raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=line_no, reason="trajectory line is not an object")
    expected_dims = [config.entity_dim] * config.n_entities
    if record.get("entity_dims") != expected_dims:
        raise SchemaError.of(
            ErrorCode.Dataset.SCHEMA_ERROR, line=line_no, expected=expected_dims, actual=record.get("entity_dims")
        )
    try:
        states = np.asarray(record["states"], dtype=np.float64)
        actions = np.asarray(record["actions"], dtype=np.float64)
    except (KeyError, ValueError, TypeError) as e:
        raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=line_no, reason=str(e))
    horizon = len(record["actions"])
    if states.shape != (horizon + 1, config.n_entities, config.entity_dim) or actions.shape != (horizon, config.entity_dim):
        raise SchemaError.of(
            ErrorCode.Dataset.SCHEMA_ERROR, line=line_no, states=list(states.shape), actions=list(actions.shape)
        )
    goal_state = record.get("goal_state")
    if goal_state is not None:
        goal_state = np.asarray(goal_state, dtype=np.float64)
        if goal_state.shape != config.state_shape:
            raise SchemaError.of(ErrorCode.Dataset.SCHEMA_ERROR, line=line_no, goal_state=list(goal_state.shape))
    augmentation = record.get("augmentation")
    try:
        return Trajectory(
            states=states,
            actions=actions,
            task_id=record["task_id"],
            regime=record["regime"],
            seed=record["seed"],
            behavior=record.get("behavior", "random"),
            goal_state=goal_state,
            augmentation=AugmentationInfo.model_validate(augmentation) if augmentation is not None else None,
        )
    except (KeyError, ValidationError) as e:
        raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=line_no, reason=str(e))


def loads_dataset(text: str) -> Dataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if not lines:
        raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=1, reason="empty file")

    records = []
    for line_no, line in enumerate(lines, start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=line_no, reason=e.msg)

    header = records[0]
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=1, reason="missing dataset header")
    try:
        config = WorldConfig.model_validate(header["config"])
        provenance = Provenance.model_validate(header["provenance"])
    except (KeyError, ValidationError) as e:
        raise SchemaError.of(ErrorCode.Dataset.SCHEMA_ERROR, line=1, reason=str(e))

    trajectories = [_parse_trajectory(r, config, i) for i, r in enumerate(records[1:], start=2)]
    if len(trajectories) != header.get("n_trajectories"):
        raise ParseError.of(
            ErrorCode.Dataset.PARSE_ERROR,
            line=len(lines) + 1,
            reason=f"truncated: expected {header.get('n_trajectories')} trajectories, found {len(trajectories)}",
        )
    return Dataset(trajectories=trajectories, config=config, provenance=provenance)


def load(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise ArtifactMissingError.of(ErrorCode.Common.ARTIFACT_MISSING, path=str(path))
    return loads_dataset(path.read_text(encoding="utf-8"))
