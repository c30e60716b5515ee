"""
모델 체크포인트 저장소

첫 줄: JSON 헤더 (텐서 이름/형태, 헤드 구성, 메타데이터), 이후 little-endian float64 파라미터 블록.
"""

from pathlib import Path
from typing import Any, Dict, Tuple
import json

import numpy as np

from src.app.neural.models import Layer, MlpParams
from src.common.error import ArtifactMissingError, ErrorCode, ParseError, ShapeError
from src.common.utils.json_sanitizer import dumps_canonical
from src.common.utils.logger import set_logger

logger = set_logger("neural_repository")

MAGIC = "caiac-checkpoint"
FORMAT_VERSION = 1


def dumps_checkpoint(params: MlpParams, meta: Dict[str, Any] | None = None) -> bytes:
    tensors = params.tensors()
    header = {
        "format": MAGIC,
        "version": FORMAT_VERSION,
        "hidden_sizes": params.hidden_sizes,
        "heads": list(params.heads.keys()),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in zip(params.tensor_names(), tensors)],
        "meta": meta or {},
    }
    block = np.concatenate([np.ravel(t) for t in tensors]).astype("<f8").tobytes()
    return dumps_canonical(header).encode("utf-8") + b"\n" + block


def loads_checkpoint(data: bytes) -> Tuple[MlpParams, Dict[str, Any]]:
    newline = data.find(b"\n")
    if newline < 0:
        raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=1, reason="missing checkpoint header")
    try:
        header = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=1, reason=str(e))
    if not isinstance(header, dict) or header.get("format") != MAGIC:
        raise ParseError.of(ErrorCode.Dataset.PARSE_ERROR, line=1, reason="not a checkpoint file")

    flat = np.frombuffer(data[newline + 1:], dtype="<f8")
    shapes = [tuple(t["shape"]) for t in header["tensors"]]
    expected = sum(int(np.prod(s)) for s in shapes)
    if flat.size != expected:
        raise ShapeError.of(ErrorCode.Model.SHAPE_MISMATCH, expected=expected, actual=int(flat.size))

    tensors = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        tensors.append(flat[offset:offset + size].astype(np.float64).reshape(shape))
        offset += size

    it = iter(tensors)
    hidden = [Layer(weight=next(it), bias=next(it)) for _ in header["hidden_sizes"]]
    heads = {name: Layer(weight=next(it), bias=next(it)) for name in header["heads"]}
    return MlpParams(hidden=hidden, heads=heads), header.get("meta", {})


def save_checkpoint(params: MlpParams, path: str | Path, meta: Dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_checkpoint(params, meta))
    logger.info(f"체크포인트 저장: {path}")
    return path


def load_checkpoint(path: str | Path) -> Tuple[MlpParams, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise ArtifactMissingError.of(ErrorCode.Common.ARTIFACT_MISSING, path=str(path))
    return loads_checkpoint(path.read_bytes())
