"""
JSON 직렬화를 위한 안전한 데이터 변환 유틸리티
numpy 값을 파이썬 기본형으로 바꾸고, 정렬된 키로 결정론적인 JSON 을 만든다
"""

import hashlib
import json
import math
from pathlib import Path
from typing import Any

import numpy as np


def sanitize_for_json(data: Any) -> Any:
    """
    JSON 직렬화를 위해 numpy 값과 inf, -inf, nan 값을 안전한 값으로 변환

    Args:
        data: 변환할 데이터 (dict, list, ndarray, primitive 등)

    Returns:
        JSON 직렬화 가능한 안전한 데이터
    """
    if isinstance(data, dict):
        return {str(key): sanitize_for_json(value) for key, value in data.items()}
    elif isinstance(data, (list, tuple)):
        return [sanitize_for_json(item) for item in data]
    elif isinstance(data, np.ndarray):
        return sanitize_for_json(data.tolist())
    elif isinstance(data, (np.bool_,)):
        return bool(data)
    elif isinstance(data, np.integer):
        return int(data)
    elif isinstance(data, (float, np.floating)):
        data = float(data)
        if math.isnan(data):
            return None
        elif math.isinf(data):
            return "inf" if data > 0 else "-inf"
        else:
            return data
    else:
        return data


def dumps_canonical(data: Any) -> str:
    """
    결정론적 JSON 직렬화 (키 정렬, 공백 없음)

    float 는 repr 로 기록되므로 최대 17자리 유효숫자로 정확히 복원된다.
    """
    return json.dumps(sanitize_for_json(data), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(data: Any, length: int = 12) -> str:
    return hashlib.sha256(dumps_canonical(data).encode("utf-8")).hexdigest()[:length]


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
