"""
시드 파생 유틸리티

모든 난수는 [run] seed 하나에서 (seed, 섹션 이름, 인덱스...) 형태로 파생된다.
문자열 키는 sha256 으로 정수화해서 SeedSequence 엔트로피에 넣는다.
"""

import hashlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, str):
        return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")
    if key < 0:
        raise ValueError(f"seed key must be non-negative: {key}")
    return int(key)


def derive_seed(seed: int, *keys: int | str) -> int:
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def derive_rng(seed: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
