# 가우시안 헤드 분산 범위
VARIANCE_FLOOR = 1e-8
VARIANCE_CEIL = 200.0

# 결정론적 환경의 재현 허용 오차 (max-norm)
REPLAY_TOLERANCE = 1e-6

AGENT_INDEX = 0
