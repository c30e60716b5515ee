import logging
import sys
from typing import List

from pydantic import ValidationError

from src.app.cli.repository import load_run_config
from src.app.cli.router import parse_args
from src.app.cli.service import COMMANDS, CliContext
from src.common.error import VALIDATION_ERRORS, CaiacError, log_runtime_error
from src.common.utils.logger import init_logger, set_level, set_logger
from src.config.setting import settings

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

logger = set_logger("main")


def main(argv: List[str] | None = None) -> int:
    init_logger()
    try:
        args = parse_args(argv)
    except SystemExit as e:
        # argparse 사용법 오류도 검증 실패로 본다 (--help / --version 은 0)
        return EXIT_OK if not e.code else EXIT_VALIDATION
    if args.verbose:
        set_level(logging.DEBUG)

    try:
        config = load_run_config(args.config)
        ctx = CliContext(config, args)
        logger.info(f"[{settings.VERSION} | {settings.STAGE}] {args.command} 시작 (seed={ctx.config.run.seed}, out={ctx.paths.root}, hash={ctx.config_hash})")
        artifacts = COMMANDS[args.command](ctx)
        for path in artifacts:
            logger.info(f"산출물: {path}")
        return EXIT_OK
    except VALIDATION_ERRORS as e:
        logger.error(f"{e.__class__.__name__}: {e}")
        return EXIT_VALIDATION
    except ValidationError as e:
        # 모르는 키는 extra_forbidden 으로 키 이름이 메시지에 남는다
        logger.error(f"설정 검증 실패: {e}")
        return EXIT_VALIDATION
    except CaiacError as e:
        log_runtime_error(e, logger)
        return EXIT_RUNTIME
    except Exception as e:
        log_runtime_error(e, logger)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
