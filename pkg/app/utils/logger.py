import logging
import sys
import time
from datetime import datetime
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path
from typing import Optional, TextIO

from app.config import settings

LOG_FORMAT = (
    '%(asctime)s - %(name)s - %(levelname)s - '
    '[%(filename)s:%(lineno)d] - %(message)s'
)


def setup_logging(
    level: Optional[str] = None,
    to_file: Optional[bool] = None,
    stream: TextIO = sys.stdout
):
    """Configura o sistema de logging da aplicação"""

    level_name = (level or settings.LOG_LEVEL).upper()
    log_level = getattr(logging, level_name, logging.INFO)

    log_format = logging.Formatter(LOG_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')

    handlers = []

    write_file = settings.LOG_TO_FILE if to_file is None else to_file
    log_filename = None
    if write_file:
        log_dir = Path(settings.LOG_DIR)
        log_dir.mkdir(parents=True, exist_ok=True)
        log_filename = log_dir / f"moarouter_{datetime.now().strftime('%Y%m')}.log"

        file_handler = TimedRotatingFileHandler(
            filename=log_filename,
            when='D',  # Rotação diária
            interval=1,
            backupCount=30,
            encoding='utf-8'
        )
        file_handler.setFormatter(log_format)
        file_handler.setLevel(log_level)
        handlers.append(file_handler)

    console_handler = logging.StreamHandler(stream)
    console_handler.setFormatter(log_format)
    console_handler.setLevel(log_level)
    handlers.append(console_handler)

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    # Remover handlers existentes
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    for handler in handlers:
        root_logger.addHandler(handler)

    # Loggers de terceiros
    logging.getLogger('urllib3').setLevel(logging.WARNING)
    logging.getLogger('requests').setLevel(logging.WARNING)
    logging.getLogger('httpx').setLevel(logging.WARNING)

    logger = logging.getLogger(__name__)
    logger.debug(f"Logging configurado: level={level_name}, arquivo={log_filename}")


class PerformanceLogger:
    """Logger para métricas de performance de uma operação"""

    def __init__(self, operation_name: str, slow_ms: Optional[float] = None, **context):
        self.operation_name = operation_name
        self.slow_ms = settings.SLOW_OPERATION_MS if slow_ms is None else slow_ms
        self.context = context
        self.logger = logging.getLogger('performance')
        self.duration_ms = 0.0

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration_ms = (time.perf_counter() - self._start) * 1000

        log_data = {
            'operation': self.operation_name,
            'duration_ms': round(self.duration_ms, 3),
            'success': exc_type is None,
            **self.context
        }

        if exc_type is not None:
            log_data['exception'] = str(exc_val)
            self.logger.error(log_data)
        elif self.duration_ms > self.slow_ms:
            self.logger.warning(log_data)
        else:
            self.logger.debug(log_data)
        return False
