"""
Rotating-file logger with caller information
PATH: ./simpleLogger.py
"""
import os
import sys
import logging
import configparser
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional, Union

Message = Union[str, Exception, dict, list, tuple, set, int, float, bool]

LEVELS = {
    'debug': logging.DEBUG,
    'info': logging.INFO,
    'warning': logging.WARNING,
    'error': logging.ERROR,
    'critical': logging.CRITICAL
}


class CallerPathFilter(logging.Filter):
    """Filter that corrects the caller information in log records."""

    def filter(self, record):
        """
        Walk up past SimpleLogger's own frames and the logging package so the
        record names the module that actually asked for the message.
        """
        frame = sys._getframe(0)

        while frame:
            code = frame.f_code
            if (code.co_filename != __file__ and
                'logging' not in code.co_filename):
                record.filename = os.path.basename(code.co_filename)
                record.lineno = frame.f_lineno
                record.funcName = code.co_name
                record.pathname = code.co_filename
                break
            frame = frame.f_back

        return True


class SimpleLogger:
    """
    Thread-safe logger with file rotation and a console fallback.
    Includes source file, line number, and function name in log output.

    Example usage:
        logger = SimpleLogger('solver')
        logger.info("sweep 3 converged")

        # Output example:
        # 2026-10-17_10:11:12 solver INFO [solver.py:212 find_crossing] sweep 3 converged
    """

    # Used when no [LOG] section is found
    DEFAULT_CONFIG = {
        'app_name': 'raftlab',
        'log_path': 'logs',
        'max_size_mb': 16,
        'backup_count': 3,
        'console_output': False,
        'level': 'info'
    }

    LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s [%(filename)s:%(lineno)d %(funcName)s] %(message)s'
    DATE_FORMAT = '%Y-%m-%d_%H:%M:%S'

    @classmethod
    def _config_paths(cls, app_name: str):
        here = os.path.dirname(os.path.abspath(__file__))
        return [
            os.environ.get('RAFT_CONFIG', ''),
            os.path.join(here, 'config.ini'),
            'config.ini',
            'conf/config.ini',
            os.path.expanduser(f'~/.{app_name}/config.ini')
        ]

    @classmethod
    def _load_config(cls, app_name: str) -> dict:
        """Read the [LOG] section from the first config.ini found, else defaults."""
        settings = cls.DEFAULT_CONFIG.copy()
        settings['app_name'] = app_name

        try:
            parser = configparser.ConfigParser()
            for path in cls._config_paths(app_name):
                if path and os.path.exists(path):
                    parser.read(path)
                    break

            if 'LOG' in parser:
                section = parser['LOG']
                settings.update({
                    'log_path': section.get('log_path', settings['log_path']),
                    'max_size_mb': max(1, section.getint('max_size', settings['max_size_mb'] * 1024 * 1024) // (1024 * 1024)),
                    'backup_count': section.getint('backup_count', settings['backup_count']),
                    'console_output': section.getboolean('console_output', settings['console_output']),
                    'level': section.get('level', settings['level']).strip().lower()
                })
        except Exception as e:
            print(f"Warning: Error loading [LOG] config, using defaults: {e}", file=sys.stderr)

        return settings

    def __init__(
        self,
        log_name: str,
        app_name: Optional[str] = None,
        log_path: Optional[str] = None,
        max_size_mb: Optional[int] = None,
        backup_count: Optional[int] = None,
        console_output: Optional[bool] = None,
        level: Optional[str] = None
    ):
        """
        Args:
            log_name: logger name, also the log file stem
            app_name: used for the per-user config lookup
            log_path: directory for log files; relative paths resolve against the repo root
            max_size_mb: rotate after this many MB
            backup_count: rotated files to keep
            console_output: also (or only) write to stderr
            level: debug, info, warning, error or critical
        """
        self.app_name = app_name if app_name is not None else self.DEFAULT_CONFIG['app_name']
        settings = self._load_config(self.app_name)

        self.log_name = f"{log_name}.log"
        self.log_path = log_path if log_path is not None else settings['log_path']
        self.max_size_mb = max_size_mb if max_size_mb is not None else settings['max_size_mb']
        self.backup_count = backup_count if backup_count is not None else settings['backup_count']
        self.console_output = console_output if console_output is not None else settings['console_output']
        self.level = LEVELS.get((level or settings['level']), logging.INFO)

        self.logger: Optional[logging.Logger] = None

        try:
            if not os.path.isabs(self.log_path):
                self.log_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), self.log_path)
            self.log_path = str(Path(self.log_path).resolve())

            self.logger = logging.getLogger(f"{self.app_name}.{log_name}")
            self.logger.setLevel(self.level)
            self.logger.propagate = False

            if not self.logger.handlers:
                self.logger.addFilter(CallerPathFilter())
                formatter = logging.Formatter(self.LOG_FORMAT, datefmt=self.DATE_FORMAT)
                handlers = []

                try:
                    os.makedirs(self.log_path, exist_ok=True)
                    file_handler = RotatingFileHandler(
                        filename=os.path.join(self.log_path, self.log_name),
                        maxBytes=self.max_size_mb * 1024 * 1024,
                        backupCount=self.backup_count,
                        encoding='utf-8',
                        delay=True
                    )
                    file_handler.setFormatter(formatter)
                    handlers.append(file_handler)
                except (OSError, PermissionError) as e:
                    print(f"Warning: Failed to create file handler: {e}", file=sys.stderr)

                # stdout carries JSON reports, so the console handler writes to stderr
                if self.console_output or not handlers:
                    console_handler = logging.StreamHandler(sys.stderr)
                    console_handler.setFormatter(formatter)
                    handlers.append(console_handler)

                for handler in handlers:
                    self.logger.addHandler(handler)

        except Exception as e:
            print(f"Warning: Failed to initialize logger: {e}", file=sys.stderr)
            self.logger = logging.getLogger(log_name)
            self.logger.setLevel(self.level)
            console_handler = logging.StreamHandler(sys.stderr)
            console_handler.setFormatter(logging.Formatter(self.LOG_FORMAT, datefmt=self.DATE_FORMAT))
            self.logger.addHandler(console_handler)

    def set_level(self, level: str) -> None:
        self.logger.setLevel(LEVELS.get(level.lower(), logging.INFO))

    def _log(self, level: int, *messages: Message) -> None:
        """Join messages with spaces and emit; logging must never raise into callers."""
        try:
            if not self.logger.isEnabledFor(level):
                return
            self.logger.log(level, " ".join(str(msg) for msg in messages))
        except Exception as e:
            print(f"Failed to log message: {e}", file=sys.stderr)

    def d(self, *messages: Message) -> None:
        self._log(logging.DEBUG, *messages)

    def debug(self, *messages: Message) -> None:
        self._log(logging.DEBUG, *messages)

    def i(self, *messages: Message) -> None:
        self._log(logging.INFO, *messages)

    def info(self, *messages: Message) -> None:
        self._log(logging.INFO, *messages)

    def w(self, *messages: Message) -> None:
        self._log(logging.WARNING, *messages)

    def warning(self, *messages: Message) -> None:
        self._log(logging.WARNING, *messages)

    def e(self, *messages: Message) -> None:
        self._log(logging.ERROR, *messages)

    def error(self, *messages: Message) -> None:
        self._log(logging.ERROR, *messages)

    def c(self, *messages: Message) -> None:
        self._log(logging.CRITICAL, *messages)

    def critical(self, *messages: Message) -> None:
        self._log(logging.CRITICAL, *messages)

    def exception(self, *messages: Message) -> None:
        """Log at ERROR with the active traceback attached."""
        try:
            self.logger.exception(" ".join(str(msg) for msg in messages))
        except Exception as e:
            print(f"Failed to log exception: {e}", file=sys.stderr)
