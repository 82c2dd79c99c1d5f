from .core import ADMIN, RecoveryReport, Service, ServiceConfig, load_config, recover
from .http import make_app, serve
from .log import EventLog, LogRecord, ReadResult, RecordType, read_log

__all__ = [
    "ADMIN",
    "Service",
    "ServiceConfig",
    "RecoveryReport",
    "load_config",
    "recover",
    "make_app",
    "serve",
    "EventLog",
    "LogRecord",
    "ReadResult",
    "RecordType",
    "read_log",
]
