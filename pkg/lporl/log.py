import logging
import os

import coloredlogs

from . import PKG_NAME

ROOT_LOGGER = logging.getLogger()
ROOT_LOGGER.setLevel(logging.DEBUG)
PKG_LOGGER = logging.getLogger(PKG_NAME)
PKG_STREAM_HANDLER = None
PKG_FILE_HANDLER = None

LOG_FORMAT = '%(asctime)s %(hostname)s %(name)s[%(process)d] %(levelname)s %(message)s'


def setup_logging(stream_log_level=None, log_path=None, file_log_level=None,
                  log_dir=None, **kwargs):
    global PKG_FILE_HANDLER, PKG_STREAM_HANDLER

    if log_path:
        if log_dir:
            log_path = os.path.join(os.path.expanduser(log_dir), log_path)
        if PKG_FILE_HANDLER:
            ROOT_LOGGER.removeHandler(PKG_FILE_HANDLER)
            PKG_FILE_HANDLER.close()
        PKG_FILE_HANDLER = logging.FileHandler(log_path)
        PKG_FILE_HANDLER.setFormatter(logging.Formatter(
            '%(asctime)s %(name)s %(levelname)s %(message)s'))
        ROOT_LOGGER.addHandler(PKG_FILE_HANDLER)
    if file_log_level and PKG_FILE_HANDLER:
        PKG_FILE_HANDLER.setLevel(log_level_value(file_log_level))
    if stream_log_level:
        if not PKG_STREAM_HANDLER:
            PKG_STREAM_HANDLER = logging.StreamHandler()
            if os.name != 'nt':
                PKG_STREAM_HANDLER.setFormatter(coloredlogs.ColoredFormatter(LOG_FORMAT))
            PKG_STREAM_HANDLER.addFilter(coloredlogs.HostNameFilter())
            PKG_STREAM_HANDLER.addFilter(coloredlogs.ProgramNameFilter())
            ROOT_LOGGER.addHandler(PKG_STREAM_HANDLER)
        PKG_STREAM_HANDLER.setLevel(log_level_value(stream_log_level))

    if PKG_STREAM_HANDLER:
        PKG_LOGGER.debug("stream log level: %s", PKG_STREAM_HANDLER.level)
    if PKG_FILE_HANDLER:
        PKG_LOGGER.debug("file log level: %s", PKG_FILE_HANDLER.level)


def log_level_value(log_level):
    if isinstance(log_level, int):
        return log_level
    if isinstance(log_level, str) and hasattr(logging, log_level.upper()):
        return getattr(logging, log_level.upper())
    return logging.WARNING


def log_level_quiet(log_level):
    return log_level_value(log_level) > logging.WARNING


def log_stream_quiet():
    if PKG_STREAM_HANDLER:
        return log_level_quiet(PKG_STREAM_HANDLER.level)
    return False


setup_logging(stream_log_level='WARNING')
