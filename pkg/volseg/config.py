import logging
import os
from pathlib import Path

from .exceptions import SpecError


logger = logging.getLogger(__name__)

ENV_VAR = 'VOLSEG_CONFIG'

_true = {'1', 'true', 'yes', 'on'}
_false = {'0', 'false', 'no', 'off'}


def normalize_key(key: str) -> str:
    return key.strip().lower().replace('-', '_')


def parse_config(text: str, *, source: str = '<config>') -> dict:
    values = dict()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue

        key, sep, value = line.partition('=')
        if not sep or not key.strip():
            raise SpecError(f'{source}:{lineno}: expected key=value, got {line!r}')

        values[normalize_key(key)] = value.strip()

    return values


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise SpecError(f'Cannot read config file {path}: {e}') from e

    logger.debug('Loaded config %s', path)
    return parse_config(text, source=str(path))


def load_config(path=None) -> dict:
    """Merge the ``VOLSEG_CONFIG`` file with ``path``; later sources win."""
    values = dict()

    env_path = os.environ.get(ENV_VAR)
    if env_path:
        values.update(read_config(env_path))
    if path is not None:
        values.update(read_config(path))

    return values


def format_config(values: dict) -> str:
    return ''.join(f'{key}={value}\n' for key, value in values.items())


def to_bool(value) -> bool:
    if isinstance(value, bool):
        return value

    text = str(value).strip().lower()
    if text in _true:
        return True
    if text in _false:
        return False
    raise SpecError(f'Expected a boolean, got {value!r}')
