# Запись результатов прогона: JSON, CSV, двоичные пути и манифест.
# Все файлы пишутся атомарно: временный файл в той же папке и os.replace.
import csv
import hashlib
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, is_dataclass
from importlib import metadata
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

PATH_MAGIC = b'FADELDP1'
PATH_HEADER = struct.Struct('<8sIQdd')
HASH_EXCLUDED_KEYS = frozenset({'output_dir', 'cache'})
VERSIONED_PACKAGES = ('numpy', 'scipy', 'Django', 'djangorestframework', 'python-decouple')


# Приводим значение к виду, пригодному для JSON
def json_safe(val):
    if val is None:
        return None
    if isinstance(val, (bool, np.bool_)):
        return bool(val)
    if isinstance(val, (np.integer, int)):
        return int(val)
    if isinstance(val, (np.floating, float)):
        val = float(val)
        # inf и nan в JSON не представимы
        return val if math.isfinite(val) else str(val)
    if isinstance(val, str):
        return val
    if isinstance(val, np.ndarray):
        return json_safe(val.tolist())
    if hasattr(val, 'to_dict'):
        return json_safe(val.to_dict())
    if is_dataclass(val):
        return json_safe(asdict(val))
    if isinstance(val, (list, tuple)):
        return [json_safe(v) for v in val]
    if isinstance(val, dict):
        return {str(k): json_safe(v) for k, v in val.items()}
    if hasattr(val, 'isoformat'):
        return val.isoformat()
    return str(val)


def canonical_json(data):
    return json.dumps(json_safe(data), sort_keys=True, ensure_ascii=False, separators=(',', ':'))


def config_hash(config):
    """SHA-256 конфигурации без путей вывода и флага кэша."""
    payload = {key: value for key, value in config.items() if key not in HASH_EXCLUDED_KEYS}
    return hashlib.sha256(canonical_json(payload).encode('utf-8')).hexdigest()


def _atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, data):
    text = json.dumps(json_safe(data), sort_keys=True, ensure_ascii=False, indent=2) + '\n'
    return _atomic_write(path, text.encode('utf-8'))


def write_csv(path, rows, fieldnames=None):
    rows = [json_safe(row) for row in rows]
    if fieldnames is None:
        fieldnames = []
        for row in rows:
            fieldnames.extend(key for key in row if key not in fieldnames)
    buffer = io.StringIO(newline='')
    writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator='\n')
    writer.writeheader()
    writer.writerows(rows)
    return _atomic_write(path, buffer.getvalue().encode('utf-8'))


def write_path_binary(path, trajectory):
    states = np.ascontiguousarray(trajectory.states, dtype='<f8')
    n, d = states.shape
    header = PATH_HEADER.pack(PATH_MAGIC, d, n, float(trajectory.t0), float(trajectory.h))
    return _atomic_write(path, header + states.tobytes())


def read_path_binary(path):
    """Возвращает (t0, h, состояния формы (n, d))."""
    raw = Path(path).read_bytes()
    if len(raw) < PATH_HEADER.size:
        raise ConfigError(f'Файл {path} слишком короткий для заголовка пути.')
    magic, d, n, t0, h = PATH_HEADER.unpack_from(raw)
    if magic != PATH_MAGIC:
        raise ConfigError(f'Файл {path} не является двоичным путём: неверная сигнатура.')
    body = raw[PATH_HEADER.size:]
    if len(body) != 8 * n * d:
        raise ConfigError(f'Размер данных в {path} не совпадает с заголовком ({n}×{d}).')
    return t0, h, np.frombuffer(body, dtype='<f8').reshape(n, d).copy()


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as fh:
        for block in iter(lambda: fh.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


def package_versions():
    versions = {}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def write_manifest(out_dir, *, config_hash_value, kind, seed, wall_time, cache_hit, artifacts):
    """Манифест перечисляет каждый файл прогона вместе с его SHA-256."""
    out_dir = Path(out_dir)
    manifest = {
        'config_hash': config_hash_value,
        'experiment': kind,
        'seed': seed,
        'wall_time': wall_time,
        'cache_hit': cache_hit,
        'versions': package_versions(),
        'artifacts': [
            {'file': Path(name).name, 'sha256': sha256_file(out_dir / Path(name).name)}
            for name in sorted(artifacts)
        ],
    }
    return write_json(out_dir / 'manifest.json', manifest)
