# Запуск эксперимента по конфигурации: проверка, кэш, журнал запусков и запись артефактов.
import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from django.conf import settings
from django.db.models import F
from django.utils import timezone

from . import artifacts
from .exceptions import ConfigError, InfeasibleRateError, ModelRefusalError, handle_exception
from .experiments import (
    CACHEABLE_KINDS, EPS_KINDS, EXPERIMENTS, ExperimentContext, ExperimentOutcome, build_model, build_params,
)
from .models import ExperimentRun, SweepCache
from .scenarios import deep_merge, default_eps, scenario_config
from .serializers import RunConfigSerializer

logger = logging.getLogger(__name__)


@dataclass
class RunSummary:
    run_id: int
    kind: str
    config_hash: str
    out_dir: Path
    exit_code: int = 0
    message: str = ''
    cache_hit: bool = False
    result: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.exit_code == 0


def load_config_file(path):
    try:
        with open(path, encoding='utf-8') as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f'Файл {path} не является корректным JSON: {exc}.', code='parse_error')


def parse_config(data):
    """Проверяет конфигурацию и возвращает её каноническую форму."""
    serializer = RunConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    return json.loads(artifacts.canonical_json(serializer.validated_data))


def prepare_config(raw, kind=None, scenario=None, seed=None, output_dir=None, cache=None):
    """
    Сливает сценарий с файлом конфигурации и применяет переопределения
    командной строки. Сценарий задаёт блоки model и memory и eps по умолчанию.
    """
    if not isinstance(raw, dict):
        raise ConfigError('Конфигурация должна быть объектом JSON.', code='parse_error')
    data = copy.deepcopy(raw)
    name = scenario or data.get('scenario')
    if name:
        data = deep_merge(scenario_config(name), data)
        data['scenario'] = name
    experiment = data.setdefault('experiment', {})
    if not isinstance(experiment, dict):
        raise ConfigError('Блок experiment должен быть объектом.', code='parse_error')
    if kind:
        if experiment.get('kind') not in (None, kind):
            raise ConfigError(
                f'Подкоманда «{kind}» не совпадает с experiment.kind = «{experiment["kind"]}».',
                code='kind_mismatch')
        experiment['kind'] = kind
    params = experiment.setdefault('params', {})
    if name and experiment.get('kind') in EPS_KINDS and isinstance(params, dict) and 'eps' not in params:
        params['eps'] = default_eps(name)
    if seed is not None:
        data['seed'] = seed
    if output_dir is not None:
        data['output_dir'] = str(output_dir)
    if cache is not None:
        data['cache'] = cache
    return parse_config(data)


def output_dir_for(config, config_hash):
    if config.get('output_dir'):
        return Path(config['output_dir'])
    root = Path(getattr(settings, 'FADELDP_OUTPUT_DIR', 'runs'))
    return root / f'{config["experiment"]["kind"]}-{config_hash[:12]}'


def _cached_outcome(config_hash):
    entry = SweepCache.objects.filter(configHash=config_hash).first()
    if entry is None:
        return None
    SweepCache.objects.filter(pk=entry.pk).update(hits=F('hits') + 1)
    logger.info('Результат взят из кэша: %s', config_hash[:12])
    return ExperimentOutcome(entry.payload['result'], entry.payload['tables'])


def _store_outcome(config_hash, kind, outcome):
    payload = {'result': artifacts.json_safe(outcome.result), 'tables': artifacts.json_safe(outcome.tables)}
    SweepCache.objects.update_or_create(configHash=config_hash,
                                        defaults={'experimentKind': kind, 'payload': payload})


def _write_artifacts(out_dir, config, outcome):
    written = [
        artifacts.write_json(out_dir / 'config.json', config),
        artifacts.write_json(out_dir / 'result.json', outcome.result),
    ]
    for name, rows in sorted(outcome.tables.items()):
        if rows:
            written.append(artifacts.write_csv(out_dir / f'{name}.csv', rows))
    for name, path in sorted(outcome.paths.items()):
        written.append(artifacts.write_path_binary(out_dir / name, path))
    return written


def _raise_failure(outcome):
    if outcome.failure == 'infeasible':
        raise InfeasibleRateError(outcome.failure_detail)
    if outcome.failure == 'unstable':
        raise ModelRefusalError(outcome.failure_detail, margin=outcome.margin)


def execute(config, threads=None):
    """
    Выполняет проверенную конфигурацию. Ошибки эксперимента не пробрасываются:
    код выхода и сообщение возвращаются в RunSummary и пишутся в журнал запусков.
    """
    kind = config['experiment']['kind']
    config_hash = artifacts.config_hash(config)
    out_dir = output_dir_for(config, config_hash)
    run = ExperimentRun.objects.create(
        experimentKind=kind,
        scenario=config.get('scenario') or '',
        configHash=config_hash,
        seed=config['seed'],
        outputDir=str(out_dir),
    )
    summary = RunSummary(run.runId, kind, config_hash, out_dir)
    started = time.perf_counter()
    logger.info('Запуск %s #%s, хэш %s, вывод в %s', kind, run.runId, config_hash[:12], out_dir)
    try:
        model = build_model(config['model'])
        params = build_params(model, config['memory'])
        use_cache = config['cache'] and kind in CACHEABLE_KINDS
        outcome = _cached_outcome(config_hash) if use_cache else None
        summary.cache_hit = outcome is not None
        if outcome is None:
            ctx = ExperimentContext(model, params, config['experiment']['params'], config['seed'], threads)
            outcome = EXPERIMENTS[kind](ctx)
            if use_cache and outcome.failure is None:
                _store_outcome(config_hash, kind, outcome)
        written = _write_artifacts(out_dir, config, outcome)
        wall_time = time.perf_counter() - started
        manifest = artifacts.write_manifest(
            out_dir,
            config_hash_value=config_hash,
            kind=kind,
            seed=config['seed'],
            wall_time=wall_time,
            cache_hit=summary.cache_hit,
            artifacts=[path.name for path in written],
        )
        run.manifestPath = str(manifest)
        summary.result = artifacts.json_safe(outcome.result)
        _raise_failure(outcome)
    except Exception as exc:
        summary.exit_code, summary.message, _ = handle_exception(exc)
        run.status = ExperimentRun.STATUS_FAILED
        logger.warning('Запуск #%s завершился с кодом %s: %s', run.runId, summary.exit_code, summary.message)
    else:
        run.status = ExperimentRun.STATUS_SUCCESS
        summary.message = f'Результаты записаны в {out_dir}'
    run.exitCode = summary.exit_code
    run.message = summary.message
    run.wallTime = time.perf_counter() - started
    run.cacheHit = summary.cache_hit
    run.finishedAt = timezone.now()
    run.save()
    return summary
