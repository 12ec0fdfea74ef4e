# python manage.py fadeldp check-model --scenario delay-ou - Проверить условие диссипативности
# python manage.py fadeldp simulate --config run.json --out runs/sim --seed 7 - Смоделировать путь
# python manage.py fadeldp scenarios - Показать встроенные сценарии

import json

from django.core.management import call_command
from django.core.management.base import BaseCommand, CommandError

from lab.exceptions import handle_exception
from lab.runner import execute, load_config_file, prepare_config
from lab.scenarios import scenario_registry
from lab.serializers import EXPERIMENT_KINDS


class Command(BaseCommand):
    help = 'Численные эксперименты с уравнениями с затухающей памятью и малым шумом'

    def add_arguments(self, parser):
        parser.add_argument(
            'subcommand',
            choices=[*EXPERIMENT_KINDS, 'scenarios'],
            help='Эксперимент или scenarios для списка сценариев',
        )
        parser.add_argument(
            '--config',
            help='Путь к JSON-файлу конфигурации',
        )
        parser.add_argument(
            '--scenario',
            help='Встроенный сценарий; блоки файла конфигурации переопределяют его',
        )
        parser.add_argument(
            '--out',
            help='Папка для результатов (по умолчанию FADELDP_OUTPUT_DIR/<эксперимент>-<хэш>)',
        )
        parser.add_argument(
            '--seed',
            type=int,
            help='Переопределить seed из конфигурации',
        )
        parser.add_argument(
            '--no-cache',
            action='store_true',
            help='Не читать и не записывать кэш прогонов',
        )
        parser.add_argument(
            '--threads',
            type=int,
            help='Число потоков для блоков реплик',
        )

    def handle(self, *args, **options):
        subcommand = options['subcommand']
        if subcommand == 'scenarios':
            self._print_scenarios()
            return

        if not options['config'] and not options['scenario']:
            raise CommandError('Нужен --config или --scenario.', returncode=2)
        if options['seed'] is not None and options['seed'] < 0:
            raise CommandError('seed должен быть неотрицательным.', returncode=2)

        # Журнал запусков и кэш живут в БД; на чистой копии создаём таблицы
        call_command('migrate', verbosity=0, interactive=False)

        try:
            raw = load_config_file(options['config']) if options['config'] else {}
            config = prepare_config(
                raw,
                kind=subcommand,
                scenario=options['scenario'],
                seed=options['seed'],
                output_dir=options['out'],
                cache=False if options['no_cache'] else None,
            )
        except Exception as exc:
            code, message, _ = handle_exception(exc)
            raise CommandError(message, returncode=code)

        summary = execute(config, threads=options['threads'])
        if summary.result:
            self.stdout.write(json.dumps(summary.result, ensure_ascii=False, indent=2, sort_keys=True))
        if not summary.ok:
            raise CommandError(summary.message, returncode=summary.exit_code)

        note = ' (из кэша)' if summary.cache_hit else ''
        self.stdout.write(self.style.SUCCESS(f'{summary.message}{note}'))

    def _print_scenarios(self):
        for item in scenario_registry():
            self.stdout.write(self.style.SUCCESS(f'{item["name"]}') + f' (eps = {item["default_eps"]})')
            self.stdout.write(f'  {item["description"]}')
            self.stdout.write(json.dumps({'model': item['model'], 'memory': item['memory']},
                                         ensure_ascii=False, sort_keys=True))
