# Generated by Django 5.2.7 on 2026-10-18 11:02

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('runId', models.BigAutoField(primary_key=True, serialize=False)),
                ('experimentKind', models.CharField(max_length=50, verbose_name='Эксперимент')),
                ('scenario', models.CharField(blank=True, default='', max_length=100, verbose_name='Сценарий')),
                ('configHash', models.CharField(db_index=True, max_length=64, verbose_name='Хэш конфигурации')),
                ('seed', models.BigIntegerField(default=0, verbose_name='Seed')),
                ('status', models.CharField(choices=[('running', 'Выполняется'), ('success', 'Успешно'), ('failed', 'Ошибка')], default='running', max_length=20, verbose_name='Статус')),
                ('exitCode', models.IntegerField(blank=True, null=True, verbose_name='Код выхода')),
                ('message', models.TextField(blank=True, default='', verbose_name='Сообщение')),
                ('wallTime', models.FloatField(blank=True, null=True, verbose_name='Время работы, с')),
                ('cacheHit', models.BooleanField(default=False, verbose_name='Взято из кэша')),
                ('outputDir', models.CharField(blank=True, default='', max_length=500, verbose_name='Папка вывода')),
                ('manifestPath', models.CharField(blank=True, default='', max_length=500, verbose_name='Манифест')),
                ('startedAt', models.DateTimeField(auto_now_add=True, verbose_name='Начало')),
                ('finishedAt', models.DateTimeField(blank=True, null=True, verbose_name='Окончание')),
            ],
            options={
                'verbose_name': 'Запуск эксперимента',
                'verbose_name_plural': 'Запуски экспериментов',
                'db_table': 'experimentRun',
                'ordering': ['-startedAt'],
            },
        ),
        migrations.CreateModel(
            name='SweepCache',
            fields=[
                ('cacheId', models.BigAutoField(primary_key=True, serialize=False)),
                ('configHash', models.CharField(max_length=64, unique=True, verbose_name='Хэш конфигурации')),
                ('experimentKind', models.CharField(max_length=50, verbose_name='Эксперимент')),
                ('payload', models.JSONField(verbose_name='Результат')),
                ('hits', models.PositiveIntegerField(default=0, verbose_name='Обращений')),
                ('createdAt', models.DateTimeField(auto_now_add=True, verbose_name='Дата создания')),
            ],
            options={
                'verbose_name': 'Кэш прогонов',
                'verbose_name_plural': 'Кэш прогонов',
                'db_table': 'sweepCache',
            },
        ),
    ]
