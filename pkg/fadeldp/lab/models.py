from django.db import models


class ExperimentRun(models.Model):
    STATUS_RUNNING = 'running'
    STATUS_SUCCESS = 'success'
    STATUS_FAILED = 'failed'
    STATUS_CHOICES = [
        (STATUS_RUNNING, 'Выполняется'),
        (STATUS_SUCCESS, 'Успешно'),
        (STATUS_FAILED, 'Ошибка'),
    ]

    runId = models.BigAutoField(primary_key=True)
    experimentKind = models.CharField(max_length=50, verbose_name='Эксперимент')
    scenario = models.CharField(max_length=100, blank=True, default='', verbose_name='Сценарий')
    configHash = models.CharField(max_length=64, db_index=True, verbose_name='Хэш конфигурации')
    seed = models.BigIntegerField(default=0, verbose_name='Seed')
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default=STATUS_RUNNING,
                              verbose_name='Статус')
    exitCode = models.IntegerField(null=True, blank=True, verbose_name='Код выхода')
    message = models.TextField(blank=True, default='', verbose_name='Сообщение')
    wallTime = models.FloatField(null=True, blank=True, verbose_name='Время работы, с')
    cacheHit = models.BooleanField(default=False, verbose_name='Взято из кэша')
    outputDir = models.CharField(max_length=500, blank=True, default='', verbose_name='Папка вывода')
    manifestPath = models.CharField(max_length=500, blank=True, default='', verbose_name='Манифест')
    startedAt = models.DateTimeField(auto_now_add=True, verbose_name='Начало')
    finishedAt = models.DateTimeField(null=True, blank=True, verbose_name='Окончание')

    class Meta:
        db_table = 'experimentRun'
        ordering = ['-startedAt']
        verbose_name = 'Запуск эксперимента'
        verbose_name_plural = 'Запуски экспериментов'

    def __str__(self):
        return f'{self.experimentKind} #{self.runId} ({self.status})'


class SweepCache(models.Model):
    cacheId = models.BigAutoField(primary_key=True)
    configHash = models.CharField(max_length=64, unique=True, verbose_name='Хэш конфигурации')
    experimentKind = models.CharField(max_length=50, verbose_name='Эксперимент')
    payload = models.JSONField(verbose_name='Результат')
    hits = models.PositiveIntegerField(default=0, verbose_name='Обращений')
    createdAt = models.DateTimeField(auto_now_add=True, verbose_name='Дата создания')

    class Meta:
        db_table = 'sweepCache'
        verbose_name = 'Кэш прогонов'
        verbose_name_plural = 'Кэш прогонов'

    def __str__(self):
        return f'{self.experimentKind} {self.configHash[:12]}'
