# Кастомный test runner для fadeldp.
from django.conf import settings
from django.test.runner import DiscoverRunner

SLOW_TAG = 'slow'


class LabTestRunner(DiscoverRunner):
    """Пропускает приёмочные прогоны с тегом slow, если не задан FADELDP_SLOW_TESTS."""

    def __init__(self, *args, exclude_tags=None, **kwargs):
        exclude_tags = set(exclude_tags or ())
        if not getattr(settings, 'FADELDP_SLOW_TESTS', False):
            exclude_tags.add(SLOW_TAG)
        super().__init__(*args, exclude_tags=exclude_tags, **kwargs)

    def setup_test_environment(self, **kwargs):
        super().setup_test_environment(**kwargs)
        if SLOW_TAG in (self.exclude_tags or ()):
            self.log('Медленные тесты пропущены: задайте FADELDP_SLOW_TESTS=True для полного прогона.')
