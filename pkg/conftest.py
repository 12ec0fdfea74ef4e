# Mirror lab.test_runner.LabTestRunner under pytest: tests tagged 'slow'
# are skipped unless FADELDP_SLOW_TESTS is set.
import pytest

from lab.test_runner import SLOW_TAG


def pytest_collection_modifyitems(config, items):
    from django.conf import settings

    if getattr(settings, 'FADELDP_SLOW_TESTS', False):
        return
    skip_slow = pytest.mark.skip(reason='FADELDP_SLOW_TESTS не задан')
    for item in items:
        tags = getattr(getattr(item, 'cls', None), 'tags', set()) | getattr(getattr(item, 'obj', None), 'tags', set())
        if SLOW_TAG in tags:
            item.add_marker(skip_slow)
