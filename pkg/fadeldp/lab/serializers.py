from rest_framework import serializers

from .coefficients import NONLINEARITIES
from .exceptions import InvalidMeasureError
from .fading_memory import DelayMeasure
from .ldp_harness import EVENT_KINDS, FUNCTIONAL_KINDS, MAX_VARIATIONAL_DIM
from .simulate import SCHEMES

EXPERIMENT_KINDS = (
    'simulate', 'pullback', 'stationarity', 'rate', 'quasipotential',
    'ldp-slope', 'variational-check', 'check-model', 'bounds',
)

Vector = lambda **kwargs: serializers.ListField(child=serializers.FloatField(), **kwargs)  # noqa: E731
Matrix = lambda **kwargs: serializers.ListField(child=Vector(), **kwargs)  # noqa: E731


class AtomSerializer(serializers.Serializer):
    lag = serializers.FloatField(max_value=0.0)
    weight = serializers.FloatField(min_value=0.0)


class DensitySerializer(serializers.Serializer):
    mass = serializers.FloatField(min_value=0.0)
    beta = serializers.FloatField(min_value=0.0)


class MeasureSerializer(serializers.Serializer):
    atoms = AtomSerializer(many=True, required=False, default=list)
    expo = DensitySerializer(required=False, allow_null=True, default=None)

    def validate(self, attrs):
        try:
            build_measure(attrs)
        except InvalidMeasureError as exc:
            raise serializers.ValidationError(str(exc.detail))
        return attrs


class NonlinearitySerializer(serializers.Serializer):
    name = serializers.ChoiceField(choices=sorted(NONLINEARITIES), default='zero')
    amplitude = serializers.FloatField(default=0.0)


class ModelBlockSerializer(serializers.Serializer):
    name = serializers.CharField(default='affine')
    d = serializers.IntegerField(min_value=1)
    m = serializers.IntegerField(min_value=1)
    A = Matrix()
    B = Matrix()
    sigma0 = Matrix()
    sigma1 = serializers.ListField(child=Matrix(), required=False, allow_null=True, default=None)
    nonlinearity = NonlinearitySerializer(required=False)
    mu1 = MeasureSerializer()
    mu2 = MeasureSerializer()

    def validate(self, attrs):
        d, m = attrs['d'], attrs['m']
        errors = {}
        for key, shape in (('A', (d, d)), ('B', (d, d)), ('sigma0', (d, m))):
            rows = attrs[key]
            if len(rows) != shape[0] or any(len(row) != shape[1] for row in rows):
                errors[key] = f'Ожидалась матрица {shape[0]}×{shape[1]}.'
        sigma1 = attrs.get('sigma1')
        if sigma1 is not None:
            if (len(sigma1) != d or any(len(block) != m for block in sigma1)
                    or any(len(row) != d for block in sigma1 for row in block)):
                errors['sigma1'] = f'Ожидался тензор {d}×{m}×{d}.'
        if errors:
            raise serializers.ValidationError(errors)
        return attrs


class MemoryBlockSerializer(serializers.Serializer):
    r = serializers.FloatField()
    h = serializers.FloatField(required=False, allow_null=True, default=None)
    L = serializers.FloatField(required=False, allow_null=True, default=None)
    tail_tol = serializers.FloatField(default=1e-6)
    norm_bound = serializers.FloatField(default=1.0)

    def validate_r(self, value):
        if value <= 0:
            raise serializers.ValidationError('Параметр r должен быть положительным.')
        return value

    def validate_h(self, value):
        if value is not None and value <= 0:
            raise serializers.ValidationError('Шаг h должен быть положительным.')
        return value


class SegmentSpecSerializer(serializers.Serializer):
    """Начальный сегмент: константа или явные значения по лагам 0, −h, …, −L."""

    constant = Vector(required=False, allow_null=True, default=None)
    values = Matrix(required=False, allow_null=True, default=None)
    tail = Vector(required=False, allow_null=True, default=None)

    def validate(self, attrs):
        if attrs.get('constant') is None and attrs.get('values') is None:
            attrs['constant'] = [0.0]
        if attrs.get('constant') is not None and attrs.get('values') is not None:
            raise serializers.ValidationError('Нужно указать либо constant, либо values.')
        return attrs


class ControlSpecSerializer(serializers.Serializer):
    a = serializers.FloatField()
    b = serializers.FloatField()
    step = serializers.FloatField(required=False, allow_null=True, default=None)
    constant = Vector(required=False, allow_null=True, default=None)
    values = Matrix(required=False, allow_null=True, default=None)

    def validate(self, attrs):
        if attrs['b'] <= attrs['a']:
            raise serializers.ValidationError({'b': 'Конец носителя должен быть позже начала.'})
        if (attrs.get('constant') is None) == (attrs.get('values') is None):
            raise serializers.ValidationError('Нужно указать либо constant, либо values.')
        return attrs


class StartSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=['initial', 'stationary'], default='initial')
    t0 = serializers.FloatField(default=0.0)
    depth = serializers.FloatField(default=20.0, min_value=0.0)
    xi = SegmentSpecSerializer(required=False)


class TargetSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=['point', 'segment', 'path'], default='point')
    T = serializers.FloatField(required=False, allow_null=True, default=None)
    y = Vector(required=False, allow_null=True, default=None)
    segment = SegmentSpecSerializer(required=False, allow_null=True, default=None)
    states = Matrix(required=False, allow_null=True, default=None)

    def validate(self, attrs):
        kind = attrs['kind']
        required = {'point': 'y', 'segment': 'segment', 'path': 'states'}[kind]
        if attrs.get(required) is None:
            raise serializers.ValidationError({required: 'Обязательное поле для цели этого типа.'})
        if kind != 'path' and attrs.get('T') is None:
            raise serializers.ValidationError({'T': 'Обязательное поле для цели этого типа.'})
        return attrs


class EventSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=EVENT_KINDS)
    T = serializers.FloatField()
    center = Vector(required=False, allow_null=True, default=None)
    radius = serializers.FloatField(required=False, allow_null=True, default=None, min_value=0.0)
    threshold = serializers.FloatField(required=False, allow_null=True, default=None)
    reference = serializers.ChoiceField(choices=['skeleton'], required=False, allow_null=True, default=None)


class RateOptionsSerializer(serializers.Serializer):
    control_step = serializers.FloatField(required=False, allow_null=True, default=None)
    scheme = serializers.ChoiceField(choices=SCHEMES, default='heun')
    rho = serializers.FloatField(default=100.0)
    rho_growth = serializers.FloatField(default=10.0)
    max_rounds = serializers.IntegerField(default=6, min_value=1)
    tol = serializers.FloatField(default=1e-3)
    max_iter = serializers.IntegerField(default=500, min_value=1)
    n_random_starts = serializers.IntegerField(default=1, min_value=0)
    gradient = serializers.ChoiceField(choices=['forward', 'central'], default='forward')


class SimulateParamsSerializer(serializers.Serializer):
    eps = serializers.FloatField(default=0.0, min_value=0.0)
    t0 = serializers.FloatField(default=0.0)
    T = serializers.FloatField(default=1.0)
    scheme = serializers.ChoiceField(choices=SCHEMES, default='euler')
    xi = SegmentSpecSerializer(required=False)
    n_replicas = serializers.IntegerField(default=1, min_value=1)
    control = ControlSpecSerializer(required=False, allow_null=True, default=None)
    binary = serializers.BooleanField(default=False)


class PullbackParamsSerializer(serializers.Serializer):
    eps = serializers.FloatField(default=0.0, min_value=0.0)
    window = Vector(min_length=2, max_length=2, default=lambda: [0.0, 1.0])
    n_list = serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=2,
                                   default=lambda: [2, 4, 6, 8, 10])
    xi = SegmentSpecSerializer(required=False)
    n_replicas = serializers.IntegerField(default=1, min_value=1)
    scheme = serializers.ChoiceField(choices=SCHEMES, default='euler')
    control = ControlSpecSerializer(required=False, allow_null=True, default=None)
    eps_list = Vector(required=False, allow_null=True, default=None)
    threshold_factor = serializers.FloatField(default=0.3)


class StationarityParamsSerializer(serializers.Serializer):
    eps = serializers.FloatField(default=0.5, min_value=0.0)
    n_burn = serializers.IntegerField(default=20, min_value=2)
    times = Vector(min_length=2, default=lambda: [0.0, 1.0, 2.0])
    n_replicas = serializers.IntegerField(default=1000, min_value=1)
    alpha = serializers.FloatField(default=0.01)
    xi = SegmentSpecSerializer(required=False)
    reference = serializers.DictField(child=Vector(), required=False, allow_null=True, default=None)
    burn_in_tol = serializers.FloatField(default=1e-3)
    n_permutations = serializers.IntegerField(default=200, min_value=0)


class RateParamsSerializer(RateOptionsSerializer):
    start = StartSerializer(required=False)
    target = TargetSerializer()
    direct = serializers.BooleanField(default=False)


class QuasipotentialParamsSerializer(RateOptionsSerializer):
    start = StartSerializer(required=False)
    target = TargetSerializer()
    T_list = Vector(min_length=1)


class LdpSlopeParamsSerializer(RateOptionsSerializer):
    start = StartSerializer(required=False)
    burn_in = serializers.FloatField(required=False, allow_null=True, default=None)
    event = EventSerializer()
    eps_list = Vector(min_length=1, default=lambda: [0.2, 0.1, 0.05])
    n_per_eps = serializers.IntegerField(default=20000, min_value=2)
    slope_tol = serializers.FloatField(default=0.15)

    def validate(self, attrs):
        if attrs['event']['kind'] == 'terminal_ball' and attrs['event'].get('center') is None:
            raise serializers.ValidationError({'event': {'center': 'Обязательное поле для terminal_ball.'}})
        return attrs


class FunctionalCaseSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=FUNCTIONAL_KINDS)
    coeffs = Vector(default=lambda: [1.0])
    lower = serializers.FloatField(default=-50.0)
    upper = serializers.FloatField(default=50.0)
    T = serializers.FloatField(default=1.0)
    k = serializers.IntegerField(default=1, min_value=1, max_value=MAX_VARIATIONAL_DIM)


class VariationalParamsSerializer(serializers.Serializer):
    cases = FunctionalCaseSerializer(many=True, required=False)
    n_mc = serializers.IntegerField(default=200_000, min_value=1)
    tol = serializers.FloatField(default=1e-3)


class CheckModelParamsSerializer(serializers.Serializer):
    eps = serializers.FloatField(default=0.0, min_value=0.0)
    n_samples = serializers.IntegerField(default=1000, min_value=0)


class BoundsParamsSerializer(serializers.Serializer):
    eps = serializers.FloatField(default=0.0, min_value=0.0)
    T = serializers.FloatField(default=5.0)
    n_replicas = serializers.IntegerField(default=200, min_value=1)
    xi = SegmentSpecSerializer(required=False)
    xi2 = SegmentSpecSerializer(required=False, allow_null=True, default=None)
    eps_list = Vector(required=False, allow_null=True, default=None)
    control = ControlSpecSerializer(required=False, allow_null=True, default=None)
    bound_factor = serializers.FloatField(default=3.0)


PARAMS_SERIALIZERS = {
    'simulate': SimulateParamsSerializer,
    'pullback': PullbackParamsSerializer,
    'stationarity': StationarityParamsSerializer,
    'rate': RateParamsSerializer,
    'quasipotential': QuasipotentialParamsSerializer,
    'ldp-slope': LdpSlopeParamsSerializer,
    'variational-check': VariationalParamsSerializer,
    'check-model': CheckModelParamsSerializer,
    'bounds': BoundsParamsSerializer,
}


class ExperimentSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=EXPERIMENT_KINDS)
    params = serializers.DictField(required=False, default=dict)

    def validate(self, attrs):
        params = PARAMS_SERIALIZERS[attrs['kind']](data=attrs.get('params') or {})
        if not params.is_valid():
            raise serializers.ValidationError({'params': params.errors})
        attrs['params'] = params.validated_data
        return attrs


class RunConfigSerializer(serializers.Serializer):
    scenario = serializers.CharField(required=False, allow_null=True, default=None)
    model = ModelBlockSerializer()
    memory = MemoryBlockSerializer()
    experiment = ExperimentSerializer()
    seed = serializers.IntegerField(default=0, min_value=0)
    output_dir = serializers.CharField(required=False, allow_blank=True, default='')
    cache = serializers.BooleanField(default=True)


def build_measure(data):
    atoms = tuple((atom['lag'], atom['weight']) for atom in data.get('atoms') or ())
    expo = data.get('expo')
    return DelayMeasure(atoms=atoms, expo=(expo['mass'], expo['beta']) if expo else None)
