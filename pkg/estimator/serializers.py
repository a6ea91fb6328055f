from rest_framework import serializers
from rest_framework.renderers import JSONRenderer

from .core.bundle import ModelKind
from .core.data import MANEUVERS
from .core.noise import NOISE_MODES
from .core.training import STATE_WEIGHTS
from .conf import velest_setting
from .models import EvaluationRecord


def positive(value):
    if not value > 0:
        raise serializers.ValidationError("Ensure this value is greater than 0.")


def odd(value):
    if value % 2 == 0:
        raise serializers.ValidationError("Ensure this value is odd.")


def flatten_errors(errors, prefix=""):
    """DRF error structure as ``[(dotted.key.path, message), ...]``."""
    if isinstance(errors, dict):
        flat = []
        for key, value in errors.items():
            path = prefix if key == "non_field_errors" else (f"{prefix}.{key}" if prefix else str(key))
            flat.extend(flatten_errors(value, path))
        return flat
    if isinstance(errors, list):
        if all(isinstance(item, str) for item in errors):
            return [(prefix, str(item)) for item in errors]
        flat = []
        for index, item in enumerate(errors):
            if item:
                flat.extend(flatten_errors(item, f"{prefix}.{index}" if prefix else str(index)))
        return flat
    return [(prefix, str(errors))]


def render_json(data):
    return JSONRenderer().render(data)


class StrictSerializer(serializers.Serializer):
    """Serializer that rejects keys it does not declare."""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ["Unknown key."] for key in unknown})
        return super().to_internal_value(data)


class ModelSectionSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=ModelKind.choices(), default=ModelKind.NNTF.value)
    # null: friction joins the state whenever the kind supports it
    augmented = serializers.BooleanField(allow_null=True, default=None)
    fixed_mu = serializers.FloatField(allow_null=True, default=None, validators=[positive])
    hidden = serializers.ListField(
        child=serializers.IntegerField(min_value=1),
        allow_null=True,
        default=None,
        min_length=1,
    )
    name = serializers.CharField(allow_blank=True, default="")


class VehicleSectionSerializer(StrictSerializer):
    m = serializers.FloatField(default=4.5, validators=[positive])
    iz = serializers.FloatField(default=0.1, validators=[positive])
    lf = serializers.FloatField(default=0.17, validators=[positive])
    lr = serializers.FloatField(default=0.16, validators=[positive])
    wheel_radius = serializers.FloatField(default=0.05, validators=[positive])
    ie = serializers.FloatField(default=0.25, validators=[positive])
    k_phi = serializers.FloatField(default=0.04, validators=[positive])
    k_tc = serializers.FloatField(default=0.02, min_value=0.0)
    k_tv = serializers.FloatField(default=0.04, min_value=0.0)
    c_drag = serializers.FloatField(default=0.1, min_value=0.0)
    delta_max = serializers.FloatField(default=0.45, validators=[positive])


class PacejkaSectionSerializer(StrictSerializer):
    bx = serializers.FloatField(default=4.0, validators=[positive])
    cx = serializers.FloatField(default=1.6, validators=[positive])
    dx = serializers.FloatField(default=22.0, validators=[positive])
    ex = serializers.FloatField(default=0.1, max_value=0.999999)
    by_f = serializers.FloatField(default=5.0, validators=[positive])
    cy_f = serializers.FloatField(default=1.4, validators=[positive])
    dy_f = serializers.FloatField(default=23.0, validators=[positive])
    ey_f = serializers.FloatField(default=-0.2, max_value=0.999999)
    by_r = serializers.FloatField(default=6.0, validators=[positive])
    cy_r = serializers.FloatField(default=1.5, validators=[positive])
    dy_r = serializers.FloatField(default=21.0, validators=[positive])
    ey_r = serializers.FloatField(default=-0.1, max_value=0.999999)
    mu = serializers.FloatField(default=0.65, validators=[positive])


class UkfSectionSerializer(StrictSerializer):
    alpha = serializers.FloatField(default=1.0, max_value=1.0, validators=[positive])
    beta = serializers.FloatField(default=2.0, min_value=0.0)
    kappa_ut = serializers.FloatField(default=0.0)
    ts = serializers.FloatField(default=0.01, validators=[positive])
    mu_min = serializers.FloatField(default=0.05, validators=[positive])
    mu_max = serializers.FloatField(default=1.5, validators=[positive])
    mu_prior = serializers.FloatField(default=0.6, validators=[positive])
    mu_var = serializers.FloatField(default=0.04, validators=[positive])
    p0_diag = serializers.FloatField(default=0.25, validators=[positive])

    def validate(self, data):
        if data["mu_min"] >= data["mu_max"]:
            raise serializers.ValidationError({"mu_max": ["Ensure this value is greater than mu_min."]})
        if not data["mu_min"] <= data["mu_prior"] <= data["mu_max"]:
            raise serializers.ValidationError({"mu_prior": ["Ensure this value lies in [mu_min, mu_max]."]})
        return data


class NoiseSectionSerializer(StrictSerializer):
    mode = serializers.ChoiceField(choices=NOISE_MODES, default=NOISE_MODES[0])
    epsilon = serializers.FloatField(default=1e-7, validators=[positive])
    process_diag = serializers.ListField(
        child=serializers.FloatField(validators=[positive]),
        allow_null=True,
        default=None,
    )
    measurement_diag = serializers.ListField(
        child=serializers.FloatField(validators=[positive]),
        default=lambda: [0.5, 0.5, 0.05, 0.1],
        min_length=4,
        max_length=4,
    )


class TrainSectionSerializer(StrictSerializer):
    lr = serializers.FloatField(default=5e-4, validators=[positive])
    pretrain_epochs = serializers.IntegerField(default=1000, min_value=0)
    finetune_epochs = serializers.IntegerField(default=1000, min_value=0)
    seq_len = serializers.IntegerField(default=500, min_value=2)
    batch_size = serializers.IntegerField(default=256, min_value=1)
    pretrain_batch_size = serializers.IntegerField(default=1024, min_value=1)
    state_weights = serializers.ListField(
        child=serializers.FloatField(min_value=0.0),
        default=lambda: list(STATE_WEIGHTS),
        min_length=4,
        max_length=4,
    )
    eval_omega_weight = serializers.FloatField(default=0.0, min_value=0.0)
    seed = serializers.IntegerField(default=0, min_value=0)
    learn_noise = serializers.BooleanField(default=True)
    clip_norm = serializers.FloatField(default=10.0, min_value=0.0)
    checkpoint_every = serializers.IntegerField(default=0, min_value=0)
    workers = serializers.IntegerField(default=1, min_value=1)
    divergence_tolerance = serializers.FloatField(default=0.1, min_value=0.0, max_value=1.0)
    # replace state_weights by the inverse variability of the training block
    variability_weights = serializers.BooleanField(default=False)


class SimSectionSerializer(StrictSerializer):
    duration = serializers.FloatField(default=300.0, validators=[positive])
    segment_seconds = serializers.FloatField(default=20.0, validators=[positive])
    maneuvers = serializers.ListField(
        child=serializers.ChoiceField(choices=MANEUVERS),
        default=lambda: list(MANEUVERS[:4]),
        min_length=1,
    )
    tires = serializers.ListField(
        child=serializers.CharField(),
        default=lambda: ["A"],
        min_length=1,
    )
    noise_std = serializers.ListField(
        child=serializers.FloatField(min_value=0.0),
        default=lambda: [0.3, 0.3, 0.02, 0.05],
        min_length=4,
        max_length=4,
    )
    substeps = serializers.IntegerField(default=10, min_value=1)
    rate = serializers.FloatField(default=100.0, validators=[positive])
    initial_speed = serializers.FloatField(default=2.0, min_value=0.0)
    seed = serializers.IntegerField(default=0, min_value=0)

    def validate_tires(self, value):
        unknown = sorted(set(value) - set(velest_setting("TIRE_FRICTION")))
        if unknown:
            raise serializers.ValidationError(f"Unknown tire label(s): {', '.join(unknown)}.")
        return value


class DataSectionSerializer(StrictSerializer):
    rate_hz = serializers.FloatField(default=100.0, validators=[positive])
    savgol_window = serializers.IntegerField(default=9, min_value=3, validators=[odd])
    savgol_order = serializers.IntegerField(default=2, min_value=1)
    split = serializers.ListField(
        child=serializers.FloatField(min_value=0.0),
        default=lambda: [0.7, 0.2, 0.1],
        min_length=3,
        max_length=3,
    )
    imu_rate = serializers.FloatField(default=400.0, validators=[positive])
    tire_label = serializers.CharField(default="A")

    def validate_split(self, value):
        if abs(sum(value) - 1.0) > 1e-9:
            raise serializers.ValidationError("Ensure the fractions sum to 1.")
        return value

    def validate(self, data):
        if data["savgol_window"] < data["savgol_order"] + 2:
            raise serializers.ValidationError({"savgol_window": ["Ensure this value is at least savgol_order + 2."]})
        return data


class EvalSectionSerializer(StrictSerializer):
    sequence_seconds = serializers.FloatField(default=10.0, validators=[positive])
    burn_in = serializers.IntegerField(default=0, min_value=0)
    state_weights = serializers.ListField(
        child=serializers.FloatField(min_value=0.0),
        allow_null=True,
        default=None,
        min_length=4,
        max_length=4,
    )


class PathsSectionSerializer(StrictSerializer):
    dataset = serializers.CharField(allow_null=True, default=None)
    checkpoint = serializers.CharField(allow_null=True, default=None)
    report = serializers.CharField(allow_null=True, default=None)
    log = serializers.CharField(allow_null=True, default=None)
    out_dir = serializers.CharField(allow_null=True, default=None)


class RunConfigSerializer(StrictSerializer):
    model = ModelSectionSerializer()
    vehicle = VehicleSectionSerializer()
    pacejka = PacejkaSectionSerializer()
    ukf = UkfSectionSerializer()
    noise = NoiseSectionSerializer()
    train = TrainSectionSerializer()
    sim = SimSectionSerializer()
    data = DataSectionSerializer()
    eval = EvalSectionSerializer()
    paths = PathsSectionSerializer()

    def to_internal_value(self, data):
        if isinstance(data, dict):
            # omitted sections take all their defaults
            data = {**{name: {} for name in self.fields}, **data}
            data = {name: {} if value is None else value for name, value in data.items()}
        return super().to_internal_value(data)

    def validate(self, data):
        model = data["model"]
        kind = ModelKind(model["kind"])
        if model["augmented"] is None:
            model["augmented"] = kind in (ModelKind.PC, ModelKind.NNTF) and model["fixed_mu"] is None
        if model["augmented"] and kind not in (ModelKind.PC, ModelKind.NNTF):
            raise serializers.ValidationError({"model": {"augmented": [f"Model {kind.value} has no friction state."]}})
        if model["fixed_mu"] is not None and (kind != ModelKind.NNTF or model["augmented"]):
            raise serializers.ValidationError({"model": {"fixed_mu": ["Only a non-augmented nntf takes a fixed friction."]}})
        if kind == ModelKind.NNTF and not model["augmented"] and model["fixed_mu"] is None:
            raise serializers.ValidationError({"model": {"fixed_mu": ["Required when nntf is not augmented."]}})
        process_diag = data["noise"]["process_diag"]
        n_x = 5 if model["augmented"] else 4
        if process_diag is not None and len(process_diag) != n_x:
            raise serializers.ValidationError(
                {"noise": {"process_diag": [f"Ensure this field has exactly {n_x} elements."]}}
            )
        return data


class TensorEntrySerializer(serializers.Serializer):
    name = serializers.CharField()
    shape = serializers.ListField(child=serializers.IntegerField(min_value=0))
    values = serializers.ListField(child=serializers.FloatField())

    def validate(self, data):
        count = 1
        for size in data["shape"]:
            count *= size
        if count != len(data["values"]):
            raise serializers.ValidationError(
                {"values": [f"Expected {count} values for shape {data['shape']}, got {len(data['values'])}."]}
            )
        return data


class CheckpointMetaSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=ModelKind.choices())
    augmented = serializers.BooleanField()
    fixed_mu = serializers.FloatField(allow_null=True, default=None)
    noise_mode = serializers.ChoiceField(choices=NOISE_MODES)
    epsilon = serializers.FloatField(validators=[positive])
    name = serializers.CharField(allow_blank=True, default="")
    vehicle = VehicleSectionSerializer()
    extra = serializers.DictField(required=False, default=dict)


class CheckpointSerializer(serializers.Serializer):
    version = serializers.IntegerField()
    meta = CheckpointMetaSerializer()
    tensors = TensorEntrySerializer(many=True)

    def validate_version(self, value):
        expected = velest_setting("CHECKPOINT_VERSION")
        if value != expected:
            raise serializers.ValidationError(f"Unsupported checkpoint version {value}, expected {expected}.")
        return value

    def validate_tensors(self, value):
        names = [entry["name"] for entry in value]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise serializers.ValidationError(f"Duplicate tensor name(s): {', '.join(duplicates)}.")
        return value


class StateMetricsSerializer(serializers.Serializer):
    mse = serializers.FloatField()
    mae = serializers.FloatField()


class MetricsReportSerializer(serializers.Serializer):
    model = serializers.CharField(allow_blank=True)
    dataset = serializers.CharField(allow_blank=True)
    sequences = serializers.IntegerField(min_value=0)
    mse = serializers.FloatField(min_value=0.0)
    mae = serializers.FloatField(min_value=0.0)
    ae99 = serializers.FloatField(min_value=0.0)
    per_state = serializers.DictField(child=StateMetricsSerializer())


class EvaluationRecordSerializer(serializers.ModelSerializer):
    class Meta:
        model = EvaluationRecord
        fields = [
            'id',
            'model_id',
            'dataset_id',
            'sequences',
            'mse',
            'mae',
            'ae99',
            'per_state',
            'created_at',
        ]
        read_only_fields = ['id', 'created_at']
