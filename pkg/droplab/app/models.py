from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .architectures import Arch, ArchSpec, DropoutPlacement


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Experiment configuration (file form)

class DataPaths(StrictModel):
    mnist_train_images: Optional[str] = None
    mnist_train_labels: Optional[str] = None
    mnist_test_images: Optional[str] = None
    mnist_test_labels: Optional[str] = None
    cifar10_train: List[str] = Field(default_factory=list)
    cifar10_test: List[str] = Field(default_factory=list)


class SyntheticConfig(StrictModel):
    n_train: int = Field(default=600, ge=2)
    n_test: int = Field(default=200, ge=2)
    num_classes: int = Field(default=10, ge=2)
    image_shape: Tuple[int, int, int] = (1, 28, 28)
    seed: int = 0  # independent of train.seed


class NoiseConfig(StrictModel):
    rate: float = Field(default=0.35, ge=0.0, lt=1.0)
    scheme: Literal['exact', 'matrix'] = 'exact'
    kind: Literal['symmetric', 'asymmetric'] = 'symmetric'
    # Asymmetric only: a named preset or an explicit {source: destination} map
    flip_map: Union[Literal['pair', 'mnist', 'cifar10'], Dict[int, int]] = 'pair'


class DropoutConfig(StrictModel):
    p_conv: float = Field(default=0.25, ge=0.0, lt=1.0)
    p_fc: float = Field(default=0.5, ge=0.0, lt=1.0)


class TrainSettings(StrictModel):
    epochs: int = Field(default=30, ge=1)
    batch: int = Field(default=64, ge=1)
    lr: float = Field(default=0.01, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    seed: int = 0
    subset_size: int = Field(default=0, ge=0)  # 0 keeps the full training set
    eval_batch: int = Field(default=64, ge=1)


class MCConfig(StrictModel):
    k: int = Field(default=20, ge=1)
    epoch_eval: bool = True


class DissectConfig(StrictModel):
    epsilon_mode: Literal['relative', 'absolute'] = 'relative'
    epsilon: float = Field(default=0.01, gt=0.0)
    bins: int = Field(default=30, ge=1)
    heatmap_image_index: int = Field(default=0, ge=0)
    capture_mode: Literal['mc', 'eval'] = 'mc'
    full_maps: bool = True
    heatmaps: bool = True
    top_n: int = Field(default=10, ge=1)
    batch_size: int = Field(default=64, ge=1)


class OutputConfig(StrictModel):
    dir: str = "runs/default"


class ExperimentConfig(StrictModel):
    dataset: Literal['mnist', 'cifar10', 'synthetic'] = 'synthetic'
    data: DataPaths = Field(default_factory=DataPaths)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    arch: Literal['lenet5', 'convnet'] = 'lenet5'
    placement: str = 'all'
    dropout: DropoutConfig = Field(default_factory=DropoutConfig)
    train: TrainSettings = Field(default_factory=TrainSettings)
    mc: MCConfig = Field(default_factory=MCConfig)
    dissect: DissectConfig = Field(default_factory=DissectConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @field_validator('placement')
    @classmethod
    def _valid_placement(cls, v: str) -> str:
        return DropoutPlacement.parse(v).label

    def placement_spec(self) -> DropoutPlacement:
        return DropoutPlacement.parse(self.placement, self.dropout.p_conv, self.dropout.p_fc)

    def arch_spec(self, num_classes: int, input_shape: Tuple[int, int, int]) -> ArchSpec:
        return ArchSpec(Arch(self.arch), num_classes, tuple(input_shape))


# Artifacts

class EpochLog(BaseModel):
    epoch: int
    train_acc: float = Field(ge=0.0, le=1.0)  # against the noisy labels the model trains on
    test_acc: float = Field(ge=0.0, le=1.0)  # deterministic, clean labels
    loss: float
    test_acc_mc: Optional[float] = Field(default=None, ge=0.0, le=1.0)


class CorruptionManifest(BaseModel):
    seed: int
    rate: float
    scheme: str
    num_classes: int
    n: int
    empirical_rate: float
    noisy_labels: List[int]
    corrupted_mask: List[bool]


class LayerStats(BaseModel):
    layer: str
    neurons: int
    activation_mean: float  # V_l: mean over neurons of gamut means
    activation_std: float = Field(ge=0.0)  # S_l: mean over neurons of gamut population stds
    unresponsive_count: int = Field(ge=0)
    unresponsive_ratio: float = Field(ge=0.0, le=1.0)
    gamut_max_mean: float


class DissectionReport(BaseModel):
    schema_version: int = 1
    arch: Optional[str] = None
    placement: Optional[str] = None
    capture_mode: str
    k: int
    n_images: int
    epsilon: float  # threshold actually applied
    epsilon_mode: str
    epsilon_setting: float  # configured factor (relative) or threshold (absolute)
    layers: List[LayerStats]

    def inventory(self) -> List[Tuple[str, int]]:
        return [(s.layer, s.neurons) for s in self.layers]


class SweepResult(BaseModel):
    placement: str
    noise_rate: float
    final_train_acc: float
    final_test_acc: float
    final_test_acc_mc: Optional[float] = None


class SweepSummary(BaseModel):
    schema_version: int = 1
    placements: List[str]
    noise_rates: List[float]
    results: List[SweepResult]
