"""
LeNet5 and ConvNet builders with configurable MC dropout placement.

Dropout sites sit right after every ReLU; the final logits layer never gets one.
Layer names follow the conv0..convK, fc1..fcN scheme used in reports.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .nn import Conv2d, Dense, Dropout, Flatten, Layer, MaxPool2d, Network, ReLU, check_drop_rate

logger = logging.getLogger(__name__)

DEFAULT_P_CONV = 0.25
DEFAULT_P_FC = 0.5

CONVNET_CHANNELS = (48, 96, 192, 256)
CONVNET_FC = (512, 128)


class Arch(str, Enum):
    LENET5 = "lenet5"
    CONVNET = "convnet"


class PlacementKind(str, Enum):
    NONE = "none"
    ALL = "all"
    CONV_ONLY = "conv_only"
    FC_ONLY = "fc_only"
    INTERNAL = "internal"
    FINAL = "final"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ArchSpec:
    arch: Arch
    num_classes: int = 10
    input_shape: Tuple[int, int, int] = (1, 28, 28)


@dataclass(frozen=True)
class DropoutPlacement:
    kind: PlacementKind = PlacementKind.ALL
    mask: Optional[Tuple[bool, ...]] = None
    p_conv: float = DEFAULT_P_CONV
    p_fc: float = DEFAULT_P_FC

    @classmethod
    def parse(cls, text: str, p_conv: float = DEFAULT_P_CONV, p_fc: float = DEFAULT_P_FC) -> "DropoutPlacement":
        """Parse none|all|conv_only|fc_only|internal|final|custom:<bits>, e.g. custom:1010."""
        text = text.strip().lower()
        if text.startswith("custom:"):
            bits = text.split(":", 1)[1]
            if not bits or any(b not in "01" for b in bits):
                raise ConfigError(f"custom placement needs a bitstring, got {bits!r}", key="placement")
            return cls(PlacementKind.CUSTOM, tuple(b == "1" for b in bits), p_conv, p_fc)
        try:
            kind = PlacementKind(text)
        except ValueError:
            choices = ", ".join(k.value for k in PlacementKind if k != PlacementKind.CUSTOM)
            raise ConfigError(f"unknown placement {text!r} (choose {choices} or custom:<bits>)", key="placement")
        if kind == PlacementKind.CUSTOM:
            raise ConfigError("custom placement needs a bitstring, e.g. custom:1010", key="placement")
        return cls(kind, None, p_conv, p_fc)

    @property
    def label(self) -> str:
        if self.kind == PlacementKind.CUSTOM:
            return "custom:" + "".join("1" if b else "0" for b in self.mask or ())
        return self.kind.value

    def site_mask(self, site_kinds: Sequence[str]) -> List[bool]:
        """One flag per dropout-eligible site; site_kinds holds 'conv' or 'fc' per site."""
        n = len(site_kinds)
        if self.kind == PlacementKind.NONE:
            return [False] * n
        if self.kind == PlacementKind.ALL:
            return [True] * n
        if self.kind == PlacementKind.CONV_ONLY:
            return [k == "conv" for k in site_kinds]
        if self.kind == PlacementKind.FC_ONLY:
            return [k == "fc" for k in site_kinds]
        if self.kind == PlacementKind.INTERNAL:
            return [0 < i < n - 1 for i in range(n)]
        if self.kind == PlacementKind.FINAL:
            return [i == n - 1 for i in range(n)]
        mask = list(self.mask or ())
        if len(mask) != n:
            raise ConfigError(f"custom placement has {len(mask)} bits, architecture has {n} dropout sites", key="placement")
        return mask


def _block_plan(spec: ArchSpec) -> List[Tuple[str, Layer, bool]]:
    """(site kind, weight layer, followed by 2x2 pool) for every conv/fc block except the logits."""
    if spec.arch == Arch.LENET5:
        return [
            ("conv", Conv2d(6, 5), True),
            ("conv", Conv2d(16, 5), True),
            ("fc", Dense(120), False),
            ("fc", Dense(84), False),
        ]
    if spec.arch == Arch.CONVNET:
        c0, c1, c2, c3 = CONVNET_CHANNELS
        f1, f2 = CONVNET_FC
        return [
            ("conv", Conv2d(c0, 3, padding=1), False),
            ("conv", Conv2d(c1, 3, padding=1), True),
            ("conv", Conv2d(c2, 3, padding=1), False),
            ("conv", Conv2d(c3, 3, padding=1), True),
            ("fc", Dense(f1), False),
            ("fc", Dense(f2), False),
        ]
    raise ConfigError(f"unknown architecture {spec.arch!r}", key="arch")


def dropout_site_kinds(arch: Arch) -> List[str]:
    return [kind for kind, _, _ in _block_plan(ArchSpec(Arch(arch)))]


def build_model(spec: ArchSpec, placement: DropoutPlacement, seed: int) -> Network:
    """
    Assemble the architecture, insert Dropout after the ReLUs the placement selects,
    and draw Glorot-uniform weights from seed.

    Dropout layers hold no parameters, so weights for a given seed are identical
    across placements.
    """
    plan = _block_plan(spec)
    mask = placement.site_mask([kind for kind, _, _ in plan])
    layers: List[Layer] = []
    flattened = False
    for (kind, layer, pool), drop in zip(plan, mask):
        if kind == "fc" and not flattened:
            layers.append(Flatten())
            flattened = True
        layers.append(layer)
        layers.append(ReLU())
        if drop:
            p = placement.p_conv if kind == "conv" else placement.p_fc
            layers.append(Dropout(check_drop_rate(p)))
        if pool:
            layers.append(MaxPool2d(2))
    layers.append(Dense(spec.num_classes))

    net = Network(layers=layers, input_shape=spec.input_shape)
    net.initialize(np.random.default_rng(seed))
    logger.debug(f"Built {spec.arch.value} with placement {placement.label}: "
                 f"{len(net.dropout_layers())} dropout layer(s), {net.num_parameters()} parameters")
    return net


def layer_inventory(net: Network) -> List[Tuple[str, int]]:
    """(name, neuron count) per conv/fc layer: channels for conv, features for fc."""
    out = []
    n_conv = 0
    n_fc = 0
    for layer in net.layers:
        if isinstance(layer, Conv2d):
            out.append((f"conv{n_conv}", layer.out_channels))
            n_conv += 1
        elif isinstance(layer, Dense):
            n_fc += 1
            out.append((f"fc{n_fc}", layer.out_features))
    return out


def dissection_sites(net: Network) -> List[Tuple[str, int]]:
    """
    (layer name, index of the captured layer output) for each conv/fc layer:
    the ReLU right after it, or the layer itself when no ReLU follows (raw logits).
    """
    names = iter(name for name, _ in layer_inventory(net))
    sites = []
    for idx, layer in enumerate(net.layers):
        if isinstance(layer, (Conv2d, Dense)):
            nxt = idx + 1
            capture = nxt if nxt < len(net.layers) and isinstance(net.layers[nxt], ReLU) else idx
            sites.append((next(names), capture))
    return sites
