"""
Network dissection: per-neuron activation gamuts over a test set and the layer
statistics built from them.

For neuron i of a layer and test image j, a_i^j is the mean of the neuron's
feature map for that image (the activation itself for fc layers). The gamut A_i
collects a_i^j over all images. Per layer:
    V_l  mean over neurons of mean(A_i)
    S_l  mean over neurons of the population std of A_i
    unresponsive ratio  fraction of neurons with |mean(A_i)| <= epsilon
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .architectures import dissection_sites
from .datasets import LabeledDataset
from .errors import ConfigError, DataError
from .models import DissectionReport, LayerStats
from .nn import ExecutionMode, Network, forward
from .utils import derive_seed, parallel_map

logger = logging.getLogger(__name__)

CAPTURE_MODES = ("mc", "eval")
EPSILON_MODES = ("relative", "absolute")
HEATMAP_RULE = "top-gamut-mean"


@dataclass
class ActivationGamut:
    layer: str
    neuron: int
    values: np.ndarray  # a_i^j, one per test image

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def mean(self) -> float:
        return float(self.values.mean())


@dataclass
class LayerCapture:
    name: str
    means: np.ndarray  # (n_images, neurons): a_i^j
    spatial: bool
    full_maps: bool
    maps: Dict[int, np.ndarray] = field(default_factory=dict)  # image index -> (neurons, h, w)

    @property
    def neurons(self) -> int:
        return int(self.means.shape[1])

    def gamut_matrix(self) -> np.ndarray:
        """(neurons, n_images): row i is A_i."""
        return self.means.T

    def gamuts(self) -> List[ActivationGamut]:
        return [ActivationGamut(self.name, i, self.means[:, i]) for i in range(self.neurons)]


@dataclass
class ActivationCapture:
    layers: Dict[str, LayerCapture]
    k: int
    mode: str
    n_images: int

    def layer(self, name: str) -> LayerCapture:
        try:
            return self.layers[name]
        except KeyError:
            raise ConfigError(f"no captured layer {name!r} (have {', '.join(self.layers)})")


def mean_map_activation(u) -> float:
    """a = sum of u over its n x m cells divided by n*m; a 1x1 (fc) map is its own mean."""
    u = np.asarray(u, dtype=np.float64)
    if u.size == 0:
        raise DataError("cannot take the mean activation of an empty feature map")
    return float(u.sum() / u.size)


def _map_means(out: np.ndarray) -> np.ndarray:
    if out.ndim == 4:
        h, w = out.shape[2:]
        return out.sum(axis=(2, 3)) / (h * w)
    return out


def capture_activations(net: Network, dataset: LabeledDataset, k: int, seed: int = 0, *,
                        capture_mode: str = "mc", full_maps: bool = True,
                        map_images: Sequence[int] = (0,), batch_size: int = 64) -> ActivationCapture:
    """
    Feature maps of every dissection site (post-ReLU outputs, raw logits) for every image.

    Stochastic capture (capture_mode "mc" on a net with dropout) averages each map
    over K MC_SAMPLE passes; otherwise a single Eval pass is used and K is 1.
    Per-image means are always kept. Full maps are kept only for conv sites and
    only for the images in map_images, and only when full_maps is set.
    Batch b draws from derive_seed(seed, "capture", b); batches may run concurrently.
    """
    if capture_mode not in CAPTURE_MODES:
        raise ConfigError(f"capture mode must be one of {CAPTURE_MODES}, got {capture_mode!r}", key="dissect.capture_mode")
    if int(k) < 1:
        raise ConfigError(f"number of MC passes must be >= 1, got {k}", key="mc.k")
    n = len(dataset)
    if n == 0:
        raise DataError("cannot dissect on an empty dataset")
    keep = sorted(set(int(j) for j in map_images)) if full_maps else []
    for j in keep:
        if not (0 <= j < n):
            raise ConfigError(f"image index {j} outside the test set [0, {n})", key="dissect.heatmap_image_index")

    stochastic = capture_mode == "mc" and net.has_dropout()
    passes = int(k) if stochastic else 1
    sites = dissection_sites(net)

    def run_batch(item: Tuple[int, int]):
        b, start = item
        xb = dataset.images[start:start + batch_size]
        if stochastic:
            rng = np.random.default_rng(derive_seed(seed, "capture", b))
            base = None
            drift = None
            for _ in range(passes):
                _, cache = forward(net, xb, rng, mode=ExecutionMode.MC_SAMPLE)
                outs = [cache.outputs[idx] for _, idx in sites]
                if base is None:
                    base = outs
                    drift = [np.zeros_like(o) for o in outs]
                else:
                    for d, o, o0 in zip(drift, outs, base):
                        d += o - o0
            averaged = [o0 + d / passes for o0, d in zip(base, drift)]
        else:
            _, cache = forward(net, xb, mode=ExecutionMode.EVAL)
            averaged = [cache.outputs[idx] for _, idx in sites]

        result = []
        for out in averaged:
            kept = {}
            if out.ndim == 4:
                kept = {j: out[j - start].copy() for j in keep if start <= j < start + xb.shape[0]}
            result.append((_map_means(out), kept))
        return result

    batches = list(enumerate(range(0, n, batch_size)))
    per_batch = parallel_map(run_batch, batches)

    shapes = net.shapes()
    layers: Dict[str, LayerCapture] = {}
    for s, (name, idx) in enumerate(sites):
        spatial = len(shapes[idx]) == 3
        maps: Dict[int, np.ndarray] = {}
        for batch in per_batch:
            maps.update(batch[s][1])
        layers[name] = LayerCapture(
            name=name,
            means=np.concatenate([batch[s][0] for batch in per_batch], axis=0),
            spatial=spatial,
            full_maps=bool(full_maps and spatial),
            maps=maps,
        )
    logger.info(f"Captured {len(layers)} layer(s) over {n} image(s), {passes} pass(es) each ({capture_mode})")
    return ActivationCapture(layers=layers, k=passes, mode=capture_mode if stochastic else "eval", n_images=n)


GamutInput = Union[np.ndarray, Sequence[ActivationGamut], Sequence[Sequence[float]]]


def _as_matrix(gamuts: GamutInput) -> np.ndarray:
    if len(gamuts) and isinstance(gamuts[0], ActivationGamut):
        rows = np.stack([g.values for g in gamuts])
    else:
        rows = np.asarray(gamuts, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] == 0:
        raise DataError(f"expected one non-empty gamut per neuron, got shape {rows.shape}")
    return rows.astype(np.float64, copy=False)


def layer_volatility(gamuts: GamutInput) -> Tuple[float, float]:
    """(V_l, S_l) for a layer, gamuts given one row per neuron."""
    rows = _as_matrix(gamuts)
    return float(rows.mean(axis=1).mean()), float(rows.std(axis=1).mean())


class UnresponsiveCount(NamedTuple):
    count: int
    total: int
    ratio: float


def unresponsive_ratio(gamuts: GamutInput, epsilon: float) -> UnresponsiveCount:
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}", key="dissect.epsilon")
    means = _as_matrix(gamuts).mean(axis=1)
    count = int((np.abs(means) <= epsilon).sum())
    return UnresponsiveCount(count, int(means.shape[0]), count / means.shape[0])


def gamut_histogram(gamut, bins: int = 30) -> Tuple[np.ndarray, np.ndarray]:
    """Equal-width bins over [min, max] of the gamut."""
    if int(bins) < 1:
        raise ConfigError(f"histogram needs at least 1 bin, got {bins}", key="dissect.bins")
    values = gamut.values if isinstance(gamut, ActivationGamut) else np.asarray(gamut, dtype=np.float64)
    if values.size == 0:
        raise DataError("cannot histogram an empty gamut")
    counts, edges = np.histogram(values, bins=int(bins))
    return edges, counts


def layer_histograms(capture: ActivationCapture, name: str, bins: int = 30) -> List[Tuple[int, np.ndarray, np.ndarray]]:
    """(neuron, edges, counts) for every neuron of one captured layer."""
    return [(g.neuron, *gamut_histogram(g, bins)) for g in capture.layer(name).gamuts()]


def resolve_epsilon(capture: ActivationCapture, setting: float, mode: str = "relative") -> float:
    """
    Absolute threshold for the unresponsive test. Relative mode scales the mean
    |gamut mean| over every neuron of every captured layer by setting.
    """
    if mode not in EPSILON_MODES:
        raise ConfigError(f"epsilon mode must be one of {EPSILON_MODES}, got {mode!r}", key="dissect.epsilon_mode")
    if not setting > 0:
        raise ConfigError(f"epsilon must be > 0, got {setting}", key="dissect.epsilon")
    if mode == "absolute":
        return float(setting)
    all_means = np.concatenate([np.abs(lc.means.mean(axis=0)) for lc in capture.layers.values()])
    return max(float(setting) * float(all_means.mean()), float(np.finfo(np.float64).tiny))


def layer_stats(lc: LayerCapture, epsilon: float) -> LayerStats:
    rows = lc.gamut_matrix()
    v, s = layer_volatility(rows)
    count, total, ratio = unresponsive_ratio(rows, epsilon)
    return LayerStats(
        layer=lc.name,
        neurons=total,
        activation_mean=v,
        activation_std=s,
        unresponsive_count=count,
        unresponsive_ratio=ratio,
        gamut_max_mean=float(rows.max(axis=1).mean()),
    )


def report_from_capture(capture: ActivationCapture, epsilon: float, epsilon_mode: str = "relative", *,
                        arch: Optional[str] = None, placement: Optional[str] = None) -> DissectionReport:
    threshold = resolve_epsilon(capture, epsilon, epsilon_mode)
    return DissectionReport(
        arch=arch,
        placement=placement,
        capture_mode=capture.mode,
        k=capture.k,
        n_images=capture.n_images,
        epsilon=threshold,
        epsilon_mode=epsilon_mode,
        epsilon_setting=float(epsilon),
        layers=[layer_stats(lc, threshold) for lc in capture.layers.values()],
    )


def dissection_report(net: Network, dataset: LabeledDataset, k: int, epsilon: float, *, seed: int = 0,
                      epsilon_mode: str = "relative", capture_mode: str = "mc", batch_size: int = 64,
                      arch: Optional[str] = None, placement: Optional[str] = None) -> DissectionReport:
    """LayerStats for every dissection site in conv0..fcN order, from a means-only capture."""
    capture = capture_activations(net, dataset, k, seed, capture_mode=capture_mode,
                                  full_maps=False, batch_size=batch_size)
    return report_from_capture(capture, epsilon, epsilon_mode, arch=arch, placement=placement)


@dataclass
class HeatmapExport:
    layer: str
    image_index: int
    neurons: List[Tuple[int, np.ndarray]]  # (neuron index, 2-D map), highest gamut mean first
    gamut_means: List[float]
    scale: Tuple[float, float]  # shared linear intensity range (low, high)
    rule: str = HEATMAP_RULE


def top_neuron_heatmaps(capture: ActivationCapture, layer: str, image_index: int, top_n: int = 10) -> HeatmapExport:
    """
    Feature maps of one image for the top_n neurons ranked by gamut mean over the
    whole test set; ties go to the lower neuron index.
    """
    lc = capture.layer(layer)
    if not lc.spatial:
        raise ConfigError(f"layer {layer} has no spatial feature maps; heatmaps need a conv layer")
    if not lc.full_maps or image_index not in lc.maps:
        raise ConfigError(f"layer {layer} was captured without the full feature maps of image {image_index}; "
                          f"set dissect.full_maps to true and dissect.heatmap_image_index to {image_index}")
    gamut_means = lc.means.mean(axis=0)
    order = np.argsort(-gamut_means, kind="stable")[:min(int(top_n), lc.neurons)]
    maps = lc.maps[image_index]
    chosen = [(int(i), maps[i]) for i in order]
    stacked = np.stack([m for _, m in chosen])
    return HeatmapExport(
        layer=layer,
        image_index=int(image_index),
        neurons=chosen,
        gamut_means=[float(gamut_means[i]) for i in order],
        scale=(float(stacked.min()), float(stacked.max())),
    )
