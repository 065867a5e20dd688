"""
Optimization: Adam with per-group learning rates, scene initialization and
adaptive density control extended to the temporal dimension.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import EmptySourceError, ShapeMismatchError
from .gaussian import PARAM_NAMES, GaussianGradients, GaussianStore, speeds
from .models import SH_COEFFS, TrainConfig
from .ports import INeighborSearch
from .render import SH_C0
from .rotor import identity_rotor, normalize, to_matrix

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15

STATIC_TEMPORAL_SCALE = 1e9
STATIC_LOG_TEMPORAL_SCALE = float(np.log(STATIC_TEMPORAL_SCALE))
MIN_INIT_SCALE = 1e-7
FALLBACK_INIT_SCALE = 0.01


def lr_schedule(step: int, total: int, lr_init: float = 1.6e-4, lr_final: float = 1.6e-6) -> float:
    """Exponential decay lr_init * (lr_final / lr_init) ** (step / total)"""
    ratio = 0.0 if total <= 0 else float(np.clip(step / total, 0.0, 1.0))
    return float(lr_init * (lr_final / lr_init) ** ratio)


def learning_rates(config: TrainConfig, step: int) -> Dict[str, float]:
    """Learning rate of every parameter group at a step"""
    return {
        "position": lr_schedule(step, config.total_steps, config.lr_position, config.lr_position_final),
        "time": lr_schedule(step, config.total_steps, config.lr_time, config.lr_time_final),
        "scales": config.lr_scales,
        "rotor": config.lr_rotor,
        "sh_dc": config.lr_sh_dc,
        "sh_rest": config.lr_sh_rest,
        "opacity": config.lr_opacity,
    }


def _group_rates(rates: Dict[str, float]) -> Dict[str, np.ndarray]:
    sh = np.full((SH_COEFFS, 1), rates["sh_rest"])
    sh[0] = rates["sh_dc"]
    return {
        "means": np.array([rates["position"]] * 3 + [rates["time"]]),
        "log_scales": np.full(4, rates["scales"]),
        "rotors": np.full(8, rates["rotor"]),
        "opacity_logits": np.asarray(rates["opacity"]),
        "sh": sh,
    }


def adam_update(
    param: np.ndarray,
    grad: np.ndarray,
    exp_avg: np.ndarray,
    exp_avg_sq: np.ndarray,
    lr,
    step: int
) -> np.ndarray:
    """
    One bias-corrected Adam update, in place.

    Returns:
        the applied update
    """
    exp_avg *= ADAM_BETA1
    exp_avg += (1.0 - ADAM_BETA1) * grad
    exp_avg_sq *= ADAM_BETA2
    exp_avg_sq += (1.0 - ADAM_BETA2) * grad * grad
    m_hat = exp_avg / (1.0 - ADAM_BETA1 ** step)
    v_hat = exp_avg_sq / (1.0 - ADAM_BETA2 ** step)
    update = -lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    param += update
    return update


def freeze_static(store: GaussianStore) -> None:
    """Pin the temporal rotor components at 0 and the temporal scale at 1e9"""
    store.rotors[:, 4:] = 0.0
    store.log_scales[:, 3] = STATIC_LOG_TEMPORAL_SCALE


def adam_step(store: GaussianStore, grads: GaussianGradients, config: TrainConfig, step: int) -> GaussianStore:
    """
    Adam update of every parameter group with the scheduled rates, then rotor renormalization.

    Raises:
        ShapeMismatchError: if grads are not aligned with the store
    """
    if len(grads) != len(store):
        raise ShapeMismatchError(f"gradients for {len(grads)} Gaussians, store has {len(store)}")
    grad_arrays = {name: getattr(grads, name).copy() for name in PARAM_NAMES}
    for name in PARAM_NAMES:
        if grad_arrays[name].shape != getattr(store, name).shape:
            raise ShapeMismatchError(f"{name} gradient shape {grad_arrays[name].shape} does not match the store")
    if config.static_mode:
        grad_arrays["rotors"][:, 4:] = 0.0
        grad_arrays["log_scales"][:, 3] = 0.0
        grad_arrays["means"][:, 3] = 0.0

    store.adam_step += 1
    rates = _group_rates(learning_rates(config, step))
    for name in PARAM_NAMES:
        adam_update(
            getattr(store, name),
            grad_arrays[name],
            store.exp_avg[name],
            store.exp_avg_sq[name],
            rates[name],
            store.adam_step,
        )
    if config.static_mode:
        freeze_static(store)
    store.rotors = normalize(store.rotors)
    return store


def accumulate_stats(store: GaussianStore, view_norms: np.ndarray, visible: np.ndarray) -> None:
    """Add one view's positional gradient norms to the densification statistics"""
    store.grad_accum[visible] += view_norms[visible]
    store.grad_count[visible] += 1.0


def average_view_gradients(store: GaussianStore) -> np.ndarray:
    return store.grad_accum / np.maximum(store.grad_count, 1.0)


def sample_box(n: int, box_min, box_max, rng: np.random.Generator) -> np.ndarray:
    """n points uniform in an axis-aligned box of any dimension"""
    lo = np.asarray(box_min, dtype=np.float64)
    hi = np.asarray(box_max, dtype=np.float64)
    return lo + (hi - lo) * rng.random((n, len(lo)))


def initialize_scene(
    points: np.ndarray,
    config: TrainConfig,
    searcher: INeighborSearch,
    rng: np.random.Generator,
    times: Optional[np.ndarray] = None,
    colors: Optional[np.ndarray] = None
) -> GaussianStore:
    """
    Gaussians centred on points with nearest-neighbour 3D scales and identity rotors.

    Time means are uniform over [0, 1] unless given.

    Raises:
        EmptySourceError: if there are no points
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n == 0:
        raise EmptySourceError("initialization source has no points")
    if times is None:
        times = rng.random(n)
    if n > 1:
        dists, _ = searcher.kneighbors(points, 2)
        spatial = np.maximum(dists[:, 1], MIN_INIT_SCALE)
    else:
        spatial = np.full(1, FALLBACK_INIT_SCALE)

    temporal = STATIC_LOG_TEMPORAL_SCALE if config.static_mode else np.log(config.temporal_scale_init)
    log_scales = np.empty((n, 4))
    log_scales[:, :3] = np.log(spatial)[:, None]
    log_scales[:, 3] = temporal

    sh = np.zeros((n, SH_COEFFS, 3))
    if colors is not None:
        sh[:, 0] = (np.asarray(colors, dtype=np.float64).reshape(n, 3) - 0.5) / SH_C0

    opacity_logit = np.log(config.init_opacity / (1.0 - config.init_opacity))
    return GaussianStore(
        means=np.column_stack([points, np.asarray(times, dtype=np.float64)]),
        log_scales=log_scales,
        rotors=identity_rotor((n,)),
        opacity_logits=np.full(n, opacity_logit),
        sh=sh,
    )


@dataclass
class DensifyReport:
    """Counts of one densify-and-prune pass"""
    before: int
    cloned: int
    split: int
    pruned: int
    after: int


def _fresh_rows(store: GaussianStore, idx: np.ndarray) -> GaussianStore:
    """Copies of the chosen rows with zero moments and statistics"""
    return GaussianStore(**{name: getattr(store, name)[idx].copy() for name in PARAM_NAMES})


def _clone(store: GaussianStore, idx: np.ndarray, config: TrainConfig, rng: np.random.Generator) -> GaussianStore:
    clones = _fresh_rows(store, idx)
    if len(idx) and not config.static_mode:
        velocity, _, _ = speeds(clones)
        step = rng.standard_normal(len(idx)) * clones.scales[:, 3]
        clones.means[:, :3] += step[:, None] * velocity
        clones.means[:, 3] += step
    return clones


def _split(store: GaussianStore, idx: np.ndarray, config: TrainConfig, rng: np.random.Generator) -> GaussianStore:
    parents = np.repeat(idx, 2)
    children = _fresh_rows(store, parents)
    if len(parents) == 0:
        return children
    z = rng.standard_normal((len(parents), 4))
    if config.static_mode:
        z[:, 3] = 0.0
    rotation = to_matrix(normalize(children.rotors), check=False)
    children.means += np.einsum("nij,nj->ni", rotation, children.scales * z)
    children.log_scales -= np.log(config.split_factor)
    if config.static_mode:
        freeze_static(children)
    return children


def densify_and_prune(
    store: GaussianStore,
    config: TrainConfig,
    scene_extent: float,
    rng: np.random.Generator
) -> Tuple[GaussianStore, DensifyReport]:
    """
    Clone small and split large Gaussians with a high mean view-space gradient, then prune.

    Clones keep their parent's spacetime line and move along it by a sampled
    multiple of the temporal scale. Split children are drawn from the
    parent's full 4D distribution, so a parent long in t splits along t.
    Pruning drops near-transparent, oversized and (outside static mode)
    temporally unbounded Gaussians, keeping at least min_gaussians.

    Returns:
        (compacted store with reset statistics, report)
    """
    n = len(store)
    avg = average_view_gradients(store)
    candidates = np.flatnonzero(avg > config.densify_grad_threshold)
    budget = max(config.max_gaussians - n, 0)
    if len(candidates) > budget:
        ranked = np.argsort(-avg[candidates], kind="stable")[:budget]
        candidates = np.sort(candidates[ranked])
    small = store.scales[candidates, :3].max(axis=1) <= config.percent_dense * scene_extent
    clone_idx = candidates[small]
    split_idx = candidates[~small]

    keep_parent = np.ones(n, dtype=bool)
    keep_parent[split_idx] = False
    grown = (
        store.select(keep_parent)
        .append(_clone(store, clone_idx, config, rng))
        .append(_split(store, split_idx, config, rng))
    )

    max_spatial = grown.scales[:, :3].max(axis=1)
    prune = (grown.opacities < config.prune_opacity) | (max_spatial > config.prune_scale_fraction * scene_extent)
    if not config.static_mode:
        prune |= grown.scales[:, 3] > 1.0
    shortfall = min(config.min_gaussians, len(grown)) - int(np.count_nonzero(~prune))
    if shortfall > 0:
        pruned = np.flatnonzero(prune)
        rescued = pruned[np.argsort(-grown.opacities[pruned], kind="stable")[:shortfall]]
        prune[rescued] = False

    result = grown.select(~prune)
    result.reset_stats()
    report = DensifyReport(
        before=n,
        cloned=len(clone_idx),
        split=len(split_idx),
        pruned=int(np.count_nonzero(prune)),
        after=len(result),
    )
    return result, report


def reset_opacity(store: GaussianStore, value: float = 0.01) -> GaussianStore:
    """Cap every opacity at value and restart the opacity moments"""
    above = store.opacities > value
    store.opacity_logits[above] = np.log(value / (1.0 - value))
    store.exp_avg["opacity_logits"][:] = 0.0
    store.exp_avg_sq["opacity_logits"][:] = 0.0
    return store
