"""Frame-by-frame ghost imaging runs.

Each frame draws fresh subsource amplitudes (and, when turbulence is on,
fresh phase screens per path), propagates to the object and reference
planes, and accumulates the bucket/reference covariance.  All per-frame
randomness is keyed by (seed, frame_index, stream), and frames are
reduced in fixed-size batches merged in order, so results are identical
for any worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import multiprocessing

import numpy as np

from .correlator import GhostImageEstimate, GhostImageResult, ObjectMask, bucket_signal
from .errors import ConfigurationError, ValidationError
from .optics import ComplexField, Grid2D, OpticalConfig, fresnel_kernel, propagate_subsources
from .source import SubsourceSet, sample_frame
from .turbulence import ScreenSampler, TurbulenceModel

# Streams for the per-frame screen draws (the source module owns 1).
RNG_DOMAIN_SCREEN_BUCKET = 2
RNG_DOMAIN_SCREEN_REFERENCE = 3

# Each of the two path screens carries half of the pair phase-structure
# variance, so its own target coherence length is sqrt(2) times the
# configured two-path rho0; the product of the two path coherence
# factors then reproduces exp(-r^2 / rho0^2).
PER_PATH_RHO0_FACTOR = math.sqrt(2.0)

# Frames per reduction batch.  The batch layout is fixed by this
# constant alone, never by the worker count, which keeps accumulation
# order (and therefore every output bit) schedule-independent.
BATCH_FRAMES = 256


@dataclass(frozen=True, eq=False)
class RunSetup:
    """Fully resolved inputs of one simulation run."""

    cfg: OpticalConfig
    sources: SubsourceSet
    model: TurbulenceModel
    mask: ObjectMask
    ref_grid: Grid2D
    frames: int
    seed: int
    workers: int = 1

    def __post_init__(self):
        if self.frames < 1:
            raise ValidationError(f"frames must be >= 1, got {self.frames}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True, eq=False)
class SimulationOutput:
    setup: RunSetup
    estimate: GhostImageEstimate
    result: GhostImageResult
    wall_time_s: float


def per_path_screen_model(model: TurbulenceModel) -> TurbulenceModel:
    """Screen-generation model for one of the two independent paths."""
    if not model.turbulent:
        return model
    return TurbulenceModel(rho0=PER_PATH_RHO0_FACTOR * model.rho0,
                           screen_position_fraction=model.screen_position_fraction,
                           paths_independent=model.paths_independent)


def source_screen_grid(sources: SubsourceSet, model: TurbulenceModel) -> Grid2D:
    """Source-plane screen grid covering every subsource with margin."""
    pos = sources.positions
    reach = float(np.max(np.abs(pos))) if pos.size else 0.0
    pitch = min(model.rho0 / 5.0, sources.pitch / 2.0)
    if not (math.isfinite(pitch) and pitch > 0):
        pitch = sources.pitch / 2.0
    half_px = int(math.ceil((reach + 2.0 * pitch) / pitch))
    n = 2 * half_px + 1
    return Grid2D(nx=n, ny=n, pitch=pitch, center=(0.0, 0.0))


def midpath_screen_grid(setup: RunSetup, max_pixels: int = 128) -> Grid2D:
    """Screen-plane grid for an intermediate screen position."""
    f = setup.model.screen_position_fraction
    cfg = setup.cfg
    pos = setup.sources.positions
    src_r = float(np.max(np.hypot(pos[:, 0], pos[:, 1])))
    candidates = []
    for g in (setup.mask.grid, setup.ref_grid):
        pts = g.points()
        candidates.append(float(np.max(np.hypot(pts[..., 0], pts[..., 1]))))
    dst_r = max(candidates)
    l1 = f * cfg.path_length
    l2 = (1.0 - f) * cfg.path_length
    fresnel = math.sqrt(cfg.wavelength * l1 * l2 / cfg.path_length)
    footprint = (1.0 - f) * src_r + f * dst_r + 3.0 * fresnel
    half = footprint / 0.8
    k = cfg.wavenumber
    grad = k * (footprint + src_r) / l1 + k * (footprint + dst_r) / l2
    pitch = 0.8 * math.pi / grad
    if setup.model.turbulent:
        pitch = min(pitch, setup.model.rho0 / 5.0)
    n = 2 * int(math.ceil(half / pitch)) + 1
    if n > max_pixels:
        raise ConfigurationError(
            f"intermediate screen needs a {n}^2 grid (> {max_pixels}^2); shrink the "
            "source or detector extents, or move the screen to an end plane"
        )
    return Grid2D(nx=n, ny=n, pitch=pitch, center=(0.0, 0.0))


class FramePipeline:
    """Cached kernels and screen samplers for a run's frame loop.

    The cached path computes exactly what propagate_subsources computes,
    through the same kernel and sampling helpers, so the two agree
    bit for bit.
    """

    def __init__(self, setup: RunSetup):
        self.setup = setup
        cfg = setup.cfg
        pos = setup.sources.positions
        self.k_obj = fresnel_kernel(pos, setup.mask.grid, cfg)
        self.k_ref = fresnel_kernel(pos, setup.ref_grid, cfg)
        self.screen_sampler = None
        self.mid_grid = None
        model = setup.model
        fraction = model.screen_position_fraction
        if model.turbulent and fraction == 0.0:
            grid = source_screen_grid(setup.sources, model)
            self.screen_sampler = ScreenSampler(grid, per_path_screen_model(model))
        elif model.turbulent and 0.0 < fraction < 1.0:
            self.mid_grid = midpath_screen_grid(setup)
            self.screen_sampler = ScreenSampler(self.mid_grid, per_path_screen_model(model))
        # A detector-plane screen (fraction 1) multiplies each pixel's
        # summed field by a unit-modulus factor, so no bucket or
        # reference intensity can depend on it; it is not drawn at all,
        # which keeps such a run equal to the vacuum run frame by frame.

    def _path_screens(self, frame_index: int):
        seed = self.setup.seed
        bucket = self.screen_sampler.sample((seed, frame_index, RNG_DOMAIN_SCREEN_BUCKET))
        if self.setup.model.paths_independent:
            ref = self.screen_sampler.sample((seed, frame_index, RNG_DOMAIN_SCREEN_REFERENCE))
        else:
            ref = bucket
        return bucket, ref

    def frame(self, frame_index: int) -> tuple[float, np.ndarray]:
        """Bucket value and reference intensity map for one frame."""
        setup = self.setup
        amps = sample_frame(setup.sources, setup.seed, frame_index).amplitudes
        model = setup.model
        fraction = model.screen_position_fraction

        if self.screen_sampler is None:
            obj_vals = (self.k_obj @ amps).reshape(setup.mask.grid.ny, setup.mask.grid.nx)
            ref_vals = (self.k_ref @ amps).reshape(setup.ref_grid.ny, setup.ref_grid.nx)
        elif fraction == 0.0:
            screen_b, screen_r = self._path_screens(frame_index)
            pos = setup.sources.positions
            eff_b = amps * np.exp(1j * screen_b.sample_at(pos))
            eff_r = amps * np.exp(1j * screen_r.sample_at(pos))
            obj_vals = (self.k_obj @ eff_b).reshape(setup.mask.grid.ny, setup.mask.grid.nx)
            ref_vals = (self.k_ref @ eff_r).reshape(setup.ref_grid.ny, setup.ref_grid.nx)
        else:
            screen_b, screen_r = self._path_screens(frame_index)
            obj = propagate_subsources(amps, setup.sources.positions, screen_b,
                                       per_path_screen_model(model), setup.mask.grid, setup.cfg)
            ref = propagate_subsources(amps, setup.sources.positions, screen_r,
                                       per_path_screen_model(model), setup.ref_grid, setup.cfg)
            obj_vals = obj.values
            ref_vals = ref.values

        obj_field = ComplexField(grid=setup.mask.grid, values=obj_vals)
        bucket = bucket_signal(obj_field, setup.mask)
        ref_intensity = ref_vals.real**2 + ref_vals.imag**2
        return bucket, ref_intensity

    def batch(self, start: int, stop: int) -> GhostImageEstimate:
        est = GhostImageEstimate(self.setup.ref_grid)
        for i in range(start, stop):
            b, im = self.frame(i)
            est.add(b, im)
        return est


def batch_ranges(frames: int) -> list[tuple[int, int]]:
    return [(s, min(s + BATCH_FRAMES, frames)) for s in range(0, frames, BATCH_FRAMES)]


_WORKER_PIPELINE: FramePipeline | None = None


def _init_worker(setup: RunSetup) -> None:
    global _WORKER_PIPELINE
    _WORKER_PIPELINE = FramePipeline(setup)


def _worker_batch(span: tuple[int, int]) -> GhostImageEstimate:
    assert _WORKER_PIPELINE is not None
    return _WORKER_PIPELINE.batch(span[0], span[1])


def run_simulation(setup: RunSetup) -> SimulationOutput:
    """Run all frames and return the finalized covariance image.

    Frames are split into fixed BATCH_FRAMES-sized batches and the
    partial estimates merged in batch order whether the batches run
    serially or on a process pool, so any worker count produces
    bit-identical results.
    """
    t0 = time.perf_counter()
    spans = batch_ranges(setup.frames)
    estimate = GhostImageEstimate(setup.ref_grid)
    if setup.workers == 1:
        pipeline = FramePipeline(setup)
        for span in spans:
            estimate.merge(pipeline.batch(*span))
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=setup.workers, mp_context=ctx,
                                 initializer=_init_worker, initargs=(setup,)) as pool:
            for part in pool.map(_worker_batch, spans):
                estimate.merge(part)
    result = estimate.finalize()
    return SimulationOutput(setup=setup, estimate=estimate, result=result,
                            wall_time_s=time.perf_counter() - t0)
