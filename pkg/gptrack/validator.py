"""Validated configuration models."""

from typing import Literal, Optional
from pydantic import BaseModel, Field, root_validator


class _Section(BaseModel):
    class Config:
        extra = 'forbid'
        validate_assignment = True


class SensorGeometry(_Section):
    width: int = Field(240, gt=0)
    height: int = Field(180, gt=0)
    patch_radius: float = Field(15.0, gt=0)


class MotionCompConfig(_Section):
    batch_size: int = Field(1250, gt=0)
    optimize_size: int = Field(1250, gt=0)
    events_per_state: int = Field(250, gt=0)
    lengthscale_factor: float = Field(3.0, gt=0)
    kf_scale: float = Field(1.0, gt=0)
    kf_lengthscale: float = Field(0.25, gt=0)
    occupancy_noise: float = Field(1e-2, gt=0)
    trajectory_noise: float = Field(1e-6, gt=0)
    # BFGS limits per continuation stage; gtol applies to the per-event objective
    max_iterations: int = Field(200, gt=0)
    gtol: float = Field(1e-5, gt=0)
    # first stage lengthscale in px, halved until kf_lengthscale
    coarse_lengthscale: float = Field(8.0, gt=0)
    coarse_fraction: float = Field(0.25, gt=0, le=1)
    # Δ_min = max(lml_gain_per_event * N, null_gain_ratio * shuffled-batch gain);
    # the shuffled batch is only optimised when the gain is below lml_accept_per_event * N
    lml_gain_per_event: float = Field(0.02, gt=0)
    lml_accept_per_event: float = Field(0.25, gt=0)
    null_gain_ratio: float = Field(2.0, ge=0)
    model: Literal['se2', 'translation'] = 'se2'

    @root_validator(skip_on_failure=True)
    def check_optimize_size(cls, values):
        if values['optimize_size'] > values['batch_size']:
            raise ValueError(
                f"optimize_size ({values['optimize_size']}) must not exceed batch_size ({values['batch_size']})"
            )
        return values

    def min_lml_gain(self, n_events: int) -> float:
        return self.lml_gain_per_event * n_events


class TrackerConfig(_Section):
    divergence_px: float = Field(3.0, gt=0)
    # None means patch_radius + 2
    border_margin: Optional[float] = Field(None, gt=0)
    template_threshold: int = Field(2, gt=0)
    template_padding: int = Field(6, ge=0)
    registration_mode: Literal['se2-only', 'batch-to-batch', 'full'] = 'full'
    field_support_limit: int = Field(1000, gt=0)
    cauchy_scale: float = Field(1.0, gt=0)
    lm_max_iterations: int = Field(50, gt=0)
    lm_initial_lambda: float = Field(1e-3, gt=0)
    max_batches: int = Field(10000, gt=0)

    def margin(self, patch_radius: float) -> float:
        return self.border_margin if self.border_margin is not None else patch_radius + 2.0


class SimulatorConfig(_Section):
    scene: Literal['tags', 'rocks'] = 'tags'
    motion: Literal['translation', 'se2'] = 'se2'
    duration: float = Field(0.25, gt=0)
    count: int = Field(1250, gt=0)
    noise_px: float = Field(0.15, ge=0)
    # events per second for full-sensor streams
    rate: float = Field(5000.0, gt=0)
    max_angle: float = Field(0.2, gt=0)
    max_translation: float = Field(8.0, gt=0)
    seed: int = 0
    gate_px: float = Field(7.0, ge=0)


class Config(_Section):
    sensor: SensorGeometry = Field(default_factory=SensorGeometry)
    motion: MotionCompConfig = Field(default_factory=MotionCompConfig)
    tracker: TrackerConfig = Field(default_factory=TrackerConfig)
    simulator: SimulatorConfig = Field(default_factory=SimulatorConfig)


SECTIONS = {
    'sensor': SensorGeometry,
    'motion': MotionCompConfig,
    'tracker': TrackerConfig,
    'simulator': SimulatorConfig,
}


def validate_config(data):
    """Validate nested config data. Return a Config model or raise ValidationError."""
    return Config(**data)
