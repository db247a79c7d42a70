"""Scenario and parameter models shared by the channel modules and the CLI."""
from __future__ import annotations

import hashlib
import json
import math
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

ModelTag = Literal["beam_wandering", "elliptic", "weak_bw"]
AngleMode = Literal["uniform", "wrapped_normal"]
SweepVariable = Literal["d0", "tracking_ratio", "L"]

# Applicability of the three channel models along the path length.
SHORT_CHANNEL_LIMIT_M = 2000.0


class ChannelParams(BaseModel):
    """Source and path parameters; derived quantities are recomputed on access."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    wavelength: float = Field(800e-9, gt=0)
    W0: float = Field(0.02, gt=0)
    Cn2: float = Field(1e-14, ge=0)
    L: float = Field(1000.0, gt=0)

    @property
    def k(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @property
    def Omega(self) -> float:
        return self.k * self.W0**2 / (2.0 * self.L)

    @property
    def rytov2(self) -> float:
        return 1.23 * self.Cn2 * self.k ** (7.0 / 6.0) * self.L ** (11.0 / 6.0)

    @property
    def vacuum_spot(self) -> float:
        """Beam-spot radius at the receiver for Cn2 = 0 under the phase approximation.

        The phase-approximation mean intensity describes a beam focused on the
        receiver plane, so its vacuum limit is ``W0 / Omega``. This is narrower than
        ``W0 * sqrt(1 + Omega^-2)``, the radius of a collimated beam after diffraction.
        """

        return self.W0 / self.Omega


class ApertureGeometry(BaseModel):
    """Annular aperture with outer radius a1, central obscuration a2 and aiming offset d0."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    a1: float = Field(0.075, gt=0)
    a2: float = Field(0.023, ge=0)
    d0: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _check_radii(self) -> "ApertureGeometry":
        if self.a2 >= self.a1:
            raise ValueError(
                f"a2 ({self.a2}) must be smaller than a1 ({self.a1}) for an annular aperture"
            )
        return self

    @property
    def radii(self) -> tuple:
        return (self.a1, self.a2)

    @property
    def optimal_offset(self) -> float:
        """Aim point in the middle of the annulus."""

        return 0.5 * (self.a1 + self.a2)


class CorrectionSettings(BaseModel):
    """Beam tracking and deterministic attenuation applied on top of a channel model."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    tracking_ratio: float = Field(1.0, gt=0, le=1)
    eta_det: float = Field(1.0, gt=0, le=1)

    @model_validator(mode="before")
    @classmethod
    def _convert_loss(cls, data):
        if isinstance(data, dict) and "loss_db" in data:
            data = dict(data)
            loss_db = data.pop("loss_db")
            if "eta_det" in data:
                raise ValueError("give either loss_db or eta_det, not both")
            if loss_db is None or float(loss_db) < 0:
                raise ValueError("loss_db must be a non-negative number")
            data["eta_det"] = 10.0 ** (-float(loss_db) / 10.0)
        return data

    def tracked_sigma(self, sigma_bw: float) -> float:
        """Residual beam-wandering standard deviation after tracking."""

        return self.tracking_ratio * sigma_bw


class SamplingPlan(BaseModel):
    """Sample counts, binning, seed and integration budgets for one run.

    Unset budget fields fall back to the environment settings when a run starts.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_samples: int = Field(1_000_000, ge=1)
    bins: int = Field(200, ge=1)
    seed: int = Field(20190901, ge=0, lt=2**64)
    qmc_points_low: Optional[int] = Field(None, ge=1)
    qmc_points_high: Optional[int] = Field(None, ge=1)
    qmc_replicates: Optional[int] = Field(None, ge=2)
    quad_budget: Optional[int] = Field(None, ge=100)
    shard_size: Optional[int] = Field(None, ge=1)
    angle_mode: AngleMode = "uniform"
    angle_std: Optional[float] = Field(None, gt=0)
    moment_window: float = Field(6.0, gt=1)

    @model_validator(mode="after")
    def _check_angle(self) -> "SamplingPlan":
        if self.angle_mode == "wrapped_normal" and self.angle_std is None:
            raise ValueError("angle_std is required when angle_mode is wrapped_normal")
        return self

    def resolved(self) -> "SamplingPlan":
        """Return a copy with every budget field filled from the settings."""

        from fadechan.config import get_settings

        settings = get_settings()
        fill = {
            "qmc_points_low": self.qmc_points_low or settings.qmc_points_low,
            "qmc_points_high": self.qmc_points_high or settings.qmc_points_high,
            "qmc_replicates": self.qmc_replicates or settings.qmc_replicates,
            "quad_budget": self.quad_budget or settings.quad_budget,
            "shard_size": self.shard_size or settings.shard_size,
        }
        return self.model_copy(update=fill)


class SweepSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    variable: SweepVariable
    grid: List[float] = Field(min_length=1)


class Scenario(BaseModel):
    """A complete run description as stored in scenario files."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    model: ModelTag = "beam_wandering"
    channel: ChannelParams = Field(default_factory=ChannelParams)
    aperture: ApertureGeometry = Field(default_factory=ApertureGeometry)
    corrections: CorrectionSettings = Field(default_factory=CorrectionSettings)
    sampling: SamplingPlan = Field(default_factory=SamplingPlan)
    sweep: Optional[SweepSpec] = None

    def applicability_warnings(self) -> List[str]:
        """Model applicability along the path length; advisory only."""

        warnings: List[str] = []
        length = self.channel.L
        if self.model in {"beam_wandering", "elliptic"} and length > SHORT_CHANNEL_LIMIT_M:
            warnings.append(
                f"{self.model} model is a short-channel model (L <= {SHORT_CHANNEL_LIMIT_M:g} m), got L = {length:g} m"
            )
        if self.model == "weak_bw":
            if length < SHORT_CHANNEL_LIMIT_M:
                warnings.append(
                    f"weak_bw model is a long-channel model (L >= {SHORT_CHANNEL_LIMIT_M:g} m), got L = {length:g} m"
                )
            if self.channel.rytov2 < 1.0:
                warnings.append(
                    f"weak_bw model expects moderate to strong turbulence, got rytov2 = {self.channel.rytov2:.4g}"
                )
        return warnings

    def scenario_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


__all__ = [
    "AngleMode",
    "ApertureGeometry",
    "ChannelParams",
    "CorrectionSettings",
    "ModelTag",
    "SamplingPlan",
    "Scenario",
    "SweepSpec",
    "SweepVariable",
]
