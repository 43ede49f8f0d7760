"""Strict experiment configuration.

Parsing happens in two passes: pydantic checks the shape of the document
(unknown keys are rejected), then the domain objects are built so that
stochasticity and floor violations are reported against the field that
caused them.
"""

from __future__ import annotations

from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .core import Channel, LossMatrix, bsc, channel_constants
from .em import EmConfig
from .errors import ConfigError, UFilterError
from .filtering import BlockSchedule, FloorSchedule
from .sources import FsHmpNoise, MarkovSource, source_from_spec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class IidSourceSpec(_Strict):
    type: Literal["iid"]
    probs: list[float]


class MarkovSourceSpec(_Strict):
    type: Literal["markov"]
    transitions: list[list[float]]
    order: Optional[int] = None


class HmmSourceSpec(_Strict):
    type: Literal["hmm"]
    transitions: list[list[float]]
    output_map: Union[list[int], list[list[float]]]
    alphabet: Optional[int] = None


SourceSpec = Annotated[Union[IidSourceSpec, MarkovSourceSpec, HmmSourceSpec], Field(discriminator="type")]


class DmcSpec(_Strict):
    type: Literal["dmc"]
    matrix: list[list[float]]


class BscSpec(_Strict):
    type: Literal["bsc"]
    p: float


class StateChainSpec(_Strict):
    transitions: list[list[float]]
    order: Optional[int] = None


class FshmpSpec(_Strict):
    type: Literal["fshmp"]
    gamma: list[list[float]]
    s_chain: StateChainSpec
    alpha: Optional[float] = None


ChannelSpec = Annotated[Union[DmcSpec, BscSpec, FshmpSpec], Field(discriminator="type")]


class HammingLossSpec(_Strict):
    type: Literal["hamming"] = "hamming"


class MatrixLossSpec(_Strict):
    type: Literal["matrix"]
    matrix: list[list[float]]


LossSpec = Annotated[Union[HammingLossSpec, MatrixLossSpec], Field(discriminator="type")]


class ScheduleSpec(_Strict):
    c: int = 100


class FloorSpec(_Strict):
    delta0: float = 0.05


class EmSpec(_Strict):
    max_iters: int = 300
    rel_tol: float = 1e-7
    restarts: int = 1
    init_jitter: float = 0.5


class ExperimentConfig(_Strict):
    source: SourceSpec
    channel: ChannelSpec
    loss: LossSpec = HammingLossSpec()
    n: int = Field(gt=0)
    k: Union[int, list[int]] = 1
    epsilon: Union[float, list[float]] = 0.0
    schedule: ScheduleSpec = ScheduleSpec()
    floor: FloorSpec = FloorSpec()
    em: EmSpec = EmSpec()
    mc_samples: int = Field(default=256, ge=1)
    seed: int = Field(ge=0)
    replicas: int = Field(default=1, ge=1)
    output: Optional[str] = None

    @property
    def ks(self):
        return [self.k] if isinstance(self.k, int) else list(self.k)

    @property
    def epsilons(self):
        return [self.epsilon] if isinstance(self.epsilon, (int, float)) else list(self.epsilon)

    def build_source(self):
        return source_from_spec(self.source.model_dump())

    def build_channel(self) -> Channel | FsHmpNoise:
        ch = self.channel
        if isinstance(ch, DmcSpec):
            return channel_constants(ch.matrix)
        if isinstance(ch, BscSpec):
            return bsc(ch.p)
        s_chain = MarkovSource.create(ch.s_chain.transitions, ch.s_chain.order)
        return FsHmpNoise.create(ch.gamma, s_chain, ch.alpha)

    def build_loss(self, M) -> LossMatrix:
        if isinstance(self.loss, HammingLossSpec):
            return LossMatrix.hamming(M)
        return LossMatrix.from_matrix(self.loss.matrix)

    def schedule_obj(self):
        return BlockSchedule(c=self.schedule.c)

    def floor_obj(self):
        return FloorSchedule(delta0=self.floor.delta0)

    def em_config(self, **overrides):
        params = {**self.em.model_dump(), "seed": self.seed, **overrides}
        return EmConfig(**params)


def _format_pydantic(exc: ValidationError):
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        out.append(f"{loc}: {err['msg']}")
    return out


def validate_config(raw) -> ExperimentConfig:
    """Parse and check a config mapping; raise :class:`ConfigError` listing every problem."""
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_pydantic(exc)) from None

    errors = []

    def attempt(field, fn):
        try:
            return fn()
        except UFilterError as exc:
            errors.append(f"{field}: {exc}")
            return None

    source = attempt("source", cfg.build_source)
    channel = attempt("channel", cfg.build_channel)
    if channel is not None:
        M = channel.alphabet if isinstance(channel, FsHmpNoise) else channel.size
        if source is not None and source.alphabet != M:
            errors.append(f"source: alphabet {source.alphabet} does not match channel alphabet {M}")
        loss = attempt("loss", lambda: cfg.build_loss(M))
        if loss is not None and loss.size != M:
            errors.append(f"loss: matrix is {loss.size}x{loss.size}, channel alphabet is {M}")
        if cfg.floor.delta0 > 1.0 / M:
            errors.append(f"floor.delta0: {cfg.floor.delta0} exceeds 1/{M}; the model class is empty")
        if isinstance(channel, FsHmpNoise):
            bad = [k for k in cfg.ks if k < channel.order]
            if bad:
                errors.append(f"k: orders {bad} are below the noise state order {channel.order}")
    if not cfg.ks or any(k < 1 for k in cfg.ks):
        errors.append("k: need a non-empty list of positive orders")
    if not cfg.epsilons or any(e < 0 for e in cfg.epsilons):
        errors.append("epsilon: need a non-empty list of nonnegative radii")
    attempt("schedule", cfg.schedule_obj)
    attempt("floor", cfg.floor_obj)
    attempt("em", cfg.em_config)
    if errors:
        raise ConfigError(errors)
    return cfg
