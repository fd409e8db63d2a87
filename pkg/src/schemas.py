"""
Schema definitions for run configuration.

This module defines the Pydantic models a run config file is validated
against: transformer and DT model settings, the two scenario families,
PPO hyperparameters and the per-stage specs of the pipeline. A config is
a JSON document parsed by `RunConfig.from_file`.
"""

import math
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.configs import (
    CONVERGENCE_FRACTION,
    DEFAULT_CONTEXT_LEN,
    DEFAULT_DROPOUT_RATE,
    DEFAULT_MAX_SEQUENCE_LEN,
    DEFAULT_MAX_TIMESTEP,
    DEFAULT_NUM_BLOCKS,
    DEFAULT_SPARSE_WINDOW,
    DT_BATCH_SIZE,
    DT_GRAD_CLIP,
    DT_LEARNING_RATE,
    DT_WEIGHT_DECAY,
    EXPERT_PERCENTILE,
    EXPERT_TAIL_EPISODES,
    FEW_SHOT_EPISODES,
    MOVING_AVERAGE_WINDOW,
    NON_EXPERT_WEIGHT,
    SIMILARITY_WEIGHT,
)

AttentionVariant = Literal["dense", "sparse", "shared_heads", "sparse_shared"]

_SCENARIO_ID_PATTERN = r"^[A-Za-z0-9_\-]+$"


class UnknownScenarioError(KeyError):
    """A scenario id is not defined in the config or model registry."""


class _Frozen(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TransformerConfig(_Frozen):
    """
    Causal transformer trunk configuration.

    Attributes:
        num_blocks (int): Number of pre-norm blocks
        model_dim (int): Token width d
        num_heads (int): Attention heads; must divide model_dim
        ffn_dim (int): Hidden width of the feed-forward sublayer
        dropout_rate (float): Residual dropout, inactive in eval mode
        attention_variant (str): dense | sparse | shared_heads | sparse_shared
        window (int): Sliding-window width w for the sparse variants
        max_sequence_len (int): Longest token sequence accepted
    """

    num_blocks: int = Field(DEFAULT_NUM_BLOCKS, ge=1)
    model_dim: int = Field(64, ge=1)
    num_heads: int = Field(4, ge=1)
    ffn_dim: int = Field(64, ge=1)
    dropout_rate: float = Field(DEFAULT_DROPOUT_RATE, ge=0.0, lt=1.0)
    attention_variant: AttentionVariant = "dense"
    window: int = Field(DEFAULT_SPARSE_WINDOW, ge=1)
    max_sequence_len: int = Field(DEFAULT_MAX_SEQUENCE_LEN, ge=1)

    @model_validator(mode="after")
    def _check_shapes(self) -> "TransformerConfig":
        if self.model_dim % self.num_heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if self.is_sparse and self.window > self.max_sequence_len:
            raise ValueError(f"window {self.window} exceeds max_sequence_len {self.max_sequence_len}")
        return self

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def is_sparse(self) -> bool:
        return self.attention_variant in ("sparse", "sparse_shared")

    @property
    def shares_heads(self) -> bool:
        return self.attention_variant in ("shared_heads", "sparse_shared")

    def derive(self, **updates) -> "TransformerConfig":
        """Validated copy with `updates` applied."""
        return TransformerConfig(**{**self.model_dump(), **updates})


class DTModelSettings(_Frozen):
    """
    Decision-transformer wrapper settings.

    Attributes:
        transformer (TransformerConfig): Shared trunk
        context_len (int): K, the number of timesteps kept in context
        max_timestep (int): Size of the learned timestep table
    """

    transformer: TransformerConfig = TransformerConfig()
    context_len: int = Field(DEFAULT_CONTEXT_LEN, ge=1)
    max_timestep: int = Field(DEFAULT_MAX_TIMESTEP, ge=1)

    @model_validator(mode="after")
    def _check_sequence_budget(self) -> "DTModelSettings":
        needed = 1 + 3 * self.context_len
        if needed > self.transformer.max_sequence_len:
            raise ValueError(
                f"context_len {self.context_len} needs {needed} tokens, "
                f"max_sequence_len is {self.transformer.max_sequence_len}"
            )
        return self


class IRSScenario(_Frozen):
    """
    IRS-aided downlink: one single-antenna BS, one N-element IRS, one user.

    Attributes:
        scenario_id (str): Registry key
        num_elements (int): IRS elements N
        phase_levels (int): Phase resolution; level k maps to 2*pi*k/phase_levels
        power_levels (Tuple[float, ...]): Allowed BS transmit powers (W)
        continuous_power (bool): Expose BS power as a continuous part in [0, max power]
        pathloss_direct / pathloss_bs_irs / pathloss_irs_user (float): Path-loss exponents
        reference_gain (float): Path gain at 1 m
        rician_k_db (float): Rician K-factor in dB; +inf gives pure line of sight
        noise_power (float): Receiver noise power (W)
        correlation (float): Per-slot Gauss-Markov correlation of the scattered components
        element_spacing (float): IRS element spacing in wavelengths
        bs_position / irs_position / user_position (Tuple[float, float]): Geometry (m)
        episode_len (int): Slots per episode
        qos_min_rate (float): Rate floor (bits/s/Hz) for the QoS penalty
        qos_penalty (float): Reward deduction when the rate is below qos_min_rate
    """

    task: Literal["irs"] = "irs"
    scenario_id: str = Field(..., pattern=_SCENARIO_ID_PATTERN)
    num_elements: int = Field(..., ge=1)
    phase_levels: int = Field(4, ge=2)
    power_levels: Tuple[float, ...] = (0.1, 0.5, 1.0)
    continuous_power: bool = False
    pathloss_direct: float = Field(3.5, gt=0)
    pathloss_bs_irs: float = Field(2.0, gt=0)
    pathloss_irs_user: float = Field(2.0, gt=0)
    reference_gain: float = Field(1e-3, gt=0)
    rician_k_db: float = 10.0
    noise_power: float = Field(1e-9, gt=0)
    correlation: float = Field(0.95, ge=0.0, le=1.0)
    element_spacing: float = Field(0.5, gt=0)
    bs_position: Tuple[float, float] = (0.0, 0.0)
    irs_position: Tuple[float, float] = (40.0, 5.0)
    user_position: Tuple[float, float] = (45.0, 0.0)
    episode_len: int = Field(100, gt=0)
    qos_min_rate: float = Field(0.0, ge=0.0)
    qos_penalty: float = Field(0.0, ge=0.0)

    @field_validator("power_levels")
    @classmethod
    def _check_powers(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not value:
            raise ValueError("power_levels must not be empty")
        if any(p < 0 or not math.isfinite(p) for p in value):
            raise ValueError(f"power_levels must be finite and >= 0, got {value}")
        return value

    @property
    def max_power(self) -> float:
        return max(self.power_levels)


class UAVScenario(_Frozen):
    """
    UAV-aided MEC: K UAVs serve U mobile users' workloads in a square region.

    Attributes:
        scenario_id (str): Registry key
        num_uavs (int): UAV count K
        num_users (int): Ground users U
        region_size (float): Side of the square region (m)
        uav_altitude (float): Flight altitude (m)
        uav_speed (float): Distance flown per slot (m)
        workload_low / workload_high (float): Initial workload range (Mb)
        episode_len (int): Slots per episode
        bandwidth_hz (float): Link bandwidth
        slot_seconds (float): Slot duration
        pathloss_exponent (float): alpha in SNR0 / d**alpha
        reference_snr (float): Linear SNR at 1 m (transmit power x gain / noise)
        mobility_memory (float): Gauss-Markov memory eta
        mean_velocity (Tuple[float, float]): Mean user velocity (m/slot)
        velocity_std (float): Std of the Gauss-Markov innovation (m/slot)
    """

    task: Literal["uav"] = "uav"
    scenario_id: str = Field(..., pattern=_SCENARIO_ID_PATTERN)
    num_uavs: int = Field(2, ge=1)
    num_users: int = Field(10, ge=1)
    region_size: float = Field(100.0, gt=0)
    uav_altitude: float = Field(20.0, gt=0)
    uav_speed: float = Field(5.0, ge=0)
    workload_low: float = Field(10.0, ge=0)
    workload_high: float = Field(20.0, ge=0)
    episode_len: int = Field(50, gt=0)
    bandwidth_hz: float = Field(1e6, gt=0)
    slot_seconds: float = Field(1.0, gt=0)
    pathloss_exponent: float = Field(2.0, gt=0)
    reference_snr: float = Field(6000.0, gt=0)
    mobility_memory: float = Field(0.8, ge=0.0, le=1.0)
    mean_velocity: Tuple[float, float] = (0.0, 0.0)
    velocity_std: float = Field(1.0, ge=0.0)

    @model_validator(mode="after")
    def _check_workload_range(self) -> "UAVScenario":
        if self.workload_low > self.workload_high:
            raise ValueError(f"workload_low {self.workload_low} > workload_high {self.workload_high}")
        return self


Scenario = Annotated[Union[IRSScenario, UAVScenario], Field(discriminator="task")]


class PPOConfig(_Frozen):
    """
    PPO hyperparameters. Conventional defaults; none are tuned.

    Attributes:
        clip_epsilon (float): Ratio clip range
        gamma (float): Discount
        gae_lambda (float): GAE lambda
        epochs (int): Passes over each rollout batch
        rollout_batch (int): Env steps per update
        minibatch (int): SGD minibatch size
        entropy_coef (float): Entropy bonus weight
        value_coef (float): Value loss weight
        learning_rate (float): Adam step size
        hidden_dim (int): Width of the actor/critic perceptrons
        max_grad_norm (float): Gradient clipping norm
    """

    clip_epsilon: float = Field(0.2, gt=0.0, lt=1.0)
    gamma: float = Field(0.99, ge=0.0, le=1.0)
    gae_lambda: float = Field(0.95, ge=0.0, le=1.0)
    epochs: int = Field(4, ge=1)
    rollout_batch: int = Field(2048, ge=1)
    minibatch: int = Field(256, ge=1)
    entropy_coef: float = Field(0.01, ge=0.0)
    value_coef: float = Field(0.5, ge=0.0)
    learning_rate: float = Field(3e-4, gt=0.0)
    hidden_dim: int = Field(64, ge=1)
    max_grad_norm: float = Field(0.5, gt=0.0)

    @model_validator(mode="after")
    def _check_minibatch(self) -> "PPOConfig":
        if self.minibatch > self.rollout_batch:
            raise ValueError(f"minibatch {self.minibatch} exceeds rollout_batch {self.rollout_batch}")
        return self


class TrainingSchedule(_Frozen):
    """Supervised DT optimisation schedule (AdamW)."""

    steps: int = Field(2000, ge=1)
    batch_size: int = Field(DT_BATCH_SIZE, ge=1)
    learning_rate: float = Field(DT_LEARNING_RATE, gt=0.0)
    weight_decay: float = Field(DT_WEIGHT_DECAY, ge=0.0)
    grad_clip: Optional[float] = Field(DT_GRAD_CLIP, gt=0.0)
    log_every: int = Field(100, ge=1)


class FreezeSpec(_Frozen):
    """
    Parameter groups held fixed during fine-tuning.

    Attributes:
        groups (List[str]): Parameter-name prefixes, e.g. "trunk",
            "trunk.blocks.0", "embed_return", "adapters"
    """

    groups: List[str] = Field(default_factory=lambda: ["trunk"])


class CollectSpec(_Frozen):
    """
    Expert data generation per pretraining scenario.

    Attributes:
        episodes_per_scenario (int): Trajectories stored per scenario
        ppo_budget_steps (int): PPO training budget before collection
        expert_source (str): ppo (trained policy) or heuristic (env oracle)
        sampled_fraction (float): Share of episodes rolled out with sampled
            (exploratory) instead of greedy actions
        random_fraction (float): Share of uniformly random episodes
        expert_percentile (float): Percentile of recent training returns
            a trajectory must reach to be flagged expert
        tail_episodes (int): Training episodes the percentile looks at
    """

    episodes_per_scenario: int = Field(300, ge=1)
    ppo_budget_steps: int = Field(40960, ge=1)
    expert_source: Literal["ppo", "heuristic"] = "ppo"
    sampled_fraction: float = Field(0.3, ge=0.0, le=1.0)
    random_fraction: float = Field(0.0, ge=0.0, le=1.0)
    expert_percentile: float = Field(EXPERT_PERCENTILE, ge=0.0, le=100.0)
    tail_episodes: int = Field(EXPERT_TAIL_EPISODES, ge=1)

    @model_validator(mode="after")
    def _check_fractions(self) -> "CollectSpec":
        if self.sampled_fraction + self.random_fraction > 1.0:
            raise ValueError("sampled_fraction + random_fraction must be <= 1")
        return self


class LightweightSpec(_Frozen):
    """Distillation of the pretrained model into a cheaper trunk."""

    enabled: bool = False
    attention_variant: AttentionVariant = "sparse_shared"
    window: int = Field(DEFAULT_SPARSE_WINDOW, ge=1)
    beta: float = Field(SIMILARITY_WEIGHT, ge=0.0)
    schedule: TrainingSchedule = TrainingSchedule(steps=1000)


class FinetuneSpec(_Frozen):
    """
    Few-shot fine-tuning on an unseen scenario.

    Attributes:
        episodes (int): Few-shot episodes collected in the new scenario
        freeze (FreezeSpec): Groups held fixed
        sample_source (str): ppo (partially trained PPO), dt (current DT
            rollouts) or mixed (half each)
        ppo_budget_steps (int): Training budget of the few-shot PPO
        schedule (TrainingSchedule): Fine-tune optimisation schedule
        non_expert_weight (float): Loss weight of non-expert samples
        expert_percentile (float): Percentile of few-shot returns that
            marks a sample expert
    """

    episodes: int = Field(FEW_SHOT_EPISODES, ge=1)
    freeze: FreezeSpec = FreezeSpec()
    sample_source: Literal["ppo", "dt", "mixed"] = "ppo"
    ppo_budget_steps: int = Field(4096, ge=1)
    schedule: TrainingSchedule = TrainingSchedule(steps=500)
    non_expert_weight: float = Field(NON_EXPERT_WEIGHT, ge=0.0)
    expert_percentile: float = Field(50.0, ge=0.0, le=100.0)


class EvaluationSpec(_Frozen):
    """Closed-loop evaluation protocol."""

    episodes: int = Field(100, ge=1)
    target_rule: Literal["dataset_max", "dataset_min", "fixed"] = "dataset_max"
    target_return: Optional[float] = None
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_fixed_target(self) -> "EvaluationSpec":
        if self.target_rule == "fixed" and self.target_return is None:
            raise ValueError("target_rule 'fixed' needs target_return")
        return self


class CompareSpec(_Frozen):
    """
    Three-arm comparison on the new scenario.

    Attributes:
        env_step_budget (int): Env interactions granted to every arm
        eval_episodes (int): Episodes per DT-FT curve point
        round_episodes (int): DT rollout episodes added per fine-tune round
        round_steps (int): Optimisation steps per fine-tune round
        convergence_fraction (float): Share of the PPO plateau that counts as converged
        moving_average_window (int): Curve smoothing for the convergence rule
    """

    env_step_budget: int = Field(40960, ge=1)
    eval_episodes: int = Field(10, ge=1)
    round_episodes: int = Field(10, ge=1)
    round_steps: int = Field(200, ge=1)
    convergence_fraction: float = Field(CONVERGENCE_FRACTION, gt=0.0, le=1.0)
    moving_average_window: int = Field(MOVING_AVERAGE_WINDOW, ge=1)


class MetricsSpec(_Frozen):
    """Metric emission options."""

    record_wall_clock: bool = False


class RunConfig(_Frozen):
    """
    Complete description of one pipeline run.

    Attributes:
        task (str): irs | uav; every scenario must belong to it
        seed (int): Run seed; no wall-clock seeding anywhere
        scenarios (List[Scenario]): All scenario definitions
        pretrain_scenarios (List[str]): Ids used by collect/pretrain;
            defaults to every scenario except new_scenario
        new_scenario (Optional[str]): Id fine-tuned and compared on
    """

    task: Literal["irs", "uav"]
    seed: int
    scenarios: List[Scenario] = Field(..., min_length=1)
    pretrain_scenarios: List[str] = Field(default_factory=list)
    new_scenario: Optional[str] = None
    model: DTModelSettings = DTModelSettings()
    ppo: PPOConfig = PPOConfig()
    collect: CollectSpec = CollectSpec()
    pretrain: TrainingSchedule = TrainingSchedule()
    lightweight: LightweightSpec = LightweightSpec()
    finetune: FinetuneSpec = FinetuneSpec()
    evaluation: EvaluationSpec = EvaluationSpec()
    compare: CompareSpec = CompareSpec()
    metrics: MetricsSpec = MetricsSpec()

    @model_validator(mode="after")
    def _check_scenarios(self) -> "RunConfig":
        ids = [s.scenario_id for s in self.scenarios]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate scenario ids in {ids}")
        for scenario in self.scenarios:
            if scenario.task != self.task:
                raise ValueError(f"scenario {scenario.scenario_id} is {scenario.task}, run task is {self.task}")
            if scenario.episode_len > self.model.max_timestep:
                raise ValueError(
                    f"scenario {scenario.scenario_id}: episode_len {scenario.episode_len} "
                    f"exceeds model.max_timestep {self.model.max_timestep}"
                )
        referenced = list(self.pretrain_scenarios) + ([self.new_scenario] if self.new_scenario else [])
        missing = [sid for sid in referenced if sid not in ids]
        if missing:
            raise ValueError(f"referenced scenarios not defined: {missing}")
        if self.new_scenario and self.new_scenario in self.pretrain_scenarios:
            raise ValueError(f"new_scenario {self.new_scenario} is also a pretraining scenario")
        return self

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        """Parse and validate a JSON run config."""
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        """Copy with the seed replaced (used by `--seed`)."""
        if seed is None or seed == self.seed:
            return self
        return self.model_copy(update={"seed": int(seed)})

    def scenario(self, scenario_id: str) -> Union[IRSScenario, UAVScenario]:
        for scenario in self.scenarios:
            if scenario.scenario_id == scenario_id:
                return scenario
        raise UnknownScenarioError(scenario_id)

    @property
    def pretrain_ids(self) -> List[str]:
        if self.pretrain_scenarios:
            return list(self.pretrain_scenarios)
        return [s.scenario_id for s in self.scenarios if s.scenario_id != self.new_scenario]
