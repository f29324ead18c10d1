"""Experiment configuration: dataclass sections, INI round-trip, config hashing.

Every knob that the simulator consumes lives here with a documented default.
Configs serialize to flat ``key = value`` INI sections so runs are diffable,
and every output file embeds the sha256 hash of the resolved config.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

from .errors import ConfigError

ENCODE_MODES = ("CBR_L", "CBR_S", "KEY_MIN", "PDSTREAM")
RATE_POLICIES = ("FIXED", "GCC", "RL")
PROFILE_NAMES = ("street", "conference", "sports", "gaming")


@dataclass(frozen=True)
class ProfileParams:
    """Synthetic content generator constants for one scenario profile.

    ``sad_*`` shape the AR(1) lognormal inter-frame difference series;
    ``cubic_true`` is the generating SAD -> complexity polynomial; ``rq_true``
    the generating rate model coefficients. Conversational profiles use lower
    SAD means than high-motion ones.
    """

    sad_mean: float
    sad_sigma: float          # innovation std of the log-AR(1) SAD process
    sad_phi: float            # AR(1) coefficient on log SAD
    scene_cut_rate: float     # expected cuts per second
    cubic_true: tuple[float, float, float, float]
    rq_true: tuple[float, float]
    satd_noise_sigma: float = 0.05


# the generating cubics are concave over the realizable SAD range: complexity
# rises with inter-frame difference but saturates toward the scene-change
# level, so wide-gap reference frames cost ~1.5x a normal delta rather than a
# full keyframe's worth
PROFILES: dict[str, ProfileParams] = {
    "street": ProfileParams(
        sad_mean=650.0, sad_sigma=0.20, sad_phi=0.90, scene_cut_rate=0.030,
        cubic_true=(1514.0, 1.00, -1.517e-4, 7.67e-9), rq_true=(80.0, 2200.0)),
    "conference": ProfileParams(
        sad_mean=260.0, sad_sigma=0.15, sad_phi=0.92, scene_cut_rate=0.008,
        cubic_true=(646.4, 2.20, -1.0111e-3, 1.549e-7), rq_true=(70.0, 1900.0)),
    "sports": ProfileParams(
        sad_mean=950.0, sad_sigma=0.22, sad_phi=0.88, scene_cut_rate=0.060,
        cubic_true=(2247.5, 0.75, -6.653e-5, 1.967e-9), rq_true=(90.0, 2500.0)),
    "gaming": ProfileParams(
        sad_mean=360.0, sad_sigma=0.25, sad_phi=0.90, scene_cut_rate=0.050,
        cubic_true=(888.7, 1.60, -4.991e-4, 5.19e-8), rq_true=(75.0, 2000.0)),
}


@dataclass
class ContentConfig:
    profile: str = "street"
    fps: float = 30.0
    duration_s: float = 60.0
    trace_path: str = ""          # load instead of generating when set
    gap_rho: float = 0.75         # SAD growth exponent over reference gap
    scene_cut_uplift: float = 1.1  # cut SAD = uplift * 5 * median


@dataclass
class EncoderConfig:
    kappa: float = 7.0            # keyframe effective-complexity multiplier
    q_min: float = 0.625
    q_steps: int = 52
    q_octave_steps: float = 6.0   # quantizer doubles every this many indices
    keyframe_period_s: float = 15.0
    cbr_window_s: float = 1.0
    cbr_catchup: float = 1.0      # fraction of the window deficit amortized per window
    cbr_floor: float = 0.10       # frame target floor, fraction of nominal
    cbr_boost_cap: float = 0.25   # max upward catch-up, fraction of nominal
    cbr_s_tolerance: float = 0.02
    size_noise_sigma: float = 0.05
    encode_base_ms: float = 4.0
    encode_key_extra_ms: float = 2.0
    decode_key_ms: float = 5.0
    decode_delta_ms: float = 3.0
    rq_window: int = 60           # ring size for R-Q refit observations
    rq_decay: float = 0.92        # exponential weight per observation of age 1
    sad_refit_interval: int = 300  # frames between cubic refits
    alpha1_init: float = 75.0
    alpha2_init: float = 2000.0


@dataclass
class DualConfig:
    theta: float = 1.2            # "close to average" deactivation band
    eta: float = 5.0              # duration bound factor: T <= 1/(eta*f_k)
    avg_half_life_s: float = 2.0  # EWMA half-life for average delta size
    s1_skip_policy: str = "drop"  # skipped captures never re-encoded on s1


@dataclass
class PacerConfig:
    tick_ms: float = 5.0
    mtu_payload: int = 1200
    header_bytes: int = 12
    burst_multiplier: float = 2.5
    # "backlogged": multiplier only applies when queued bytes exceed one
    # tick of base budget; "always": unconditionally.
    burst_policy: str = "backlogged"


@dataclass
class LinkConfig:
    trace_path: str = ""          # CSV trace; empty = fixed bandwidth
    fixed_bw_bps: float = 0.0     # used when trace_path empty and > 0
    fixed_bw_factor: float = 1.1  # bandwidth = factor * target bitrate
    prop_delay_ms: float = 10.0
    loss_rate: float = 0.0
    queue_cap_ms: float = 300.0


@dataclass
class JitterConfig:
    weight: float = 0.05
    sigma_mult: float = 3.0
    min_wait_ms: float = 0.0
    max_wait_ms: float = 500.0


@dataclass
class RateControlConfig:
    policy: str = "FIXED"
    fixed_bps: float = 1.0e6
    b_min: float = 0.3e6
    b_max: float = 4.0e6
    decision_interval_ms: float = 100.0
    gcc_increase: float = 1.05
    gcc_decrease: float = 0.85
    gcc_loss_threshold: float = 0.10
    gcc_loss_factor: float = 0.5
    gcc_gradient_threshold: float = 10.0   # ms of RTT growth per second
    gcc_gradient_smoothing: float = 0.9
    checkpoint: str = ""          # RL policy checkpoint path


@dataclass
class RLConfig:
    grid_size: int = 17
    grid_lo_bps: float = 0.3e6
    grid_hi_bps: float = 4.0e6
    hidden: tuple[int, int, int] = (128, 64, 32)
    leaky_slope: float = 0.01
    gamma: float = 0.98
    horizon_s: float = 2.0
    epsilon: float = 0.1
    lr_actor: float = 1.0e-4
    lr_critic: float = 1.0e-3
    update_epochs: int = 1
    window_s: float = 2.0         # state history span
    episodes: int = 50
    episode_s: float = 30.0
    checkpoint_every: int = 10
    train_split: float = 0.75
    # per-channel normalization divisors, order matches state layout
    norm_throughput: float = 4.0e6
    norm_loss: float = 0.05
    norm_rtt_ms: float = 200.0
    norm_delay_ms: float = 200.0
    norm_fps: float = 30.0
    norm_qp: float = 51.0
    norm_bitrate: float = 4.0e6
    norm_s1_bits: float = 5.0e5
    norm_s2_bits: float = 1.0e5


@dataclass
class RewardConfig:
    w_bitrate: float = 1.0e-5
    w_fps: float = 1.0
    w_qp: float = 1.0
    w_delay: float = 200.0        # delay in seconds
    w_stall: float = 4000.0       # stall rate as a fraction
    dt_s: float = 0.1
    stall_fps: float = 12.0


@dataclass
class AnalyticsConfig:
    x_high_percentile: float = 85.0
    tail_bins: int = 24
    min_bin_count: int = 3
    min_bins: int = 8
    min_tail_samples: int = 30
    psnr_per_qp: float = 0.89
    psnr_base_db: float = 50.0
    loss_penalty_db: float = 3.0


@dataclass
class ExperimentConfig:
    """Full experiment description; one instance drives one run."""

    mode: str = "CBR_L"
    seed: int = 1
    content: ContentConfig = field(default_factory=ContentConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    dual: DualConfig = field(default_factory=DualConfig)
    pacer: PacerConfig = field(default_factory=PacerConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    jitter: JitterConfig = field(default_factory=JitterConfig)
    rate: RateControlConfig = field(default_factory=RateControlConfig)
    rl: RLConfig = field(default_factory=RLConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    analytics: AnalyticsConfig = field(default_factory=AnalyticsConfig)

    def validate(self) -> "ExperimentConfig":
        if self.mode not in ENCODE_MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {ENCODE_MODES}")
        if self.rate.policy not in RATE_POLICIES:
            raise ConfigError(f"unknown rate policy {self.rate.policy!r}")
        if self.content.profile not in PROFILES and not self.content.trace_path:
            raise ConfigError(f"unknown content profile {self.content.profile!r}")
        if not 1.0 <= self.content.fps <= 120.0:
            raise ConfigError("fps must be within [1, 120]")
        if self.content.duration_s <= 0:
            raise ConfigError("duration must be positive")
        if self.encoder.keyframe_period_s <= 0 or self.dual.eta <= 0:
            raise ConfigError("keyframe period and eta must be positive")
        if self.encoder.q_steps < 2:
            raise ConfigError("quant table needs at least 2 steps")
        if not 0 <= self.link.loss_rate <= 0.5:
            raise ConfigError("loss_rate must be within [0, 0.5]")
        return self

    @property
    def keyframe_rate_hz(self) -> float:
        return 1.0 / self.encoder.keyframe_period_s


_SECTIONS = {
    "content": ContentConfig,
    "encoder": EncoderConfig,
    "dual": DualConfig,
    "pacer": PacerConfig,
    "link": LinkConfig,
    "jitter": JitterConfig,
    "rate": RateControlConfig,
    "rl": RLConfig,
    "reward": RewardConfig,
    "analytics": AnalyticsConfig,
}


def _coerce(raw: str, kind):
    if kind is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is tuple or str(kind).startswith("tuple"):
        parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
        return tuple(int(float(p)) if float(p) == int(float(p)) else float(p) for p in parts)
    return raw


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def to_ini(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    parser["experiment"] = {"mode": cfg.mode, "seed": str(cfg.seed)}
    for name, _ in _SECTIONS.items():
        section = getattr(cfg, name)
        parser[name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def from_ini(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    cfg = ExperimentConfig()
    if parser.has_section("experiment"):
        cfg.mode = parser.get("experiment", "mode", fallback=cfg.mode)
        cfg.seed = parser.getint("experiment", "seed", fallback=cfg.seed)
    for name, cls in _SECTIONS.items():
        if not parser.has_section(name):
            continue
        section = getattr(cfg, name)
        known = {f.name: f for f in fields(cls)}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown option [{name}] {key}")
            current = getattr(section, key)
            setattr(section, key, _coerce(raw, type(current)))
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    return from_ini(Path(path).read_text())


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(to_ini(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable short hash of the fully resolved configuration."""
    flat = [f"mode={cfg.mode}", f"seed={cfg.seed}"]
    for name in _SECTIONS:
        payload = asdict(getattr(cfg, name))
        flat.extend(f"{name}.{k}={payload[k]}" for k in sorted(payload))
    digest = hashlib.sha256("\n".join(flat).encode()).hexdigest()
    return digest[:16]


def default_config_text() -> str:
    return to_ini(ExperimentConfig())
