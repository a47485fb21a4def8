"""Inversion followed by dual-branch midpoint regeneration with attention control.

Phase 1 inverts the input latent under the source prompt with fixed-point
inversion. Phase 2 regenerates two branches from the inverted noise: the
reconstruction branch under the source prompt, and the edited branch under
the target prompt whose attention maps are edited from the reconstruction
branch's maps at the same evaluation. Each midpoint step evaluates the model
twice, at (z_i, t_i) and at (z_mid, t_mid); maps are saved and edited at both.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Literal, Optional, Union

import numpy as np

from .attention import (
    ControlSchedule,
    Prompt,
    ToyDenoiser,
    ToyDenoiserConfig,
    compute_alignment,
    control_hook,
    tokenize,
)
from .errors import PromptMismatch, ShapeMismatch, ZeroVector
from .latent import Codec, Latent, codec_decode, codec_encode
from .oracles import AnalyticField, ZeroField
from .scheduler import InversionMode, invert_trajectory, make_time_grid

TASKS = ("addition", "replacement", "removal")
MODALITIES = ("audio", "video")

# preservation strengths (tau_s, tau_c) per modality and task
PRESERVATION = {
    ("video", "addition"): (0.42, 0.42),
    ("video", "replacement"): (0.42, 0.42),
    ("video", "removal"): (1.00, 0.42),
    ("audio", "addition"): (0.75, 0.75),
    ("audio", "replacement"): (0.75, 0.75),
    ("audio", "removal"): (1.00, 0.75),
}
DEFAULT_STEPS = {"video": 64, "audio": 100}
DEFAULT_K = 3
RANK = {"audio": 3, "video": 4}

Backend = Union[AnalyticField, ZeroField, ToyDenoiserConfig]


@dataclass(frozen=True)
class EditConfig:
    task: Literal["addition", "replacement", "removal"]
    modality: Literal["audio", "video"]
    tau_s: float
    tau_c: float
    tau_direction: Literal["literal-eq13", "strength"] = "literal-eq13"
    renormalize: bool = True
    n_steps: int = 100
    k_iters: int = DEFAULT_K
    combine: Literal["average", "last"] = "average"
    seed: int = 0  # vocabulary seed for prompt embeddings
    backend: Backend = field(default_factory=ToyDenoiserConfig)
    codec: Codec = field(default_factory=Codec)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        self.schedule  # validates taus and direction
        self.inversion_mode  # validates k_iters and combine

    @property
    def schedule(self) -> ControlSchedule:
        return ControlSchedule(self.tau_s, self.tau_c, self.tau_direction, self.renormalize)

    @property
    def inversion_mode(self) -> InversionMode:
        return InversionMode(self.k_iters, self.combine)

    @property
    def uses_attention(self) -> bool:
        return isinstance(self.backend, ToyDenoiserConfig)


def default_config(task: str, modality: str, **overrides) -> EditConfig:
    if (modality, task) not in PRESERVATION:
        raise ValueError(f"no defaults for task={task!r}, modality={modality!r}")
    tau_s, tau_c = PRESERVATION[(modality, task)]
    cfg = EditConfig(task=task, modality=modality, tau_s=tau_s, tau_c=tau_c, n_steps=DEFAULT_STEPS[modality])
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class StepDiagnostics:
    step: int
    t: float
    t_mid: float
    self_inject_start: bool
    cross_inject_start: bool
    self_inject_mid: bool
    cross_inject_mid: bool
    norm_r: float
    norm_e: float


@dataclass
class EditOutcome:
    reconstruction: Latent
    edited: Latent
    inverted: Latent
    inversion_norms: list[float]
    steps: list[StepDiagnostics]
    attention_control: bool
    # (step, "start" | "mid") -> {"source": [LayerMaps], "edits": {(kind, layer): {...}}}
    attention_trace: Optional[dict] = None


def _branch_model(cfg: EditConfig):
    """Returns forward(z, t, prompt, hook) -> (velocity, record)."""
    if cfg.uses_attention:
        model = ToyDenoiser(cfg.backend)
        return model.forward
    field_ = cfg.backend

    def forward(z, t, prompt, hook=None):
        return np.asarray(field_(z, t, None), dtype=np.float64), None

    return forward


def run_edit(
    z0: Latent,
    source: Prompt | str,
    target: Prompt | str,
    cfg: EditConfig,
    trace_attention: bool = False,
    attention_observer: Optional[Callable] = None,
) -> EditOutcome:
    """Run inversion then dual-branch regeneration.

    ``attention_observer(key, t, source_record, edits)`` is called after each
    edited-branch evaluation, with ``key = (step, "start" | "mid")`` and
    ``edits[(kind, layer)] = {"own", "injected", "consumed"}``.
    ``trace_attention=True`` collects the same data into
    ``EditOutcome.attention_trace`` (memory heavy for long schedules).
    """
    if len(z0.shape) != RANK[cfg.modality]:
        raise ShapeMismatch(f"{cfg.modality} latents have rank {RANK[cfg.modality]}, got {z0.shape.dims}")
    width = cfg.backend.text_width if cfg.uses_attention else 32
    if isinstance(source, str):
        source = tokenize(source, width, cfg.seed)
    if isinstance(target, str):
        target = tokenize(target, width, cfg.seed)
    for p in (source, target):
        if cfg.uses_attention and p.embeddings.shape[1] != width:
            raise PromptMismatch(f"prompt {p.text!r} has embedding width {p.embeddings.shape[1]}, model expects {width}")
    alignment = compute_alignment(source, target)

    forward = _branch_model(cfg)
    sched = cfg.schedule
    grid = make_time_grid(cfg.n_steps)

    def velocity(z, t, prompt):
        return forward(z, t, prompt)[0]

    z_n, inv_log = invert_trajectory(z0, grid, velocity, source, cfg.inversion_mode)

    r = e = z_n.data
    steps = []
    trace = {} if (trace_attention and cfg.uses_attention) else None
    observers = [o for o in (attention_observer, _collector(trace)) if o is not None]
    for i in range(grid.n_steps, 0, -1):
        t_i, t_prev = grid.t(i), grid.t(i - 1)
        t_mid = 0.5 * (t_i + t_prev)

        vr, rec = forward(r, t_i, source)
        ve = _edited_velocity(forward, e, t_i, target, rec, alignment, sched, observers, (i, "start"))
        r_mid = r + (t_mid - t_i) * vr
        e_mid = e + (t_mid - t_i) * ve

        vr, rec = forward(r_mid, t_mid, source)
        ve = _edited_velocity(forward, e_mid, t_mid, target, rec, alignment, sched, observers, (i, "mid"))
        r = r + (t_prev - t_i) * vr
        e = e + (t_prev - t_i) * ve

        on = cfg.uses_attention
        steps.append(StepDiagnostics(
            step=i, t=t_i, t_mid=t_mid,
            self_inject_start=on and sched.self_active(t_i),
            cross_inject_start=on and sched.cross_active(t_i),
            self_inject_mid=on and sched.self_active(t_mid),
            cross_inject_mid=on and sched.cross_active(t_mid),
            norm_r=float(np.linalg.norm(r)), norm_e=float(np.linalg.norm(e)),
        ))

    return EditOutcome(
        reconstruction=Latent._wrap(np.array(r)),
        edited=Latent._wrap(np.array(e)),
        inverted=z_n,
        inversion_norms=[z.norm() for z in inv_log.latents],
        steps=steps,
        attention_control=cfg.uses_attention,
        attention_trace=trace,
    )


def _collector(trace):
    if trace is None:
        return None

    def collect(key, t, source_record, edits):
        trace[key] = {"t": t, "source": source_record, "edits": edits}

    return collect


def _edited_velocity(forward, z, t, prompt, source_record, alignment, sched, observers, key):
    if source_record is None:
        return forward(z, t, prompt)[0]
    edits = {} if observers else None
    v, _ = forward(z, t, prompt, control_hook(source_record, alignment, t, sched, edits))
    for obs in observers:
        obs(key, t, source_record, edits)
    return v


def edit_signal(x: Latent, source, target, cfg: EditConfig, **kw) -> tuple[Latent, Latent, EditOutcome]:
    """Encode with the config's codec, edit, and decode both branches."""
    out = run_edit(codec_encode(x, cfg.codec), source, target, cfg, **kw)
    return codec_decode(out.reconstruction, cfg.codec), codec_decode(out.edited, cfg.codec), out


def reconstruction_report(z0: Latent, outcome: EditOutcome) -> dict:
    r = outcome.reconstruction
    if r.shape.dims != z0.shape.dims:
        raise ShapeMismatch(f"{r.shape.dims} vs {z0.shape.dims}")
    diff = r.values - z0.values
    abs_l2 = float(np.linalg.norm(diff))
    ref = z0.norm()
    return {
        "abs_l2": abs_l2,
        "rel_l2": abs_l2 / ref if ref > 0 else (0.0 if abs_l2 == 0 else float("inf")),
        "max_abs": float(np.max(np.abs(diff))),
        "norm_trace": [s.norm_r for s in outcome.steps],
    }


def paired_reduction(baseline: list[float], candidate: list[float]) -> dict:
    """Paired comparison of per-seed errors: candidate vs baseline."""
    if len(baseline) != len(candidate):
        raise ValueError("paired comparison needs equal-length samples")
    b, c = np.asarray(baseline), np.asarray(candidate)
    return {
        "n": int(b.size),
        "mean_baseline": float(b.mean()),
        "mean_candidate": float(c.mean()),
        "median_baseline": float(np.median(b)),
        "median_candidate": float(np.median(c)),
        "mean_reduction": float(1.0 - c.mean() / b.mean()) if b.mean() > 0 else 0.0,
        "wins": int(np.sum(c < b)),
    }


def alignment_score(emb_a, emb_b) -> float:
    a, b = np.asarray(emb_a, dtype=np.float64), np.asarray(emb_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def config_to_dict(cfg: EditConfig) -> dict:
    d = asdict(cfg)
    b = cfg.backend
    if isinstance(b, ToyDenoiserConfig):
        d["backend"] = {"kind": "toy", **asdict(b)}
    else:
        d["backend"] = {"kind": "analytic", "field": b.to_dict()}
    d["codec"] = {"kind": cfg.codec.kind, "scales": list(cfg.codec.scales)}
    return d
