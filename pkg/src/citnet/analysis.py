"""Analytical complexity accounting.

Two layers of bookkeeping live here:

* the closed-form attention-cost formulas for global attention, plain
  windowed attention, and the four-branch windowed attention, evaluated
  exactly (integers / rationals, no floating drift);
* a parameter and FLOP account of the constructed dual-branch model,
  itemized per component, with a comparison against the published targets.

Conventions (documented so the comparison is reproducible):

* MACs count one multiply-accumulate for every matmul/conv product term;
* ``gflops_2mac`` reports 2 FLOPs per MAC plus elementwise work;
* ``gflops_paper_convention`` reports plain GMACs, matching what common
  profilers (and the published tables, judging by their baselines such as
  U-Net at 224^2) call "GFLOPs";
* elementwise costs: layer/group norm 5, softmax 5, GELU 8, sigmoid 4,
  bilinear corner blend 8 FLOPs per element, residual add 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .config import ModelConfig, StagePlan, derive_plan
from .model import CitNet

PAPER_TARGETS = {
    "T": {"params_m": 11.58, "gflops": 4.53},
    "B": {"params_m": 21.24, "gflops": 13.29},
}

NORM_FLOPS = 5
SOFTMAX_FLOPS = 5
GELU_FLOPS = 8
SAMPLE_FLOPS = 8
ADD_FLOPS = 1


def _as_int(x: Fraction):
    return int(x) if x.denominator == 1 else x


def omega_msa(h: int, w: int, c: int) -> int:
    """Global attention cost: 4hwC^2 + 2(hw)^2 C."""
    hw = h * w
    return 4 * hw * c * c + 2 * hw * hw * c


def omega_wmsa(h: int, w: int, c: int, m: int = 7):
    """Windowed attention cost: 4hwC^2 + 2M^2 hwC."""
    hw = h * w
    return 4 * hw * c * c + 2 * m * m * hw * c


def omega_wacam(h: int, w: int, c: int, m: int = 7):
    """Four-branch compact attention cost: hwC^2/4 + M^2 hwC."""
    hw = h * w
    return _as_int(Fraction(hw * c * c, 4) + m * m * hw * c)


@dataclass
class ComplexityReport:
    variant: str
    params_total: int
    params_by_module: dict[str, int]
    macs_total: int
    macs_by_component: dict[str, int]
    elementwise_flops: int
    omega_table: list[dict]
    paper_params_m: float | None
    paper_gflops: float | None
    deviation_sources: list[str] = field(default_factory=list)

    @property
    def params_m(self) -> float:
        return self.params_total / 1e6

    @property
    def gmacs(self) -> float:
        return self.macs_total / 1e9

    @property
    def gflops_paper_convention(self) -> float:
        return self.gmacs

    @property
    def gflops_2mac(self) -> float:
        return (2 * self.macs_total + self.elementwise_flops) / 1e9

    def params_ratio(self) -> float | None:
        if self.paper_params_m is None:
            return None
        return self.params_m / self.paper_params_m

    def gflops_ratio(self) -> float | None:
        if self.paper_gflops is None:
            return None
        return self.gflops_paper_convention / self.paper_gflops

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "params_total": self.params_total,
            "params_m": self.params_m,
            "params_by_module": self.params_by_module,
            "macs_total": self.macs_total,
            "gmacs": self.gmacs,
            "gflops_paper_convention": self.gflops_paper_convention,
            "gflops_2mac": self.gflops_2mac,
            "elementwise_flops": self.elementwise_flops,
            "macs_by_component": self.macs_by_component,
            "omega_table": self.omega_table,
            "paper_params_m": self.paper_params_m,
            "paper_gflops": self.paper_gflops,
            "params_ratio": self.params_ratio(),
            "gflops_ratio": self.gflops_ratio(),
            "deviation_sources": self.deviation_sources,
        }

    def render(self) -> str:
        lines = [f"== complexity report: variant {self.variant} =="]
        lines.append(f"parameters: {self.params_total:,} ({self.params_m:.2f} M)")
        for name, count in sorted(self.params_by_module.items()):
            lines.append(f"  {name:<24} {count:>12,}")
        lines.append(f"MACs: {self.macs_total:,} ({self.gmacs:.2f} GMACs)")
        for name, count in sorted(self.macs_by_component.items()):
            lines.append(f"  {name:<24} {count:>14,}")
        lines.append(f"GFLOPs (profiler convention, = GMACs):  {self.gflops_paper_convention:.2f}")
        lines.append(f"GFLOPs (2 per MAC + elementwise):       {self.gflops_2mac:.2f}")
        lines.append("attention-cost formulas per stage (h=w=token grid side):")
        lines.append(f"  {'res':>4} {'C':>5} {'omega_msa':>16} {'omega_wmsa':>14} {'omega_wacam':>13}")
        for row in self.omega_table:
            lines.append(
                f"  {row['resolution']:>4} {row['dim']:>5} {row['omega_msa']:>16,}"
                f" {row['omega_wmsa']:>14,} {row['omega_wacam']:>13,}"
            )
        if self.paper_params_m is not None:
            lines.append(
                f"published target: {self.paper_params_m:.2f} M params / "
                f"{self.paper_gflops:.2f} GFLOPs"
            )
            lines.append(
                f"  params ratio (ours/published): {self.params_ratio():.2f}x; "
                f"gflops ratio: {self.gflops_ratio():.2f}x"
            )
            lines.append("deviation sources:")
            for src in self.deviation_sources:
                lines.append(f"  - {src}")
        return "\n".join(lines)


def params_by_module(model: CitNet) -> dict[str, int]:
    """Exact registry enumeration grouped by top-level component."""
    groups: dict[str, int] = {}
    for name, p in model.named_parameters():
        key = name.split(".")[0]
        groups[key] = groups.get(key, 0) + p.size
    return groups


def count_params(model: CitNet) -> ComplexityReport:
    return _report(model, include_flops=False)


def count_flops(model: CitNet) -> ComplexityReport:
    return _report(model, include_flops=True)


def _report(model: CitNet, include_flops: bool = True) -> ComplexityReport:
    cfg = model.cfg
    plan = model.plan
    groups = params_by_module(model)
    macs, elementwise = (_model_macs(cfg, plan) if include_flops else ({}, 0))
    omega_rows = []
    seen = set()
    for s in plan.stages:
        key = (s.resolution, s.trans_dim)
        if key in seen:
            continue
        seen.add(key)
        omega_rows.append({
            "resolution": s.resolution,
            "dim": s.trans_dim,
            "omega_msa": omega_msa(s.resolution, s.resolution, s.trans_dim),
            "omega_wmsa": omega_wmsa(s.resolution, s.resolution, s.trans_dim, cfg.window),
            "omega_wacam": omega_wacam(s.resolution, s.resolution, s.trans_dim, cfg.window),
        })
    target = PAPER_TARGETS.get(cfg.variant)
    deviations = [
        "attention-cost formulas count only attention arithmetic; the model also"
        " carries QKV/compact/output projections, norms, and heads",
        f"convolutional branch runs at constant width {cfg.resolved_cnn_width()}"
        " (the published figures cannot absorb a width-doubling second branch)",
        f"perceptron expansion ratio {cfg.lpm_ratio} and {cfg.ddconv_n} candidate"
        " kernels per deformable conv (both unstated in the source tables)",
        "cross-branch fusion convs, offset/coefficient heads, and the final"
        " fusion head have no published counterpart",
        "published GFLOPs match profiler MAC counts; the 2-FLOPs-per-MAC total"
        " is also reported above",
    ]
    return ComplexityReport(
        variant=cfg.variant,
        params_total=sum(groups.values()),
        params_by_module=groups,
        macs_total=sum(macs.values()),
        macs_by_component=macs,
        elementwise_flops=elementwise,
        omega_table=omega_rows,
        paper_params_m=target["params_m"] if target else None,
        paper_gflops=target["gflops"] if target else None,
        deviation_sources=deviations,
    )


# ---------------------------------------------------------------------------
# analytic MAC/FLOP account (batch size 1), mirrors the builder structure
# ---------------------------------------------------------------------------

def attention_macs(tokens: int, dim: int, window: int) -> int:
    """MACs of one four-branch attention layer over ``tokens`` positions."""
    d = dim // 8
    m2 = window * window
    n_win = tokens // m2
    compact = tokens * dim * d
    out_proj = tokens * d * dim
    spatial = 3 * tokens * d * d + 2 * n_win * m2 * m2 * d
    channel = 3 * tokens * d * d + 2 * n_win * d * d * m2
    cross_one = (
        n_win * d * m2 * d          # query projection from the channel view
        + 2 * n_win * m2 * d * d    # key and value projections from the axis view
        + n_win * d * d * window    # scores
        + n_win * d * window * d    # apply
        + n_win * d * d * m2        # back-projection
    )
    return compact + out_proj + spatial + channel + 2 * cross_one


def lpm_macs(tokens: int, dim: int, ratio: int) -> int:
    half = dim * ratio // 2
    return tokens * dim * half + tokens * half * 9 + tokens * 2 * half * dim


def block_macs(tokens: int, dim: int, window: int, ratio: int) -> int:
    return attention_macs(tokens, dim, window) + lpm_macs(tokens, dim, ratio)


def block_elementwise(tokens: int, dim: int, ratio: int, window: int = 7) -> int:
    d = dim // 8
    m2 = window * window
    n_win = max(tokens // m2, 1)
    norms = 2 * tokens * dim * NORM_FLOPS
    score_elements = tokens * m2 + n_win * d * d + 2 * n_win * d * window
    softmaxes = score_elements * SOFTMAX_FLOPS
    act = tokens * dim * ratio * GELU_FLOPS
    residuals = 2 * tokens * dim * ADD_FLOPS
    return norms + softmaxes + act + residuals


def ddconv_unit_macs(res_out: int, in_ch: int, out_ch: int, n: int, k: int = 3) -> int:
    k2 = k * k
    contraction = res_out * res_out * in_ch * out_ch * k2
    offset_head = res_out * res_out * in_ch * 2 * k2 * k2
    mixing = n * out_ch * in_ch * k2
    coeff = in_ch * n
    return contraction + offset_head + mixing + coeff


def ddconv_unit_elementwise(res_out: int, in_ch: int, out_ch: int, k: int = 3) -> int:
    sampling = res_out * res_out * in_ch * k * k * SAMPLE_FLOPS
    norm_act = res_out * res_out * out_ch * (NORM_FLOPS + GELU_FLOPS)
    return sampling + norm_act


def _model_macs(cfg: ModelConfig, plan: StagePlan) -> tuple[dict[str, int], int]:
    W = cfg.resolved_cnn_width()
    r = cfg.lpm_ratio
    n = 1 if cfg.plain_conv else cfg.ddconv_n
    img = cfg.image_size
    macs: dict[str, int] = {}
    elem = 0

    def tally(key: str, amount: int) -> None:
        macs[key] = macs.get(key, 0) + amount

    grid = plan.grid
    tally("patch_embed", grid * grid * cfg.patch_size ** 2 * cfg.in_channels * cfg.base_dim)
    tally("cnn_stem", grid * grid * cfg.patch_size ** 2 * cfg.in_channels * W)
    elem += grid * grid * W * (NORM_FLOPS + GELU_FLOPS)

    for s in plan.stages:
        tokens = s.resolution ** 2
        stage_key = f"stage{s.index}_trans"
        tally(stage_key, s.blocks * block_macs(tokens, s.trans_dim, cfg.window, r))
        elem += s.blocks * block_elementwise(tokens, s.trans_dim, r, cfg.window)
        cnn_key = f"stage{s.index}_cnn"
        tally(cnn_key, 2 * ddconv_unit_macs(s.resolution, W, W, n))
        elem += 2 * ddconv_unit_elementwise(s.resolution, W, W)
        if s.role == "encoder":
            half = s.resolution // 2
            tally("transitions", (tokens // 4) * 4 * s.trans_dim * 2 * s.trans_dim)
            tally("transitions", ddconv_unit_macs(half, W, W, n, k=2))
            elem += ddconv_unit_elementwise(half, W, W, k=2)
        if s.role == "decoder":
            # expand from the deeper stage, then both fusion projections
            tally("transitions", tokens // 4 * (2 * s.trans_dim) * (4 * s.trans_dim))
            tally("transitions", ddconv_unit_macs(s.resolution, W, W, n))
            elem += ddconv_unit_elementwise(s.resolution, W, W)
            t_in = 2 * s.trans_dim + (W if cfg.cross_feed else 0)
            c_in = 2 * W + (s.trans_dim if cfg.cross_feed else 0)
            tally("cross_feed", tokens * t_in * s.trans_dim)
            tally("cross_feed", tokens * c_in * W)

    hw = cfg.head_width()
    tally("heads", grid * grid * cfg.base_dim * cfg.patch_size ** 2 * cfg.base_dim)  # final expand
    tally("heads", img * img * cfg.base_dim * hw)  # transformer head
    tally("heads", img * img * W * hw)  # cnn head
    tally("heads", img * img * 2 * hw * cfg.n_classes)  # fusion head
    elem += img * img * 2 * hw * ADD_FLOPS
    return macs, elem


def summarize(cfg: ModelConfig, seed: int = 0) -> ComplexityReport:
    """Build the model (weights only) and produce the full report."""
    from .model import build_model

    model = build_model(cfg, seed=seed)
    return count_flops(model)
