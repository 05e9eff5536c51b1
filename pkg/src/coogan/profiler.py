"""Parameter, FLOP and peak-activation-memory accounting.

FLOPs count one multiply-accumulate as two operations. A convolution costs
``2 * k^2 * C_in * C_out`` per output pixel; a stride-2 transposed
convolution scatters each *input* pixel through the kernel, so it costs the
same product per input pixel. Elementwise work (activations,
normalization, gate blends) is counted once per element.

Peak memory is estimated from a shape-only execution trace on the
``meta`` device: every tensor produced by the forward pass is tracked from
creation until Python releases it, giving the live activation bytes after
each operator.
"""

from __future__ import annotations

import copy
import math
import weakref
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import torch
from torch import nn
from torch.utils._python_dispatch import TorchDispatchMode
from torch.utils._pytree import tree_flatten

from .networks import Discriminator, DiscriminatorSpec, Generator, GeneratorSpec
from .units import LSTU, STU, make_unit

FLOAT_BYTES = 4

# published (params, FLOPs) of the summed skip units per base width
REFERENCE_COSTS = {
    ("stu", 16): (1.63e6, 5.06e9),
    ("stu", 32): (6.40e6, 19.99e9),
    ("stu", 64): (25.37e6, 79.50e9),
    ("lstu", 16): (0.81e6, 2.02e9),
    ("lstu", 32): (3.20e6, 7.85e9),
    ("lstu", 64): (12.68e6, 30.80e9),
}


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# -- FLOPs -------------------------------------------------------------------

_ELEMENTWISE = (nn.ReLU, nn.LeakyReLU, nn.Tanh, nn.Sigmoid, nn.InstanceNorm2d, nn.BatchNorm2d)


def _module_flops(module: nn.Module, inputs, output) -> int:
    if isinstance(module, nn.Conv2d):
        kh, kw = module.kernel_size
        return 2 * kh * kw * (module.in_channels // module.groups) * module.out_channels * output[0, 0].numel() * output.shape[0]
    if isinstance(module, nn.ConvTranspose2d):
        kh, kw = module.kernel_size
        x = inputs[0]
        return 2 * kh * kw * (module.in_channels // module.groups) * module.out_channels * x[0, 0].numel() * x.shape[0]
    if isinstance(module, nn.Linear):
        return 2 * module.in_features * module.out_features * (output.numel() // module.out_features)
    if isinstance(module, _ELEMENTWISE):
        return output.numel()
    if isinstance(module, (LSTU, STU)):
        out = output[0]
        return out.shape[0] * module.elementwise_ops(*out.shape[1:])
    return 0


@dataclass
class LayerStat:
    name: str
    kind: str
    params: int
    flops: int


@dataclass
class ProfileReport:
    name: str
    input_size: int
    layers: list[LayerStat] = field(default_factory=list)
    peak_bytes: int | None = None
    pipeline: str = ""

    @property
    def total_params(self) -> int:
        return sum(layer.params for layer in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(layer.flops for layer in self.layers)


def meta_replica(model: nn.Module) -> nn.Module:
    """Structurally identical model on the meta device (no weights allocated)."""
    with torch.device("meta"):
        if isinstance(model, Generator):
            return Generator(model.spec)
        if isinstance(model, Discriminator):
            return Discriminator(model.spec, model.in_channels)
        if isinstance(model, (LSTU, STU)):
            return make_unit(model.kind, model.channels, model.hidden_channels, model.n_attributes,
                             transpose_kernel=model.w_transpose.kernel_size[0])
    return copy.deepcopy(model).to("meta")


def _example_inputs(model: nn.Module, input_size: int, batch: int = 1) -> tuple:
    with torch.device("meta"):
        if isinstance(model, Generator):
            spec = model.spec
            return (torch.zeros(batch, spec.input_channels, input_size, input_size),
                    torch.zeros(batch, spec.n_attributes))
        if isinstance(model, Discriminator):
            return (torch.zeros(batch, model.in_channels, input_size, input_size),)
        if isinstance(model, (LSTU, STU)):
            # ``input_size`` is the unit's own (full) resolution
            half = input_size // 2
            return (torch.zeros(batch, model.channels, input_size, input_size),
                    torch.zeros(batch, model.hidden_channels, half, half),
                    torch.zeros(batch, model.n_attributes))
        if isinstance(model, (nn.Conv2d, nn.ConvTranspose2d)):
            return (torch.zeros(batch, model.in_channels, input_size, input_size),)
    raise TypeError(f"cannot build example inputs for {type(model).__name__}")


def profile_model(model: nn.Module, input_size: int, name: str | None = None,
                  inputs: tuple | None = None) -> ProfileReport:
    """Per-layer parameter and FLOP counts from one shape-only forward pass."""
    replica = meta_replica(model)
    inputs = inputs if inputs is not None else _example_inputs(model, input_size)
    report = ProfileReport(name or type(model).__name__, input_size)
    handles = []
    for mod_name, module in replica.named_modules():
        own_params = sum(p.numel() for p in module.parameters(recurse=False))

        def hook(mod, args, out, mod_name=mod_name, own_params=own_params):
            report.layers.append(LayerStat(mod_name, type(mod).__name__, own_params,
                                           _module_flops(mod, args, out)))

        handles.append(module.register_forward_hook(hook))
    try:
        with torch.no_grad():
            replica(*inputs)
    finally:
        for h in handles:
            h.remove()
    # modules never called (none in these nets) still own parameters
    seen = {layer.name for layer in report.layers}
    for mod_name, module in replica.named_modules():
        own = sum(p.numel() for p in module.parameters(recurse=False))
        if mod_name not in seen and own:
            report.layers.append(LayerStat(mod_name, type(module).__name__, own, 0))
    return report


def count_flops(model: nn.Module, input_size: int) -> int:
    return profile_model(model, input_size).total_flops


def unit_flops(kind: str, channels: int, hidden_channels: int, n_attributes: int,
               height: int, width: int, transpose_kernel: int = 3, gate_kernel: int = 3) -> int:
    """Closed-form FLOPs of one skip unit at output resolution ``height x width``."""
    hw = height * width
    tconv = 2 * transpose_kernel ** 2 * (hidden_channels + n_attributes) * channels * (hw // 4)
    if kind == "lstu":
        convs = 2 * channels * channels * hw + 2 * (2 * gate_kernel ** 2 * channels * channels * hw)
        return tconv + convs + LSTU.elementwise_ops(channels, height, width)
    if kind == "stu":
        convs = 3 * (2 * gate_kernel ** 2 * 2 * channels * channels * hw)
        return tconv + convs + STU.elementwise_ops(channels, height, width)
    raise ValueError(f"unknown unit kind {kind!r}")


def reference_generator_spec(kind: str, base_channels: int, n_layers: int = 5,
                             n_attributes: int = 13) -> GeneratorSpec:
    """Five-layer schedule with channels doubling per layer and a unit on every non-bottleneck layer."""
    return GeneratorSpec(n_layers=n_layers, base_channels=base_channels, skip_mode=kind,
                         skip_count=n_layers - 1, n_attributes=n_attributes)


def skip_unit_report(kind: str, base_channels: int, input_size: int, n_layers: int = 5,
                     n_attributes: int = 13) -> ProfileReport:
    """Parameters and FLOPs summed over the skip units of the reference generator."""
    spec = reference_generator_spec(kind, base_channels, n_layers, n_attributes)
    with torch.device("meta"):
        g = Generator(spec)
    full = profile_model(g, input_size, name=f"{kind}-{base_channels}")
    report = ProfileReport(f"{kind.upper()} {base_channels} in-channel", input_size,
                           pipeline=f"{n_layers}-layer skip units")
    report.layers = [layer for layer in full.layers if layer.name.startswith("units.")]
    return report


def calibrate_input_size(kind: str = "stu", base_channels: int = 16, step: int = 32,
                          max_size: int = 1024) -> int:
    """Input size (multiple of ``step``) whose unit FLOPs best match the reference column."""
    target = REFERENCE_COSTS[(kind, base_channels)][1]
    sizes = range(step, max_size + 1, step)
    return min(sizes, key=lambda s: abs(math.log(skip_unit_report(kind, base_channels, s).total_flops / target)))


# -- peak memory -------------------------------------------------------------

@dataclass
class Step:
    op: str
    live_shapes: tuple[tuple[int, ...], ...]
    live_bytes: int


@dataclass
class Stage:
    name: str
    steps: list[Step]


@dataclass
class PipelineDescriptor:
    name: str
    stages: list[Stage] = field(default_factory=list)
    param_count: int = 0
    bytes_per_element: int = FLOAT_BYTES

    @property
    def param_bytes(self) -> int:
        return self.param_count * self.bytes_per_element


class _LiveTensorTracker(TorchDispatchMode):
    def __init__(self, preexisting: Iterable[torch.Tensor] = ()):
        super().__init__()
        self.live: dict[int, tuple[tuple[int, ...], int]] = {}
        self.steps: list[Step] = []
        for t in preexisting:
            self._track(t)

    def _release(self, key: int) -> None:
        self.live.pop(key, None)

    def _track(self, t: torch.Tensor) -> None:
        key = id(t)
        if key in self.live or t._is_view():
            return
        self.live[key] = (tuple(t.shape), t.numel() * t.element_size())
        weakref.finalize(t, self._release, key)

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        for t in tree_flatten(out)[0]:
            if isinstance(t, torch.Tensor):
                self._track(t)
        entries = list(self.live.values())
        self.steps.append(Step(str(func.overloadpacket.__name__), tuple(s for s, _ in entries),
                               sum(b for _, b in entries)))
        return out


def trace_activations(model: nn.Module, input_size: int, name: str | None = None) -> Stage:
    """Live activation tensors after every operator of one inference pass."""
    replica = meta_replica(model)
    inputs = _example_inputs(model, input_size)
    tracker = _LiveTensorTracker(inputs)
    with torch.no_grad(), tracker:
        out = replica(*inputs)
    del out
    return Stage(name or f"{type(model).__name__}@{input_size}", tracker.steps)


def live_tensor_peak(fn, *args, **kwargs) -> tuple[object, int, list[Step]]:
    """Run ``fn`` and report the peak bytes of tensors it allocated that were alive together.

    Tensors created before the call (e.g. model parameters, inputs) are not counted.
    """
    tracker = _LiveTensorTracker()
    with tracker:
        out = fn(*args, **kwargs)
    return out, max((s.live_bytes for s in tracker.steps), default=0), tracker.steps


def peak_memory(descriptor: PipelineDescriptor) -> int:
    """Parameter bytes plus the largest live-activation total over all steps."""
    act = max((step.live_bytes for stage in descriptor.stages for step in stage.steps), default=0)
    return descriptor.param_bytes + act


def stage_peak(stage: Stage) -> int:
    return max((step.live_bytes for step in stage.steps), default=0)


def _meta_generator(spec: GeneratorSpec) -> Generator:
    with torch.device("meta"):
        return Generator(spec)


def coogan_pipeline(global_spec: GeneratorSpec, local_spec: GeneratorSpec, global_size: int,
                    patch_size: int, hr_size: int) -> PipelineDescriptor:
    """One global pass at ``global_size`` followed by sequential single-patch passes.

    Each patch pass is identical in shape, so one representative pass is
    traced. Both generators' parameters are counted as resident.
    HR-sized input/output buffers are streamed and not counted.
    """
    if hr_size % patch_size:
        raise ValueError(f"hr_size {hr_size} not divisible by patch_size {patch_size}")
    g_global = _meta_generator(global_spec)
    g_local = _meta_generator(local_spec)
    n_patches = (hr_size // patch_size) ** 2
    return PipelineDescriptor(
        f"coogan hr={hr_size} global={global_size} patch={patch_size} ({n_patches} patches)",
        [trace_activations(g_global, global_size, "global pass"),
         trace_activations(g_local, patch_size, "patch pass")],
        count_params(g_global) + count_params(g_local),
    )


def monolithic_pipeline(spec: GeneratorSpec, hr_size: int) -> PipelineDescriptor:
    g = _meta_generator(spec)
    return PipelineDescriptor(f"monolithic {spec.n_layers}-layer hr={hr_size}",
                              [trace_activations(g, hr_size, "full pass")], count_params(g))


def full_scale_specs(base_channels: int = 64, n_attributes: int = 13):
    """Global, local and 7-layer monolithic generator specs at full scale."""
    global_spec = GeneratorSpec(n_layers=5, base_channels=base_channels, skip_mode="lstu",
                                skip_count=4, n_attributes=n_attributes)
    local_spec = GeneratorSpec(n_layers=5, base_channels=base_channels, input_channels=6,
                               skip_mode="lstu", skip_count=4, n_attributes=n_attributes)
    mono_spec = GeneratorSpec(n_layers=7, base_channels=base_channels, skip_mode="stu",
                              skip_count=6, n_attributes=n_attributes)
    return global_spec, local_spec, mono_spec


# -- reporting ---------------------------------------------------------------

CSV_COLUMNS = ("unit", "in_channels", "params", "flops", "input_size")


def _fmt_m(n: float) -> str:
    return f"{n / 1e6:.2f}M"


def _fmt_g(n: float) -> str:
    return f"{n / 1e9:.2f}G"


def emit_report(reports: Sequence[ProfileReport], md_path=None, csv_path=None) -> tuple[str, str]:
    """Render unit reports as a unit-by-width markdown grid and a CSV.

    Report names are expected as ``"<UNIT> <channels> in-channel"``.
    Returns ``(markdown, csv_text)`` and writes them when paths are given.
    """
    rows: dict[str, dict[int, ProfileReport]] = {}
    for rep in reports:
        unit, ch = rep.name.split()[:2]
        rows.setdefault(unit, {})[int(ch)] = rep
    channels = sorted({c for r in rows.values() for c in r})

    head = "| channel | " + " | ".join(f"{c} in-channel param | {c} in-channel FLOPS" for c in channels) + " |"
    sep = "|" + "---|" * (1 + 2 * len(channels))
    lines = [head, sep]
    for unit, by_ch in rows.items():
        cells = []
        for c in channels:
            rep = by_ch.get(c)
            cells += [_fmt_m(rep.total_params), _fmt_g(rep.total_flops)] if rep else ["-", "-"]
        lines.append(f"| {unit} | " + " | ".join(cells) + " |")
    sizes = sorted({r.input_size for r in reports})
    lines.append("")
    lines.append(f"FLOPS evaluated at input size {', '.join(map(str, sizes))}.")
    markdown = "\n".join(lines) + "\n"

    csv_lines = [",".join(CSV_COLUMNS)]
    for unit, by_ch in rows.items():
        for c in channels:
            rep = by_ch.get(c)
            if rep:
                csv_lines.append(f"{unit},{c},{rep.total_params},{rep.total_flops},{rep.input_size}")
    csv_text = "\n".join(csv_lines) + "\n"

    if md_path is not None:
        Path(md_path).write_text(markdown)
    if csv_path is not None:
        Path(csv_path).write_text(csv_text)
    return markdown, csv_text


def memory_report(descriptors: Sequence[PipelineDescriptor], path=None) -> str:
    lines = ["| pipeline | stage | activation peak (MB) | params (MB) | total peak (MB) |",
             "|---|---|---|---|---|"]
    for desc in descriptors:
        for stage in desc.stages:
            lines.append(f"| {desc.name} | {stage.name} | {stage_peak(stage) / 2**20:.1f} | "
                         f"{desc.param_bytes / 2**20:.1f} | {peak_memory(desc) / 2**20:.1f} |")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text

