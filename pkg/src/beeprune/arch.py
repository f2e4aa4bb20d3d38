"""Architecture descriptors and cost accounting.

An architecture is described by a JSON file listing layers as a DAG. The
model here is deliberately small: enough structure to resolve per-layer
channel counts under pruning and to charge FLOPs/params to each layer, and
nothing else (no weights, no framework objects).

Counting conventions, fixed once and calibrated against the shipped
descriptor baselines:

* a multiply-accumulate counts as one FLOP;
* conv layers additionally pay ``CONV_POST_OPS`` per output element for the
  normalisation/activation arithmetic that follows them;
* fully-connected layers pay ``in_features * out_features`` (activations on
  hidden fc layers are noise at these sizes and are not charged);
* pooling, elementwise-add, concat and global-pool are free;
* conv params are ``kh*kw*in*out + 3*out`` (bias plus the two per-channel
  normalisation parameters), fc params are ``in*out + out``.

Spatial sizes propagate as ``out = ceil(in / stride)`` for conv and pool
(same-padding convention); global-pool and fully-connected collapse to 1x1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

CONV_POST_OPS = 4

KIND_CONV = "conv"
KIND_FC = "fully-connected"
KIND_POOL = "pool"
KIND_ADD = "elementwise-add"
KIND_CONCAT = "concat"
KIND_GLOBAL_POOL = "global-pool"

VALID_KINDS = (
    KIND_CONV,
    KIND_FC,
    KIND_POOL,
    KIND_ADD,
    KIND_CONCAT,
    KIND_GLOBAL_POOL,
)

_TOP_FIELDS = {"name", "input", "num_classes", "layers"}
_INPUT_FIELDS = {"h", "w", "c"}
_LAYER_FIELDS = {
    "name",
    "kind",
    "kernel",
    "stride",
    "out_channels",
    "predecessors",
    "tie_group",
    "prunable",
}

# Kinds that carry weights and may therefore be pruned.
_WEIGHTED_KINDS = (KIND_CONV, KIND_FC)
# Kinds that take exactly one input (or the network input).
_SINGLE_INPUT_KINDS = (KIND_CONV, KIND_FC, KIND_POOL, KIND_GLOBAL_POOL)


class ArchitectureError(Exception):
    """Base class for descriptor problems."""


class DescriptorParseError(ArchitectureError):
    """The descriptor file is malformed (bad JSON, unknown or ill-typed fields)."""


class DescriptorValidationError(ArchitectureError):
    """The descriptor parses but describes an inconsistent network."""


class StructureMismatchError(ValueError):
    """A pruned structure does not fit the architecture it is applied to."""


@dataclass(frozen=True)
class LayerDesc:
    """One layer of an architecture DAG."""

    name: str
    kind: str
    kernel: Optional[tuple[int, int]] = None
    stride: int = 1
    out_channels: Optional[int] = None
    predecessors: tuple[str, ...] = ()
    tie_group: Optional[str] = None
    prunable: bool = False


@dataclass(frozen=True)
class Slot:
    """One free dimension of the pruning search space.

    A slot is either a single prunable layer or a tie group of layers whose
    channel counts must stay equal (e.g. all convs feeding one chain of
    residual adds). ``key`` is the layer name or the group name.
    """

    key: str
    base_channels: int
    layers: tuple[str, ...]


@dataclass(frozen=True)
class CostReport:
    channels: int
    flops: int
    params: int


@dataclass
class ArchitectureSpec:
    """A validated architecture with precomputed shapes and pruning slots."""

    name: str
    input_h: int
    input_w: int
    input_c: int
    num_classes: int
    layers: tuple[LayerDesc, ...]

    # Filled in by __post_init__.
    shapes: dict[str, tuple[int, int]] = field(default_factory=dict, repr=False)
    base_channels: dict[str, int] = field(default_factory=dict, repr=False)
    slots: tuple[Slot, ...] = field(default=(), repr=False)
    slot_of: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._validate_static()
        self._propagate_shapes()
        self._build_slots()

    # -- validation -----------------------------------------------------

    def _validate_static(self) -> None:
        if self.input_h < 1 or self.input_w < 1 or self.input_c < 1:
            raise DescriptorValidationError("input dimensions must be positive")
        if self.num_classes < 1:
            raise DescriptorValidationError("num_classes must be positive")
        if not self.layers:
            raise DescriptorValidationError("architecture has no layers")

        seen: set[str] = set()
        for layer in self.layers:
            if layer.name in seen:
                raise DescriptorValidationError(
                    f"layer '{layer.name}': duplicate layer name"
                )
            if layer.kind not in VALID_KINDS:
                raise DescriptorValidationError(
                    f"layer '{layer.name}': unknown kind '{layer.kind}'"
                )
            for pred in layer.predecessors:
                if pred not in seen:
                    raise DescriptorValidationError(
                        f"layer '{layer.name}': predecessor '{pred}' is not an "
                        "earlier layer"
                    )
            if layer.kind in (KIND_CONV, KIND_POOL):
                if layer.kernel is None:
                    raise DescriptorValidationError(
                        f"layer '{layer.name}': kind '{layer.kind}' requires a kernel"
                    )
                kh, kw = layer.kernel
                if kh < 1 or kw < 1:
                    raise DescriptorValidationError(
                        f"layer '{layer.name}': kernel must be positive"
                    )
            elif layer.kernel is not None:
                raise DescriptorValidationError(
                    f"layer '{layer.name}': kind '{layer.kind}' takes no kernel"
                )
            if layer.stride < 1:
                raise DescriptorValidationError(
                    f"layer '{layer.name}': stride must be positive"
                )
            if layer.stride != 1 and layer.kind not in (KIND_CONV, KIND_POOL):
                raise DescriptorValidationError(
                    f"layer '{layer.name}': kind '{layer.kind}' takes no stride"
                )
            if layer.kind in _WEIGHTED_KINDS:
                if layer.out_channels is None or layer.out_channels < 1:
                    raise DescriptorValidationError(
                        f"layer '{layer.name}': kind '{layer.kind}' requires "
                        "positive out_channels"
                    )
            elif layer.out_channels is not None:
                raise DescriptorValidationError(
                    f"layer '{layer.name}': kind '{layer.kind}' takes no out_channels"
                )
            if layer.prunable and layer.kind not in _WEIGHTED_KINDS:
                raise DescriptorValidationError(
                    f"layer '{layer.name}': only conv and fully-connected layers "
                    "can be prunable"
                )
            if layer.tie_group is not None and not layer.prunable:
                raise DescriptorValidationError(
                    f"layer '{layer.name}': tie_group set on a non-prunable layer"
                )
            if layer.kind in _SINGLE_INPUT_KINDS and len(layer.predecessors) > 1:
                raise DescriptorValidationError(
                    f"layer '{layer.name}': kind '{layer.kind}' takes at most one "
                    "predecessor"
                )
            if layer.kind in (KIND_ADD, KIND_CONCAT) and len(layer.predecessors) < 2:
                raise DescriptorValidationError(
                    f"layer '{layer.name}': kind '{layer.kind}' requires at least "
                    "two predecessors"
                )
            seen.add(layer.name)

    def _propagate_shapes(self) -> None:
        shapes = self.shapes
        channels = self.base_channels
        for layer in self.layers:
            in_h, in_w, in_c = self._input_of(layer, channels, shapes)
            if layer.kind in (KIND_CONV, KIND_POOL):
                out_h = math.ceil(in_h / layer.stride)
                out_w = math.ceil(in_w / layer.stride)
            elif layer.kind in (KIND_GLOBAL_POOL, KIND_FC):
                out_h = out_w = 1
            else:
                out_h, out_w = in_h, in_w
            shapes[layer.name] = (out_h, out_w)
            if layer.kind in _WEIGHTED_KINDS:
                channels[layer.name] = int(layer.out_channels)  # type: ignore[arg-type]
            else:
                channels[layer.name] = in_c

    def _input_of(
        self,
        layer: LayerDesc,
        channels: Mapping[str, int],
        shapes: Mapping[str, tuple[int, int]],
    ) -> tuple[int, int, int]:
        """Resolve the (h, w, c) arriving at ``layer`` from base channels."""
        preds = layer.predecessors
        if not preds:
            return self.input_h, self.input_w, self.input_c
        pred_shapes = {shapes[p] for p in preds}
        if len(pred_shapes) > 1:
            raise DescriptorValidationError(
                f"layer '{layer.name}': predecessors have unequal spatial sizes "
                f"{sorted(pred_shapes)}"
            )
        h, w = next(iter(pred_shapes))
        if layer.kind == KIND_ADD:
            counts = {channels[p] for p in preds}
            if len(counts) > 1:
                raise DescriptorValidationError(
                    f"layer '{layer.name}': elementwise-add joins unequal channel "
                    f"counts {sorted(counts)}"
                )
            return h, w, next(iter(counts))
        if layer.kind == KIND_CONCAT:
            return h, w, sum(channels[p] for p in preds)
        return h, w, channels[preds[0]]

    def _build_slots(self) -> None:
        slots: list[Slot] = []
        group_slot: dict[str, int] = {}
        group_members: dict[str, list[str]] = {}
        for layer in self.layers:
            if not layer.prunable:
                continue
            base = int(layer.out_channels)  # type: ignore[arg-type]
            if layer.tie_group is None:
                self.slot_of[layer.name] = len(slots)
                slots.append(Slot(layer.name, base, (layer.name,)))
                continue
            group = layer.tie_group
            if group not in group_slot:
                group_slot[group] = len(slots)
                group_members[group] = []
                slots.append(Slot(group, base, ()))
            idx = group_slot[group]
            if slots[idx].base_channels != base:
                raise DescriptorValidationError(
                    f"tie group '{group}': members disagree on out_channels "
                    f"({slots[idx].base_channels} vs {base} at '{layer.name}')"
                )
            group_members[group].append(layer.name)
            self.slot_of[layer.name] = idx
        for group, idx in group_slot.items():
            old = slots[idx]
            slots[idx] = Slot(old.key, old.base_channels, tuple(group_members[group]))
        self.slots = tuple(slots)

    # -- convenience ----------------------------------------------------

    @property
    def search_dimension(self) -> int:
        """Number of free pruning decisions (slots)."""
        return len(self.slots)

    def base_structure(self) -> tuple[int, ...]:
        """The unpruned structure: every slot at its full channel count."""
        return tuple(slot.base_channels for slot in self.slots)

    def prunable_layers(self) -> tuple[LayerDesc, ...]:
        return tuple(layer for layer in self.layers if layer.prunable)


# -- descriptor loading ---------------------------------------------------


def _parse_layer(raw: object, index: int) -> LayerDesc:
    if not isinstance(raw, dict):
        raise DescriptorParseError(f"layer #{index}: expected an object")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise DescriptorParseError(f"layer #{index}: missing or invalid 'name'")
    unknown = set(raw) - _LAYER_FIELDS
    if unknown:
        raise DescriptorParseError(
            f"layer '{name}': unknown field '{sorted(unknown)[0]}'"
        )
    kind = raw.get("kind")
    if not isinstance(kind, str):
        raise DescriptorParseError(f"layer '{name}': missing or invalid 'kind'")

    kernel = None
    if "kernel" in raw:
        k = raw["kernel"]
        if (
            not isinstance(k, list)
            or len(k) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in k)
        ):
            raise DescriptorParseError(
                f"layer '{name}': 'kernel' must be a pair of integers"
            )
        kernel = (k[0], k[1])

    stride = raw.get("stride", 1)
    if not isinstance(stride, int) or isinstance(stride, bool):
        raise DescriptorParseError(f"layer '{name}': 'stride' must be an integer")

    out_channels = raw.get("out_channels")
    if out_channels is not None and (
        not isinstance(out_channels, int) or isinstance(out_channels, bool)
    ):
        raise DescriptorParseError(
            f"layer '{name}': 'out_channels' must be an integer"
        )

    preds_raw = raw.get("predecessors", [])
    if not isinstance(preds_raw, list) or not all(
        isinstance(p, str) for p in preds_raw
    ):
        raise DescriptorParseError(
            f"layer '{name}': 'predecessors' must be a list of layer names"
        )

    tie_group = raw.get("tie_group")
    if tie_group is not None and not isinstance(tie_group, str):
        raise DescriptorParseError(f"layer '{name}': 'tie_group' must be a string")

    prunable = raw.get("prunable", kind == KIND_CONV)
    if not isinstance(prunable, bool):
        raise DescriptorParseError(f"layer '{name}': 'prunable' must be a boolean")

    return LayerDesc(
        name=name,
        kind=kind,
        kernel=kernel,
        stride=stride,
        out_channels=out_channels,
        predecessors=tuple(preds_raw),
        tie_group=tie_group,
        prunable=prunable,
    )


def _chain_predecessors(layers: list[LayerDesc], raw_layers: list[object]) -> None:
    """Default a layer's predecessors to the previous layer when omitted."""
    prev: Optional[str] = None
    for i, (layer, raw) in enumerate(zip(layers, raw_layers)):
        assert isinstance(raw, dict)
        if "predecessors" not in raw and prev is not None:
            layers[i] = LayerDesc(
                name=layer.name,
                kind=layer.kind,
                kernel=layer.kernel,
                stride=layer.stride,
                out_channels=layer.out_channels,
                predecessors=(prev,),
                tie_group=layer.tie_group,
                prunable=layer.prunable,
            )
        prev = layer.name


def parse_architecture(doc: object) -> ArchitectureSpec:
    """Build a validated :class:`ArchitectureSpec` from a decoded JSON document."""
    if not isinstance(doc, dict):
        raise DescriptorParseError("descriptor must be a JSON object")
    unknown = set(doc) - _TOP_FIELDS
    if unknown:
        raise DescriptorParseError(f"unknown top-level field '{sorted(unknown)[0]}'")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise DescriptorParseError("missing or invalid 'name'")
    inp = doc.get("input")
    if not isinstance(inp, dict) or set(inp) != _INPUT_FIELDS:
        raise DescriptorParseError("'input' must be an object with fields h, w, c")
    if not all(isinstance(inp[k], int) and not isinstance(inp[k], bool) for k in inp):
        raise DescriptorParseError("'input' dimensions must be integers")
    num_classes = doc.get("num_classes")
    if not isinstance(num_classes, int) or isinstance(num_classes, bool):
        raise DescriptorParseError("missing or invalid 'num_classes'")
    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list):
        raise DescriptorParseError("'layers' must be a list")

    layers = [_parse_layer(raw, i) for i, raw in enumerate(raw_layers)]
    _chain_predecessors(layers, raw_layers)
    return ArchitectureSpec(
        name=name,
        input_h=inp["h"],
        input_w=inp["w"],
        input_c=inp["c"],
        num_classes=num_classes,
        layers=tuple(layers),
    )


def load_architecture(path: str | Path) -> ArchitectureSpec:
    """Load and validate a descriptor file.

    Raises:
        DescriptorParseError: the file is not valid JSON or has unknown or
            ill-typed fields.
        DescriptorValidationError: the network it describes is inconsistent
            (dangling predecessor, unequal channels at an add, ...).
        OSError: the file cannot be read.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DescriptorParseError(f"{path}: not valid JSON ({exc})") from exc
    return parse_architecture(doc)


# -- channel resolution and costing ----------------------------------------


def resolve_channels(
    spec: ArchitectureSpec, structure: Optional[Sequence[int]] = None
) -> dict[str, tuple[int, int]]:
    """Resolve every layer's (in_channels, out_channels) under a structure.

    Args:
        spec: the architecture.
        structure: one channel count per slot of ``spec``; ``None`` means the
            unpruned baseline.

    Returns:
        Mapping from layer name to ``(in_channels, out_channels)`` in layer
        order.

    Raises:
        StructureMismatchError: wrong structure length, non-positive entries,
            or a pruned-channel mismatch at an elementwise-add.
    """
    if structure is None:
        structure = spec.base_structure()
    structure = tuple(int(v) for v in structure)
    if len(structure) != len(spec.slots):
        raise StructureMismatchError(
            f"structure has {len(structure)} entries, architecture "
            f"'{spec.name}' has {len(spec.slots)} slots"
        )
    for slot, value in zip(spec.slots, structure):
        if value < 1:
            raise StructureMismatchError(
                f"slot '{slot.key}': channel count must be positive, got {value}"
            )
        if value > slot.base_channels:
            raise StructureMismatchError(
                f"slot '{slot.key}': {value} exceeds base channel count "
                f"{slot.base_channels}"
            )

    out: dict[str, int] = {}
    table: dict[str, tuple[int, int]] = {}
    for layer in spec.layers:
        preds = layer.predecessors
        if not preds:
            in_c = spec.input_c
        elif layer.kind == KIND_ADD:
            counts = {out[p] for p in preds}
            if len(counts) > 1:
                raise StructureMismatchError(
                    f"layer '{layer.name}': elementwise-add joins unequal pruned "
                    f"channel counts {sorted(counts)}"
                )
            in_c = next(iter(counts))
        elif layer.kind == KIND_CONCAT:
            in_c = sum(out[p] for p in preds)
        else:
            in_c = out[preds[0]]

        if layer.prunable:
            out_c = structure[spec.slot_of[layer.name]]
        elif layer.kind in _WEIGHTED_KINDS:
            out_c = int(layer.out_channels)  # type: ignore[arg-type]
        else:
            out_c = in_c
        out[layer.name] = out_c
        table[layer.name] = (in_c, out_c)
    return table


def _input_shape(spec: ArchitectureSpec, layer: LayerDesc) -> tuple[int, int]:
    if not layer.predecessors:
        return spec.input_h, spec.input_w
    return spec.shapes[layer.predecessors[0]]


def count_channels(
    spec: ArchitectureSpec, structure: Optional[Sequence[int]] = None
) -> int:
    """Total out_channels over the prunable layers (the pruning footprint)."""
    table = resolve_channels(spec, structure)
    return sum(table[layer.name][1] for layer in spec.layers if layer.prunable)


def count_flops(
    spec: ArchitectureSpec, structure: Optional[Sequence[int]] = None
) -> int:
    """Forward-pass FLOPs under the conventions in the module docstring."""
    table = resolve_channels(spec, structure)
    total = 0
    for layer in spec.layers:
        in_c, out_c = table[layer.name]
        if layer.kind == KIND_CONV:
            out_h, out_w = spec.shapes[layer.name]
            kh, kw = layer.kernel  # type: ignore[misc]
            elems = out_h * out_w
            total += elems * (kh * kw * in_c * out_c + CONV_POST_OPS * out_c)
        elif layer.kind == KIND_FC:
            in_h, in_w = _input_shape(spec, layer)
            total += in_c * in_h * in_w * out_c
    return total


def count_params(
    spec: ArchitectureSpec, structure: Optional[Sequence[int]] = None
) -> int:
    """Learnable parameters under the conventions in the module docstring."""
    table = resolve_channels(spec, structure)
    total = 0
    for layer in spec.layers:
        in_c, out_c = table[layer.name]
        if layer.kind == KIND_CONV:
            kh, kw = layer.kernel  # type: ignore[misc]
            total += kh * kw * in_c * out_c + 3 * out_c
        elif layer.kind == KIND_FC:
            in_h, in_w = _input_shape(spec, layer)
            total += in_c * in_h * in_w * out_c + out_c
    return total


def cost_report(
    spec: ArchitectureSpec, structure: Optional[Sequence[int]] = None
) -> CostReport:
    return CostReport(
        channels=count_channels(spec, structure),
        flops=count_flops(spec, structure),
        params=count_params(spec, structure),
    )


def expand_structure(
    spec: ArchitectureSpec, structure: Sequence[int]
) -> dict[str, int]:
    """Per-prunable-layer channel counts implied by a slot structure."""
    table = resolve_channels(spec, structure)
    return {
        layer.name: table[layer.name][1]
        for layer in spec.layers
        if layer.prunable
    }


def iter_layer_costs(
    spec: ArchitectureSpec, structure: Optional[Sequence[int]] = None
) -> Iterable[tuple[LayerDesc, int, int, int, int]]:
    """Yield (layer, in_c, out_c, flops, params) rows for reporting."""
    table = resolve_channels(spec, structure)
    for layer in spec.layers:
        in_c, out_c = table[layer.name]
        flops = 0
        params = 0
        if layer.kind == KIND_CONV:
            out_h, out_w = spec.shapes[layer.name]
            kh, kw = layer.kernel  # type: ignore[misc]
            flops = out_h * out_w * (kh * kw * in_c * out_c + CONV_POST_OPS * out_c)
            params = kh * kw * in_c * out_c + 3 * out_c
        elif layer.kind == KIND_FC:
            in_h, in_w = _input_shape(spec, layer)
            flops = in_c * in_h * in_w * out_c
            params = in_c * in_h * in_w * out_c + out_c
        yield layer, in_c, out_c, flops, params
