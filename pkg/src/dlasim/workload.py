"""DNN network descriptions: parsing, shape inference, op accounting, and
accelerator/CPU partitioning.

Network files are line-oriented UTF-8 text. The first section is

    [net]
    width = 416
    height = 416
    channels = 3

followed by one `[layer]` section per layer with keys `kind`, `k`, `s`,
`filters`, `from`, and optionally `out` (a declared H,W,C checked against
the inferred shape). `from` holds one or more layer references, either
absolute indices or negative offsets relative to the current layer.
Spatial shapes follow same-padding arithmetic: conv and pool produce
ceil(H/s) x ceil(W/s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

CONV = "conv"
POOL = "pool"
UPSAMPLE = "upsample"
ROUTE = "route"
SHORTCUT = "shortcut"
YOLO = "yolo"
CONVERT = "convert"

KINDS = {CONV, POOL, UPSAMPLE, ROUTE, SHORTCUT, YOLO, CONVERT}
CPU_KINDS = {UPSAMPLE, YOLO, CONVERT}

_NET_KEYS = {"width", "height", "channels"}
_LAYER_KEYS = {"kind", "k", "s", "filters", "from", "out"}


class ParseError(Exception):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ShapeMismatch(Exception):
    def __init__(self, message: str, layer: int):
        self.layer = layer
        super().__init__(f"layer {layer}: {message}")


class UnsupportedLayer(Exception):
    pass


@dataclass
class LayerDescriptor:
    index: int
    kind: str
    in_dims: tuple[int, int, int]   # (H, W, C)
    out_dims: tuple[int, int, int]
    kernel: int = 0
    stride: int = 1
    refs: tuple[int, ...] = ()
    placement: str = "accel"
    inserted: bool = False          # synthetic precision-conversion layer

    @property
    def in_elements(self) -> int:
        h, w, c = self.in_dims
        return h * w * c

    @property
    def out_elements(self) -> int:
        h, w, c = self.out_dims
        return h * w * c


def conv_macs(layer: LayerDescriptor) -> int:
    h, w, c = layer.out_dims
    return layer.kernel * layer.kernel * layer.in_dims[2] * c * h * w


def cpu_ops(layer: LayerDescriptor) -> int:
    """Element-proportional work for processor-executed layers."""
    if layer.placement != "cpu":
        raise UnsupportedLayer(f"layer {layer.index} ({layer.kind}) is not CPU-placed")
    return layer.out_elements


def _placement_for(kind: str) -> str:
    return "cpu" if kind in CPU_KINDS else "accel"


def _parse_sections(text: str):
    """Yield (section_name, {key: (value, line)}, header_line)."""
    name = None
    fields: dict[str, tuple[str, int]] = {}
    header = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            if name is not None:
                yield name, fields, header
            name = line[1:-1].strip()
            fields = {}
            header = lineno
        elif "=" in line:
            if name is None:
                raise ParseError("key before any section header", lineno)
            key, value = (part.strip() for part in line.split("=", 1))
            if key in fields:
                raise ParseError(f"duplicate key {key!r}", lineno)
            fields[key] = (value, lineno)
        else:
            raise ParseError(f"unparseable line {line!r}", lineno)
    if name is not None:
        yield name, fields, header


def _get_int(fields, key, line, default=None):
    if key not in fields:
        if default is None:
            raise ParseError(f"missing required key {key!r}", line)
        return default
    value, lineno = fields[key]
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"key {key!r} must be an integer, got {value!r}", lineno)


def parse_network(path) -> list[LayerDescriptor]:
    """Parse a network description file.

    Layers come back in file order with all shapes inferred and reference
    layers resolved to absolute indices. An empty file is an empty network.
    """
    with open(path, "r", encoding="utf-8") as fh:
        return parse_network_text(fh.read())


def parse_network_text(text: str) -> list[LayerDescriptor]:
    sections = list(_parse_sections(text))
    if not sections:
        return []
    name, fields, header = sections[0]
    if name != "net":
        raise ParseError(f"first section must be [net], got [{name}]", header)
    for key in fields:
        if key not in _NET_KEYS:
            raise ParseError(f"unknown key {key!r} in [net]", fields[key][1])
    dims = (_get_int(fields, "height", header), _get_int(fields, "width", header),
            _get_int(fields, "channels", header))

    layers: list[LayerDescriptor] = []
    for name, fields, header in sections[1:]:
        if name != "layer":
            raise ParseError(f"unexpected section [{name}]", header)
        for key in fields:
            if key not in _LAYER_KEYS:
                raise ParseError(f"unknown key {key!r} in [layer]", fields[key][1])
        if "kind" not in fields:
            raise ParseError("layer without kind", header)
        kind, kind_line = fields["kind"]
        if kind not in KINDS:
            raise ParseError(f"unknown layer kind {kind!r}", kind_line)

        index = len(layers)
        in_dims = layers[-1].out_dims if layers else dims
        k = _get_int(fields, "k", header, default=2 if kind == POOL else 0)
        s = _get_int(fields, "s", header, default=2 if kind in (POOL, UPSAMPLE) else 1)
        refs: tuple[int, ...] = ()

        if "from" in fields:
            raw, line = fields["from"]
            try:
                rel = [int(part) for part in raw.split(",")]
            except ValueError:
                raise ParseError(f"bad layer reference list {raw!r}", line)
            refs = tuple(r if r >= 0 else index + r for r in rel)
            for r in refs:
                if not 0 <= r < index:
                    raise ParseError(f"reference {r} outside earlier layers", line)

        if kind == CONV:
            filters = _get_int(fields, "filters", header)
            if k < 1 or s < 1:
                raise ParseError("conv needs k >= 1 and s >= 1", header)
            out = (math.ceil(in_dims[0] / s), math.ceil(in_dims[1] / s), filters)
        elif kind == POOL:
            out = (math.ceil(in_dims[0] / s), math.ceil(in_dims[1] / s), in_dims[2])
        elif kind == UPSAMPLE:
            out = (in_dims[0] * s, in_dims[1] * s, in_dims[2])
        elif kind == ROUTE:
            if not refs:
                raise ParseError("route needs a from= reference list", header)
            h, w, _ = layers[refs[0]].out_dims
            channels = 0
            for r in refs:
                rh, rw, rc = layers[r].out_dims
                if (rh, rw) != (h, w):
                    raise ShapeMismatch(
                        f"route sources disagree on spatial dims: {layers[refs[0]].out_dims} vs {layers[r].out_dims}",
                        index)
                channels += rc
            out = (h, w, channels)
        elif kind == SHORTCUT:
            if len(refs) != 1:
                raise ParseError("shortcut needs exactly one from= reference", header)
            if layers[refs[0]].out_dims != in_dims:
                raise ShapeMismatch(
                    f"shortcut adds {layers[refs[0]].out_dims} to {in_dims}", index)
            out = in_dims
        else:  # yolo, convert
            out = in_dims

        if "out" in fields:
            raw, line = fields["out"]
            try:
                declared = tuple(int(p) for p in raw.split(","))
            except ValueError:
                raise ParseError(f"bad declared shape {raw!r}", line)
            if declared != out:
                raise ShapeMismatch(
                    f"declared out dims {declared} but inferred {out}", index)

        layers.append(LayerDescriptor(
            index=index, kind=kind, in_dims=in_dims, out_dims=out,
            kernel=k, stride=s, refs=refs, placement=_placement_for(kind)))
    return layers


def serialize_network(layers: list[LayerDescriptor]) -> str:
    """Canonical text form; parse(serialize(parse(f))) == parse(f)."""
    if not layers:
        return ""
    h, w, c = layers[0].in_dims
    lines = ["[net]", f"height = {h}", f"width = {w}", f"channels = {c}", ""]
    for layer in layers:
        lines.append("[layer]")
        lines.append(f"kind = {layer.kind}")
        if layer.kind == CONV:
            lines.append(f"filters = {layer.out_dims[2]}")
        if layer.kernel:
            lines.append(f"k = {layer.kernel}")
        lines.append(f"s = {layer.stride}")
        if layer.refs:
            lines.append("from = " + ",".join(str(r) for r in layer.refs))
        lines.append("")
    return "\n".join(lines)


@dataclass
class Partition:
    accel: list[LayerDescriptor] = field(default_factory=list)
    cpu: list[LayerDescriptor] = field(default_factory=list)
    converts: list[LayerDescriptor] = field(default_factory=list)


def partition(layers: list[LayerDescriptor]) -> Partition:
    """Split a parsed network between the accelerator and the processor,
    inserting a precision-conversion layer at every placement boundary
    (including network entry/exit on the accelerator side)."""
    result = Partition()

    def add_convert(after: LayerDescriptor) -> None:
        conv = LayerDescriptor(
            index=after.index, kind=CONVERT, in_dims=after.out_dims,
            out_dims=after.out_dims, placement="cpu", inserted=True)
        result.converts.append(conv)

    prev_placement = "cpu"  # frame arrives in float form from the host
    for layer in layers:
        (result.accel if layer.placement == "accel" else result.cpu).append(layer)
        if layer.placement != prev_placement:
            source = layers[layer.index - 1] if layer.index else LayerDescriptor(
                index=-1, kind=CONVERT, in_dims=layer.in_dims,
                out_dims=layer.in_dims, placement="cpu")
            add_convert(source)
        prev_placement = layer.placement
    if layers and prev_placement == "accel":
        add_convert(layers[-1])
    return result


def total_ops(layers: list[LayerDescriptor]) -> int:
    """Whole-network operation count: two ops per conv MAC, one per output
    element for element-proportional kinds, zero for pure aliasing."""
    ops = 0
    for layer in layers:
        if layer.kind == CONV:
            ops += 2 * conv_macs(layer)
        elif layer.kind == ROUTE:
            continue
        else:
            ops += layer.out_elements
    return ops
