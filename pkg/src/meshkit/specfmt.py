"""Text format for logical graphs.

Line-oriented: `op`, `edge` and `transform` records, `#` comments. The
printer emits a canonical form and parse -> print -> parse is the identity.

    op a0 source shape=4x5 placement={0:[0,1]} sbp_out=S(0)
    op y0 matmul placement={0:[0,1]}
    edge a0 -> y0:0
    transform y0 -> y2:0 placement={1:[0,1]} sbp=B

Kinds: matmul, add, relu, identity, reduce_sum axis=K, source (with either
shape=RxC or const=[[...]] nested-list literal). Placements are node ->
device-list maps, optionally with mesh=RxC declaring a two-level hierarchy.
"""

from __future__ import annotations

import ast

from .graph import GraphError, LogicalGraph, LogicalOp, Placement, Transform
from .ops import Add, Identity, MatMul, OpKind, ReLU, ReduceSum, Source
from .sbp import SbpError, format_nd, parse_nd
from .tensor import DenseTensor, ShapeError


class SpecError(ValueError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


def _split_top(text: str, sep: str) -> list[str]:
    """Split on `sep` outside (), [] and {}."""
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return parts


def parse_placement(text: str) -> Placement:
    text = text.strip()
    mesh = None
    if "mesh=" in text:
        text, meshpart = text.split("mesh=")
        text = text.strip().rstrip(",")
        r, c = meshpart.strip().split("x")
        mesh = (int(r), int(c))
    if not (text.startswith("{") and text.endswith("}")):
        raise ValueError(f"placement must look like {{node:[d,...]}}, got {text!r}")
    devices = []
    for entry in _split_top(text[1:-1], ","):
        entry = entry.strip()
        if not entry:
            continue
        node_s, devs = entry.split(":", 1)
        dev_ids = ast.literal_eval(devs.strip())
        if not isinstance(dev_ids, list):
            raise ValueError(f"device list expected in {entry!r}")
        for d in dev_ids:
            devices.append((int(node_s), int(d)))
    return Placement(tuple(devices), mesh)


def format_placement(p: Placement) -> str:
    by_node: dict[int, list[int]] = {}
    order: list[int] = []
    for n, d in p.devices:
        if n not in by_node:
            by_node[n] = []
            order.append(n)
        by_node[n].append(d)
    body = ",".join(f"{n}:[{','.join(str(d) for d in by_node[n])}]" for n in order)
    out = "{" + body + "}"
    if p.mesh is not None:
        out += f",mesh={p.mesh[0]}x{p.mesh[1]}"
    return out


def _parse_shape(text: str) -> tuple[int, ...]:
    if text == "scalar":
        return ()
    return tuple(int(x) for x in text.split("x"))


def _format_shape(shape: tuple[int, ...]) -> str:
    return "x".join(str(e) for e in shape) or "scalar"


def _parse_kind(name: str, attrs: dict[str, str], lineno: int) -> OpKind:
    if name == "matmul":
        return MatMul()
    if name == "add":
        return Add()
    if name == "relu":
        return ReLU()
    if name == "identity":
        return Identity()
    if name == "reduce_sum":
        if "axis" not in attrs:
            raise SpecError(lineno, "reduce_sum needs axis=K")
        return ReduceSum(int(attrs.pop("axis")))
    if name == "source":
        if "const" in attrs:
            try:
                value = DenseTensor.from_nested(ast.literal_eval(attrs.pop("const")))
            except (ValueError, SyntaxError, ShapeError) as e:
                raise SpecError(lineno, f"bad const literal: {e}") from e
            return Source(value.shape, value)
        if "shape" not in attrs:
            raise SpecError(lineno, "source needs shape=RxC or const=[[...]]")
        return Source(_parse_shape(attrs.pop("shape")))
    raise SpecError(lineno, f"unknown op kind {name!r}")


def _format_kind(kind: OpKind) -> str:
    if isinstance(kind, MatMul):
        return "matmul"
    if isinstance(kind, Add):
        return "add"
    if isinstance(kind, ReLU):
        return "relu"
    if isinstance(kind, Identity):
        return "identity"
    if isinstance(kind, ReduceSum):
        return f"reduce_sum axis={kind.axis}"
    if isinstance(kind, Source):
        if kind.value is not None:
            body = repr(kind.value.tolist()).replace(" ", "")
            return f"source const={body}"
        return f"source shape={_format_shape(kind.shape)}"
    raise ValueError(f"unknown kind {kind!r}")


def _parse_endpoint(text: str, lineno: int) -> tuple[str, int]:
    if ":" in text:
        op_id, slot = text.rsplit(":", 1)
        try:
            return op_id, int(slot)
        except ValueError:
            raise SpecError(lineno, f"bad input slot in {text!r}") from None
    return text, 0


def parse_graph(text: str) -> LogicalGraph:
    """Parse the graph document; raises SpecError with a line number."""
    graph = LogicalGraph()
    pending_inputs: dict[str, dict[int, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        record = parts[0]
        if record == "op":
            if len(parts) < 3:
                raise SpecError(lineno, "op needs: op <id> <kind> [attrs...]")
            op_id, kind_name = parts[1], parts[2]
            attrs: dict[str, str] = {}
            for tok in parts[3:]:
                if "=" not in tok:
                    raise SpecError(lineno, f"expected key=value, got {tok!r}")
                k, v = tok.split("=", 1)
                attrs[k] = v
            kind = _parse_kind(kind_name, attrs, lineno)
            if "placement" not in attrs:
                raise SpecError(lineno, f"op {op_id!r} needs an explicit placement")
            try:
                placement = parse_placement(attrs.pop("placement"))
            except (ValueError, GraphError) as e:
                raise SpecError(lineno, f"bad placement: {e}") from e
            in_sbp = out_sbp = None
            try:
                if "sbp_in" in attrs:
                    in_sbp = tuple(
                        None if tok == "?" else parse_nd(tok)
                        for tok in _split_top(attrs.pop("sbp_in"), ",")
                    )
                if "sbp_out" in attrs:
                    out_sbp = parse_nd(attrs.pop("sbp_out"))
            except SbpError as e:
                raise SpecError(lineno, str(e)) from e
            if attrs:
                raise SpecError(lineno, f"unknown attributes {sorted(attrs)}")
            graph.add(LogicalOp(op_id, kind, (), placement, in_sbp, out_sbp))
            pending_inputs[op_id] = {}
        elif record == "edge":
            if len(parts) != 4 or parts[2] != "->":
                raise SpecError(lineno, "edge needs: edge <src> -> <dst>[:slot]")
            src = parts[1]
            dst, slot = _parse_endpoint(parts[3], lineno)
            if dst not in pending_inputs:
                raise SpecError(lineno, f"edge into unknown op {dst!r}")
            if slot in pending_inputs[dst]:
                raise SpecError(lineno, f"duplicate edge into {dst}:{slot}")
            pending_inputs[dst][slot] = src
        elif record == "transform":
            if len(parts) < 5 or parts[2] != "->":
                raise SpecError(
                    lineno, "transform needs: transform <src> -> <dst>[:slot] placement=... sbp=..."
                )
            src = parts[1]
            dst, slot = _parse_endpoint(parts[3], lineno)
            attrs = {}
            for tok in parts[4:]:
                if "=" not in tok:
                    raise SpecError(lineno, f"expected key=value, got {tok!r}")
                k, v = tok.split("=", 1)
                attrs[k] = v
            if "placement" not in attrs or "sbp" not in attrs:
                raise SpecError(lineno, "transform needs placement= and sbp=")
            try:
                placement = parse_placement(attrs["placement"])
                sig = parse_nd(attrs["sbp"])
            except (ValueError, GraphError, SbpError) as e:
                raise SpecError(lineno, str(e)) from e
            graph.transforms.append(Transform(src, dst, slot, placement, sig))
        else:
            raise SpecError(lineno, f"unknown record {record!r}")
    for op in graph.ops:
        slots = pending_inputs.get(op.id, {})
        if slots:
            top = max(slots)
            if sorted(slots) != list(range(top + 1)):
                raise SpecError(0, f"op {op.id!r} has gaps in its input slots")
            op.inputs = tuple(slots[i] for i in range(top + 1))
    return graph


def format_graph(graph: LogicalGraph) -> str:
    lines = []
    for op in graph.ops:
        rec = f"op {op.id} {_format_kind(op.kind)} placement={format_placement(op.placement)}"
        if op.in_sbp is not None:
            rec += " sbp_in=" + ",".join(
                "?" if s is None else format_nd(s) for s in op.in_sbp
            )
        if op.out_sbp is not None:
            rec += f" sbp_out={format_nd(op.out_sbp)}"
        lines.append(rec)
    for op in graph.ops:
        for slot, src in enumerate(op.inputs):
            lines.append(f"edge {src} -> {op.id}:{slot}")
    for t in graph.transforms:
        lines.append(
            f"transform {t.src} -> {t.dst}:{t.slot} "
            f"placement={format_placement(t.placement)} sbp={format_nd(t.sbp)}"
        )
    return "\n".join(lines) + "\n"
