"""Side-by-side comparison of a network spec against the published tables."""

from __future__ import annotations

from .netspec import NetSpec, count_params, estimate_memory, input_bytes, propagate_shapes, MB
from .reference import TABLE2, TABLE2_ERRATA, TABLE3_HR, TABLE3_RESIZE_INPUT_MB

_TYPE_NAMES = {"conv": "Convolution", "maxpool": "Max Pooling", "linear": "Fully Connected"}


def _fmt_shape(shape) -> str:
    return "x".join(str(d) for d in shape)


def compare_table2(spec: NetSpec) -> list[dict]:
    """One row per numbered layer with computed and published shape/params.

    ``status`` is ``match``, ``mismatch``, ``erratum`` (a known misprint in the
    published table, computed value kept) or ``n/a`` when the spec has no
    published counterpart.
    """
    shapes = propagate_shapes(spec)
    params = count_params(spec, include_batchnorm=False).per_layer
    rows = []
    numbered = [s for s in shapes.layers if s.row is not None]
    comparable = tuple(spec.input_shape) == (1, 2048, 4096)
    last = numbered[-1].row if numbered else None
    for s in numbered:
        kind = "Output" if s.row == last and s.kind == "linear" else _TYPE_NAMES[s.kind]
        row = {"row": s.row, "type": kind, "shape": list(s.shape), "params": params[s.index]}
        ref = TABLE2.get(s.row) if comparable else None
        if ref is None:
            row.update(ref_shape=None, ref_params=None, status="n/a")
        else:
            _, _, _, ref_shape, ref_params = ref
            row.update(ref_shape=list(ref_shape), ref_params=ref_params)
            ok = tuple(s.shape) == tuple(ref_shape) and params[s.index] == ref_params
            if ok:
                row["status"] = "match"
            elif s.row in TABLE2_ERRATA and params[s.index] == ref_params:
                row["status"] = "erratum"
                row["note"] = TABLE2_ERRATA[s.row]
            else:
                row["status"] = "mismatch"
        rows.append(row)
    return rows


def render_table2(rows: list[dict]) -> str:
    head = f"{'Layer':>5}  {'Type':16s}{'Output (computed)':>20s}{'Output (paper)':>18s}" \
           f"{'Params':>13s}{'Params (paper)':>16s}  Status"
    lines = [head, "-" * len(head)]
    for r in rows:
        ref_shape = _fmt_shape(r["ref_shape"]) if r["ref_shape"] else "-"
        ref_params = f"{r['ref_params']:,}" if r["ref_params"] is not None else "-"
        status = r["status"] if r["status"] != "erratum" else "ERRATUM (paper misprint)"
        lines.append(f"{r['row']:>5}  {r['type']:16s}{_fmt_shape(r['shape']):>20s}{ref_shape:>18s}"
                     f"{r['params']:>13,}{ref_params:>16s}  {status}")
    for r in rows:
        if r["status"] == "erratum":
            lines.append(f"note: row {r['row']}: {r['note']}")
    return "\n".join(lines)


def resource_summary(spec: NetSpec, batch: int) -> dict:
    rep = estimate_memory(spec, batch)
    resize_mb = input_bytes((spec.input_shape[0], 224, 448), batch) / MB
    out = rep.as_dict()
    out["param_count_total_without_batchnorm"] = rep.param_count_without_batchnorm
    out["resize_input_mb"] = resize_mb
    out["reference"] = {**TABLE3_HR, "resize_input_mb": TABLE3_RESIZE_INPUT_MB,
                        "batch": 4, "note": "estimated total compared at +/-15%"}
    return out


def render_resources(summary: dict) -> str:
    ref = summary["reference"]
    rel = summary["estimated_total_gb"] / ref["estimated_total_gb"] - 1
    lines = [
        f"batch size: {summary['batch']} (4 bytes per element)",
        f"{'':34s}{'computed':>14s}{'paper':>12s}",
        f"{'Input size (MB)':34s}{summary['input_mb']:>14.2f}{ref['input_mb']:>12.2f}",
        f"{'Input size at 224x448 (MB)':34s}{summary['resize_input_mb']:>14.2f}{ref['resize_input_mb']:>12.2f}",
        f"{'Params (without BatchNorm)':34s}{summary['param_count_without_batchnorm']:>14,}",
        f"{'Params (with BatchNorm)':34s}{summary['param_count']:>14,}",
        f"{'Model size (MB)':34s}{summary['param_mb']:>14.2f}{ref['model_mb']:>12.2f}",
        f"{'Activations, fwd (MB)':34s}{summary['activation_mb']:>14.2f}",
        f"{'Estimated total size (GB)':34s}{summary['estimated_total_gb']:>14.2f}"
        f"{ref['estimated_total_gb']:>12.2f}   ({rel:+.1%})",
    ]
    if summary["batch"] != ref["batch"]:
        lines.append("(paper values are for batch 4)")
    return "\n".join(lines)
