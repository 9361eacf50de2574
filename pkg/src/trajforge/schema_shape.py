"""Structural skeletons of JSON values.

A shape captures structure only: scalar kind, object fields, array
element shape, nullability. Shapes are plain dicts so they serialize
straight into trajectory records. Inference widens conservatively:
conflicting scalar kinds become a union, fields present in some samples
but not others become nullable.
"""

from __future__ import annotations

from typing import Any, Optional

KIND_SCALAR = "scalar"
KIND_OBJECT = "object"
KIND_ARRAY = "array"
KIND_UNION = "union"

TYPE_ANY = "any"  # carries no constraint; produced by null-only evidence


def scalar_type_of(value: Any) -> Optional[str]:
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "string"
    return None


def infer_shape(value: Any) -> dict:
    """Structural skeleton of one JSON value."""
    if value is None:
        return {"kind": KIND_SCALAR, "type": TYPE_ANY, "nullable": True}
    st = scalar_type_of(value)
    if st is not None:
        return {"kind": KIND_SCALAR, "type": st, "nullable": False}
    if isinstance(value, dict):
        fields = {k: infer_shape(value[k]) for k in sorted(value)}
        return {"kind": KIND_OBJECT, "fields": fields, "nullable": False}
    if isinstance(value, list):
        element: Optional[dict] = None
        for item in value:
            item_shape = infer_shape(item)
            element = item_shape if element is None else unify(element, item_shape)
        return {"kind": KIND_ARRAY, "element": element, "nullable": False}
    raise TypeError(f"not a JSON value: {type(value).__name__}")


def _mark_nullable(shape: dict) -> dict:
    out = dict(shape)
    out["nullable"] = True
    return out


def _members(shape: dict) -> list[dict]:
    if shape["kind"] == KIND_UNION:
        return shape["members"]
    return [shape]


def unify(a: dict, b: dict) -> dict:
    """Widen two shapes into one that both sets of values conform to."""
    nullable = a.get("nullable", False) or b.get("nullable", False)

    # "any" scalars carry no information; the other side wins
    if a["kind"] == KIND_SCALAR and a["type"] == TYPE_ANY:
        return _mark_nullable(b) if nullable else dict(b)
    if b["kind"] == KIND_SCALAR and b["type"] == TYPE_ANY:
        return _mark_nullable(a) if nullable else dict(a)

    if a["kind"] == KIND_UNION or b["kind"] == KIND_UNION:
        merged: list[dict] = []
        for m in _members(a) + _members(b):
            m = dict(m)
            m["nullable"] = False
            if m not in merged:
                merged.append(m)
        if len(merged) == 1:
            only = merged[0]
            return _mark_nullable(only) if nullable else only
        return {"kind": KIND_UNION, "members": merged, "nullable": nullable}

    if a["kind"] == KIND_SCALAR and b["kind"] == KIND_SCALAR:
        if a["type"] == b["type"]:
            return {"kind": KIND_SCALAR, "type": a["type"], "nullable": nullable}
        return {
            "kind": KIND_UNION,
            "members": [
                {"kind": KIND_SCALAR, "type": a["type"], "nullable": False},
                {"kind": KIND_SCALAR, "type": b["type"], "nullable": False},
            ],
            "nullable": nullable,
        }

    if a["kind"] == KIND_OBJECT and b["kind"] == KIND_OBJECT:
        fields = {}
        for key in sorted(set(a["fields"]) | set(b["fields"])):
            fa = a["fields"].get(key)
            fb = b["fields"].get(key)
            if fa is not None and fb is not None:
                fields[key] = unify(fa, fb)
            else:
                # present on one side only: widen to nullable
                fields[key] = _mark_nullable(fa if fa is not None else fb)
        return {"kind": KIND_OBJECT, "fields": fields, "nullable": nullable}

    if a["kind"] == KIND_ARRAY and b["kind"] == KIND_ARRAY:
        ea, eb = a.get("element"), b.get("element")
        if ea is None:
            element = eb
        elif eb is None:
            element = ea
        else:
            element = unify(ea, eb)
        return {"kind": KIND_ARRAY, "element": element, "nullable": nullable}

    # incompatible kinds: tagged union
    ma, mb = dict(a), dict(b)
    ma["nullable"] = False
    mb["nullable"] = False
    members = [ma] if ma == mb else [ma, mb]
    return {"kind": KIND_UNION, "members": members, "nullable": nullable}


def shape_violations(value: Any, shape: dict, path: str = "$") -> list[str]:
    """All points where the value structurally breaks the shape."""
    if value is None:
        if shape.get("nullable", False) or (
            shape["kind"] == KIND_SCALAR and shape["type"] == TYPE_ANY
        ):
            return []
        return [f"{path}: null where {describe(shape)} expected"]

    kind = shape["kind"]
    if kind == KIND_UNION:
        branches = [shape_violations(value, m, path) for m in shape["members"]]
        if any(not b for b in branches):
            return []
        return [f"{path}: value fits no branch of {describe(shape)}"]

    if kind == KIND_SCALAR:
        st = scalar_type_of(value)
        if st is None:
            return [f"{path}: {type(value).__name__} where scalar {shape['type']} expected"]
        if shape["type"] == TYPE_ANY or st == shape["type"]:
            return []
        return [f"{path}: {st} where {shape['type']} expected"]

    if kind == KIND_OBJECT:
        if not isinstance(value, dict):
            return [f"{path}: {type(value).__name__} where object expected"]
        out: list[str] = []
        for key, fshape in shape["fields"].items():
            if key in value:
                out.extend(shape_violations(value[key], fshape, f"{path}.{key}"))
            elif not fshape.get("nullable", False):
                out.append(f"{path}.{key}: required field missing")
        for key in value:
            if key not in shape["fields"]:
                out.append(f"{path}.{key}: unexpected field")
        return out

    if kind == KIND_ARRAY:
        if not isinstance(value, list):
            return [f"{path}: {type(value).__name__} where array expected"]
        element = shape.get("element")
        if element is None:
            return []
        out = []
        for i, item in enumerate(value):
            out.extend(shape_violations(item, element, f"{path}[{i}]"))
        return out

    return [f"{path}: unknown shape kind {kind!r}"]


def conforms(value: Any, shape: dict) -> bool:
    return not shape_violations(value, shape)


def describe(shape: dict) -> str:
    kind = shape["kind"]
    suffix = "?" if shape.get("nullable", False) else ""
    if kind == KIND_SCALAR:
        return shape["type"] + suffix
    if kind == KIND_OBJECT:
        inner = ", ".join(f"{k}: {describe(v)}" for k, v in sorted(shape["fields"].items()))
        return "{" + inner + "}" + suffix
    if kind == KIND_ARRAY:
        element = shape.get("element")
        return f"[{describe(element) if element else '...'}]{suffix}"
    if kind == KIND_UNION:
        return "(" + " | ".join(describe(m) for m in shape["members"]) + ")" + suffix
    return f"<{kind}>"
