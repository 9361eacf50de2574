from __future__ import annotations

from hypothesis import given, strategies as st

from trajforge.schema_shape import (
    conforms,
    describe,
    infer_shape,
    shape_violations,
    unify,
)

json_values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers(min_value=-1000, max_value=1000)
    | st.floats(allow_nan=False, allow_infinity=False, width=32)
    | st.text(max_size=8),
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(st.text(max_size=6), children, max_size=4),
    max_leaves=12,
)


class TestInference:
    def test_flat_object(self):
        shape = infer_shape({"a": 1, "b": "x"})
        assert shape == {
            "kind": "object",
            "nullable": False,
            "fields": {
                "a": {"kind": "scalar", "type": "number", "nullable": False},
                "b": {"kind": "scalar", "type": "string", "nullable": False},
            },
        }

    def test_array_of_objects_widens_missing_field_to_nullable(self):
        shape = infer_shape([{"id": 1}, {"id": 2, "tag": "t"}])
        assert shape["kind"] == "array"
        fields = shape["element"]["fields"]
        assert fields["id"] == {"kind": "scalar", "type": "number", "nullable": False}
        assert fields["tag"]["nullable"] is True
        assert fields["tag"]["type"] == "string"

    def test_null_is_nullable_any(self):
        assert infer_shape(None) == {"kind": "scalar", "type": "any", "nullable": True}

    def test_bool_is_not_number(self):
        assert infer_shape(True)["type"] == "boolean"
        assert infer_shape(1)["type"] == "number"

    def test_conflicting_scalars_widen_to_union(self):
        shape = infer_shape([1, "one"])
        element = shape["element"]
        assert element["kind"] == "union"
        kinds = {m["type"] for m in element["members"]}
        assert kinds == {"number", "string"}


class TestConformance:
    def test_same_shape_different_values_conform(self):
        lock = infer_shape({"a": 1, "b": "x"})
        assert conforms({"a": 99, "b": "other"}, lock)

    def test_dropped_field_violates(self):
        lock = infer_shape({"a": 1, "b": "x"})
        violations = shape_violations({"a": 1}, lock)
        assert any("$.b" in v for v in violations)

    def test_extra_field_violates(self):
        lock = infer_shape({"a": 1})
        assert any("unexpected field" in v for v in shape_violations({"a": 1, "z": 2}, lock))

    def test_type_change_violates(self):
        lock = infer_shape({"a": 1})
        assert shape_violations({"a": "one"}, lock)

    def test_nullable_field_may_be_absent_or_null(self):
        lock = infer_shape([{"id": 1}, {"id": 2, "tag": "t"}])
        assert conforms([{"id": 5}], lock)
        assert conforms([{"id": 5, "tag": None}], lock)
        assert conforms([{"id": 5, "tag": "x"}], lock)
        assert not conforms([{"id": 5, "tag": 7}], lock)

    def test_union_accepts_either_branch(self):
        lock = infer_shape([1, "one"])
        assert conforms([5], lock)
        assert conforms(["five"], lock)
        assert not conforms([True], lock)

    @given(json_values)
    def test_every_value_conforms_to_its_own_shape(self, value):
        assert conforms(value, infer_shape(value))

    @given(json_values, json_values)
    def test_unify_covers_both_sides(self, a, b):
        merged = unify(infer_shape(a), infer_shape(b))
        assert conforms(a, merged)
        assert conforms(b, merged)

    @given(json_values)
    def test_canonical_keys_sorted(self, value):
        shape = infer_shape(value)

        def check(s):
            if s["kind"] == "object":
                keys = list(s["fields"])
                assert keys == sorted(keys)
                for sub in s["fields"].values():
                    check(sub)
            elif s["kind"] == "array" and s.get("element"):
                check(s["element"])
            elif s["kind"] == "union":
                for m in s["members"]:
                    check(m)

        check(shape)


class TestDescribe:
    def test_readable_forms(self):
        assert describe(infer_shape(3)) == "number"
        assert describe(infer_shape(None)) == "any?"
        assert "{a: number" in describe(infer_shape({"a": 1}))
        assert describe(infer_shape([1])) == "[number]"
