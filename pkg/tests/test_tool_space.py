from __future__ import annotations

import json

import pytest

from trajforge.embeddings import HashEmbedding, StaticEmbedding
from trajforge.errors import ClusteringError, EmbeddingError, IngestError
from trajforge.jsonutil import canonical_dumps
from trajforge.tool_space import (
    ClusterConfig,
    ToolSpace,
    build_feature_text,
    cluster_two_level,
    ingest_tools,
)

from .conftest import make_cluster, make_tool


class TestIngest:
    def test_two_servers_grouped(self, tools_source):
        space, report = ingest_tools(tools_source)
        assert report.cluster_count == 3
        assert report.tool_count == 6
        assert [c.cluster_id for c in space.clusters] == ["crm", "billing", "metrics"]
        assert len(space.cluster_by_id("crm").tools) == 3

    def test_json_array_form(self):
        payload = json.dumps(
            [
                {"server": "a", "tools": [{"name": "t1", "description": "d"}]},
                {"server": "b", "tools": [{"name": "t2", "description": "d"}]},
            ]
        ).encode()
        space, report = ingest_tools(payload)
        assert report.cluster_count == 2 and report.tool_count == 2

    def test_duplicate_tool_id_reported(self):
        payload = json.dumps(
            [{"server": "a", "tools": [{"name": "dup"}, {"name": "dup"}]}]
        ).encode()
        space, report = ingest_tools(payload)
        assert len(space.cluster_by_id("a").tools) == 1
        assert any("a::dup" in e.message for e in report.errors)

    def test_empty_tools_array_omits_cluster_with_warning(self):
        payload = json.dumps(
            [
                {"server": "empty", "tools": []},
                {"server": "full", "tools": [{"name": "t"}]},
            ]
        ).encode()
        space, report = ingest_tools(payload)
        assert [c.cluster_id for c in space.clusters] == ["full"]
        assert any("empty" in w.message for w in report.warnings)

    def test_empty_input_is_an_error(self):
        with pytest.raises(IngestError):
            ingest_tools(b"")
        with pytest.raises(IngestError):
            ingest_tools(b"   \n  ")

    def test_malformed_jsonl_line_reported_with_location(self):
        payload = b'{"server": "a", "tools": [{"name": "t"}]}\n{not json}\n'
        space, report = ingest_tools(payload)
        assert report.tool_count == 1
        assert any(e.location == "line 2" for e in report.errors)

    def test_parameter_list_form_and_duplicate_param(self):
        good = json.dumps(
            [
                {
                    "server": "a",
                    "tools": [
                        {
                            "name": "t",
                            "parameters": [
                                {"name": "x", "type": "string", "required": True},
                                {"name": "y", "type": "number"},
                            ],
                        }
                    ],
                }
            ]
        ).encode()
        space, _ = ingest_tools(good)
        tool = space.cluster_by_id("a").tools[0]
        assert tool.param_schema["required"] == ["x"]
        assert set(tool.param_schema["properties"]) == {"x", "y"}

        dup = json.dumps(
            [
                {
                    "server": "a",
                    "tools": [
                        {"name": "keep"},
                        {"name": "t", "parameters": [{"name": "x"}, {"name": "x"}]},
                    ],
                }
            ]
        ).encode()
        space, report = ingest_tools(dup)
        assert [t.name for t in space.cluster_by_id("a").tools] == ["keep"]
        assert any("duplicate parameter name 'x'" in e.message for e in report.errors)


class TestFeatureText:
    def test_contains_name_description_and_params(self):
        tool = make_tool(
            "search",
            description="find things",
            params={"q": {"type": "string", "description": "the query"}},
        )
        text = build_feature_text(tool)
        assert "search" in text and "find things" in text and "q: the query" in text

    def test_empty_description_keeps_name_and_params(self):
        tool = make_tool("bare", description=" ", params={"p": {"type": "string"}})
        tool.description = ""
        text = build_feature_text(tool)
        assert text.splitlines()[0] == "bare"
        assert "p" in text

    def test_identical_tools_yield_identical_text(self):
        a = make_tool("same", params={"x": {"type": "string", "description": "d"}})
        b = make_tool("same", params={"x": {"type": "string", "description": "d"}})
        assert build_feature_text(a) == build_feature_text(b)

    def test_golden_fixture(self):
        tool = make_tool(
            "get_invoice",
            server="billing",
            description="Fetch one invoice",
            params={"invoice_ref": {"type": "string", "description": "invoice reference"}},
            required=["invoice_ref"],
        )
        # snapshot recorded once from build_feature_text, then pinned
        assert build_feature_text(tool) == "get_invoice\nFetch one invoice\ninvoice_ref: invoice reference"


class TestClustering:
    def _space(self, names):
        tools = [make_tool(n, domain_id=-1, class_id=-1) for n in names]
        for t in tools:
            t.domain_id = -1
            t.class_id = -1
        return ToolSpace([make_cluster("srv", tools)])

    def test_degenerate_single_domain_single_class(self):
        space = self._space(["a", "b", "c"])
        cfg = ClusterConfig(n_dom=1, n_cls=1, seed=3)
        out = cluster_two_level(space, cfg, HashEmbedding(16))
        for tool in out.tools:
            assert tool.domain_id == 0
            assert tool.class_id == 0

    def test_two_separated_blobs_recovered(self):
        space = self._space(["a1", "a2", "a3", "b1", "b2", "b3"])
        table = {}
        for tool in space.tools:
            text = build_feature_text(tool)
            if tool.name.startswith("a"):
                table[text] = [1.0, 0.0, 0.01 * int(tool.name[1])]
            else:
                table[text] = [0.0, 1.0, 0.01 * int(tool.name[1])]
        emb = StaticEmbedding(table, dimensionality=3)
        out = cluster_two_level(space, ClusterConfig(n_dom=2, n_cls=1, seed=0), emb)
        groups = {}
        for tool in out.tools:
            groups.setdefault(tool.domain_id, set()).add(tool.name[0])
        assert sorted(len(v) for v in groups.values()) == [1, 1]
        assert {frozenset(v) for v in groups.values()} == {frozenset("a"), frozenset("b")}

    def test_seeded_determinism_byte_for_byte(self):
        space = self._space([f"t{i}" for i in range(12)])
        cfg = ClusterConfig(n_dom=3, n_cls=2, seed=42)
        out1 = cluster_two_level(space, cfg, HashEmbedding(16))
        out2 = cluster_two_level(space, cfg, HashEmbedding(16))
        assert canonical_dumps(out1.to_dict()) == canonical_dumps(out2.to_dict())

    def test_partition_property_and_ranges(self):
        space = self._space([f"t{i}" for i in range(15)])
        cfg = ClusterConfig(n_dom=4, n_cls=3, seed=1)
        out = cluster_two_level(space, cfg, HashEmbedding(16))
        for tool in out.tools:
            assert 0 <= tool.domain_id < cfg.n_dom
            assert 0 <= tool.class_id < cfg.n_dom * cfg.n_cls
            assert tool.class_id // cfg.n_cls == tool.domain_id

    def test_functional_classes_match_members(self):
        space = self._space([f"t{i}" for i in range(10)])
        out = cluster_two_level(space, ClusterConfig(n_dom=2, n_cls=2, seed=5), HashEmbedding(8))
        for cluster in out.clusters:
            assert cluster.functional_classes == {t.class_id for t in cluster.tools}

    def test_too_few_tools_rejected_with_guidance(self):
        space = self._space(["only", "two"])
        with pytest.raises(ClusteringError, match="lower n_dom"):
            cluster_two_level(space, ClusterConfig(n_dom=5, n_cls=1, seed=0), HashEmbedding(8))

    def test_embedding_failure_carries_tool_id(self):
        space = self._space(["a", "b"])

        class Exploding:
            dimensionality = 4

            def embed(self, text):
                raise RuntimeError("boom")

        with pytest.raises(EmbeddingError, match="srv::a"):
            cluster_two_level(space, ClusterConfig(n_dom=1, n_cls=1, seed=0), Exploding())

    def test_space_roundtrip(self, two_cluster_space, tmp_path):
        path = tmp_path / "space.json"
        two_cluster_space.save(path)
        loaded = ToolSpace.load(path)
        assert canonical_dumps(loaded.to_dict()) == canonical_dumps(two_cluster_space.to_dict())
        assert loaded.clustered
