from __future__ import annotations

import pytest

from trajforge.backend import ChatResponse
from trajforge.tool_space import BusinessCluster, ClusterConfig, ToolDef, ToolSpace

TOOLS_JSONL = """\
{"server": "crm", "tools": [{"name": "find_customer", "description": "Look up a customer profile by query", "parameters": {"type": "object", "properties": {"query": {"type": "string", "description": "free-text search"}}, "required": ["query"]}}, {"name": "list_orders", "description": "List a customer's recent orders", "parameters": {"type": "object", "properties": {"customer_ref": {"type": "string", "description": "customer reference"}}, "required": ["customer_ref"]}}, {"name": "update_address", "description": "Change a customer's shipping address", "parameters": {"type": "object", "properties": {"customer_ref": {"type": "string", "description": "customer reference"}, "address": {"type": "string", "description": "new address"}}, "required": ["customer_ref", "address"]}}]}
{"server": "billing", "tools": [{"name": "get_invoice", "description": "Fetch one invoice", "parameters": {"type": "object", "properties": {"invoice_ref": {"type": "string", "description": "invoice reference"}}, "required": ["invoice_ref"]}}, {"name": "refund_payment", "description": "Issue a refund for a payment", "parameters": {"type": "object", "properties": {"payment_ref": {"type": "string", "description": "payment id"}, "amount": {"type": "number", "description": "refund amount"}}, "required": ["payment_ref", "amount"]}}]}
{"server": "metrics", "tools": [{"name": "query_latency", "description": "Query service latency metrics", "parameters": {"type": "object", "properties": {"service": {"type": "string", "description": "service name"}}, "required": ["service"]}}]}
"""


def make_tool(
    name: str,
    server: str = "srv",
    domain_id: int = 0,
    class_id: int = 0,
    description: str = "",
    params: dict | None = None,
    required: list | None = None,
) -> ToolDef:
    return ToolDef(
        tool_id=f"{server}::{name}",
        name=name,
        description=description or f"{name} tool",
        param_schema={
            "type": "object",
            "properties": params or {},
            "required": required or [],
        },
        origin_server=server,
        domain_id=domain_id,
        class_id=class_id,
    )


def make_cluster(server: str, tools: list[ToolDef]) -> BusinessCluster:
    cluster = BusinessCluster(cluster_id=server, server_id=server, tools=tools)
    cluster.recompute_classes()
    return cluster


def make_space(clusters: list[BusinessCluster], n_dom: int = 4, n_cls: int = 4) -> ToolSpace:
    return ToolSpace(clusters, cluster_config=ClusterConfig(n_dom=n_dom, n_cls=n_cls, seed=0))


@pytest.fixture
def tools_source() -> bytes:
    return TOOLS_JSONL.encode("utf-8")


@pytest.fixture
def two_cluster_space() -> ToolSpace:
    """Hand-assigned space: crm tools in domain 0, billing tools in domain 1."""
    crm = make_cluster(
        "crm",
        [
            make_tool("find_customer", "crm", 0, 0, params={"query": {"type": "string"}}, required=["query"]),
            make_tool("list_orders", "crm", 0, 1, params={"customer_ref": {"type": "string"}}, required=["customer_ref"]),
        ],
    )
    billing = make_cluster(
        "billing",
        [
            make_tool("get_invoice", "billing", 1, 4, params={"invoice_ref": {"type": "string"}}, required=["invoice_ref"]),
            make_tool(
                "refund_payment",
                "billing",
                1,
                5,
                params={"payment_ref": {"type": "string"}, "amount": {"type": "number"}},
                required=["payment_ref", "amount"],
            ),
        ],
    )
    return make_space([crm, billing])


class SequenceBackend:
    """Replays a fixed list of ChatResponses; exposes the requests it saw."""

    def __init__(self, responses: list[ChatResponse]):
        self.responses = list(responses)
        self.requests = []

    def complete(self, req) -> ChatResponse:
        self.requests.append(req)
        if not self.responses:
            raise AssertionError("SequenceBackend ran out of scripted responses")
        return self.responses.pop(0)


class RoleBackend:
    """Dispatches to per-role handler callables (request -> ChatResponse)."""

    def __init__(self, default, **handlers):
        self.default = default
        self.handlers = handlers
        self.requests = []

    def complete(self, req) -> ChatResponse:
        self.requests.append(req)
        handler = self.handlers.get(req.role, self.default)
        return handler(req)
