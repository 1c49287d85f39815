import os

import pytest

import fpwc

FIXTURES = os.environ.get(
    "FPWC_FIXTURE_DIR",
    os.path.join(os.path.dirname(__file__), "..", "..", "fixtures"),
)

GRAPH = (
    'Vertices:\n'
    'Name: "A" Description: First screen. can-self-act: False\n'
    'Name: "B" Description: Second screen. can-self-act: True\n'
    'Edges:\n'
    'Edge: E("A", "tap the next button") -> "B" #Go forward\n'
)

PLAN = (
    'def new_plan():\n'
    '    E("A", "tap the next button")\n'
    '    if isTRUE("the next screen is shown"):\n'
    '        return "Task completed"\n'
    '    return "stuck"\n'
)


def test_normalize_name():
    assert fpwc.normalize_name('"Main   Page"') == "main page"


def test_count_tokens():
    assert fpwc.count_tokens("abcde") == 2


def test_parse_graph():
    g = fpwc.parse_graph(GRAPH)
    assert [v["name"] for v in g["vertices"]] == ["A", "B"]
    assert g["edges"][0]["action"] == "tap the next button"
    assert g["warnings"] == []
    # Canonical text round trips.
    assert fpwc.parse_graph(g["text"])["text"] == g["text"]


def test_parse_plan():
    p = fpwc.parse_plan(PLAN)
    assert p["ok"]
    assert p["name"] == "new_plan"
    assert p["statement_count"] == 4
    bad = fpwc.parse_plan("def new_plan():\n    import os\n")
    assert not bad["ok"]
    assert bad["errors"]


def test_validate_plan():
    diagnostics = fpwc.validate_plan(PLAN, GRAPH)
    assert diagnostics == []
    missing = fpwc.validate_plan(
        'def new_plan():\n    E("A", "tap the missing thing")\n    return "x"\n',
        GRAPH,
    )
    assert any(d["severity"] == "missing_edge" for d in missing)


def test_run_suite_and_replay(tmp_path):
    suite = os.path.join(FIXTURES, "suites", "bundled_suite.json")
    oracle = os.path.join(FIXTURES, "suites", "oracle")
    out = str(tmp_path / "traces")

    result = fpwc.run_suite(suite, oracle, out_dir=out)
    assert not result["any_episode_error"]
    assert result["metrics"]["SR"] == 1.0
    assert all(status == "success" for _, status in result["episodes"])

    traces = sorted(os.listdir(out))
    assert len(traces) == len(result["episodes"])
    rep = fpwc.replay_trace(os.path.join(out, traces[0]), suite)
    assert rep["ok"], rep["message"]

    metrics = fpwc.compute_metrics(out, suite)
    assert metrics["trace_count"] == len(traces)
    assert metrics["metrics"]["SR"] == 1.0


def test_errors_surface_as_exceptions():
    with pytest.raises(Exception):
        fpwc.parse_graph("no structure at all")
