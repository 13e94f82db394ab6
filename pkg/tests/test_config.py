import textwrap

import pytest
from hypothesis import given, strategies as st

from cebench import FIXTURES
from cebench.config import (
    AXES,
    UNSET,
    ConfigError,
    config_hash,
    expand_grid,
    load_experiment_config,
    make_run_id,
    parse_experiment_config,
)

BASE = """\
name: t
dataset: d.jsonl
template: "{query}"
backend: {kind: mock_replay, fixture_path: f.jsonl}
"""


def cfg(extra: str = "") -> str:
    return BASE + textwrap.dedent(extra)


def test_unset_axes_collapse_to_sentinel():
    grid = parse_experiment_config(cfg())
    specs = expand_grid(grid)
    assert len(specs) == 1
    assert specs[0].axes == {a: UNSET for a in AXES}


def test_product_and_repetitions():
    grid = parse_experiment_config(cfg("""
        repetitions: 3
        axes:
          model: [a, b]
          top_k: [1, 2, 5]
    """))
    specs = expand_grid(grid)
    assert len(specs) == 2 * 3 * 3
    assert len({s.run_id for s in specs}) == len(specs)
    # repetitions are innermost, axes vary in declaration order
    assert [s.repetition for s in specs[:3]] == [0, 1, 2]
    assert [(s["model"], s["top_k"]) for s in specs[::3]] == [
        ("a", 1), ("a", 2), ("a", 5), ("b", 1), ("b", 2), ("b", 5)]


def test_expansion_is_deterministic():
    a = [s.run_id for s in expand_grid(parse_experiment_config(cfg("axes: {top_k: [1, 2]}")))]
    b = [s.run_id for s in expand_grid(parse_experiment_config(cfg("axes: {top_k: [1, 2]}")))]
    assert a == b


@pytest.mark.parametrize("axes, needle", [
    ("top_k: [0]", "top_k"),
    ("top_k: [two]", "top_k"),
    ("top_k: [true]", "top_k"),
    ("chunk_size: [-5]", "chunk_size"),
    ("embedding_quantization: [opq]", "embedding_quantization"),
    ("prompting_mode: [chain]", "prompting_mode"),
    ("model: []", "model"),
    ("model: [a, a]", "duplicate"),
    ("colour: [red]", "unknown axis"),
])
def test_invalid_axis_values_are_named(axes, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_experiment_config(cfg(f"axes: {{{axes}}}"))


def test_bare_no_is_a_quantization_mode():
    grid = parse_experiment_config(cfg("axes:\n  embedding_quantization: [no, sq, pq]\n"))
    assert grid.axes["embedding_quantization"] == ("no", "sq", "pq")


def test_syntax_error_reports_location():
    with pytest.raises(ConfigError, match=r"line \d+, column \d+"):
        parse_experiment_config(cfg("axes: {top_k: [1, 2}\n"))


@pytest.mark.parametrize("text, needle", [
    ("name: x\n", "missing required key"),
    (cfg("bogus: 1\n"), "unknown top-level"),
    (cfg("metrics: [bleu]\n"), "unknown metric"),
    (cfg("repetitions: 0\n"), "repetitions"),
    (cfg("chunk_overlap: 500\naxes: {chunk_size: [500]}\n"), "chunk_overlap"),
    (cfg("axes: {prompting_mode: [rag]}\n"), "knowledge"),
    ("- a\n- b\n", "mapping"),
])
def test_structural_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_experiment_config(text)


def test_bad_backend_is_config_error():
    text = BASE.replace("mock_replay", "carrier_pigeon")
    with pytest.raises(ConfigError, match="backend"):
        parse_experiment_config(text)


def test_prompting_mode_defaults_from_knowledge():
    plain = expand_grid(parse_experiment_config(cfg()))[0]
    rag = expand_grid(parse_experiment_config(cfg("knowledge: [k.txt]\n")))[0]
    assert plain.prompting_mode == "plain"
    assert rag.prompting_mode == "rag"


def test_model_axis_binds_backend(tmp_path):
    (tmp_path / "c.yaml").write_text(cfg("axes: {model: [m1, m2]}\n"))
    grid = load_experiment_config(tmp_path / "c.yaml")
    specs = expand_grid(grid)
    assert [s.backend.model for s in specs] == ["m1", "m2"]
    assert specs[0].backend.fixture_path == str(tmp_path / "f.jsonl")


def test_full_grid_fixture():
    grid = load_experiment_config(FIXTURES / "full_grid.yaml")
    specs = expand_grid(grid)
    assert len(specs) == 162
    assert grid.axes["embedding_quantization"] == ("no", "sq", "pq")
    assert [s.run_id for s in specs] == [s.run_id for s in expand_grid(grid)]


def test_config_hash_tracks_text():
    assert config_hash("a") == config_hash("a")
    assert config_hash("a") != config_hash("a ")


@given(st.dictionaries(st.sampled_from(AXES), st.integers(0, 100) | st.text(max_size=5), min_size=1),
       st.integers(0, 5))
def test_run_id_ignores_key_order(bindings, rep):
    reordered = dict(reversed(list(bindings.items())))
    rid = make_run_id("g", bindings, rep)
    assert rid == make_run_id("g", reordered, rep)
    assert len(rid) == 32
    assert rid != make_run_id("g", bindings, rep + 1)
