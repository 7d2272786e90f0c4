import pytest

from phonicl.corpus import Example
from phonicl.errors import MissingFieldError, TemplateParseError
from phonicl.promptkit import (
    PromptConfig,
    PromptTemplate,
    load_templates,
    parse_templates,
    render_prompt,
)


def _ex(i, script="script text", ipa="ipa text", roman="", target="the answer"):
    return Example(
        id=f"p{i}", lang="hin", task="flores",
        script_text=script, ipa_text=ipa, roman_text=roman, target_text=target,
    )


def test_default_file_has_three_templates():
    templates = load_templates()
    assert set(templates) == {"aya-wiki", "flores", "aya-mlqa"}


def test_unknown_placeholder_rejected():
    with pytest.raises(TemplateParseError):
        PromptTemplate(task="x", header="h", example_block="{{bogus}}", query_block="q")


def test_answer_not_allowed_in_query_block():
    with pytest.raises(TemplateParseError):
        PromptTemplate(task="x", header="h", example_block="{{input}}", query_block="{{answer}}")


def test_user_file_shadows_defaults(tmp_path):
    override = tmp_path / "custom.txt"
    override.write_text(
        "[flores header]\nCustom header.\n"
        "[flores example]\nIN: {{input}}\nOUT: {{answer}}\n"
        "[flores query]\nIN: {{input}}\nOUT:\n",
        encoding="utf-8",
    )
    templates = load_templates(override)
    assert templates["flores"].header == "Custom header."
    assert templates["aya-wiki"].header.startswith("You are an expert in Text Simplification")


def test_parse_errors():
    with pytest.raises(TemplateParseError):
        parse_templates("stray text\n[flores header]\nx\n")
    with pytest.raises(TemplateParseError):
        parse_templates("[flores header]\nx\n[flores header]\ny\n")
    with pytest.raises(TemplateParseError):
        parse_templates("[flores header]\nx\n[flores example]\n{{input}}\n")  # missing query


def test_zero_shot_prompt_is_header_plus_query():
    templates = load_templates()
    config = PromptConfig(k_shots=0, include_script=True, include_ipa=True)
    query = _ex(0)
    prompt = render_prompt(templates["flores"], config, [], query)
    assert prompt.startswith("Given the <script input> and IPA <ipa input>, translate")
    assert prompt.endswith("<script input>: script text\n<ipa input>: ipa text\n<script output>:")
    assert prompt.count("script text") == 1


def test_three_shot_flores_prompt():
    templates = load_templates()
    config = PromptConfig(k_shots=3)
    shots = [_ex(i, script=f"shot {i}", ipa=f"ipa {i}", target=f"ans {i}") for i in range(3)]
    prompt = render_prompt(templates["flores"], config, shots, _ex(9))
    assert prompt.startswith("Given the <script input> and IPA <ipa input>, translate")
    # shots appear in retrieval order
    assert prompt.index("shot 0") < prompt.index("shot 1") < prompt.index("shot 2")
    assert "<script output>: ans 0" in prompt


def test_blank_field_renders_label_then_newline():
    templates = load_templates()
    config = PromptConfig(k_shots=0, include_ipa=False, blank_mode="blank")
    prompt = render_prompt(templates["flores"], config, [], _ex(0, ipa=""))
    assert "<ipa input>: \n" in prompt
    assert "ipa text" not in prompt


def test_omit_mode_drops_line():
    templates = load_templates()
    config = PromptConfig(k_shots=0, include_ipa=False, blank_mode="omit")
    prompt = render_prompt(templates["flores"], config, [], _ex(0))
    # the header's literal format description is untouched; the rendered
    # query block loses its ipa line entirely
    assert prompt.endswith("<script input>: script text\n<script output>:")
    assert "ipa text" not in prompt


def test_blank_script_keeps_ipa():
    # ablation: script removed, prompt otherwise identical
    templates = load_templates()
    config = PromptConfig(k_shots=0, include_script=False, include_ipa=True, blank_mode="blank")
    prompt = render_prompt(templates["flores"], config, [], _ex(0))
    assert "<script input>: \n" in prompt
    assert "<ipa input>: ipa text" in prompt


def test_missing_field_raises():
    templates = load_templates()
    config = PromptConfig(k_shots=0, include_ipa=True)
    with pytest.raises(MissingFieldError) as err:
        render_prompt(templates["flores"], config, [], _ex(0, ipa=""))
    assert err.value.channel == "ipa"


def test_roman_line_renders_when_included():
    templates = load_templates()
    config = PromptConfig(k_shots=0, include_roman=True)
    prompt = render_prompt(templates["flores"], config, [], _ex(0, roman="roman text"))
    assert "<roman input>: roman text" in prompt


def test_rendering_is_byte_stable():
    templates = load_templates()
    config = PromptConfig(k_shots=2)
    shots = [_ex(i) for i in range(2)]
    one = render_prompt(templates["aya-mlqa"], config, shots, _ex(5))
    two = render_prompt(templates["aya-mlqa"], config, shots, _ex(5))
    assert one == two
    assert one.encode("utf-8") == two.encode("utf-8")


def test_shot_count_must_match_config():
    templates = load_templates()
    with pytest.raises(ValueError):
        render_prompt(templates["flores"], PromptConfig(k_shots=2), [_ex(0)], _ex(1))


def test_config_requires_some_channel():
    with pytest.raises(ValueError):
        PromptConfig(include_script=False, include_ipa=False, include_roman=False)
