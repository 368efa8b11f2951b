import pytest

from app.models.schemas import LayerKind
from app.services.backends.base import count_tokens
from app.services.prompts import (
    TRUNCATION_MARKER,
    build_aggregated_data_prompt,
    build_direct_prompt,
    build_guarded_prompt,
    build_prompt,
)
from app.utils.exceptions import MissingAnswersError

QUERY = "What is 2+2?"


class TestGoldenPrompts:

    def test_first_layer(self, golden):
        assert build_prompt(LayerKind.FIRST, QUERY) == golden("first_layer.txt")

    def test_intermediate_two_answers(self, golden):
        assert build_prompt(LayerKind.INTERMEDIATE, QUERY, ["4", "5"]) == golden("intermediate_two_answers.txt")

    def test_final_three_responses(self, golden):
        assert build_prompt(LayerKind.FINAL, QUERY, ["4", "5", "6"]) == golden("final_three_responses.txt")


class TestBuildPrompt:

    def test_first_layer_key_contract(self):
        assert '"answer": "<your answer>"' in build_prompt(LayerKind.FIRST, QUERY)

    def test_intermediate_mentions_every_answer(self):
        text = build_prompt(LayerKind.INTERMEDIATE, QUERY, ["x", "y"])
        assert "ANSWER_0: x" in text and "ANSWER_1: y" in text
        assert "<float_score_for_ANSWER_1>" in text

    def test_query_closes_every_prompt(self):
        for kind, answers in ((LayerKind.FIRST, []), (LayerKind.INTERMEDIATE, ["a"]), (LayerKind.FINAL, ["a"])):
            assert build_prompt(kind, QUERY, answers).endswith("\n\n" + QUERY)

    def test_braces_in_answers_are_kept(self):
        text = build_prompt(LayerKind.FINAL, QUERY, ['{"answer": 1}'])
        assert '1.{"answer": 1}' in text

    @pytest.mark.parametrize("kind", [LayerKind.INTERMEDIATE, LayerKind.FINAL])
    def test_missing_answers(self, kind):
        with pytest.raises(MissingAnswersError):
            build_prompt(kind, QUERY, [])

    def test_first_layer_rejects_answers(self):
        with pytest.raises(MissingAnswersError):
            build_prompt(LayerKind.FIRST, QUERY, ["a"])


class TestGuardedPrompt:

    def test_fits_without_truncation(self):
        text, truncated = build_guarded_prompt(LayerKind.FINAL, QUERY, ["a", "b"], 10_000)
        assert truncated == 0
        assert text == build_prompt(LayerKind.FINAL, QUERY, ["a", "b"])

    def test_truncates_oldest_first(self):
        long_answer = " ".join(["palavra"] * 200)
        answers = [long_answer, long_answer, "curta"]
        limit = count_tokens(build_prompt(LayerKind.FINAL, QUERY, [TRUNCATION_MARKER, long_answer, "curta"]))
        text, truncated = build_guarded_prompt(LayerKind.FINAL, QUERY, answers, limit)
        assert truncated == 1
        assert f"1.{TRUNCATION_MARKER}" in text
        assert f"2.{long_answer}" in text


class TestDatasetPrompts:

    def test_multiple_choice(self):
        text = build_direct_prompt("Which organelle?", "mmlu-biomed")
        assert "'ANSWER: $LETTER'" in text
        assert text.endswith("Which organelle?")

    def test_boxed(self):
        assert build_direct_prompt("1+1", "gsm8k").endswith("put your final answer within \\boxed{}.")

    def test_python(self):
        assert build_direct_prompt("reverse a list", "mbpp").startswith("You are an expert Python programmer")

    def test_unknown_tag_is_plain_query(self):
        assert build_direct_prompt("pergunta", "desconhecida") == "pergunta"

    def test_aggregated_data_prompt(self):
        text = build_aggregated_data_prompt("Q?", ["r1", "r2", "r3"])
        assert "This is the original question answered by these models:\nQ?" in text
        assert text.endswith("Responses from models:\n1.r1\n2.r2\n3.r3")

    def test_aggregated_without_responses(self):
        with pytest.raises(MissingAnswersError):
            build_aggregated_data_prompt("Q?", [])
