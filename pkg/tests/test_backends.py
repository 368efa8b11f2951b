from unittest.mock import MagicMock

import pytest
import requests

from app.models.schemas import ChatRequest, LayerKind, SimModelSpec
from app.services.backends import BackendSet, ChatCompletionsClient, SimulatedBackend, count_tokens
from app.services.backends.simulator import (
    RequestKind,
    detect_request_kind,
    gold_answer_for,
    parse_marker,
    task_marker,
    wrong_answer_for,
)
from app.services.judges import parse_response
from app.services.prompts import build_aggregated_data_prompt, build_prompt
from app.utils.exceptions import (
    BackendHttpError,
    BackendTimeoutError,
    BackendUnavailableError,
    MalformedProviderResponseError,
    UnknownSimModelError,
)
from tests.conftest import make_profile, marked_query


def http_response(status=200, body=None, text=""):
    response = MagicMock()
    response.status_code = status
    response.text = text
    if isinstance(body, Exception):
        response.json.side_effect = body
    else:
        response.json.return_value = body
    return response


def completion(content="42", usage=True):
    body = {"choices": [{"message": {"role": "assistant", "content": content}}]}
    if usage:
        body["usage"] = {"prompt_tokens": 120, "completion_tokens": 7}
    return body


@pytest.fixture
def session():
    session = MagicMock()
    session.headers = {}
    return session


@pytest.fixture
def client(session):
    client = ChatCompletionsClient(
        base_url="https://llm.example/v1/",
        api_key="segredo",
        max_retries=1,
        backoff_seconds=0.5,
        session=session
    )
    client._sleep = MagicMock()
    return client


REQUEST = ChatRequest(model_id="modelo-a", system_prompt="seja breve", user_content="2+2?")


class TestChatCompletionsClient:

    def test_usage_copied_verbatim(self, client, session):
        session.post.return_value = http_response(body=completion())
        response = client.complete(REQUEST)

        assert response.text == "42"
        assert (response.input_tokens, response.output_tokens) == (120, 7)
        assert not response.estimated_tokens

        url = session.post.call_args.args[0]
        payload = session.post.call_args.kwargs["json"]
        assert url == "https://llm.example/v1/chat/completions"
        assert payload["model"] == "modelo-a"
        assert payload["messages"] == [
            {"role": "system", "content": "seja breve"},
            {"role": "user", "content": "2+2?"},
        ]
        assert session.headers["Authorization"] == "Bearer segredo"

    def test_retries_after_429(self, client, session):
        session.post.side_effect = [http_response(status=429, text="slow down"), http_response(body=completion())]
        assert client.complete(REQUEST).text == "42"
        assert session.post.call_count == 2
        client._sleep.assert_called_once_with(0.5)

    def test_timeouts_exhaust_budget(self, client, session):
        session.post.side_effect = requests.exceptions.Timeout("read timed out")
        with pytest.raises(BackendTimeoutError):
            client.complete(REQUEST)
        assert session.post.call_count == 2

    def test_backoff_doubles(self, session):
        client = ChatCompletionsClient("https://llm.example/v1", max_retries=3, backoff_seconds=1.0, session=session)
        client._sleep = MagicMock()
        session.post.side_effect = requests.exceptions.Timeout("t")
        with pytest.raises(BackendTimeoutError):
            client.complete(REQUEST)
        assert [c.args[0] for c in client._sleep.call_args_list] == [1.0, 2.0, 4.0]

    def test_client_error_is_not_retried(self, client, session):
        session.post.return_value = http_response(status=400, text="bad request")
        with pytest.raises(BackendHttpError) as exc:
            client.complete(REQUEST)
        assert exc.value.status == 400
        assert session.post.call_count == 1

    def test_connection_error(self, client, session):
        session.post.side_effect = requests.exceptions.ConnectionError("refused")
        with pytest.raises(BackendUnavailableError):
            client.complete(REQUEST)

    def test_missing_usage_is_estimated(self, client, session):
        session.post.return_value = http_response(body=completion("a b c", usage=False))
        response = client.complete(REQUEST)
        assert response.estimated_tokens
        assert response.output_tokens == 3
        assert response.input_tokens == count_tokens("seja breve") + count_tokens("2+2?")

    @pytest.mark.parametrize("body", [ValueError("not json"), {"choices": []}, {"choices": [{"message": {"content": None}}]}])
    def test_malformed_body(self, client, session, body):
        session.post.return_value = http_response(body=body)
        with pytest.raises(MalformedProviderResponseError):
            client.complete(REQUEST)


class TestCountTokens:

    @pytest.mark.parametrize("text,expected", [("", 0), ("a b c", 3), ("x=1", 3), ("  ", 0)])
    def test_counts(self, text, expected):
        assert count_tokens(text) == expected


def spec(**overrides):
    data = dict(model_id="sim-a", competence={"math": 1.0}, sim_latency=2.5)
    data.update(overrides)
    return SimModelSpec(**data)


class TestSimulator:

    def ask(self, backend, content, model_id="sim-a"):
        return backend.complete(ChatRequest(model_id=model_id, user_content=content))

    def test_marker_helpers(self):
        assert task_marker("math", "q7") == "[task:math|qid:q7]"
        assert parse_marker("pergunta [task:math|qid:q7] aqui") == ("math", "q7")
        tag, qid = parse_marker("sem marcador")
        assert tag is None and len(qid) == 10

    def test_request_kinds(self):
        query = marked_query()
        assert detect_request_kind(query) == RequestKind.DIRECT
        assert detect_request_kind(build_prompt(LayerKind.FIRST, query)) == RequestKind.FIRST
        assert detect_request_kind(build_prompt(LayerKind.INTERMEDIATE, query, ["a"])) == RequestKind.INTERMEDIATE
        assert detect_request_kind(build_prompt(LayerKind.FINAL, query, ["a"])) == RequestKind.AGGREGATE
        assert detect_request_kind(build_aggregated_data_prompt(query, ["a"])) == RequestKind.AGGREGATE

    def test_noiseless_competent_model(self):
        backend = SimulatedBackend([spec()], seed=1)
        response = self.ask(backend, build_prompt(LayerKind.FIRST, marked_query("q1")))
        parsed = parse_response(response.text)
        assert parsed.parse_ok
        assert parsed.answer == gold_answer_for("q1")
        assert parsed.self_score == 1.0
        assert response.wall_latency == 2.5

    def test_incompetent_model_answers_wrong(self):
        backend = SimulatedBackend([spec(competence={"math": 0.0})], seed=1)
        response = self.ask(backend, marked_query("q2"))
        assert response.text == wrong_answer_for("q2", "sim-a")

    def test_default_competence_for_unknown_tag(self):
        backend = SimulatedBackend([spec(competence={}, default_competence=1.0)], seed=1)
        assert self.ask(backend, marked_query("q3", tag="biomed")).text == gold_answer_for("q3")

    def test_never_obeys_format(self):
        backend = SimulatedBackend([spec(obeys_format_prob=0.0)], seed=1)
        response = self.ask(backend, build_prompt(LayerKind.FIRST, marked_query()))
        assert not parse_response(response.text).parse_ok
        assert response.text.startswith("I believe the answer is")

    def test_peer_scores_follow_references(self):
        backend = SimulatedBackend([spec()], seed=1)
        answers = [gold_answer_for("q1"), wrong_answer_for("q1", "x"), gold_answer_for("q1")]
        response = self.ask(backend, build_prompt(LayerKind.INTERMEDIATE, marked_query("q1"), answers))
        parsed = parse_response(response.text, expected_peers=3)
        assert parsed.peer_scores == [1.0, 0.0, 1.0]

    def test_deterministic(self):
        content = build_prompt(LayerKind.FIRST, marked_query())
        noisy = spec(competence={"math": 0.5}, self_calibration_noise=0.3, obeys_format_prob=0.5)
        a = self.ask(SimulatedBackend([noisy], seed=9), content)
        b = self.ask(SimulatedBackend([noisy], seed=9), content)
        assert a == b

    def test_seed_changes_outcomes(self):
        noisy = spec(competence={"math": 0.5}, self_calibration_noise=0.3)
        texts_a = [self.ask(SimulatedBackend([noisy], seed=1), marked_query(f"q{i}")).text for i in range(30)]
        texts_b = [self.ask(SimulatedBackend([noisy], seed=2), marked_query(f"q{i}")).text for i in range(30)]
        assert texts_a != texts_b

    def test_unknown_model(self):
        with pytest.raises(UnknownSimModelError):
            self.ask(SimulatedBackend([spec()]), "oi", model_id="outro")


class TestBackendSet:

    def test_call_prices_usage(self):
        backend = SimulatedBackend([spec()], seed=0, name="sim")
        backends = BackendSet({"sim": backend})
        profile = make_profile("sim-a", 0, input_price=1e6, output_price=2e6)

        response, usage = backends.call(profile, "a b c")
        assert usage.input_tokens == 3
        assert usage.cost == pytest.approx(usage.input_tokens * 1.0 + usage.output_tokens * 2.0)
        assert usage.wall_latency == 2.5

    def test_unknown_backend(self):
        with pytest.raises(BackendUnavailableError):
            BackendSet({}).call(make_profile("sim-a", 0), "oi")
