import json
import pathlib
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from servicebot.data import read_text
from servicebot.plan import (Handover, LlmEndpoint, LlmNetworkError,
                             LlmRejectionError, Pick, Place, Plan, PlanGrammar,
                             PlanError, PlanLexicalError, PlanPatternError,
                             PlanStructuralError, PlanVocabularyError,
                             build_prompt, generate_plan_text,
                             load_prompt_bundle, load_vocabulary, parse_plan,
                             rule_parse, serialize_plan, validate_plan_text)

GOLDEN = pathlib.Path(__file__).parent / "data" / "golden_prompt.txt"


@pytest.fixture(scope="module")
def vocab():
    return load_vocabulary(read_text("vocabulary.json"))


@pytest.fixture(scope="module")
def bundle(vocab):
    return load_prompt_bundle(read_text("prompt_bundle.json"), vocab)


GOOD_PLACE = ('{"chain_of_thought": "move it", "actions": '
              '[{"type": "pick", "object": "mug", "location": "table"}, '
              '{"type": "place", "location": "cabinet"}]}')
GOOD_HANDOVER = ('{"chain_of_thought": "deliver", "actions": '
                 '[{"type": "pick", "object": "mug", "location": "table"}, '
                 '{"type": "handover"}]}')


class TestGrammar:
    def test_accepts_pick_place(self, vocab):
        tree = validate_plan_text(GOOD_PLACE, vocab)
        assert tree["actions"][0]["object"] == "mug"

    def test_rejects_empty_actions(self, vocab):
        bad = '{"chain_of_thought": "x", "actions": []}'
        with pytest.raises(PlanStructuralError):
            validate_plan_text(bad, vocab)

    def test_vocabulary_violation_distinct(self, vocab):
        bad = GOOD_PLACE.replace('"mug"', '"unicorn"')
        with pytest.raises(PlanVocabularyError) as err:
            validate_plan_text(bad, vocab)
        assert err.value.position > 0
        assert "mug" in "".join(err.value.expected)

    def test_lexical_error_distinct(self, vocab):
        with pytest.raises(PlanLexicalError):
            validate_plan_text('{"chain_of_thought": "unterminated', vocab)
        with pytest.raises(PlanLexicalError):
            validate_plan_text('{"chain_of_thought": "bad \\q escape"}', vocab)

    def test_structural_error_reports_position_and_expected(self, vocab):
        bad = '{"chain_of_thought": "x", "steps": []}'
        with pytest.raises(PlanStructuralError) as err:
            validate_plan_text(bad, vocab)
        assert err.value.position == 26
        assert '"actions"' in err.value.expected

    def test_extra_keys_rejected(self, vocab):
        bad = GOOD_PLACE[:-1] + ', "mood": "happy"}'
        with pytest.raises(PlanStructuralError):
            validate_plan_text(bad, vocab)

    def test_wrong_key_order_rejected(self, vocab):
        bad = ('{"actions": [{"type": "handover"}], "chain_of_thought": "x"}')
        with pytest.raises(PlanStructuralError):
            validate_plan_text(bad, vocab)

    def test_ebnf_lists_vocabulary(self, vocab):
        text = PlanGrammar(vocab).ebnf()
        assert "plan" in text and "mug" in text and "handover" in text


class TestParsePlan:
    def test_pattern_two(self, vocab):
        plan = parse_plan(GOOD_HANDOVER, vocab)
        assert plan.actions == [Pick("mug", "table"), Handover()]

    def test_canonical_round_trip(self, vocab):
        for text in (GOOD_PLACE, GOOD_HANDOVER):
            canonical = serialize_plan(parse_plan(text, vocab))
            assert serialize_plan(parse_plan(canonical, vocab)) == canonical

    def test_whitespace_insensitive(self, vocab):
        squeezed = GOOD_PLACE.replace(" ", "")
        padded = GOOD_PLACE.replace(",", " ,\n\t")
        assert parse_plan(squeezed, vocab) == parse_plan(GOOD_PLACE, vocab)
        assert parse_plan(padded, vocab) == parse_plan(GOOD_PLACE, vocab)

    def test_pattern_closure_enforced(self, vocab):
        lone_pick = ('{"chain_of_thought": "x", "actions": '
                     '[{"type": "pick", "object": "mug", "location": "table"}]}')
        with pytest.raises(PlanPatternError):
            parse_plan(lone_pick, vocab)
        place_first = ('{"chain_of_thought": "x", "actions": '
                       '[{"type": "place", "location": "table"}, '
                       '{"type": "handover"}]}')
        with pytest.raises(PlanPatternError):
            parse_plan(place_first, vocab)

    def test_generated_plans_round_trip(self, vocab):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            text = generate_plan_text(rng, vocab)
            plan = parse_plan(text, vocab)
            assert plan.pattern_ok()
            assert serialize_plan(parse_plan(serialize_plan(plan), vocab)) \
                == serialize_plan(plan)

    def test_mutated_texts_rejected_or_valid(self, vocab):
        rng = np.random.default_rng(1)
        alphabet = list('{}[]":,abcdeghiklmnoprstuvw \\')
        for _ in range(2000):
            text = list(generate_plan_text(rng, vocab, valid_pattern=rng.random() < 0.5))
            for _ in range(rng.integers(1, 4)):
                op = rng.integers(3)
                pos = rng.integers(len(text))
                if op == 0:
                    text[pos] = alphabet[rng.integers(len(alphabet))]
                elif op == 1:
                    del text[pos]
                else:
                    text.insert(pos, alphabet[rng.integers(len(alphabet))])
            try:
                plan = parse_plan("".join(text), vocab)
            except PlanError:
                continue
            assert plan.pattern_ok()


class TestRuleParse:
    def test_bundled_corpus_matches_exactly(self, vocab):
        corpus = json.loads(read_text("instruction_corpus.json"))
        assert len(corpus) == 40
        for entry in corpus:
            plan = rule_parse(entry["instruction"], vocab)
            if entry["plan"] is None:
                assert plan is None, entry["instruction"]
                continue
            assert plan is not None, entry["instruction"]
            expected = entry["plan"]["actions"]
            got = json.loads(serialize_plan(plan))["actions"]
            assert got == expected, entry["instruction"]

    def test_pattern_one_example(self, vocab):
        plan = rule_parse("pick the mug from the table and place it in the cabinet",
                          vocab)
        assert plan.actions == [Pick("mug", "table"), Place("cabinet")]

    def test_synonyms_reach_handover(self, vocab):
        plan = rule_parse("grab the mug from the table and bring it to me", vocab)
        assert plan.actions == [Pick("mug", "table"), Handover()]

    def test_no_parse_is_none(self, vocab):
        assert rule_parse("sing a song", vocab) is None

    def test_deterministic(self, vocab):
        text = "take the cup from the shelf and put it in the dishwasher"
        a, b = rule_parse(text, vocab), rule_parse(text, vocab)
        assert serialize_plan(a) == serialize_plan(b)

    def test_trace_mentions_matched_tokens(self, vocab):
        plan = rule_parse("grab the cup from the desk and give it to me", vocab)
        assert "cup" in plan.chain_of_thought
        assert "mug" in plan.chain_of_thought

    def test_parsed_plans_are_grammar_valid(self, vocab):
        corpus = json.loads(read_text("instruction_corpus.json"))
        for entry in corpus:
            plan = rule_parse(entry["instruction"], vocab)
            if plan is not None:
                parse_plan(serialize_plan(plan), vocab)


class TestBuildPrompt:
    def test_matches_golden_file(self, bundle, vocab):
        prompt = build_prompt(bundle, "pick the mug from the table and bring it to me")
        assert prompt == GOLDEN.read_text()

    def test_wrong_example_count_rejected(self, bundle):
        from servicebot.plan import PromptBundle
        broken = PromptBundle(bundle.system, bundle.examples[:4])
        with pytest.raises(PlanError, match="5 examples"):
            build_prompt(broken, "do something")

    def test_empty_instruction_rejected(self, bundle):
        with pytest.raises(PlanError, match="empty"):
            build_prompt(bundle, "   ")

    def test_bundle_examples_validate(self, vocab):
        bad = {"system": "s", "examples": [
            {"instruction": "x", "plan": {"chain_of_thought": "c", "actions": []}}
        ] * 5}
        with pytest.raises(PlanError):
            load_prompt_bundle(json.dumps(bad), vocab)


class _StubHandler(BaseHTTPRequestHandler):
    responses: list[str] = []
    calls: int = 0

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        assert "prompt" in body and "max_tokens" in body
        reply = type(self).responses[min(type(self).calls,
                                         len(type(self).responses) - 1)]
        type(self).calls += 1
        data = reply.encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.calls = 0
    yield f"http://127.0.0.1:{server.server_port}/completion"
    server.shutdown()


class TestLlmRequest:
    def test_valid_plan_accepted(self, stub_server, vocab):
        _StubHandler.responses = [GOOD_PLACE]
        plan = llm = None
        from servicebot.plan import llm_request
        plan = llm_request(LlmEndpoint(stub_server), "prompt", vocab)
        assert plan.actions[0] == Pick("mug", "table")

    def test_retries_after_malformed(self, stub_server, vocab):
        _StubHandler.responses = ["not json at all", "{\"oops\": 1}", GOOD_HANDOVER]
        from servicebot.plan import llm_request
        plan = llm_request(LlmEndpoint(stub_server, retries=2), "prompt", vocab)
        assert isinstance(plan.actions[1], Handover)
        assert _StubHandler.calls == 3

    def test_garbage_exhausts_retries(self, stub_server, vocab):
        _StubHandler.responses = ["garbage"]
        from servicebot.plan import llm_request
        with pytest.raises(LlmRejectionError):
            llm_request(LlmEndpoint(stub_server, retries=2), "prompt", vocab)
        assert _StubHandler.calls == 3

    def test_network_failure_distinct(self, vocab):
        from servicebot.plan import llm_request
        dead = LlmEndpoint("http://127.0.0.1:9/nothing", timeout_s=0.5)
        with pytest.raises(LlmNetworkError):
            llm_request(dead, "prompt", vocab)
