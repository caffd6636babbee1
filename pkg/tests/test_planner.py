import json

import pytest

from helpers import make_instance, type3_plan, valid_plans
from hypothesis import given
from mrag.dataset import load_instances
from mrag.errors import MissingGoldPlan, PlannerFailure, PlanUnparseable
from mrag.mocks import build_mock_registry
from mrag.plan import (
    PROFILE_LENIENT,
    PROFILE_STRICT,
    ToolKind,
    archetype_of,
    parse_plan_text,
    serialize_plan,
    tool_usage,
    validate_plan,
)
from mrag.planner import (
    MockPlannerBackend,
    PlannerConfig,
    PolicyAction,
    answer_immediately,
    build_planner_prompt,
    fixed_search_policy,
    plan_iterative,
    plan_one_pass,
    plan_replay,
    plan_static,
    respond_only_plan,
)
from mrag.toolkit import CallCounters


class ScriptedPlanner:
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, prompt, image=None):
        self.calls += 1
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


def extract_plan_objects(text):
    """All decodable plan objects embedded in a prompt."""
    decoder = json.JSONDecoder()
    plans = []
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text, idx)
            if isinstance(obj, dict) and isinstance(obj.get("steps"), list):
                plans.append(obj)
        except json.JSONDecodeError:
            pass
        idx = text.find("{", idx + 1)
    return plans


@pytest.fixture
def instance():
    return make_instance(question="Who is the current head coach of this club?")


class TestOnePass:
    def test_single_call_on_clean_output(self, instance):
        backend = ScriptedPlanner([serialize_plan(type3_plan())])
        counters = CallCounters()
        plan = plan_one_pass(instance, PlannerConfig(), backend, counters)
        assert plan == type3_plan()
        assert counters.planner_calls == 1

    def test_retry_arithmetic(self, instance):
        backend = ScriptedPlanner(
            ["garbage", "more garbage", serialize_plan(type3_plan())]
        )
        counters = CallCounters()
        config = PlannerConfig(max_repair_attempts=2)
        plan = plan_one_pass(instance, config, backend, counters)
        assert validate_plan(plan, profile=PROFILE_STRICT).valid
        assert counters.planner_calls == 3

    def test_invalid_plan_triggers_repair(self, instance):
        bad = '{"steps":[{"tool":"rerank","args":{"question":"$input.question","snippets":"$step.0"}}]}'
        backend = ScriptedPlanner([bad, serialize_plan(type3_plan())])
        counters = CallCounters()
        plan = plan_one_pass(instance, PlannerConfig(), backend, counters)
        assert counters.planner_calls == 2
        assert plan == type3_plan()

    def test_fallback_respond_only(self, instance):
        backend = ScriptedPlanner(["junk", "junk", "junk"])
        counters = CallCounters()
        plan = plan_one_pass(
            instance, PlannerConfig(max_repair_attempts=2), backend, counters
        )
        assert plan == respond_only_plan()
        assert counters.planner_calls == 3

    def test_fallback_error(self, instance):
        backend = ScriptedPlanner(["junk"])
        with pytest.raises(PlanUnparseable):
            plan_one_pass(
                instance,
                PlannerConfig(max_repair_attempts=0, fallback="error"),
                backend,
                CallCounters(),
            )

    def test_endpoint_error(self, instance):
        backend = ScriptedPlanner([RuntimeError("socket closed")])
        with pytest.raises(PlannerFailure):
            plan_one_pass(instance, PlannerConfig(), backend, CallCounters())

    def test_repair_prompt_mentions_reason(self, instance):
        prompts = []

        class Recorder:
            def complete(self, prompt, image=None):
                prompts.append(prompt)
                if len(prompts) == 1:
                    return "no plan here"
                return serialize_plan(respond_only_plan())

        plan_one_pass(instance, PlannerConfig(), Recorder(), CallCounters())
        assert len(prompts) == 2
        assert "could not be used" in prompts[1]
        assert prompts[1].startswith(prompts[0])

    def test_mock_planner_echoes_gold_plans(self, mini_path):
        instances = load_instances(mini_path)
        backend = MockPlannerBackend.from_instances(instances)
        for instance in instances:
            counters = CallCounters()
            plan = plan_one_pass(instance, PlannerConfig(), backend, counters)
            assert counters.planner_calls == 1
            assert plan == instance.gold_plan


class TestPrompts:
    def test_sft_has_no_exemplars(self, instance):
        prompt = build_planner_prompt(instance, "sft")
        assert extract_plan_objects(prompt) == []
        assert instance.question in prompt

    def test_fewshot_has_one_exemplar_per_archetype(self, instance):
        prompt = build_planner_prompt(instance, "fewshot")
        plans = [parse_plan_text(json.dumps(obj)) for obj in extract_plan_objects(prompt)]
        assert len(plans) == 4
        assert sorted(archetype_of(p) for p in plans) == [1, 2, 3, 4]

    def test_deterministic(self, instance):
        assert build_planner_prompt(instance, "fewshot") == build_planner_prompt(
            instance, "fewshot"
        )
        assert build_planner_prompt(instance, "sft") == build_planner_prompt(
            instance, "sft"
        )


class TestReplayAndStatic:
    def test_replay_identity(self):
        instance = make_instance(gold_plan=type3_plan())
        assert plan_replay(instance) is instance.gold_plan

    def test_replay_missing(self):
        with pytest.raises(MissingGoldPlan):
            plan_replay(make_instance())

    def test_static_composition(self, instance):
        plan = plan_static(instance)
        assert [s.tool for s in plan.steps] == [
            ToolKind.IMAGE_SEARCH,
            ToolKind.REQUERY,
            ToolKind.TEXT_SEARCH,
            ToolKind.RERANK,
            ToolKind.RESPOND,
        ]
        assert tool_usage(plan) == set(ToolKind)

    def test_static_identical_across_instances(self):
        a = plan_static(make_instance(iid="a", question="q1"))
        b = plan_static(make_instance(iid="b", question="q2"))
        assert a == b
        assert validate_plan(a, profile=PROFILE_LENIENT).valid


class TestIterative:
    def test_two_searches_then_answer(self, instance):
        registry = build_mock_registry()
        counters = CallCounters()
        outcome = plan_iterative(
            instance,
            fixed_search_policy([ToolKind.IMAGE_SEARCH, ToolKind.TEXT_SEARCH]),
            max_rounds=5,
            registry=registry,
            counters=counters,
        )
        assert counters == CallCounters(search_calls=2, mllm_calls=2, planner_calls=3)
        assert not outcome.max_rounds_exceeded
        assert outcome.final_answer is not None
        assert [s.tool for s in outcome.plan.steps] == [
            ToolKind.IMAGE_SEARCH,
            ToolKind.TEXT_SEARCH,
            ToolKind.RESPOND,
        ]
        assert validate_plan(outcome.plan, profile=PROFILE_LENIENT).valid

    def test_answer_immediately(self, instance):
        counters = CallCounters()
        outcome = plan_iterative(
            instance, answer_immediately, 5, build_mock_registry(), counters
        )
        assert counters == CallCounters(search_calls=0, mllm_calls=0, planner_calls=1)
        assert outcome.plan == respond_only_plan()

    def test_max_rounds_forces_answer(self, instance):
        counters = CallCounters()
        outcome = plan_iterative(
            instance,
            fixed_search_policy([ToolKind.IMAGE_SEARCH] ),
            max_rounds=1,
            registry=build_mock_registry(),
            counters=counters,
        )
        assert outcome.max_rounds_exceeded
        assert counters == CallCounters(search_calls=1, mllm_calls=1, planner_calls=1)
        assert outcome.final_answer is not None

    def test_policy_answer_text_wins(self, instance):
        policy_calls = []

        def policy(state):
            policy_calls.append(state.round_index)
            return PolicyAction.answer("forty-two")

        outcome = plan_iterative(
            instance, policy, 3, build_mock_registry(), CallCounters()
        )
        assert outcome.final_answer == "forty-two"
        assert policy_calls == [1]

    def test_search_actions_must_be_search_tools(self):
        with pytest.raises(ValueError):
            PolicyAction.search(ToolKind.RESPOND)

    def test_failed_search_degrades_loop(self, instance):
        registry = build_mock_registry(fail_kinds=[ToolKind.IMAGE_SEARCH])
        counters = CallCounters()
        outcome = plan_iterative(
            instance,
            fixed_search_policy([ToolKind.IMAGE_SEARCH, ToolKind.TEXT_SEARCH]),
            max_rounds=5,
            registry=registry,
            counters=counters,
        )
        assert outcome.degraded
        # both searches attempted, but only the text round earned a digest
        assert counters == CallCounters(search_calls=2, mllm_calls=1, planner_calls=3)
        assert outcome.final_answer is not None

    def test_failed_digest_degrades_loop(self, instance):
        registry = build_mock_registry(fail_kinds=[ToolKind.RESPOND])
        counters = CallCounters()
        outcome = plan_iterative(
            instance,
            fixed_search_policy([ToolKind.TEXT_SEARCH]),
            max_rounds=5,
            registry=registry,
            counters=counters,
        )
        assert outcome.degraded
        assert counters == CallCounters(search_calls=1, mllm_calls=1, planner_calls=2)
        assert outcome.final_answer is None


class TestProfileClaims:
    @given(valid_plans())
    def test_one_pass_accepts_any_strict_plan(self, plan):
        instance = make_instance()
        backend = ScriptedPlanner([serialize_plan(plan)])
        produced = plan_one_pass(instance, PlannerConfig(), backend, CallCounters())
        assert produced == plan
        assert validate_plan(produced, profile=PROFILE_STRICT).valid
