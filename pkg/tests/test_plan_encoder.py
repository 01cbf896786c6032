"""Phrase splitting, lexicon matching, negation scope, and chain encoding."""
import random

import pytest

from conftest import DEMO_PLAN
from plancheck.logic import single_path
from plancheck.plan_encoder import (
    EmptyPlanError,
    NoPhrasesError,
    encode,
    parse_phrases,
)


class TestParsePhrases:
    def test_demo_plan_matches(self, driving_vocab):
        phrases = parse_phrases(DEMO_PLAN, driving_vocab)
        assert [p.matched for p in phrases] == [
            ("wait", "red_light"),
            ("wait", "car"),
            ("turn_left", "green_light"),
        ]
        assert [p.index for p in phrases] == [1, 2, 3]

    def test_negation_suppresses_nearby_match_only(self, driving_vocab):
        phrases = parse_phrases("1. There is no stop sign, move forward.", driving_vocab)
        assert [p.matched for p in phrases] == [("move_forward",)]

    def test_negation_cue_contraction(self, driving_vocab):
        phrases = parse_phrases("1. Don't wait, turn right.", driving_vocab)
        assert phrases[0].matched == ("turn_right",)

    def test_negation_window_within_clause(self, driving_vocab):
        # the cue is 4 tokens before the match: outside the default window
        phrases = parse_phrases("1. There is no reason you should wait here.", driving_vocab)
        assert phrases[0].matched == ("wait",)

    def test_negation_window_configurable(self, driving_vocab):
        text = "1. There is no reason you should wait here."
        assert parse_phrases(text, driving_vocab, negation_window=6)[0].matched == ()

    def test_empty_plan(self, driving_vocab):
        with pytest.raises(EmptyPlanError):
            parse_phrases("   \n ", driving_vocab)

    def test_no_phrases(self, driving_vocab):
        with pytest.raises(NoPhrasesError):
            parse_phrases("...", driving_vocab)

    def test_sentence_splitting_without_numbering(self, driving_vocab):
        phrases = parse_phrases("Wait at the red light. Turn right.", driving_vocab)
        assert [p.matched for p in phrases] == [("wait", "red_light"), ("turn_right",)]

    def test_inline_numbered_steps(self, driving_vocab):
        phrases = parse_phrases("1. Wait at the red light. 2. Turn right.", driving_vocab)
        assert [p.matched for p in phrases] == [("wait", "red_light"), ("turn_right",)]

    def test_longest_match_first(self, driving_vocab):
        # "opposite cars" must alias to car, never split into pieces
        phrases = parse_phrases("1. Wait for opposite cars.", driving_vocab)
        assert phrases[0].matched == ("wait", "car")

    def test_singular_opposite_car_is_its_own_proposition(self, driving_vocab):
        phrases = parse_phrases("1. Wait for the opposite car.", driving_vocab)
        assert phrases[0].matched == ("wait", "opposite_car")

    def test_matches_never_cross_clause_boundaries(self, driving_vocab):
        phrases = parse_phrases("1. Stop, sign the form.", driving_vocab)
        assert "stop_sign" not in phrases[0].matched

    def test_alias_soundness(self, driving_vocab):
        plans = [
            "1. Go straight at the traffic light.",
            "1. Wait for pedestrians.\n2. Turn left at the green light.",
            "1. Move straight ahead.",
        ]
        for plan in plans:
            for phrase in parse_phrases(plan, driving_vocab):
                tokens = phrase.raw.lower().replace(".", "").split()
                for pid in phrase.matched:
                    prop = driving_vocab.proposition(pid)
                    assert any(
                        all(word in tokens for word in surface.lower().split())
                        for surface in prop.surfaces
                    ), (pid, phrase.raw)


class TestEncode:
    def test_demo_reproduction(self, driving_vocab):
        structure = encode(DEMO_PLAN, driving_vocab, {"car", "truck"})
        assert structure.states == ("q0", "q1", "q2", "q3", "q_done")
        assert structure.initial == frozenset({"q0"})
        assert structure.labeling["q0"] == frozenset({"car"})
        assert structure.labeling["q1"] == frozenset({"wait", "red_light"})
        assert structure.labeling["q2"] == frozenset({"wait", "car"})
        assert structure.labeling["q3"] == frozenset({"turn_left", "green_light"})
        assert structure.labeling["q_done"] == frozenset()
        assert structure.transitions == frozenset(
            {("q0", "q1"), ("q1", "q2"), ("q2", "q3"), ("q3", "q_done"), ("q_done", "q_done")}
        )

    def test_unmatched_phrase_keeps_empty_label(self, driving_vocab):
        structure = encode("1. Whistle a tune.", driving_vocab, set())
        assert structure.states == ("q0", "q1", "q_done")
        assert structure.labeling["q1"] == frozenset()

    def test_deterministic(self, driving_vocab):
        first = encode(DEMO_PLAN, driving_vocab, {"car", "truck"})
        second = encode(DEMO_PLAN, driving_vocab, {"truck", "car"})
        assert first == second

    def test_state_count_invariant(self, driving_vocab):
        rng = random.Random(11)
        steps = ["Wait.", "Move forward.", "Turn left.", "Turn right.", "Wait for the car."]
        for _ in range(25):
            k = rng.randint(1, 5)
            plan = "\n".join(f"{i+1}. {rng.choice(steps)}" for i in range(k))
            structure = encode(plan, driving_vocab, set())
            phrases = parse_phrases(plan, driving_vocab)
            assert len(structure.states) == len(phrases) + 2
            loops = [t for t in structure.transitions if t[0] == t[1]]
            assert loops == [("q_done", "q_done")]
            single_path(structure)  # never raises on encoder output

    def test_observation_monotonicity(self, driving_vocab):
        small = encode(DEMO_PLAN, driving_vocab, {"car"})
        large = encode(DEMO_PLAN, driving_vocab, {"car", "pedestrian", "truck"})
        assert small.labeling["q0"] <= large.labeling["q0"]
        for state in small.states:
            if state != "q0":
                assert small.labeling[state] == large.labeling[state]

    def test_objects_map_to_propositions_by_name(self, driving_vocab):
        structure = encode("1. Wait.", driving_vocab, {"traffic light", "bus", "truck"})
        assert structure.labeling["q0"] == frozenset({"traffic_light"})

    def test_validates_against_vocabulary(self, driving_vocab):
        structure = encode(DEMO_PLAN, driving_vocab, {"car", "truck"})
        structure.validate(driving_vocab)

    def test_parse_errors_propagate(self, driving_vocab):
        with pytest.raises(EmptyPlanError):
            encode("", driving_vocab, set())
