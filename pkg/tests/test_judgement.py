import hashlib
import random

import pytest
from hypothesis import given, settings, strategies as st

from selfwatch.judgement import (
    GENESIS, JudgementLog, LogIntegrityError, ScheduleEntry, UnknownPid, judge,
    parse_prop, run_schedule, verify_lines,
)
from selfwatch.judgement.ast import (
    Add, And, Cmp, Exists, FalseP, Forall, Implies, Lit, Mem, Mul, Not, Or, Pc, Reg,
    Sub, Tick, TrueP, Var, to_text,
)
from selfwatch.judgement.coding import MalformedCode, decode, deserialize, encode, serialize
from selfwatch.judgement.evaluate import (
    FreeVariable, QuantifierRangeTooLarge, evaluate, free_vars, subst,
)
from selfwatch.judgement.parser import PropSyntaxError, parse_term
from selfwatch.microvm import VmState, state_digest

from gen import random_ast, random_prop, random_state
from oracles import brute_force


class TestParse:
    def test_conjunction(self):
        assert parse_prop("reg(0) = 0 & pc < 10") == And(
            Cmp(Reg(Lit(0)), "=", Lit(0)), Cmp(Pc(), "<", Lit(10)))

    def test_exists(self):
        p = parse_prop("exists i in 0..7 . reg(i) != 0")
        assert p == Exists("i", Lit(0), Lit(7), Cmp(Reg(Var("i")), "!=", Lit(0)))

    def test_unbounded_quantifier_rejected(self):
        with pytest.raises(PropSyntaxError) as exc:
            parse_prop("forall x . x = x")
        assert "range" in str(exc.value)

    def test_precedence(self):
        p = parse_prop("!true & false | true -> false -> true")
        assert p == Implies(
            Or(And(Not(TrueP()), FalseP()), TrueP()),
            Implies(FalseP(), TrueP()))

    def test_term_precedence(self):
        assert parse_term("1 + 2 * 3 - 4") == Sub(Add(Lit(1), Mul(Lit(2), Lit(3))), Lit(4))

    def test_parenthesised_term_and_prop(self):
        assert parse_prop("(1 + 2) * 3 = 9") == Cmp(Mul(Add(Lit(1), Lit(2)), Lit(3)), "=", Lit(9))
        assert parse_prop("(true | false) & true") == And(Or(TrueP(), FalseP()), TrueP())
        assert parse_prop("(reg(0) = 0)") == Cmp(Reg(Lit(0)), "=", Lit(0))

    def test_mem_tick_hex(self):
        assert parse_prop("mem(0x10) >= tick") == Cmp(Mem(Lit(16)), ">=", Tick())

    @pytest.mark.parametrize("bad", [
        "", "reg(8) = 0", "pc <", "1 = 1 extra", "forall in 0..1 . true",
        "x == 1", "exists i in 0..3 reg(i) = 0", "18446744073709551616 = 0",
        "forall true in 0..1 . true",
    ])
    def test_syntax_errors(self, bad):
        with pytest.raises(PropSyntaxError):
            parse_prop(bad)

    def test_error_position(self):
        with pytest.raises(PropSyntaxError) as exc:
            parse_prop("pc = 1 & ")
        assert exc.value.position == 9

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32))
    def test_text_round_trip(self, seed):
        p = random_prop(random.Random(seed), 5)
        assert parse_prop(to_text(p)) == p


class TestCoding:
    def test_round_trip_example(self):
        p = parse_prop("5 <= 7")
        assert decode(encode(p)) == p

    def test_deterministic(self):
        assert encode(parse_prop("pc < 3 | tick = 0")) == encode(parse_prop("pc<3|tick=0"))

    def test_leading_tag_survives(self):
        code = encode(TrueP())
        assert code == 0x01 and decode(code) == TrueP()

    def test_literal_bytes(self):
        # Cmp '=' tag, Lit tag + varint(300), Lit tag + varint(0)
        data = serialize(Cmp(Lit(300), "=", Lit(0)))
        assert data[0] == 0x10 and data[2:4] == bytes([0xAC, 0x02])

    @pytest.mark.parametrize("blob", [
        b"", b"\x00", b"\xff", b"\x10\x20", b"\x01\x01",
        b"\x10\x20\x80\x00\x20\x00",          # non-minimal varint
        b"\x10\x20" + b"\xff" * 10 + b"\x01\x20\x00",  # literal too large
        b"\x10\x22\x20\x08\x20\x00",      # reg(8)
    ])
    def test_malformed(self, blob):
        with pytest.raises(MalformedCode):
            deserialize(blob)

    def test_negative_code(self):
        with pytest.raises(MalformedCode):
            decode(-1)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32))
    def test_random_round_trip(self, seed):
        p = random_ast(random.Random(seed))
        assert decode(encode(p)) == p


class TestSubst:
    def test_interval_pattern(self):
        p = subst(parse_prop("5 <= x & x <= 10"), "x", 7)
        assert p == parse_prop("5 <= 7 & 7 <= 10")

    def test_bound_variable_untouched(self):
        p = subst(parse_prop("exists x in 0..3 . x = y"), "y", 2)
        assert p == parse_prop("exists x in 0..3 . x = 2")

    def test_absent_variable_identity(self):
        p = parse_prop("reg(1) = 4")
        assert subst(p, "z", 9) == p

    def test_range_bounds_substituted_even_when_rebound(self):
        p = subst(parse_prop("forall x in 0..x . x = 0"), "x", 3)
        assert p == Forall("x", Lit(0), Lit(3), Cmp(Var("x"), "=", Lit(0)))

    def test_register_index_folds_to_a_register(self):
        assert subst(parse_prop("reg(x) = 0"), "x", 9) == parse_prop("reg(1) = 0")

    def test_free_vars(self):
        assert free_vars(parse_prop("forall i in 0..n . reg(i) = j")) == {"n", "j"}


class TestEvaluate:
    ZERO = VmState()

    @pytest.mark.parametrize("text,expected", [
        ("5 <= 7 & 7 <= 10", True),
        ("exists i in 0..7 . reg(i) != 0", False),
        ("forall a in 0..255 . mem(a) = 0", True),
        ("forall i in 3..2 . false", True),
        ("exists i in 3..2 . true", False),
        ("0 - 1 = 18446744073709551615", True),
        ("mem(256) = mem(0)", True),
        ("false -> false", True),
        ("true -> false", False),
    ])
    def test_examples(self, text, expected):
        assert evaluate(parse_prop(text), self.ZERO) is expected

    def test_reads_state(self):
        s = VmState(tick=7, pc=3, regs=(0, 0, 9, 0, 0, 0, 0, 0))
        assert evaluate(parse_prop("reg(2) = 9 & pc = 3 & tick = 7"), s)
        assert evaluate(parse_prop("reg(5 + 5) = 9"), s)  # computed index wraps mod 8
        with pytest.raises(ValueError):
            Reg(Lit(8))

    def test_free_variable_refused(self):
        with pytest.raises(FreeVariable):
            evaluate(parse_prop("false & x = 0"), self.ZERO)

    def test_range_cap(self):
        with pytest.raises(QuantifierRangeTooLarge):
            evaluate(parse_prop("forall i in 0..65536 . true"), self.ZERO)
        assert evaluate(parse_prop("exists i in 0..65535 . i = 65535"), self.ZERO)

    def test_environment(self):
        assert evaluate(parse_prop("x = 4"), self.ZERO, {"x": 4})

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32))
    def test_matches_brute_force(self, seed):
        rng = random.Random(seed)
        p, s = random_prop(rng, 4), random_state(rng)
        assert evaluate(p, s) == brute_force(p, s)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32), st.integers(0, 2**64 - 1))
    def test_subst_matches_environment(self, seed, value):
        rng = random.Random(seed)
        p, s = random_prop(rng, 4, free=("x",)), random_state(rng)
        value = rng.choice([value, value % 20])
        assert evaluate(subst(p, "x", value), s) == evaluate(p, s, {"x": value})


class TestLog:
    S = VmState()

    def test_genesis(self):
        log = JudgementLog()
        rec = judge("p", parse_prop("true"), log, {"p": self.S})
        assert rec.id == 1 and rec.prev_hash == GENESIS == bytes(32)

    def test_entry_hash_oracle(self):
        log = JudgementLog()
        rec = judge("p", parse_prop("pc = 0"), log, {"p": self.S})
        entry = f"1\t0\tp\t{rec.prop_code}\tyes\t{state_digest(self.S).hex()}".encode()
        assert rec.entry_hash == hashlib.sha256(bytes(32) + entry).digest()

    def test_identical_judgements_at_different_ticks(self):
        log = JudgementLog()
        p = parse_prop("true")
        a = judge("p", p, log, {"p": VmState(tick=1)})
        b = judge("p", p, log, {"p": VmState(tick=2)})
        assert a.id != b.id and a.entry_hash != b.entry_hash

    def test_unknown_pid(self):
        with pytest.raises(UnknownPid):
            judge("q", TrueP(), JudgementLog(), {"p": self.S})

    def test_refusal_kept_outside_chain(self):
        log = JudgementLog()
        with pytest.raises(QuantifierRangeTooLarge):
            judge("p", parse_prop("forall i in 0..100000 . true"), log, {"p": self.S})
        assert len(log) == 0 and len(log.refusals) == 1
        assert log.refusals[0].reason == "range-too-large"

    def test_tamper_detected_at_entry(self):
        log = JudgementLog()
        rng = random.Random(5)
        for i in range(100):
            judge("p", parse_prop(f"pc = {rng.randrange(2)}"), log, {"p": VmState(tick=i)})
        lines = log.export().splitlines()
        assert verify_lines(lines) == 100
        victim = 57
        fields = lines[victim - 1].split("\t")
        fields[4] = "no" if fields[4] == "yes" else "yes"
        lines[victim - 1] = "\t".join(fields)
        with pytest.raises(LogIntegrityError) as exc:
            verify_lines(lines)
        assert exc.value.line == victim

    def test_reordered_lines_fail(self):
        log = JudgementLog()
        for i in range(3):
            judge("p", TrueP(), log, {"p": VmState(tick=i)})
        lines = log.export().splitlines()
        with pytest.raises(LogIntegrityError):
            verify_lines([lines[1], lines[0], lines[2]])


class TestSchedule:
    A = ScheduleEntry("A", parse_prop("true"), 2)
    B = ScheduleEntry("B", parse_prop("false"), 3)
    STATES = {"p": VmState()}

    def test_both_due_in_order(self):
        recs = run_schedule([self.A, self.B], 6, JudgementLog(), self.STATES)
        assert [r.result for r in recs] == ["yes", "no"]

    def test_only_b(self):
        recs = run_schedule([self.A, self.B], 3, JudgementLog(), self.STATES)
        assert [r.result for r in recs] == ["no"]

    def test_neither(self):
        assert run_schedule([self.A, self.B], 5, JudgementLog(), self.STATES) == []

    def test_empty(self):
        assert run_schedule([], 6, JudgementLog(), self.STATES) == []

    def test_bad_entries(self):
        with pytest.raises(ValueError):
            ScheduleEntry("x", TrueP(), 0)
        with pytest.raises(ValueError):
            ScheduleEntry("x", TrueP(), 1, "fun")
