import pytest

from nopvis import Verdict, check_equivalence, eval_method, parse_class
from nopvis.interp import (
    INT32_MAX,
    INT32_MIN,
    NonTerminationError,
    UnsupportedMethodError,
    infer_arg_registers,
)


def single_method(text):
    return parse_class(text).methods[0]


class TestEvalMethod:
    def test_add(self, demo_original):
        assert eval_method(demo_original.method("addTwoIntegers"), [2, 3]) == 5

    def test_sub(self, demo_original):
        assert eval_method(demo_original.method("subtractTwoIntegers"), [9, 4]) == 5

    def test_imi_injected(self, demo_imi):
        # Hand trace: v0=1; branch not taken; v0=v1-v2 then v1^v2, both dead;
        # final add-int overwrites v0 with the true sum.
        assert eval_method(demo_imi.methods[0], [2, 3]) == 5

    def test_loop_injected(self, demo_loop):
        # The injected loop rewrites v1/v2 only after v0 holds the sum.
        assert eval_method(demo_loop.methods[0], [2, 3]) == 5

    def test_sio_injected(self, demo_sio):
        assert eval_method(demo_sio.methods[0], [2, 3]) == 5

    def test_wraparound(self):
        m = single_method(
            ".method public static f(II)I\n    .registers 3\n"
            "    add-int v0, v1, v2\n    return v0\n.end method\n"
        )
        assert eval_method(m, [INT32_MAX, 1]) == INT32_MIN

    def test_mul_wraps(self):
        m = single_method(
            ".method public static f(II)I\n    .registers 3\n"
            "    mul-int v0, v1, v2\n    return v0\n.end method\n"
        )
        assert eval_method(m, [65536, 65536]) == 0

    def test_shifts_masked(self):
        m = single_method(
            ".method public static f(II)I\n    .registers 3\n"
            "    shl-int v0, v1, v2\n    return v0\n.end method\n"
        )
        assert eval_method(m, [1, 33]) == 2  # distance masked to 5 bits

    def test_return_void(self):
        m = single_method(
            ".method public static f()V\n    .registers 1\n"
            "    nop\n    return-void\n.end method\n"
        )
        assert eval_method(m, []) is None

    def test_unsupported_opcode_abstains(self):
        m = single_method(
            ".method public static f()V\n    .registers 1\n"
            "    invoke-static {}, La;->g()V\n    return-void\n.end method\n"
        )
        with pytest.raises(UnsupportedMethodError):
            eval_method(m, [])

    def test_step_budget(self):
        m = single_method(
            ".method public static f()I\n    .registers 1\n"
            "    :spin\n    goto :spin\n.end method\n"
        )
        with pytest.raises(NonTerminationError):
            eval_method(m, [], step_budget=1000)

    def test_arity_mismatch(self, demo_original):
        with pytest.raises(ValueError):
            eval_method(demo_original.methods[0], [1])

    def test_deterministic(self, demo_loop):
        runs = {eval_method(demo_loop.methods[0], [7, 9]) for _ in range(3)}
        assert len(runs) == 1


class TestArgBinding:
    def test_demo_binding(self, demo_original):
        assert infer_arg_registers(demo_original.methods[0]) == ("v1", "v2")

    def test_binding_survives_register_growth(self, demo_sio):
        # The grown frame (4 registers) must not displace the argument slots.
        assert infer_arg_registers(demo_sio.methods[0]) == ("v1", "v2")

    def test_p_names(self):
        m = single_method(
            ".method public static f(II)I\n    .registers 4\n"
            "    add-int v0, p0, p1\n    return v0\n.end method\n"
        )
        assert infer_arg_registers(m) == ("p0", "p1")
        assert eval_method(m, [20, 22]) == 42

    def test_unused_param_falls_back_to_declared_slot(self):
        m = single_method(
            ".method public static f(II)I\n    .registers 3\n"
            "    move v0, v1\n    return v0\n.end method\n"
        )
        assert infer_arg_registers(m) == ("v1", "v2")
        assert eval_method(m, [5, 9]) == 5


class TestCheckEquivalence:
    def test_nop_injection_equal(self, demo_original, demo_nops):
        res = check_equivalence(
            demo_original.method("addTwoIntegers"),
            demo_nops.method("addTwoIntegers"),
            trials=200,
            seed=3,
        )
        assert res.verdict is Verdict.EQUAL

    def test_sio_equal_over_1000_trials(self, demo_original, demo_sio):
        res = check_equivalence(
            demo_original.method("addTwoIntegers"),
            demo_sio.methods[0],
            trials=1000,
            seed=3,
        )
        assert res.verdict is Verdict.EQUAL

    def test_different_methods_not_equal(self, demo_original):
        res = check_equivalence(
            demo_original.method("addTwoIntegers"),
            demo_original.method("subtractTwoIntegers"),
            trials=50,
            seed=3,
        )
        assert res.verdict is Verdict.NOT_EQUAL
        assert res.witness is not None

    def test_unsupported_abstains(self, demo_original, demo_condition):
        res = check_equivalence(
            demo_original.method("addTwoIntegers"),
            demo_condition.method("addTwoIntegers"),
            trials=10,
            seed=3,
        )
        assert res.verdict is Verdict.ABSTAIN

    def test_trap_on_both_sides_matches(self):
        a = single_method(
            ".method public static f(II)I\n    .registers 3\n"
            "    div-int v0, v1, v2\n    return v0\n.end method\n"
        )
        b = single_method(
            ".method public static f(II)I\n    .registers 3\n"
            "    nop\n    div-int v0, v1, v2\n    return v0\n.end method\n"
        )
        res = check_equivalence(a, b, trials=100, seed=5)
        assert res.verdict is Verdict.EQUAL
