import json
import math

import pytest

from nopvis import (
    CccReport,
    CccWeights,
    ComplexityClass,
    ConnectionClass,
    InjectionManifest,
    InjectionSite,
    UndefinedMetricError,
    ccc,
    clarity,
    classify_complexity,
    classify_connection,
    complexity,
    connection,
    derive_manifest,
    mean_report,
)
from nopvis.smali import SmaliApp

# Oracle values computed straight from the definitions.
RATIO_5_2 = math.exp(5) / (math.exp(5) + 2)    # 0.986703...
RATIO_2_2 = math.exp(2) / (math.exp(2) + 2)    # 0.786986...
RATIO_4_12 = math.exp(4) / (math.exp(4) + 12)  # 0.819815...


def site(
    l_count,
    s_count,
    nop=False,
    comp=ComplexityClass.STRAIGHT_LINE,
    conn=ConnectionClass.NO_ATTACHMENT,
    method="f(II)I",
):
    return InjectionSite(
        method_ref=("La;", method),
        injected_instruction_count=l_count,
        original_instruction_count=s_count,
        contains_explicit_nop=nop,
        complexity=comp,
        connection=conn,
    )


def manifest(*sites):
    return InjectionManifest(app_id="app", sites=tuple(sites))


EX1 = manifest(site(3, 2, nop=True), site(3, 2, nop=True))
EX2 = manifest(
    site(5, 2, comp=ComplexityClass.LOOP_OR_NESTED_CONDITION,
         conn=ConnectionClass.MULTIPLE_ORIGINAL_VARIABLES),
    site(5, 2, comp=ComplexityClass.LOOP_OR_NESTED_CONDITION,
         conn=ConnectionClass.MULTIPLE_ORIGINAL_VARIABLES,
         method="g(II)I"),
)
EX3 = manifest(
    site(2, 2, comp=ComplexityClass.FUNCTION_OR_CONDITIONAL,
         conn=ConnectionClass.ONE_ORIGINAL_VARIABLE),
    site(2, 2, comp=ComplexityClass.FUNCTION_OR_CONDITIONAL,
         conn=ConnectionClass.ONE_ORIGINAL_VARIABLE,
         method="g(II)I"),
)


class TestClarity:
    def test_explicit_nop_forces_one(self):
        assert clarity(EX1) == 1.0

    def test_loop_example(self):
        assert clarity(EX2) == pytest.approx(RATIO_5_2, abs=1e-12)
        assert clarity(EX2) == pytest.approx(0.98, abs=0.01)

    def test_sio_average(self):
        m = manifest(
            *(site(4, 12, conn=ConnectionClass.MULTIPLE_ORIGINAL_VARIABLES,
                   method=f"m{i}(II)I") for i in range(5))
        )
        assert clarity(m) == pytest.approx(RATIO_4_12, abs=1e-12)
        assert clarity(m) == pytest.approx(0.82, abs=0.005)

    def test_mixed_nop_dominates(self):
        m = manifest(site(4, 12), site(1, 50, nop=True, method="g()V"))
        assert clarity(m) == 1.0

    def test_huge_injection_does_not_overflow(self):
        m = manifest(site(10_000, 3))
        assert clarity(m) == 1.0

    def test_empty_manifest(self):
        with pytest.raises(UndefinedMetricError):
            clarity(manifest())


class TestComplexity:
    def test_all_straight_line(self):
        assert complexity(EX1) == 0.0

    def test_loop_sites(self):
        assert complexity(EX2) == pytest.approx(0.66)

    def test_mixed_mean(self):
        m = manifest(
            site(1, 1),
            site(1, 1, comp=ComplexityClass.RECURSION_OR_COMPLEX, method="g()V"),
        )
        assert complexity(m) == pytest.approx(0.5)

    def test_empty_manifest(self):
        with pytest.raises(UndefinedMetricError):
            complexity(manifest())


class TestConnection:
    def test_one_variable_sites(self):
        assert connection(EX3) == pytest.approx(0.5)

    def test_multiple_sites(self):
        assert connection(EX2) == pytest.approx(1.0)

    def test_no_attachment(self):
        assert connection(EX1) == 0.0


class TestCcc:
    def test_ex1(self):
        assert ccc(EX1).ccc == pytest.approx(1.0, abs=0.01)

    def test_ex2(self):
        report = ccc(EX2)
        assert report.ccc == pytest.approx(0.46, abs=0.01)
        assert report.ccc == pytest.approx(0.4 * RATIO_5_2 + 0.2 * 0.34, abs=1e-12)

    def test_ex3(self):
        assert ccc(EX3).ccc == pytest.approx(0.65, abs=0.01)

    def test_report_consistency_enforced(self):
        with pytest.raises(ValueError):
            CccReport(c1=0.5, c2=0.0, c3=0.0, weights=CccWeights(), ccc=0.1)

    def test_custom_weights(self):
        w = CccWeights(1 / 3, 1 / 3, 1 / 3)
        report = ccc(EX1, w)
        assert report.ccc == pytest.approx(1.0)

    def test_mean_report(self):
        merged = mean_report([ccc(EX2), ccc(EX3)])
        assert merged.c1 == pytest.approx((RATIO_5_2 + RATIO_2_2) / 2)
        assert 0.0 <= merged.ccc <= 1.0


class TestWeights:
    def test_default(self):
        w = CccWeights()
        assert (w.w1, w.w2, w.w3) == (0.4, 0.2, 0.4)

    @pytest.mark.parametrize(
        "triple", [(0.5, 0.5, 0.5), (0.4, 0.2, 0.5), (1.1, -0.1, 0.0), (0.0, 0.0, 0.0)]
    )
    def test_invalid(self, triple):
        with pytest.raises(ValueError):
            CccWeights(*triple)


class TestSiteValidation:
    def test_zero_injected_rejected(self):
        with pytest.raises(ValueError):
            site(0, 2)

    def test_negative_original_rejected(self):
        with pytest.raises(ValueError):
            site(1, -1)


class TestManifestJson:
    def test_round_trip(self):
        text = EX2.to_json()
        back = InjectionManifest.from_json(text)
        assert back.app_id == EX2.app_id
        assert len(back.sites) == 2
        assert back.sites[0].complexity is ComplexityClass.LOOP_OR_NESTED_CONDITION
        assert ccc(back).ccc == pytest.approx(ccc(EX2).ccc)

    def test_schema_keys(self):
        payload = json.loads(EX1.to_json())
        assert set(payload) == {"app_id", "sites"}
        assert set(payload["sites"][0]) == {
            "method", "l_count", "s_count", "explicit_nop",
            "complexity_class", "connection_class",
        }

    def test_report_json_round_trip(self):
        report = ccc(EX3)
        back = CccReport.from_json(report.to_json())
        assert back == report


class TestClassifyComplexity:
    def test_nops_are_straight_line(self, demo_nops, demo_original):
        snippet = [ln for ln in demo_nops.methods[0].lines if ln.opcode == "nop"]
        assert classify_complexity(snippet) is ComplexityClass.STRAIGHT_LINE

    def test_loop_back_edge(self, demo_loop, demo_original):
        mod = demo_loop.methods[0]
        snippet = mod.lines[3:13]  # const through :end_loop
        assert classify_complexity(snippet) is ComplexityClass.LOOP_OR_NESTED_CONDITION

    def test_single_forward_conditional(self, demo_condition):
        mod = demo_condition.methods[0]
        snippet = mod.lines[3:8]
        assert classify_complexity(snippet) is ComplexityClass.FUNCTION_OR_CONDITIONAL

    def test_recursion_detected(self):
        from nopvis import parse_class

        cls = parse_class(
            ".method public static f(I)I\n    .registers 2\n"
            "    invoke-static {v1}, La;->f(I)I\n"
            "    move-result v0\n    return v0\n.end method\n"
        )
        body = cls.methods[0].instructions
        assert (
            classify_complexity(body, host_method_name="f")
            is ComplexityClass.RECURSION_OR_COMPLEX
        )

    def test_two_back_edges_are_complex(self):
        from nopvis import parse_line

        snippet = [
            parse_line("    :a"),
            parse_line("    goto :a"),
            parse_line("    :b"),
            parse_line("    goto :b"),
        ]
        assert classify_complexity(snippet) is ComplexityClass.RECURSION_OR_COMPLEX

    def test_empty_snippet_rejected(self):
        with pytest.raises(ValueError):
            classify_complexity([])


class TestClassifyConnection:
    def test_fresh_register_only(self, demo_original):
        from nopvis import parse_line

        host = demo_original.methods[0]
        snippet = [parse_line("    const v5, 0x1")]
        assert classify_connection(snippet, host) is ConnectionClass.NO_ATTACHMENT

    def test_one_original(self, demo_condition, demo_original):
        host = demo_original.methods[0]
        snippet = demo_condition.methods[0].lines[3:8]
        assert (
            classify_connection(snippet, host)
            is ConnectionClass.ONE_ORIGINAL_VARIABLE
        )

    def test_sio_block_multiple(self, demo_sio, demo_original):
        host = demo_original.methods[0]
        block = demo_sio.methods[0].lines[2:6]
        got = classify_connection(block, host, frame_registers=4)
        assert got is ConnectionClass.MULTIPLE_ORIGINAL_VARIABLES

    def test_writes_count(self, demo_original):
        from nopvis import parse_line

        host = demo_original.methods[0]
        snippet = [parse_line("    const v0, 0x7"), parse_line("    const v1, 0x8")]
        assert (
            classify_connection(snippet, host)
            is ConnectionClass.MULTIPLE_ORIGINAL_VARIABLES
        )


class TestEndToEndGoldens:
    """Listings parsed end to end, manifests recovered by diffing."""

    @pytest.fixture
    def reports(self, demo_original, demo_nops, demo_loop, demo_condition):
        orig = SmaliApp("demo", (demo_original,))
        out = {}
        for name, cls in (
            ("ex1", demo_nops), ("ex2", demo_loop), ("ex3", demo_condition),
        ):
            man = derive_manifest(orig, SmaliApp("demo", (cls,)))
            assert len(man.sites) == 2
            out[name] = ccc(man)
        return out

    def test_table_values(self, reports):
        assert reports["ex1"].ccc == pytest.approx(1.0, abs=0.01)
        assert reports["ex2"].ccc == pytest.approx(0.46, abs=0.01)
        assert reports["ex3"].ccc == pytest.approx(0.65, abs=0.01)

    def test_components(self, reports):
        assert reports["ex1"].c1 == 1.0
        assert reports["ex2"].c1 == pytest.approx(RATIO_5_2, abs=1e-9)
        assert reports["ex3"].c1 == pytest.approx(0.79, abs=0.005)
        assert [reports[k].c2 for k in ("ex1", "ex2", "ex3")] == pytest.approx(
            [0.0, 0.66, 0.33]
        )
        assert [reports[k].c3 for k in ("ex1", "ex2", "ex3")] == pytest.approx(
            [0.0, 1.0, 0.5]
        )
