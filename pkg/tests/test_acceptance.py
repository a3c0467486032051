"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line (visible with ``pytest -rA`` or ``-s``).

Criteria covered:
  A1  golden metric values (demo scores, their component reference
      values, attack scores recomputed from stated components)
  A2  parser round-trip fixpoint on a 1,000-file corpus plus the demo
      listings
  A3  semantics preservation of all three attacks over 1,000 randomized
      trials per demo method plus integer edge cases
  A4  analytic gradients vs central finite differences, < 1e-4 relative
  A5  property bundle: score range, NOP dominance, clarity monotonicity,
      weight validation, greedy trace monotonicity, feature/problem
      re-extraction consistency
  A6  synthetic-corpus analogue of the real-data run: accuracy floors,
      strict recall reduction per attack, soft attack ordering (reported)
  A7  injected-length sweep: exactly monotone mean CCC and negative
      length/recall Spearman correlation (reported with its seed)

Known discrepancy in the reference figures: the loop demo's clarity
component is quoted as 0.98, but the defining formula gives
e^5/(e^5+2) = 0.9867 (which rounds to 0.99), outside the +-0.005
component tolerance. That single check is encoded as a strict expected
failure; the exact formula value is asserted separately at 1e-9.
"""

import math

import numpy as np
import pytest

from nopvis import (
    AttackKind,
    AttackVariant,
    CccWeights,
    ComplexityClass,
    ConnectionClass,
    DetectorConfig,
    InjectionManifest,
    InjectionSite,
    Verdict,
    build_attack_template,
    ccc,
    check_equivalence,
    clarity,
    default_candidate_ids,
    derive_manifest,
    extract_opcode_sequence,
    inject_imi,
    inject_simple_nop,
    inject_sio,
    init_model,
    loss_and_gradients,
    optimize_placeholders,
    parse_class,
    realize,
    run_attack_experiment,
    run_sweep,
    serialize_class,
    spearman,
    split_corpus,
    train,
)
from nopvis.corpus import generate_labeled_apps
from nopvis.detector import PARAM_GROUPS
from nopvis.experiment import evaluate, sequences_for
from nopvis.smali import SmaliApp

from conftest import fixture_text

ACCEPTANCE_SEED = 7
ACCEPTANCE_MAX_LEN = 256
APPS_PER_CLASS = 100  # 200 apps total


def report(criterion: str, ok: bool, note: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f"  [{note}]" if note else ""
    print(f"[acceptance] {status}  {criterion}{suffix}", flush=True)


def info(criterion: str, note: str) -> None:
    print(f"[acceptance] INFO  {criterion}  [{note}]", flush=True)


@pytest.fixture(scope="module")
def demo_reports(demo_original, demo_nops, demo_loop, demo_condition):
    orig = SmaliApp("demo", (demo_original,))
    out = {}
    for name, cls in (("ex1", demo_nops), ("ex2", demo_loop), ("ex3", demo_condition)):
        manifest = derive_manifest(orig, SmaliApp("demo", (cls,)))
        out[name] = ccc(manifest)
    return out


@pytest.fixture(scope="module")
def pipeline(table):
    """Corpus -> split -> trained surrogate, shared by A6/A7."""
    labeled = generate_labeled_apps(seed=ACCEPTANCE_SEED, apps_per_class=APPS_PER_CLASS)
    train_set, test_set = split_corpus(labeled, 0.2, seed=ACCEPTANCE_SEED)
    config = DetectorConfig(
        vocabulary_size=table.vocabulary_size,
        max_len=ACCEPTANCE_MAX_LEN,
        seed=ACCEPTANCE_SEED,
    )
    seqs, labels = sequences_for(train_set, table, ACCEPTANCE_MAX_LEN)
    model = train(
        init_model(config), list(zip(seqs, labels)),
        epochs=40, learning_rate=0.1, batch_size=32,
    )
    return model, train_set, test_set


class TestA1GoldenMetrics:
    def test_table_scores_end_to_end(self, demo_reports):
        got = {k: demo_reports[k].ccc for k in ("ex1", "ex2", "ex3")}
        want = {"ex1": 1.0, "ex2": 0.46, "ex3": 0.65}
        ok = all(abs(got[k] - want[k]) <= 0.01 for k in want)
        report("A1 demo scores CCC(EX1/EX2/EX3) = 1 / 0.46 / 0.65 (+-0.01)", ok,
               f"got {got['ex1']:.4f} / {got['ex2']:.4f} / {got['ex3']:.4f}")
        assert ok

    def test_components_at_stated_tolerance(self, demo_reports):
        checks = {
            "c1(ex1)": (demo_reports["ex1"].c1, 1.0),
            "c1(ex3)": (demo_reports["ex3"].c1, 0.79),
            "c2(ex1)": (demo_reports["ex1"].c2, 0.0),
            "c2(ex2)": (demo_reports["ex2"].c2, 0.66),
            "c2(ex3)": (demo_reports["ex3"].c2, 0.33),
            "c3(ex1)": (demo_reports["ex1"].c3, 0.0),
            "c3(ex2)": (demo_reports["ex2"].c3, 1.0),
            "c3(ex3)": (demo_reports["ex3"].c3, 0.5),
        }
        bad = {k: v for k, (v, want) in checks.items() if abs(v - want) > 0.005}
        report("A1 component reference values (+-0.005, see xfail for c1(ex2))", not bad,
               f"{len(checks)} checks" + (f", off: {bad}" if bad else ""))
        assert not bad

    def test_c1_ex2_exact_formula_value(self, demo_reports):
        exact = math.exp(5) / (math.exp(5) + 2)
        ok = abs(demo_reports["ex2"].c1 - exact) <= 1e-9
        report("A1 c1(ex2) equals e^5/(e^5+2) = 0.986703 (1e-9)", ok,
               f"got {demo_reports['ex2'].c1:.9f}")
        assert ok

    @pytest.mark.xfail(
        strict=True,
        reason="the quoted reference figure for the loop demo's clarity is 0.98, "
        "but the defining formula e^5/(e^5+2) = 0.9867 differs by 0.0067 > 0.005; "
        "the quoted figure is a rounding slip (0.9867 rounds to 0.99)",
    )
    def test_c1_ex2_printed_value_at_component_tolerance(self, demo_reports):
        got = demo_reports["ex2"].c1
        ok = abs(got - 0.98) <= 0.005
        report("A1 c1(ex2) vs quoted 0.98 (+-0.005)", ok,
               f"got {got:.4f}; known rounding slip in the quoted figure")
        assert ok

    def test_attack_scores_from_stated_components(self):
        def stated_manifest(complexity):
            sites = tuple(
                InjectionSite(
                    method_ref=("La;", f"m{i}(II)I"),
                    injected_instruction_count=4,
                    original_instruction_count=12,
                    contains_explicit_nop=False,
                    complexity=complexity,
                    connection=ConnectionClass.MULTIPLE_ORIGINAL_VARIABLES,
                )
                for i in range(4)
            )
            return InjectionManifest(app_id="stated", sites=sites)

        sio = ccc(stated_manifest(ComplexityClass.STRAIGHT_LINE))
        imi = ccc(stated_manifest(ComplexityClass.FUNCTION_OR_CONDITIONAL))
        ok = (
            abs(sio.c1 - 0.82) <= 0.005
            and abs(sio.ccc - 0.53) <= 0.01
            and abs(imi.ccc - 0.46) <= 0.01
        )
        report("A1 attack scores from stated components: 0.53 (sio), 0.46 (imi)", ok,
               f"c1={sio.c1:.4f}, sio={sio.ccc:.4f}, imi={imi.ccc:.4f}")
        assert ok


class TestA2RoundTrip:
    def test_thousand_file_fixpoint(self):
        labeled = generate_labeled_apps(
            seed=ACCEPTANCE_SEED + 1, apps_per_class=50, classes_per_app=10
        )
        files = 0
        failures = 0
        for app, _ in labeled:
            for cls in app.classes:
                files += 1
                if parse_class(serialize_class(cls)) != cls:
                    failures += 1
        listings = [
            "demo_original.smali", "demo_nops.smali", "demo_loop.smali",
            "demo_condition.smali", "demo_sio.smali", "demo_imi.smali",
            "demo_class.smali",
        ]
        for name in listings:
            files += 1
            cls = parse_class(fixture_text(name))
            if parse_class(serialize_class(cls)) != cls:
                failures += 1
        ok = files >= 1000 and failures == 0
        report("A2 parser round-trip fixpoint, corpus + listings", ok,
               f"{files} files, {failures} failures")
        assert ok


class TestA3SemanticsPreservation:
    def test_all_attacks_all_demo_methods(self, demo_original):
        mismatches = 0
        checked = 0
        for method_name in ("addTwoIntegers", "subtractTwoIntegers"):
            method = demo_original.method(method_name)
            variants = {
                "nop": inject_simple_nop(method, 3)[0],
                "sio": inject_sio(method, "sub-int", "xor-int")[0],
                "imi": inject_imi(method, "sub-int", "xor-int")[0],
            }
            for modified in variants.values():
                checked += 1
                res = check_equivalence(
                    method, modified, trials=1000, seed=ACCEPTANCE_SEED
                )
                if res.verdict is not Verdict.EQUAL:
                    mismatches += 1
        ok = mismatches == 0 and checked == 6
        report("A3 semantics preserved: 3 attacks x 2 demo methods x 1000 trials",
               ok, f"{checked} pairs, {mismatches} mismatches")
        assert ok


class TestA4Gradients:
    def test_finite_difference_agreement(self):
        config = DetectorConfig(
            vocabulary_size=16, embedding_dim=4, conv_filters=6,
            kernel_width=3, hidden_dim=8, max_len=24, seed=ACCEPTANCE_SEED,
        )
        model = init_model(config)
        rng = np.random.default_rng(ACCEPTANCE_SEED)
        batch = [
            (rng.integers(0, 16, size=int(rng.integers(8, 24))).tolist(),
             int(rng.integers(0, 2)))
            for _ in range(8)
        ]
        _, grads = loss_and_gradients(model, batch)
        h = 1e-4
        worst = 0.0
        per_group = 0
        for name, arr in model.arrays().items():
            flat = arr.ravel()
            g = grads[name].ravel()
            picks = rng.choice(flat.size, size=min(20, flat.size), replace=False)
            per_group = max(per_group, len(picks))
            for i in picks:
                orig = flat[i]
                flat[i] = orig + h
                lp, _ = loss_and_gradients(model, batch)
                flat[i] = orig - h
                lm, _ = loss_and_gradients(model, batch)
                flat[i] = orig
                numeric = (lp - lm) / (2 * h)
                worst = max(
                    worst, abs(numeric - g[i]) / max(abs(numeric), abs(g[i]), 1e-6)
                )
        ok = worst < 1e-4
        report("A4 analytic vs central-difference gradients (< 1e-4 rel)", ok,
               f"{len(PARAM_GROUPS)} groups, max rel err {worst:.2e}")
        assert ok


class TestA5Properties:
    def test_metric_properties(self):
        rng = np.random.default_rng(ACCEPTANCE_SEED)
        ok = True
        for _ in range(200):
            sites = tuple(
                InjectionSite(
                    method_ref=("La;", f"m{i}"),
                    injected_instruction_count=int(rng.integers(1, 40)),
                    original_instruction_count=int(rng.integers(0, 200)),
                    contains_explicit_nop=bool(rng.integers(0, 2)),
                    complexity=list(ComplexityClass)[int(rng.integers(4))],
                    connection=list(ConnectionClass)[int(rng.integers(3))],
                )
                for i in range(int(rng.integers(1, 10)))
            )
            manifest = InjectionManifest(app_id="p", sites=sites)
            rep = ccc(manifest)
            ok &= all(0.0 <= v <= 1.0 for v in (rep.c1, rep.c2, rep.c3, rep.ccc))
            if any(s.contains_explicit_nop for s in sites):
                ok &= clarity(manifest) == 1.0
        report("A5 score range [0,1] and explicit-NOP dominance (200 cases)", ok)
        assert ok

    def test_clarity_monotone(self):
        import dataclasses

        base = InjectionManifest(
            app_id="m",
            sites=(
                InjectionSite(
                    method_ref=("La;", "f"), injected_instruction_count=3,
                    original_instruction_count=9, contains_explicit_nop=False,
                    complexity=ComplexityClass.STRAIGHT_LINE,
                    connection=ConnectionClass.NO_ATTACHMENT,
                ),
            ),
        )
        values = []
        for extra in range(8):
            grown = InjectionManifest(
                app_id="m",
                sites=tuple(
                    dataclasses.replace(
                        s, injected_instruction_count=3 + extra
                    )
                    for s in base.sites
                ),
            )
            values.append(ccc(grown).ccc)
        ok = all(b > a for a, b in zip(values, values[1:]))
        report("A5 clarity (and CCC) strictly monotone in injected size", ok)
        assert ok

    def test_weight_validation(self):
        bad = [(0.5, 0.5, 0.5), (0.2, 0.2, 0.2), (1.2, -0.2, 0.0)]
        caught = 0
        for triple in bad:
            try:
                CccWeights(*triple)
            except ValueError:
                caught += 1
        CccWeights(0.4, 0.2, 0.4)
        ok = caught == len(bad)
        report("A5 weights-sum validation rejects off-simplex triples", ok)
        assert ok

    def test_greedy_trace_monotone_and_consistency(self, pipeline, table):
        model, _, test_set = pipeline
        malware = [app for app, label in test_set if label == 1][:5]
        trace_ok = True
        consistent = True
        for app in malware:
            template = build_attack_template(
                app, AttackVariant(kind=AttackKind.SIO), table,
                max_len=ACCEPTANCE_MAX_LEN,
            )
            assignment, trace = optimize_placeholders(model, template, threshold=0.0)
            series = [trace.initial_score] + [s.score_after for s in trace.steps]
            trace_ok &= all(b <= a + 1e-12 for a, b in zip(series, series[1:]))
            modified, _ = realize(app, template, assignment, table)
            re_extracted = extract_opcode_sequence(modified, table, ACCEPTANCE_MAX_LEN)
            consistent &= re_extracted.ids == template.with_assignment(assignment)
        ok = trace_ok and consistent
        report("A5 greedy trace nonincreasing; re-extraction == template", ok,
               f"{len(malware)} apps")
        assert ok


class TestA6SyntheticAnalogue:
    def test_training_floors(self, pipeline, table):
        model, train_set, test_set = pipeline
        seqs, labels = sequences_for(train_set, table, ACCEPTANCE_MAX_LEN)
        train_row = evaluate(model, list(zip(seqs, labels)))
        tseqs, tlabels = sequences_for(test_set, table, ACCEPTANCE_MAX_LEN)
        test_row = evaluate(model, list(zip(tseqs, tlabels)))
        ok = train_row.accuracy >= 0.95 and test_row.accuracy >= 0.90
        report("A6 surrogate accuracy >= 0.95 train / >= 0.90 test (200 apps)", ok,
               f"train {train_row.accuracy:.3f}, test {test_row.accuracy:.3f}")
        assert ok

    def test_attacks_strictly_reduce_recall(self, pipeline, table):
        model, _, test_set = pipeline
        tseqs, tlabels = sequences_for(test_set, table, ACCEPTANCE_MAX_LEN)
        clean = evaluate(model, list(zip(tseqs, tlabels)))
        recalls = {}
        cccs = {}
        for kind, extra in (
            (AttackKind.SIMPLE_NOP, {"nop_count": 2}),
            (AttackKind.SIO, {}),
            (AttackKind.IMI, {}),
        ):
            outcome = run_attack_experiment(
                model, test_set, AttackVariant(kind=kind, **extra)
            )
            recalls[kind.value] = outcome.metrics.recall
            cccs[kind.value] = outcome.mean_ccc.ccc
        ok = all(r < clean.recall for r in recalls.values())
        report("A6 every attack strictly reduces recall vs clean", ok,
               f"clean {clean.recall:.3f} -> " + ", ".join(
                   f"{k} {v:.3f}" for k, v in recalls.items()))
        soft = recalls["sio"] <= recalls["imi"] <= recalls["nop"]
        info("A6 soft ordering recall(sio) <= recall(imi) <= recall(nop)",
             f"{'holds' if soft else 'does not hold'}: "
             + ", ".join(f"{k}={v:.3f}" for k, v in recalls.items())
             + "; reported, not asserted")
        info("A6 pipeline mean CCC per attack",
             ", ".join(f"{k}={v:.3f}" for k, v in cccs.items()))
        assert ok


class TestA7Sweep:
    def test_monotone_ccc_and_negative_spearman(self, pipeline):
        model, _, test_set = pipeline
        lengths = [2, 4, 8, 16]
        rows = run_sweep(model, test_set, lengths)
        cccs = [r.mean_ccc for r in rows]
        monotone = all(b > a for a, b in zip(cccs, cccs[1:]))
        formula_ok = all(
            abs(r.mean_ccc - (0.4 / (1.0 + 12 * math.exp(-r.injected_length)) + 0.2))
            <= 1e-9
            for r in rows
        )
        rho = spearman(lengths, [r.recall for r in rows])
        ok = monotone and formula_ok and rho < 0
        report("A7 sweep: mean CCC exactly monotone, Spearman(length, recall) < 0",
               ok, f"seed {ACCEPTANCE_SEED}, rho {rho:.3f}, ccc "
               + "->".join(f"{c:.3f}" for c in cccs))
        assert ok


class TestOptimizerFloor:
    def test_majority_of_malware_evaded(self, pipeline, table):
        model, _, test_set = pipeline
        malware = [app for app, label in test_set if label == 1]
        evaded = 0
        for app in malware:
            template = build_attack_template(
                app, AttackVariant(kind=AttackKind.SIO), table,
                max_len=ACCEPTANCE_MAX_LEN,
            )
            _, trace = optimize_placeholders(
                model, template, default_candidate_ids(table), threshold=0.5
            )
            evaded += trace.evaded
        ok = evaded / len(malware) > 0.5
        report("A6 optimizer evades the detector on a majority of malware", ok,
               f"{evaded}/{len(malware)} under threshold")
        assert ok
