import numpy as np
import pytest

from rareclass.coverage import (
    CoverProgram, CoverageError, build_program, check_feasible, coverage_report,
    enumerate_exact, report_text, report_words_csv, solve_exact, solve_greedy,
)
from rareclass.dataset import Doc, LabeledCorpus, MAJORITY, RARE
from rareclass.featurize import Vocabulary


def vocab_of(terms):
    return Vocabulary(terms=tuple(terms), df=tuple(1 for _ in terms), n_docs_fitted=1)


def random_program(rng, d, K, docs_per_block, majority_docs, density=0.35):
    blocks = tuple(
        (rng.random((docs_per_block, d)) < density).astype(np.int8)
        for _ in range(K))
    N = (rng.random((majority_docs, d)) < density).astype(np.int8)
    terms = tuple(f"t{chr(97 + j)}" for j in range(d))
    return CoverProgram(R_blocks=blocks, N=N, terms=terms)


class TestBuildProgram:
    def test_occurrence_thresholds_count(self):
        docs = (Doc("flood flood", RARE, 1), Doc("calm", MAJORITY))
        corpus = LabeledCorpus(docs=docs, K=1)
        p = build_program(corpus, vocab_of(["flood", "fire"]))
        assert p.R_blocks[0].tolist() == [[1, 0]]
        assert p.N.tolist() == [[0, 0]]

    def test_block_structure(self, tiny_corpus):
        vocab = vocab_of(["flood", "fire", "market"])
        p = build_program(tiny_corpus, vocab)
        assert p.K == 2
        assert len(p.R_blocks[0]) == 2 and len(p.R_blocks[1]) == 2
        assert len(p.N) == 2

    def test_hand_counted_matrix(self):
        docs = (
            Doc("storm surge storm", RARE, 1),
            Doc("surge warning", RARE, 1),
            Doc("quake hits", RARE, 2),
            Doc("calm surge market", MAJORITY),
        )
        corpus = LabeledCorpus(docs=docs, K=2)
        p = build_program(corpus, vocab_of(["storm", "surge", "quake"]))
        assert p.R_blocks[0].tolist() == [[1, 1, 0], [0, 1, 0]]
        assert p.R_blocks[1].tolist() == [[0, 0, 1]]
        assert p.N.tolist() == [[0, 1, 0]]

    def test_empty_subclass_error(self):
        docs = (Doc("aa", RARE, 1), Doc("bb", MAJORITY))
        corpus = LabeledCorpus(docs=docs, K=1)
        bad = LabeledCorpus(docs=docs, K=1)
        p = build_program(corpus, vocab_of(["aa"]))
        assert p.K == 1
        # K claims 2 subclasses but subclass 2 has no docs
        with pytest.raises(ValueError):
            LabeledCorpus(docs=docs, K=2)

    def test_binary_invariant_enforced(self):
        with pytest.raises(CoverageError, match="binary"):
            CoverProgram(R_blocks=(np.array([[2]]),), N=np.zeros((0, 1), dtype=np.int8),
                         terms=("a",))


class TestSolveExact:
    def test_single_word_world(self):
        # one word covering every rare doc: the separate general/subclass
        # coverage constraints force exonerations on whichever side goes
        # without it, and the v0-vs-v1 tie breaks toward v0
        docs = (Doc("aa one", RARE, 1), Doc("aa two", RARE, 1), Doc("bb", MAJORITY))
        corpus = LabeledCorpus(docs=docs, K=1)
        p = build_program(corpus, vocab_of(["aa"]))
        sol = solve_exact(p)
        assert sol.objective == 3 == enumerate_exact(p)
        assert sol.o == 2 and sol.alpha == sol.beta == 0
        assert sol.v0 == frozenset({0})
        assert sol.optimal

    def test_uncoverable_doc_forces_exoneration(self):
        docs = (Doc("zzz", RARE, 1), Doc("aa", RARE, 1), Doc("bb", MAJORITY))
        corpus = LabeledCorpus(docs=docs, K=1)
        p = build_program(corpus, vocab_of(["aa"]))
        sol = solve_exact(p)
        assert sol.o >= 2          # once in R_1 coverage, once in v0 coverage

    def test_caps_enforced(self):
        rng = np.random.default_rng(0)
        with pytest.raises(CoverageError, match="exceeds"):
            solve_exact(random_program(rng, d=21, K=1, docs_per_block=2, majority_docs=2))
        with pytest.raises(CoverageError, match="exceeds"):
            solve_exact(random_program(rng, d=4, K=1, docs_per_block=30, majority_docs=30))

    def test_matches_enumeration_on_random_instances(self):
        rng = np.random.default_rng(1)
        for trial in range(30):
            K = int(rng.integers(1, 4))
            d = int(rng.integers(3, {1: 9, 2: 7, 3: 6}[K] + 1))
            p = random_program(rng, d=d, K=K,
                               docs_per_block=int(rng.integers(1, 5)),
                               majority_docs=int(rng.integers(1, 5)))
            sol = solve_exact(p)
            assert sol.optimal
            assert sol.objective == enumerate_exact(p)
            check_feasible(sol, p)

    def test_time_cap_returns_incumbent(self):
        rng = np.random.default_rng(2)
        p = random_program(rng, d=16, K=3, docs_per_block=6, majority_docs=10)
        sol = solve_exact(p, time_cap=1e-5)
        assert not sol.optimal
        check_feasible(sol, p)

    def test_vocab_monotonicity(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p = random_program(rng, d=6, K=2, docs_per_block=3, majority_docs=3)
            wider = CoverProgram(
                R_blocks=tuple(np.hstack([b, (rng.random((len(b), 1)) < 0.5).astype(np.int8)])
                               for b in p.R_blocks),
                N=np.hstack([p.N, (rng.random((len(p.N), 1)) < 0.5).astype(np.int8)]),
                terms=(*p.terms, "textra"))
            assert solve_exact(wider).objective <= solve_exact(p).objective


class TestSolveGreedy:
    def test_single_cover_word_matches_exact(self):
        docs = (Doc("aa xx", RARE, 1), Doc("aa yy", RARE, 1), Doc("bb", MAJORITY))
        corpus = LabeledCorpus(docs=docs, K=1)
        p = build_program(corpus, vocab_of(["aa", "xx", "yy"]))
        greedy = solve_greedy(p)
        exact = solve_exact(p)
        assert greedy.objective == exact.objective

    def test_feasible_and_bounded_on_random_family(self):
        rng = np.random.default_rng(4)
        ratios = []
        for _ in range(40):
            K = int(rng.integers(1, 4))
            d = int(rng.integers(3, {1: 9, 2: 7, 3: 6}[K] + 1))
            p = random_program(rng, d=d, K=K,
                               docs_per_block=int(rng.integers(1, 5)),
                               majority_docs=int(rng.integers(1, 5)))
            g = solve_greedy(p)
            check_feasible(g, p)
            e = solve_exact(p)
            assert g.objective >= e.objective
            if e.objective > 0:
                ratios.append(g.objective / e.objective)
        assert max(ratios) <= 2.0

    def test_disjointness_property(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            p = random_program(rng, d=int(rng.integers(2, 12)),
                               K=int(rng.integers(1, 4)),
                               docs_per_block=int(rng.integers(1, 6)),
                               majority_docs=int(rng.integers(1, 6)))
            sol = solve_greedy(p)
            sets = sol.word_sets()
            for a in range(len(sets)):
                for b in range(a + 1, len(sets)):
                    assert not (sets[a] & sets[b])


class TestFeasibilityCheck:
    def test_rejects_overlapping_sets(self):
        rng = np.random.default_rng(6)
        p = random_program(rng, d=4, K=1, docs_per_block=2, majority_docs=2)
        sol = solve_greedy(p)
        sol.v0 = sol.v0 | (sol.vk[0] or frozenset({0}))
        sol.vk = (sol.vk[0] | frozenset({0}),)
        with pytest.raises(CoverageError):
            check_feasible(sol, p)


class TestReports:
    def full_cover_program(self):
        # "alert" appears in every rare doc, so v0 can cover R without
        # touching the subclass-specific words
        docs = (
            Doc("alert storm surge", RARE, 1),
            Doc("alert storm damage", RARE, 1),
            Doc("alert quake hits", RARE, 2),
            Doc("alert quake aftermath", RARE, 2),
            Doc("calm market", MAJORITY),
        )
        corpus = LabeledCorpus(docs=docs, K=2)
        return build_program(corpus, vocab_of(["storm", "quake", "alert", "calm"]))

    def test_full_cover_reports_100pct(self):
        p = self.full_cover_program()
        sol = solve_exact(p)
        report = coverage_report(sol, p)
        assert report["o"] == 0
        for sc in report["subclasses"]:
            assert sc["within_coverage_pct"] == 100.0
        assert report["general"]["within_coverage_pct"] == 100.0

    def test_rates_match_recount(self):
        rng = np.random.default_rng(7)
        p = random_program(rng, d=6, K=2, docs_per_block=4, majority_docs=4)
        sol = solve_exact(p)
        report = coverage_report(sol, p)
        for k, sc in enumerate(report["subclasses"]):
            cols = sorted(sol.vk[k])
            covered = int(np.count_nonzero(p.R_blocks[k][:, cols].sum(axis=1) > 0)) \
                if cols else 0
            assert sc["within_coverage_pct"] == 100.0 * covered / len(p.R_blocks[k])

    def test_word_ranking_by_ratio(self):
        p = self.full_cover_program()
        sol = solve_exact(p)
        report = coverage_report(sol, p)
        for section in (report["general"], *report["subclasses"]):
            ratios = [e["ratio"] for e in section["words"]]
            assert ratios == sorted(ratios, reverse=True)

    def test_infeasible_solution_rejected(self):
        p = self.full_cover_program()
        sol = solve_exact(p)
        sol.z0 = frozenset()
        sol.v0 = frozenset()
        with pytest.raises(CoverageError):
            coverage_report(sol, p)

    def test_text_and_csv_outputs(self):
        p = self.full_cover_program()
        report = coverage_report(solve_exact(p), p)
        text = report_text(report)
        assert "objective=" in text and "general" in text
        csv_out = report_words_csv(report)
        assert csv_out.splitlines()[0] == "set,term,within_coverage,cross_coverage,ratio"
        assert len(csv_out.splitlines()) >= 2
