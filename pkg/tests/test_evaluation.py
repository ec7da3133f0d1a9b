"""Ranking metric and evaluation-protocol tests against brute-force oracles."""

import numpy as np
import pytest

from socialrec import model as M
from socialrec.dataset import leave_one_out_split
from socialrec.evaluation import (
    aggregate_ranks,
    evaluate,
    export_attention,
    hr_at_k,
    ndcg_at_k,
    rank_held_out,
    rank_of_test_item,
    sparsity_bins,
)
from socialrec.synthetic import SyntheticConfig, generate_synthetic

from conftest import make_instance


def sort_rank_oracle(test_score, cand):
    """Rank by sorting all scores descending, test item losing all ties."""
    scores = np.concatenate([cand, [test_score]])
    # stable sort on (-score, is_test) puts candidates first within ties
    order = sorted(range(len(scores)), key=lambda k: (-scores[k], k == len(cand)))
    return order.index(len(cand)) + 1


class TestRank:
    def test_strictly_highest_is_rank_one(self):
        assert rank_of_test_item(5.0, [1.0, 2.0, 3.0]) == 1

    def test_tie_is_pessimistic(self):
        assert rank_of_test_item(3.0, [3.0, 1.0]) == 2

    def test_matches_sort_oracle_bulk(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            cand = rng.normal(size=20)
            test = float(rng.choice(np.concatenate([cand, rng.normal(size=1)])))
            assert rank_of_test_item(test, cand) == sort_rank_oracle(test, cand)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            rank_of_test_item(np.nan, [1.0])


class TestMetrics:
    def test_rank_one(self):
        assert hr_at_k(1, 5) == 1.0
        assert ndcg_at_k(1, 5) == 1.0

    def test_rank_two(self):
        assert ndcg_at_k(2, 5) == pytest.approx(1 / np.log2(3), abs=1e-12)
        assert ndcg_at_k(2, 5) == pytest.approx(0.6309297535714575, abs=1e-12)

    def test_miss(self):
        assert hr_at_k(6, 5) == 0.0
        assert ndcg_at_k(6, 5) == 0.0

    def test_monotone_in_k(self):
        for rank in range(1, 15):
            hrs = [hr_at_k(rank, k) for k in range(1, 15)]
            nds = [ndcg_at_k(rank, k) for k in range(1, 15)]
            assert all(a <= b for a, b in zip(hrs, hrs[1:]))
            assert all(a <= b for a, b in zip(nds, nds[1:]))
            assert all(n <= h for n, h in zip(nds, hrs))


def eval_setup(seed=0, num_users=30, num_items=160):
    cfg = SyntheticConfig(num_users=num_users, num_items=num_items,
                          ratings_per_user=6, social_dim=4, content_dim=6,
                          style_dim=8, latent_dim=4, seed=seed)
    ds, bundle, _ = generate_synthetic(cfg)
    split = leave_one_out_split(ds, 0.1, seed=seed)
    bundle = bundle.with_profiles_from(split.train)
    dims = M.ModelDims(num_users, num_items, latent=5, hidden=4,
                       social=4, content=6, style=8)
    params = M.init_params(dims, seed=seed)
    return split, bundle, params


class TestEvaluate:
    def test_perfect_scorer_is_perfect(self):
        split, bundle, params = eval_setup()
        test_item = dict(split.test)

        def oracle(user, items):
            return (np.asarray(items) == test_item[user]).astype(float)

        report = evaluate(params, M.BPR_MODE, split, bundle, ks=(1, 5, 10),
                          repeats=2, seed=3, scorer=oracle)
        for k in (1, 5, 10):
            assert report.hr_mean[k] == 1.0
            assert report.ndcg_mean[k] == 1.0

    def test_random_scorer_near_analytic_rate(self):
        split, bundle, params = eval_setup(num_users=100, num_items=400)

        state = {"rng": np.random.default_rng(11)}

        def random_scorer(user, items):
            return state["rng"].normal(size=len(items))

        repeats = 20
        report = evaluate(params, M.BPR_MODE, split, bundle, ks=(5,),
                          repeats=repeats, seed=5, scorer=random_scorer)
        n = repeats * len(split.test)
        p = 5 / 101
        sigma = np.sqrt(p * (1 - p) / n)
        assert abs(report.hr_mean[5] - p) < 3 * sigma

    def test_fixed_seed_reproducible(self):
        split, bundle, params = eval_setup(seed=2)
        r1 = evaluate(params, M.AttentionMode(), split, bundle, ks=(3, 5),
                      repeats=3, seed=7)
        r2 = evaluate(params, M.AttentionMode(), split, bundle, ks=(3, 5),
                      repeats=3, seed=7)
        assert r1.to_dict() == r2.to_dict()

    def test_threads_do_not_change_result(self):
        split, bundle, params = eval_setup(seed=4)
        r1 = evaluate(params, M.AttentionMode(), split, bundle, ks=(5,),
                      repeats=2, seed=9, threads=1)
        r4 = evaluate(params, M.AttentionMode(), split, bundle, ks=(5,),
                      repeats=2, seed=9, threads=4)
        assert r1.to_dict() == r4.to_dict()

    def test_report_invariants(self):
        split, bundle, params = eval_setup(seed=5)
        report = evaluate(params, M.AttentionMode(), split, bundle,
                          ks=tuple(range(1, 11)), repeats=2, seed=1)
        for k in range(1, 11):
            assert 0.0 <= report.ndcg_mean[k] <= report.hr_mean[k] <= 1.0
        hrs = [report.hr_mean[k] for k in range(1, 11)]
        assert all(a <= b + 1e-12 for a, b in zip(hrs, hrs[1:]))


class TestSparsityBins:
    def test_single_bin_reproduces_global(self):
        split, bundle, params = eval_setup(seed=6)
        users, ranks = rank_held_out(params, M.AttentionMode(), split, bundle,
                                     repeats=2, seed=3)
        global_report = aggregate_ranks(ranks, (5,), 2)
        bins = sparsity_bins(split, users, ranks, (5,), [], 2)
        assert list(bins) == ["[0,inf)"]
        only = bins["[0,inf)"]
        assert only["population"] == len(users)
        assert only["report"].to_dict()["hr_mean"] == \
            global_report.to_dict()["hr_mean"]

    def test_populations_sum_to_users(self):
        split, bundle, params = eval_setup(seed=7)
        users, ranks = rank_held_out(params, M.AttentionMode(), split, bundle,
                                     repeats=1, seed=3)
        bins = sparsity_bins(split, users, ranks, (5,), [4, 6], 1)
        assert sum(e["population"] for e in bins.values()) == len(users)

    def test_bad_edges_rejected(self):
        split, bundle, params = eval_setup(seed=7)
        users, ranks = rank_held_out(params, M.AttentionMode(), split, bundle,
                                     repeats=1, seed=3)
        with pytest.raises(ValueError):
            sparsity_bins(split, users, ranks, (5,), [6, 4], 1)


class TestExportAttention:
    def test_avg_top_gives_uniform_rows(self):
        ds, bundle, params, _ = make_instance(seed=50)
        mode = M.AttentionMode(bottom="att", top="avg")
        pairs = [(u, (u + 1) % ds.num_items) for u in range(ds.num_users)]
        dump = export_attention(params, mode, ds, bundle, pairs)
        for _, gamma, _ in dump.rows:
            active = gamma[gamma > 0]
            assert np.allclose(active, 1.0 / active.size, atol=1e-12)

    def test_rows_sum_to_one(self):
        ds, bundle, params, _ = make_instance(seed=51)
        pairs = [(u, i) for u in range(ds.num_users) for i in (0, 3, 7)]
        dump = export_attention(params, M.AttentionMode(), ds, bundle, pairs)
        assert len(dump.rows) == ds.num_users
        for _, gamma, dominant in dump.rows:
            assert gamma.sum() == pytest.approx(1.0, abs=1e-9)
            assert dominant in M.ASPECTS

    def test_no_active_aspects_skipped_with_count(self):
        ds, bundle, params, _ = make_instance(seed=52)
        mode = M.AttentionMode(aspects=())
        dump = export_attention(params, mode, ds, bundle, [(0, 1), (1, 2)])
        assert dump.rows == []
        assert dump.skipped == 2

    def test_tsv_shape(self):
        ds, bundle, params, _ = make_instance(seed=53)
        dump = export_attention(params, M.AttentionMode(), ds, bundle,
                                [(0, 1), (1, 2)])
        lines = dump.to_tsv(ds).strip().split("\n")
        assert lines[0].split("\t") == [
            "user_id", "gamma_upload", "gamma_social", "gamma_creator", "dominant"
        ]
        assert len(lines) == 1 + len(dump.rows)
