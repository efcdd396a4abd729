import numpy as np
import pytest

from melkit import fusion as fu
from melkit import nnkernel as nn
from melkit.candgen import CandidateSet, candidate_map
from melkit.corpus import KnowledgeBase, MentionRecord

from conftest import make_entity, make_tweet


class TestFeatureLayout:
    def test_jmel_only_is_length_one(self):
        assert fu.feature_names(("jmel",)) == ["jmel"]

    def test_documented_order_for_full_mask(self):
        names = fu.feature_names(("bm25", "pop", "jmel"))
        assert names == ["jmel", "pop_fo", "pop_fr", "pop_t", "bm25"]

    def test_unknown_feature_rejected(self):
        with pytest.raises(ValueError, match="unknown fusion features"):
            fu.normalize_mask(("jmel", "wat"))

    def test_mask_canonical_order(self):
        assert fu.normalize_mask(("bm25", "jmel")) == ("jmel", "bm25")


class TestAssemble:
    def ctx(self, desk, index=None, params=None):
        dataset, store, built_index, _ = desk
        return dataset, fu.FeatureContext(
            kb=dataset.kb, store=store, jmel_params=params,
            index=index if index is not None else built_index,
        )

    def test_full_vector_length_five(self, desk):
        dataset, ctx = self.ctx(desk)
        from melkit.jmel import JmelConfig, init_jmel

        ctx.jmel_params = init_jmel(
            JmelConfig(dim_u=48, dim_b=48, dim_i=48, d_hidden=8, d_branch=4, d_joint=4),
            seed=0,
        )
        mention = dataset.mentions[0]
        row = fu.assemble_raw(mention, mention.gold, ctx, ("jmel", "pop", "bm25"))
        assert row.shape == (5,)

    def test_missing_jmel_model_rejected(self, desk):
        dataset, ctx = self.ctx(desk)
        mention = dataset.mentions[0]
        with pytest.raises(ValueError, match="jmel"):
            fu.assemble_raw(mention, mention.gold, ctx, ("jmel",))

    def test_missing_index_rejected(self, desk):
        dataset, store, _, _ = desk
        ctx = fu.FeatureContext(kb=dataset.kb, store=store)
        mention = dataset.mentions[0]
        with pytest.raises(ValueError, match="bm25"):
            fu.assemble_raw(mention, mention.gold, ctx, ("bm25",))

    def test_pop_is_log1p_of_counts(self, desk):
        dataset, ctx = self.ctx(desk)
        mention = dataset.mentions[0]
        row = fu.assemble_raw(mention, mention.gold, ctx, ("pop",))
        e = dataset.kb.entities[mention.gold]
        assert np.allclose(row, np.log1p([e.followers, e.friends, e.tweet_count]))

    def test_standardized_train_moments(self, desk):
        dataset, ctx = self.ctx(desk)
        cands = candidate_map(dataset.mentions, dataset.kb)
        X_raw, y = fu.build_pairs(dataset.split.train, ctx, cands, ("pop", "bm25"))
        standardizer = fu.Standardizer.fit(X_raw, ("pop", "bm25"))
        X = standardizer.transform(X_raw)
        assert np.allclose(X.mean(axis=0), 0.0, atol=1e-9)
        assert np.allclose(X.std(axis=0), 1.0, atol=1e-9)
        assert y.sum() == len(dataset.split.train)

    def test_raw_sims_not_standardized(self, desk):
        dataset, ctx = self.ctx(desk)
        cands = candidate_map(dataset.mentions, dataset.kb)
        mask = ("uni", "pop")
        X_raw, _ = fu.build_pairs(dataset.split.train, ctx, cands, mask)
        standardizer = fu.Standardizer.fit(X_raw, mask)
        X = standardizer.transform(X_raw)
        assert np.array_equal(X[:, 0], X_raw[:, 0])  # cosine column untouched


class TestMlp:
    def test_zero_weights_give_half(self):
        mlp = fu.FusionMlp(
            hidden1=nn.DenseLayer(np.zeros((4, 3)), np.zeros(4)),
            hidden2=nn.DenseLayer(np.zeros((4, 4)), np.zeros(4)),
            output=nn.DenseLayer(np.zeros((1, 4)), np.zeros(1)),
        )
        assert fu.mlp_forward(mlp, np.array([1.0, -2.0, 3.0])) == 0.5

    def test_hidden_widths_are_n_in_plus_one(self):
        mlp = fu.init_fusion_mlp(5, seed=0)
        assert mlp.hidden1.W.shape == (6, 5)
        assert mlp.hidden2.W.shape == (6, 6)
        assert mlp.output.W.shape == (1, 6)

    def test_probability_in_open_interval(self):
        mlp = fu.init_fusion_mlp(3, seed=1)
        rng = np.random.default_rng(2)
        p = fu.mlp_forward(mlp, rng.standard_normal((50, 3)))
        assert np.all((p > 0) & (p < 1))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        mlp = fu.init_fusion_mlp(4, seed=3)
        x = rng.standard_normal(4)
        arrays = mlp.param_arrays()
        shapes = [a.shape for a in arrays]

        p, cache = fu.mlp_forward_cached(mlp, x)
        grads = fu.mlp_backward(mlp, cache, 1.0)

        def objective(vec):
            model = mlp.with_param_arrays(nn.unpack_params(vec, shapes))
            return float(fu.mlp_forward(model, x))

        numeric = nn.finite_diff_grad(objective, nn.pack_params(arrays), h=1e-4)
        analytic = nn.pack_params(grads)
        scale = np.maximum(1.0, np.abs(numeric))
        assert float(np.max(np.abs(analytic - numeric) / scale)) <= 1e-4


class TestBce:
    def test_all_ones_near_zero(self):
        p = np.full(10, 1.0 - 1e-12)
        assert fu.bce_loss(p, np.ones(10)) == pytest.approx(0.0, abs=1e-9)

    def test_clipping_avoids_infinities(self):
        assert np.isfinite(fu.bce_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0])))


class TestTrainFusion:
    def separable_data(self, n=200, seed=4):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, 2))
        y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(float)
        X[y == 1] += 0.8  # widen the margin
        return X, y

    def test_separable_toy_reaches_low_bce(self):
        X, y = self.separable_data()
        mlp = fu.init_fusion_mlp(2, seed=5)
        trained, result = fu.train_fusion(mlp, X, y, step_scale=1.0, max_iters=300)
        assert fu.bce_loss(fu.mlp_forward(trained, X), y) <= 0.05

    def test_deterministic_given_seed(self):
        X, y = self.separable_data()
        a, _ = fu.train_fusion(fu.init_fusion_mlp(2, seed=6), X, y,
                               step_scale=1.0, max_iters=50)
        b, _ = fu.train_fusion(fu.init_fusion_mlp(2, seed=6), X, y,
                               step_scale=1.0, max_iters=50)
        for pa, pb in zip(a.param_arrays(), b.param_arrays()):
            assert np.array_equal(pa, pb)

    def test_default_step_scale_is_paper_rate(self):
        import inspect

        assert inspect.signature(fu.train_fusion).parameters["step_scale"].default == 1e-5


class TestFusionRank:
    def world(self):
        kb = KnowledgeBase()
        kb.entities["a"] = make_entity("a", "Ann Ater", followers=10)
        kb.entities["b"] = make_entity("b", "Bo Ater", followers=500)
        kb.entities["c"] = make_entity("c", "Cy Ater", followers=200)
        return kb

    def constant_model(self, mask=("pop",)):
        # zero weights: every candidate scores exactly 0.5 -> pure tie-break
        n_in = len(fu.feature_names(mask))
        width = n_in + 1
        mlp = fu.FusionMlp(
            hidden1=nn.DenseLayer(np.zeros((width, n_in)), np.zeros(width)),
            hidden2=nn.DenseLayer(np.zeros((width, width)), np.zeros(width)),
            output=nn.DenseLayer(np.zeros((1, width)), np.zeros(1)),
        )
        return fu.FusionModel(mask=mask, standardizer=fu.Standardizer.identity(mask),
                              mlp=mlp)

    def test_single_candidate_first(self, desk):
        kb = self.world()
        dataset, store, _, _ = desk
        ctx = fu.FeatureContext(kb=kb, store=store)
        mention = MentionRecord(("ater",), "t", "a")
        base = CandidateSet("t", ("ater",), (("a", None),))
        got = fu.fusion_rank(mention, base, ctx, self.constant_model())
        assert got.top() == "a"

    def test_exact_tie_broken_by_followers_then_name(self, desk):
        kb = self.world()
        dataset, store, _, _ = desk
        ctx = fu.FeatureContext(kb=kb, store=store)
        mention = MentionRecord(("ater",), "t", "a")
        base = CandidateSet("t", ("ater",), (("a", None), ("b", None), ("c", None)))
        got = fu.fusion_rank(mention, base, ctx, self.constant_model())
        assert got.names() == ["b", "c", "a"]

    def test_order_invariant_to_input_order(self, desk):
        kb = self.world()
        dataset, store, _, _ = desk
        ctx = fu.FeatureContext(kb=kb, store=store)
        mention = MentionRecord(("ater",), "t", "a")
        fwd = CandidateSet("t", ("ater",), (("a", None), ("b", None), ("c", None)))
        rev = CandidateSet("t", ("ater",), (("c", None), ("b", None), ("a", None)))
        model = self.constant_model()
        assert fu.fusion_rank(mention, fwd, ctx, model).names() == \
               fu.fusion_rank(mention, rev, ctx, model).names()


def test_checkpoint_round_trip(tmp_path):
    mask = ("jmel", "pop")
    standardizer = fu.Standardizer(
        mean=np.array([0.0, 1.0, 2.0, 3.0]),
        std=np.array([1.0, 2.0, 3.0, 4.0]),
        standardized=np.array([False, True, True, True]),
    )
    model = fu.FusionModel(mask=mask, standardizer=standardizer,
                           mlp=fu.init_fusion_mlp(4, seed=7))
    path = tmp_path / "fusion.ckpt"
    fu.save_fusion(model, path)
    loaded = fu.load_fusion(path)
    assert loaded.mask == mask
    assert np.array_equal(loaded.standardizer.mean, standardizer.mean)
    assert np.array_equal(loaded.standardizer.std, standardizer.std)
    for a, b in zip(model.mlp.param_arrays(), loaded.mlp.param_arrays()):
        assert np.array_equal(a, b)
