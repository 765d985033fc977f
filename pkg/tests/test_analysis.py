import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepmedix import rng
from deepmedix.analysis import (count_flops, jacobian, metric_form, pullback_metric, pullback_spectrum,
                                top_eigenvalues)
from deepmedix.architecture import BackboneSpec, HeadSpec, build_backbone, build_head, build_variant
from deepmedix.gradcheck import numeric_gradient
from deepmedix.graph import INPUT, GraphBuilder
from deepmedix.layers import BatchNorm, Conv, Dense, Flatten, GlobalAvgPool, ReLU, Softmax
from deepmedix.ops import ConvSpec


def single(layer, shape):
    b = GraphBuilder(shape)
    b.add("x", layer, INPUT)
    return b.build()


def linear_model(a):
    return single(Dense(a.shape[1], a.shape[0]), (a.shape[1],)), {"x/weight": a.T.copy(), "x/bias": np.zeros(a.shape[0])}


def tiny_net(seed, softmax=False):
    b = GraphBuilder((4, 4, 2))
    x = b.add("conv", Conv(ConvSpec(3, 2, 3, 2)), INPUT)
    x = b.add("bn", BatchNorm(3), x)
    x = b.add("relu", ReLU(), x)
    x = b.add("pool", GlobalAvgPool(), x)
    x = b.add("dense", Dense(3, 3), x)
    if softmax:
        b.add("softmax", Softmax(), x)
    m = b.build()
    p = m.init_params(seed)
    p["bn/beta"] = 0.1 * rng.normal(seed, 3)
    return m, p


class TestFlops:
    def test_dense_example(self):
        assert count_flops(single(Dense(1280, 4), (1280,))).total_flops == 10_244

    def test_depthwise_example(self):
        m = single(Conv(ConvSpec(3, 32, 32, mode="depthwise")), (112, 112, 32))
        assert count_flops(m).total_flops == 7_225_344

    def test_deepmedix_total(self):
        rep = count_flops(build_variant("DeepMediX", BackboneSpec(), 4))
        assert abs(rep.total_flops / 0.613e9 - 1) <= 0.08
        assert rep.total_params == 2_329_236

    def test_additive_over_composition(self):
        spec = BackboneSpec(0.5, (64, 64, 3))
        base = build_backbone(spec)
        head = build_head(HeadSpec(spec.feature_dim, 3), (2, 2))
        full = base.compose(head)
        assert count_flops(full).total_flops == count_flops(base).total_flops + count_flops(head).total_flops

    def test_stem_scales_with_area(self):
        a = count_flops(build_backbone(BackboneSpec(1.0, (64, 64, 3)))).rows[0]
        b = count_flops(build_backbone(BackboneSpec(1.0, (128, 128, 3)))).rows[0]
        assert a.name == "stem.conv" and b.flops == 4 * a.flops

    def test_report_totals_and_outputs(self):
        rep = count_flops(build_backbone(BackboneSpec(0.25, (32, 32, 3))))
        assert rep.total_flops == sum(r.flops for r in rep.rows)
        csv_lines = rep.to_csv().splitlines()
        assert csv_lines[0] == "name,kind,output_shape,flops,params"
        assert csv_lines[-1].startswith(f"TOTAL,,,{rep.total_flops},")
        assert "multiply-add = 2" in rep.to_text()

    def test_dynamic_shape_rejected(self):
        with pytest.raises(Exception):
            count_flops(build_head(HeadSpec(8, 2)))


class TestJacobian:
    def test_linear_model(self):
        a = rng.normal(1, (3, 5))
        m, p = linear_model(a)
        np.testing.assert_array_equal(jacobian(m, p, rng.normal(2, 5)), a)
        G = pullback_metric(m, p, rng.normal(3, 5)).G
        np.testing.assert_array_equal(G, a.T @ a)

    def test_identity_model(self):
        m = single(Flatten(), (4,))
        np.testing.assert_array_equal(jacobian(m, {}, rng.normal(1, 4)), np.eye(4))

    def test_matches_finite_differences(self):
        m, p = tiny_net(4)
        x = rng.normal(5, (4, 4, 2))
        J = jacobian(m, p, x)
        for i in range(3):
            num = numeric_gradient(lambda: float(m.forward(p, x[None])[0, i]), x)
            rel = np.abs(J[i] - num) / np.maximum(np.maximum(np.abs(J[i]), np.abs(num)), 1e-6)
            assert rel.max() < 1e-4

    def test_softmax_rows_sum_to_zero(self):
        m, p = tiny_net(6, softmax=True)
        J = jacobian(m, p, rng.normal(7, (4, 4, 2)))
        assert np.abs(J.sum(axis=0)).max() < 1e-8


class TestMetric:
    def test_form(self):
        m, p = tiny_net(1)
        pm = pullback_metric(m, p, rng.normal(2, (4, 4, 2)))
        u, v = rng.normal(3, 32), rng.normal(4, 32)
        assert abs(pm.form(u, u) - np.sum((pm.jacobian @ u) ** 2)) < 1e-9
        assert abs(metric_form(pm.G, u, v) - metric_form(pm.G, v, u)) < 1e-9
        with pytest.raises(ValueError):
            metric_form(pm.G, u[:3], v)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 32))
    def test_symmetric_psd(self, seed):
        m, p = tiny_net(seed)
        G = pullback_metric(m, p, rng.normal(seed + 1, (4, 4, 2))).G
        assert np.abs(G - G.T).max() < 1e-9
        assert np.linalg.eigvalsh(G).min() >= -1e-9

    def test_rayleigh_bound(self):
        m, p = tiny_net(8)
        G = pullback_metric(m, p, rng.normal(9, (4, 4, 2))).G
        lam, vec = top_eigenvalues(G, 1)
        for i in range(100):
            u = rng.normal(rng.derive(10, i), 32)
            assert lam[0] >= u @ G @ u / (u @ u)
        assert abs(lam[0] - np.linalg.eigvalsh(G)[-1]) <= 1e-6 * lam[0]

    def test_top_eigenvalues_known_matrix(self):
        q, _ = np.linalg.qr(rng.normal(1, (6, 6)))
        G = q @ np.diag([9.0, 4.0, 1.0, 0.5, 0.0, 0.0]) @ q.T
        vals, vecs = top_eigenvalues(G, 3)
        np.testing.assert_allclose(vals, [9.0, 4.0, 1.0], rtol=1e-6)
        np.testing.assert_allclose(np.abs(vecs[:, 0]), np.abs(q[:, 0]), atol=1e-3)

    def test_spectrum_matches_full_metric(self):
        m, p = tiny_net(11)
        x = rng.normal(12, (4, 4, 2))
        spec = pullback_spectrum(m, p, x, 2)
        full = np.sort(np.linalg.eigvalsh(pullback_metric(m, p, x).G))[::-1][:2]
        np.testing.assert_allclose(spec["top_eigenvalues"], full, rtol=1e-6)
        assert spec["dimension"] == 32 and spec["rank_bound"] == 3
