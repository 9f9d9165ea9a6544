import numpy as np
import pytest
import torch

from travmap.grid import GridSpec, cell_center
from travmap.models.pillar_net import PillarEncoder, encode_scan_to_map, scatter_pillars
from travmap.pillars import pillarize


def small_grid():
    return GridSpec.square(1.6, 0.2)  # 16x16


def cloud_from(points):
    return np.asarray(points, dtype=np.float32)


class TestPillarize:
    def test_single_point_at_cell_center(self):
        g = small_grid()
        x, y = cell_center(5, 7, g)
        batch = pillarize(cloud_from([[x, y, 0.3, 0.9]]), g, 8, 4)
        assert batch.pillar_mask.sum() == 1
        assert batch.point_mask.sum() == 1
        np.testing.assert_array_equal(batch.pillar_coords[0], [5, 7])
        row = batch.points[0, 0]
        np.testing.assert_allclose(row[:4], [x, y, 0.3, 0.9], atol=1e-6)
        # mean offsets and center offsets all vanish for a lone centered point
        np.testing.assert_allclose(row[4:], np.zeros(5), atol=1e-7)

    def test_mean_offset_two_points(self):
        g = small_grid()
        x, y = cell_center(3, 3, g)
        batch = pillarize(cloud_from([[x, y, 0.0, 0.0], [x, y, 2.0, 0.0]]), g, 8, 4)
        z_c = batch.points[0, :2, 6]
        np.testing.assert_allclose(sorted(z_c), [-1.0, 1.0], atol=1e-6)

    def test_subsampling_deterministic(self):
        g = small_grid()
        x, y = cell_center(2, 2, g)
        pts = cloud_from([[x, y, 0.1 * i, 0.0] for i in range(10)])
        b1 = pillarize(pts, g, 8, 4, rng_seed=42)
        b2 = pillarize(pts, g, 8, 4, rng_seed=42)
        assert b1.point_mask.sum() == 4
        np.testing.assert_array_equal(b1.points, b2.points)

    def test_pillar_overflow_subsampled(self):
        g = small_grid()
        rng = np.random.default_rng(0)
        xs = rng.uniform(g.x_min, g.x_max, 400)
        ys = rng.uniform(g.y_min, g.y_max, 400)
        pts = np.stack([xs, ys, np.zeros(400), np.zeros(400)], axis=1).astype(np.float32)
        batch = pillarize(pts, g, 16, 4, rng_seed=1)
        assert batch.pillar_mask.sum() == 16
        coords = batch.pillar_coords[batch.pillar_mask]
        lin = coords[:, 0] * g.width + coords[:, 1]
        assert len(np.unique(lin)) == 16

    def test_crop_excludes_out_of_box(self):
        g = small_grid()
        pts = cloud_from(
            [[50.0, 0.0, 0.0, 0.0], [0.0, 0.0, 10.0, 0.0], [0.0, 0.0, -10.0, 0.0]]
        )
        batch = pillarize(pts, g, 8, 4)
        assert batch.pillar_mask.sum() == 0

    def test_masked_entries_zero(self):
        g = small_grid()
        x, y = cell_center(1, 1, g)
        batch = pillarize(cloud_from([[x, y, 0.0, 1.0]]), g, 4, 4)
        assert (batch.points[~batch.point_mask] == 0).all()

    def test_point_in_named_cell(self):
        g = small_grid()
        rng = np.random.default_rng(2)
        pts = np.stack(
            [
                rng.uniform(g.x_min, g.x_max, 100),
                rng.uniform(g.y_min, g.y_max, 100),
                rng.uniform(-1, 1, 100),
                rng.random(100),
            ],
            axis=1,
        ).astype(np.float32)
        batch = pillarize(pts, g, 256, 8, rng_seed=3)
        for p in range(batch.max_pillars):
            if not batch.pillar_mask[p]:
                continue
            r, c = batch.pillar_coords[p]
            for n in range(batch.max_points):
                if not batch.point_mask[p, n]:
                    continue
                x, y = batch.points[p, n, :2]
                assert int(np.floor((x - g.x_min) / g.cell_size)) == c
                assert int(np.floor((y - g.y_min) / g.cell_size)) == r


class TestPillarInvariants:
    def random_cloud(self, g, n, seed):
        rng = np.random.default_rng(seed)
        return np.stack(
            [
                rng.uniform(g.x_min, g.x_max, n),
                rng.uniform(g.y_min, g.y_max, n),
                rng.uniform(g.z_min, g.z_max, n),
                rng.random(n),
            ],
            axis=1,
        ).astype(np.float32)

    def test_zero_mean_offsets(self):
        g = small_grid()
        for seed in range(10):
            batch = pillarize(self.random_cloud(g, 300, seed), g, 512, 8, rng_seed=seed)
            for p in np.nonzero(batch.pillar_mask)[0]:
                kept = batch.points[p][batch.point_mask[p]]
                np.testing.assert_allclose(kept[:, 4:7].mean(axis=0), 0.0, atol=1e-5)

    def test_center_offset_bound(self):
        g = small_grid()
        for seed in range(10):
            batch = pillarize(self.random_cloud(g, 300, seed), g, 512, 8, rng_seed=seed)
            kept = batch.points[batch.point_mask]
            assert np.abs(kept[:, 7:9]).max() <= g.cell_size / 2 + 1e-6

    def test_permutation_invariance_end_to_end(self):
        # no sampling triggered: P and N large enough
        g = small_grid()
        cloud = self.random_cloud(g, 200, 11)
        torch.manual_seed(0)
        enc = PillarEncoder(channels=16).eval()
        b1 = pillarize(cloud, g, 512, 64)
        rng = np.random.default_rng(12)
        b2 = pillarize(cloud[rng.permutation(len(cloud))], g, 512, 64)
        with torch.no_grad():
            m1 = encode_scan_to_map(enc, b1, g)
            m2 = encode_scan_to_map(enc, b2, g)
        torch.testing.assert_close(m1, m2, rtol=0, atol=1e-6)


class TestEncodePillars:
    def identity_encoder(self):
        enc = PillarEncoder(channels=9, in_dim=9, use_norm=False)
        with torch.no_grad():
            enc.linear.weight.copy_(torch.eye(9))
            enc.linear.bias.zero_()
        return enc.eval()

    def test_all_zero_params_zero_features(self):
        g = small_grid()
        cloud = TestPillarInvariants().random_cloud(g, 50, 20)
        batch = pillarize(cloud, g, 64, 8)
        enc = PillarEncoder(channels=8, use_norm=False)
        with torch.no_grad():
            enc.linear.weight.zero_()
            enc.linear.bias.zero_()
        feats = enc(
            torch.as_tensor(batch.points),
            torch.as_tensor(batch.point_mask),
            torch.as_tensor(batch.pillar_mask),
        )
        assert (feats == 0).all()

    def test_identity_encoder_pools_max(self):
        # two points with z_c = -1, +1: pooled z_c channel = max(relu(-1), relu(1)) = 1
        g = small_grid()
        x, y = cell_center(3, 3, g)
        batch = pillarize(cloud_from([[x, y, 0.0, 0.0], [x, y, 2.0, 0.0]]), g, 4, 4)
        enc = self.identity_encoder()
        feats = enc(
            torch.as_tensor(batch.points),
            torch.as_tensor(batch.point_mask),
            torch.as_tensor(batch.pillar_mask),
        )
        assert feats[0, 6].item() == pytest.approx(1.0, abs=1e-6)
        # z channel pools to max(relu(0), relu(2)) = 2
        assert feats[0, 2].item() == pytest.approx(2.0, abs=1e-6)

    def test_point_permutation_within_pillar(self):
        g = small_grid()
        torch.manual_seed(1)
        enc = PillarEncoder(channels=12).eval()
        batch = pillarize(TestPillarInvariants().random_cloud(g, 100, 21), g, 128, 16)
        pts = torch.as_tensor(batch.points)
        pm = torch.as_tensor(batch.point_mask)
        plm = torch.as_tensor(batch.pillar_mask)
        with torch.no_grad():
            f1 = enc(pts, pm, plm)
            perm = torch.randperm(pts.shape[1])
            f2 = enc(pts[:, perm], pm[:, perm], plm)
        torch.testing.assert_close(f1, f2, rtol=0, atol=1e-6)

    def test_invalid_pillars_output_zero(self):
        enc = PillarEncoder(channels=4, use_norm=False)
        pts = torch.randn(3, 2, 9)
        pm = torch.tensor([[True, True], [False, False], [True, False]])
        plm = torch.tensor([True, False, True])
        feats = enc(pts, pm, plm)
        assert (feats[1] == 0).all()

    def test_non_finite_params_rejected(self):
        enc = PillarEncoder(channels=4, use_norm=False)
        with torch.no_grad():
            enc.linear.weight[0, 0] = float("nan")
        with pytest.raises(ValueError, match="non-finite"):
            enc(torch.zeros(1, 1, 9), torch.ones(1, 1, dtype=torch.bool), torch.ones(1, dtype=torch.bool))

    def test_gradient_matches_finite_differences(self):
        # 2-pillar micro-batch, double precision, central differences
        torch.manual_seed(2)
        enc = PillarEncoder(channels=3, use_norm=True).double().train()
        pts = torch.randn(2, 4, 9, dtype=torch.float64)
        pm = torch.ones(2, 4, dtype=torch.bool)
        plm = torch.ones(2, dtype=torch.bool)
        target = torch.randn(2, 3, dtype=torch.float64)

        def loss_value():
            return ((enc(pts, pm, plm) - target) ** 2).sum()

        loss = loss_value()
        loss.backward()
        eps = 1e-6
        for name, p in enc.named_parameters():
            grad = p.grad.clone()
            fd = torch.zeros_like(p)
            flat = p.data.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_value().item()
                flat[i] = orig - eps
                down = loss_value().item()
                flat[i] = orig
                fd.view(-1)[i] = (up - down) / (2 * eps)
            denom = max(grad.norm().item(), fd.norm().item(), 1e-12)
            rel = (grad - fd).norm().item() / denom
            assert rel <= 1e-3, f"{name}: rel err {rel}"


class TestScatter:
    def test_zero_pillars_zero_map(self):
        g = small_grid()
        feats = torch.zeros(4, 8)
        coords = np.zeros((4, 2), dtype=np.int64)
        mask = np.zeros(4, dtype=bool)
        out = scatter_pillars(feats, coords, mask, g)
        assert out.shape == (8, 16, 16)
        assert (out == 0).all()

    def test_single_pillar_placement(self):
        g = small_grid()
        feats = torch.zeros(2, 6)
        v = torch.arange(6, dtype=torch.float32)
        feats[0] = v
        coords = np.array([[3, 5], [0, 0]], dtype=np.int64)
        mask = np.array([True, False])
        out = scatter_pillars(feats, coords, mask, g)
        torch.testing.assert_close(out[:, 3, 5], v)
        assert out.abs().sum() == v.abs().sum()

    def test_gather_back_round_trip(self):
        g = small_grid()
        rng = np.random.default_rng(30)
        n = 20
        lins = rng.choice(g.height * g.width, size=n, replace=False)
        coords = np.stack([lins // g.width, lins % g.width], axis=1)
        mask = np.ones(n, dtype=bool)
        feats = torch.randn(n, 5)
        out = scatter_pillars(feats, coords, mask, g)
        gathered = out[:, coords[:, 0], coords[:, 1]].t()
        torch.testing.assert_close(gathered, feats, rtol=0, atol=0)

    def test_duplicate_coords_rejected(self):
        g = small_grid()
        coords = np.array([[1, 1], [1, 1]], dtype=np.int64)
        with pytest.raises(ValueError, match="duplicate"):
            scatter_pillars(torch.zeros(2, 3), coords, np.array([True, True]), g)

    def test_nonzero_columns_match_occupancy(self):
        g = small_grid()
        cloud = TestPillarInvariants().random_cloud(g, 120, 31)
        batch = pillarize(cloud, g, 256, 8)
        torch.manual_seed(3)
        enc = PillarEncoder(channels=7).eval()
        with torch.no_grad():
            out = encode_scan_to_map(enc, batch, g)
        occupied = np.zeros((g.height, g.width), dtype=bool)
        coords = batch.pillar_coords[batch.pillar_mask]
        occupied[coords[:, 0], coords[:, 1]] = True
        nonzero = out.abs().sum(dim=0).numpy() > 0
        assert not (nonzero & ~occupied).any()
        # occupied cells are allowed to be zero only if the encoder output is zero there
        coords_t = coords[np.argsort(coords[:, 0] * g.width + coords[:, 1])]
        assert nonzero[coords_t[:, 0], coords_t[:, 1]].mean() > 0.9
