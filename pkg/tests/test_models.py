import struct

import numpy as np
import pytest
import torch

from terragan.models import (
    CHECKPOINT_MAGIC,
    Checkpoint,
    CheckpointError,
    DiscriminatorSpec,
    GeneratorSpec,
    build_heightmap_discriminator,
    build_heightmap_generator,
    build_texture_discriminator,
    build_texture_generator,
    load_checkpoint,
    load_model,
    restore_model,
    restore_optimizer,
    save_checkpoint,
)


def hm_gen_spec(res, base=8):
    depth = int(np.log2(res)) - 2
    return GeneratorSpec(kind="heightmap", output_resolution=res, base_channels=base, depth=depth)


def hm_disc_spec(res, base=8):
    depth = int(np.log2(res)) - 2
    return DiscriminatorSpec(kind="heightmap", input_resolution=res, base_channels=base, depth=depth)


def tex_gen_spec(res, base=8):
    depth = int(np.log2(res)) - 2
    return GeneratorSpec(
        kind="texture", output_resolution=res, base_channels=base, depth=depth,
        output_channels=3, skip_connections=True,
    )


def tex_disc_spec(res, base=8):
    depth = max(1, int(np.log2(res)) - 3)
    return DiscriminatorSpec(kind="texture", input_resolution=res, base_channels=base,
                             depth=depth, input_channels=4)


@pytest.mark.parametrize("res", [32, 64, 128, 256, 512])
def test_shape_contracts_across_resolutions(res):
    torch.manual_seed(0)
    g = build_heightmap_generator(hm_gen_spec(res))
    d = build_heightmap_discriminator(hm_disc_spec(res))
    gt = build_texture_generator(tex_gen_spec(res))
    dt = build_texture_discriminator(tex_disc_spec(res))
    z = torch.randn(2, 100)
    hm = g(z)
    assert hm.shape == (2, 1, res, res)
    assert d(hm).shape == (2,)
    tex = gt(hm)
    assert tex.shape == (2, 3, res, res)
    assert dt(hm, tex).shape == (2,)
    assert hm.abs().max() < 1.0 and tex.abs().max() < 1.0


def test_generator_output_bounded_and_deterministic():
    torch.manual_seed(1)
    g = build_heightmap_generator(hm_gen_spec(32, base=16))
    g.eval()
    z = torch.randn(5, 100, generator=torch.Generator().manual_seed(3))
    with torch.no_grad():
        a, b = g(z), g(z)
    assert a.shape == (5, 1, 32, 32)
    assert a.abs().max() < 1.0
    torch.testing.assert_close(a, b)


def test_generator_parameters_finite_and_nonempty():
    torch.manual_seed(0)
    g = build_heightmap_generator(hm_gen_spec(32))
    n_params = sum(p.numel() for p in g.parameters())
    assert n_params > 0
    assert all(torch.isfinite(p).all() for p in g.parameters())


def test_latent_dim_mismatch_rejected():
    torch.manual_seed(0)
    g = build_heightmap_generator(hm_gen_spec(32))
    with pytest.raises(ValueError):
        g(torch.randn(2, 37))


def test_discriminator_wrong_resolution_rejected():
    torch.manual_seed(0)
    d = build_heightmap_discriminator(hm_disc_spec(32))
    with pytest.raises(ValueError):
        d(torch.randn(2, 1, 64, 64))


def test_discriminator_scores_finite():
    torch.manual_seed(0)
    d = build_heightmap_discriminator(hm_disc_spec(32, base=16))
    scores = d(torch.rand(5, 1, 32, 32) * 2 - 1)
    assert torch.isfinite(scores).all()


def test_discriminator_output_head_is_linear():
    # scaling the final convolution scales the scores exactly: no squashing
    torch.manual_seed(0)
    d = build_heightmap_discriminator(hm_disc_spec(32, base=16))
    d.eval()
    x = torch.rand(4, 1, 32, 32) * 2 - 1
    with torch.no_grad():
        base = d(x)
        d.net[-1].weight.mul_(100.0)
        d.net[-1].bias.mul_(100.0)
        scaled = d(x)
    torch.testing.assert_close(scaled, base * 100.0, rtol=1e-5, atol=1e-5)
    assert scaled.abs().max().item() > 1.0


def test_discriminator_input_gradient_nonzero_matches_fd():
    torch.manual_seed(0)
    d = build_heightmap_discriminator(hm_disc_spec(32, base=8)).double().eval()
    x = (torch.rand(1, 1, 32, 32, dtype=torch.float64) * 2 - 1).requires_grad_(True)
    d(x).sum().backward()
    grad = x.grad.detach().clone()
    assert grad.abs().max() > 0
    # finite-difference probe on the largest-gradient pixel
    idx = torch.argmax(grad.abs())
    flat = x.detach().clone().view(-1)
    step = 1e-5
    with torch.no_grad():
        flat[idx] += step
        hi = d(flat.view(1, 1, 32, 32)).item()
        flat[idx] -= 2 * step
        lo = d(flat.view(1, 1, 32, 32)).item()
    fd = (hi - lo) / (2 * step)
    assert fd == pytest.approx(grad.view(-1)[idx].item(), rel=1e-4)


def test_texture_generator_requires_skips_and_three_channels():
    with pytest.raises(ValueError):
        GeneratorSpec(kind="texture", output_resolution=32, depth=3, output_channels=3,
                      skip_connections=False)
    with pytest.raises(ValueError):
        GeneratorSpec(kind="texture", output_resolution=32, depth=3, output_channels=1,
                      skip_connections=True)
    with pytest.raises(ValueError):
        GeneratorSpec(kind="texture", output_resolution=48, depth=3, output_channels=3,
                      skip_connections=True)


def test_texture_discriminator_spatial_mismatch_rejected():
    torch.manual_seed(0)
    dt = build_texture_discriminator(tex_disc_spec(32))
    with pytest.raises(ValueError):
        dt(torch.randn(2, 1, 32, 32), torch.randn(2, 3, 64, 64))


def test_heightmap_spec_resolution_depth_consistency():
    with pytest.raises(ValueError):
        GeneratorSpec(kind="heightmap", output_resolution=64, depth=3)
    with pytest.raises(ValueError):
        DiscriminatorSpec(kind="heightmap", input_resolution=64, depth=3)


class TestCheckpoints:
    def test_round_trip_outputs_equal(self, tmp_path):
        torch.manual_seed(0)
        g = build_heightmap_generator(hm_gen_spec(32, base=16))
        path = tmp_path / "g.ckpt"
        save_checkpoint(g, path, training_step=17)
        g2, ckpt = load_model(path)
        assert ckpt.training_step == 17
        g.eval()
        g2.eval()
        z = torch.randn(3, 100, generator=torch.Generator().manual_seed(5))
        with torch.no_grad():
            torch.testing.assert_close(g(z), g2(z), rtol=0, atol=1e-6)

    def test_round_trip_all_model_kinds(self, tmp_path):
        torch.manual_seed(0)
        models = [
            build_heightmap_generator(hm_gen_spec(32)),
            build_heightmap_discriminator(hm_disc_spec(32)),
            build_texture_generator(tex_gen_spec(32)),
            build_texture_discriminator(tex_disc_spec(32)),
        ]
        for i, m in enumerate(models):
            path = tmp_path / f"m{i}.ckpt"
            save_checkpoint(m, path)
            m2 = restore_model(load_checkpoint(path))
            for (ka, va), (kb, vb) in zip(m.state_dict().items(), m2.state_dict().items()):
                assert ka == kb
                torch.testing.assert_close(va, vb, rtol=0, atol=0)

    def test_kind_mismatch_rejected(self, tmp_path):
        torch.manual_seed(0)
        g = build_heightmap_generator(hm_gen_spec(32))
        path = tmp_path / "g.ckpt"
        save_checkpoint(g, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expect_kind="texture")
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expect_role="discriminator")

    def test_corrupt_file_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        torch.manual_seed(0)
        g = build_heightmap_generator(hm_gen_spec(32))
        path = tmp_path / "g.ckpt"
        save_checkpoint(g, path)
        data = bytearray(path.read_bytes())
        off = len(CHECKPOINT_MAGIC)
        (head_len,) = struct.unpack_from("<I", data, off)
        head = bytes(data[off + 4 : off + 4 + head_len]).replace(b'"version": 1', b'"version": 9')
        path.write_bytes(
            bytes(data[:off]) + struct.pack("<I", len(head)) + head + bytes(data[off + 4 + head_len :])
        )
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_optimizer_state_round_trip(self, tmp_path):
        torch.manual_seed(0)
        g = build_heightmap_generator(hm_gen_spec(32))
        opt = torch.optim.RMSprop(g.parameters(), lr=1e-4, alpha=0.99, eps=1e-8)
        # take one step so the optimizer has state
        g(torch.randn(2, 100)).sum().backward()
        opt.step()
        path = tmp_path / "g.ckpt"
        save_checkpoint(g, path, optimizer=opt)
        ckpt = load_checkpoint(path)
        g2 = restore_model(ckpt)
        opt2 = torch.optim.RMSprop(g2.parameters(), lr=1e-4, alpha=0.99, eps=1e-8)
        restore_optimizer(opt2, ckpt)
        s1, s2 = opt.state_dict(), opt2.state_dict()
        assert s1["param_groups"] == s2["param_groups"]
        for k in s1["state"]:
            for key, val in s1["state"][k].items():
                other = s2["state"][k][key]
                if torch.is_tensor(val):
                    torch.testing.assert_close(val, other, rtol=0, atol=0)
                else:
                    assert val == other

    def test_same_checkpoint_same_output_across_reloads(self, tmp_path):
        torch.manual_seed(2)
        g = build_heightmap_generator(hm_gen_spec(32))
        path = tmp_path / "g.ckpt"
        save_checkpoint(g, path)
        z = torch.randn(2, 100, generator=torch.Generator().manual_seed(11))
        outs = []
        for _ in range(2):
            m = restore_model(load_checkpoint(path))
            m.eval()
            with torch.no_grad():
                outs.append(m(z))
        torch.testing.assert_close(outs[0], outs[1], rtol=0, atol=0)
