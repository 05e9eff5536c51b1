import numpy as np
import pytest
import torch

from coogan.cooperation import (
    assemble,
    decompose,
    downsample,
    edit_full_image,
    from_patches,
    local_input_batch,
    make_local_inputs,
    to_patches,
    upsample,
)
from coogan.core import DimensionError, ImageTensor, PatchCoord, RunConfig, TilingError
from coogan.networks import GeneratorSpec, build_model
from coogan.profiler import live_tensor_peak


def identity_global(x, d):
    return x


def identity_local(x, d):
    return x[:, :3]


def test_downsample_768_to_256():
    x = torch.rand(3, 768, 768)
    assert downsample(x, 256).shape == (3, 256, 256)


@pytest.mark.parametrize("op,src,dst", [(downsample, 64, 16), (upsample, 16, 64)])
def test_constant_images_stay_constant(op, src, dst):
    x = np.full((3, src, src), 0.3, dtype=np.float32)
    out = op(x, dst)
    assert isinstance(out, np.ndarray) and out.shape == (3, dst, dst)
    np.testing.assert_allclose(out, 0.3, atol=1e-6)


def test_resample_round_trip_on_constants():
    small = torch.full((3, 8, 8), -0.7)
    torch.testing.assert_close(downsample(upsample(small, 32), 8), small, atol=1e-6, rtol=0)
    big = torch.full((3, 32, 32), 0.25)
    torch.testing.assert_close(upsample(downsample(big, 8), 32), big, atol=1e-6, rtol=0)


def test_resample_keeps_image_type():
    img = ImageTensor(np.zeros((3, 16, 16), dtype=np.float32))
    assert isinstance(downsample(img, 8), ImageTensor)
    assert isinstance(upsample(img, 32), ImageTensor)


def test_resample_direction_errors():
    with pytest.raises(DimensionError):
        downsample(torch.zeros(3, 8, 8), 16)
    with pytest.raises(DimensionError):
        upsample(torch.zeros(3, 8, 8), 4)


def test_decompose_counts_and_order():
    x = torch.zeros(3, 768, 768)
    patches = decompose(x, 128)
    assert len(patches) == 36
    assert [(c.row, c.col) for c, _ in patches] == [(m, n) for m in range(6) for n in range(6)]


def test_decompose_small_example():
    x = torch.arange(3 * 16, dtype=torch.float32).reshape(3, 4, 4)
    patches = decompose(x, 2)
    assert len(patches) == 4
    assert torch.equal(patches[0][1], x[:, 0:2, 0:2])
    whole = decompose(x, 4)
    assert len(whole) == 1 and torch.equal(whole[0][1], x)


def test_decompose_rejects_non_divisible():
    with pytest.raises(TilingError):
        decompose(torch.zeros(3, 10, 10), 4)


def test_assemble_permutation_and_errors(rng):
    x = rng.standard_normal((3, 12, 12))
    patches = decompose(x, 4)
    shuffled = [patches[i] for i in rng.permutation(len(patches))]
    np.testing.assert_array_equal(assemble(shuffled, 12), x)
    with pytest.raises(TilingError):
        assemble(patches[:-1], 12)
    with pytest.raises(TilingError):
        assemble(patches + patches[:1], 12)
    with pytest.raises(TilingError):
        assemble(patches, 16)
    with pytest.raises(TilingError):
        assemble([(PatchCoord(3, 0, 4), patches[0][1])] + patches[1:], 12)


def test_batched_patch_helpers_match_decompose(rng):
    x = torch.from_numpy(rng.standard_normal((2, 3, 8, 8)))
    p = to_patches(x, 4)
    assert p.shape == (8, 3, 4, 4)
    for i, (coord, patch) in enumerate(decompose(x[1], 4)):
        assert torch.equal(p[4 + i], patch)
    assert torch.equal(from_patches(p, 8), x)


def test_make_local_inputs_full_scale_sizes():
    hr = torch.zeros(3, 768, 768)
    snap = torch.zeros(3, 256, 256)
    out = make_local_inputs(hr, snap, 128)
    assert len(out) == 36
    assert all(p.shape == (6, 128, 128) for _, p in out)


def test_make_local_inputs_constant_snapshot_matches_hr():
    hr = np.full((3, 64, 64), 0.2, dtype=np.float32)
    snap = np.full((3, 16, 16), 0.2, dtype=np.float32)
    for _, patch in make_local_inputs(hr, snap, 32):
        np.testing.assert_allclose(patch[:3], patch[3:], atol=1e-6)


def test_make_local_inputs_slices_upsampled_snapshot(rng):
    hr = torch.from_numpy(rng.uniform(-1, 1, (3, 64, 64)).astype(np.float32))
    snap = torch.from_numpy(rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32))
    up = upsample(snap, 64)
    for coord, patch in make_local_inputs(hr, snap, 16):
        rows, cols = coord.slices
        assert torch.equal(patch[3:], up[:, rows, cols])
        assert torch.equal(patch[:3], hr[:, rows, cols])
    batch = local_input_batch(hr[None], snap[None], 16)
    assert torch.equal(batch[5], make_local_inputs(hr, snap, 16)[5][1])


def test_make_local_inputs_errors():
    with pytest.raises(TilingError):
        make_local_inputs(torch.zeros(3, 60, 60), torch.zeros(3, 16, 16), 16)
    with pytest.raises(DimensionError):
        make_local_inputs(torch.zeros(3, 64, 32), torch.zeros(3, 16, 16), 16)


def _pipeline(seed=0, n=3):
    g = build_model(GeneratorSpec(n_layers=3, base_channels=4, skip_mode="lstu", skip_count=2, n_attributes=n), seed)
    l = build_model(GeneratorSpec(n_layers=3, base_channels=4, input_channels=6, skip_mode="lstu", skip_count=2,
                                  n_attributes=n), seed + 1)
    return g.eval(), l.eval()


def test_identity_stubs_reproduce_input(rng):
    x = rng.uniform(-1, 1, (3, 64, 64)).astype(np.float32)
    cfg = RunConfig(global_size=16, patch_size=16, hr_size=64, n_attributes=3)
    out = edit_full_image(ImageTensor(x), identity_global, identity_local, np.zeros(3), cfg)
    assert isinstance(out, ImageTensor)
    np.testing.assert_array_equal(out.data, x)


def test_edit_matches_assembled_local_inputs(rng):
    g, l = _pipeline()
    x = torch.from_numpy(rng.uniform(-1, 1, (3, 64, 64)).astype(np.float32))
    d = np.array([1, 0, -1], dtype=np.float32)
    cfg = RunConfig(global_size=32, patch_size=16, hr_size=64, n_attributes=3)
    out = edit_full_image(x, g, l, d, cfg)
    assert out.shape == x.shape
    with torch.no_grad():
        snap = g(downsample(x, 32)[None], torch.from_numpy(d)[None])[0]
        ref = assemble([(c, l(p[None], torch.from_numpy(d)[None])[0]) for c, p in make_local_inputs(x, snap, 16)], 64)
    torch.testing.assert_close(out, ref)


def test_sequential_and_parallel_identical(rng):
    g, l = _pipeline()
    x = torch.from_numpy(rng.uniform(-1, 1, (3, 64, 64)).astype(np.float32))
    cfg = RunConfig(global_size=32, patch_size=16, hr_size=64, n_attributes=3)
    d = np.array([0, 1, 0], dtype=np.float32)
    a = edit_full_image(x, g, l, d, cfg)
    b = edit_full_image(x, g, l, d, cfg, parallel=True)
    c = edit_full_image(x, g, l, d, cfg)
    assert torch.equal(a, b) and torch.equal(a, c)


def test_patch_independence(rng):
    # changing the HR content of one patch only changes that output patch
    g, l = _pipeline()
    cfg = RunConfig(global_size=64, patch_size=16, hr_size=64, n_attributes=3)
    x = torch.from_numpy(rng.uniform(-1, 1, (3, 64, 64)).astype(np.float32))
    snap = torch.from_numpy(rng.uniform(-1, 1, (3, 64, 64)).astype(np.float32))
    fixed = lambda lr, d: snap[None]  # noqa: E731
    y = x.clone()
    y[:, 16:32, 32:48] += 0.5
    a = edit_full_image(x, fixed, l, np.zeros(3), cfg)
    b = edit_full_image(y, fixed, l, np.zeros(3), cfg)
    changed = (a - b).abs().sum(0) > 0
    assert changed[16:32, 32:48].all()
    changed[16:32, 32:48] = False
    assert not changed.any()


def test_patch_hook_sees_single_patches():
    g, l = _pipeline()
    cfg = RunConfig(global_size=32, patch_size=16, hr_size=64, n_attributes=3)
    seen = []
    edit_full_image(torch.zeros(3, 64, 64), g, l, np.zeros(3), cfg, patch_hook=lambda c, p: seen.append((c, p.shape)))
    assert len(seen) == 16 and all(shape == (6, 16, 16) for _, shape in seen)


def test_zero_snapshot_blanks_guidance():
    cfg = RunConfig(global_size=16, patch_size=16, hr_size=32, n_attributes=3)
    seen = []
    edit_full_image(torch.zeros(3, 32, 32), lambda x, d: torch.ones_like(x), identity_local, np.zeros(3), cfg,
                    zero_snapshot=True, patch_hook=lambda c, p: seen.append(p[3:].abs().max().item()))
    assert max(seen) == 0


def test_edit_rejects_wrong_size():
    cfg = RunConfig(global_size=16, patch_size=16, hr_size=64, n_attributes=3)
    with pytest.raises(DimensionError):
        edit_full_image(torch.zeros(3, 32, 32), identity_global, identity_local, np.zeros(3), cfg)


def test_edit_peak_memory_below_monolithic():
    """Sequential editing keeps at most one patch pass alive, far below a full HR pass."""
    torch.manual_seed(0)
    spec = dict(n_layers=4, base_channels=8, skip_mode="lstu", skip_count=3, n_attributes=3)
    g = build_model(GeneratorSpec(**spec)).eval()
    l = build_model(GeneratorSpec(input_channels=6, **spec)).eval()
    hr, patch, glob = 256, 32, 64
    cfg = RunConfig(global_size=glob, patch_size=patch, hr_size=hr, n_attributes=3)
    x = torch.rand(3, hr, hr) * 2 - 1
    d = np.array([1, 0, 0], dtype=np.float32)

    _, edit_peak, _ = live_tensor_peak(edit_full_image, x, g, l, d, cfg)
    with torch.no_grad():
        _, global_peak, _ = live_tensor_peak(g, torch.zeros(1, 3, glob, glob), torch.zeros(1, 3))
        _, patch_peak, _ = live_tensor_peak(l, torch.zeros(1, 6, patch, patch), torch.zeros(1, 3))
        _, mono_peak, _ = live_tensor_peak(l, torch.zeros(1, 6, hr, hr), torch.zeros(1, 3))
    io_buffers = 3 * x.numel() * 4  # float copy of the input, up-sampled snapshot, output canvas
    assert edit_peak <= max(global_peak, patch_peak) + io_buffers
    assert edit_peak < mono_peak


@pytest.mark.parametrize("hr,patch,glob", [(768, 128, 256), (256, 64, 64)])
def test_full_scale_patch_sizes(hr, patch, glob):
    cfg = RunConfig(global_size=glob, patch_size=patch, hr_size=hr, n_attributes=13)
    x = torch.rand(3, hr, hr) * 2 - 1
    seen = []
    out = edit_full_image(x, identity_global, identity_local, np.zeros(13), cfg,
                          patch_hook=lambda c, p: seen.append(tuple(p.shape)))
    assert torch.equal(out, x)
    assert seen == [(6, patch, patch)] * (hr // patch) ** 2
