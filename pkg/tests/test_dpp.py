import numpy as np
import pytest

from dkprompt.dpp import (
    LCP_KERNEL,
    MCP_KERNEL,
    DualPerception,
    PerceptorStack,
    dpp_forward,
    fuse_embed,
    make_patch_embed,
    patch_embed,
)
from dkprompt.tensor import ConvSpec, ShapeError, conv2d, init_conv


def seeded_pair(seed=5, c=3):
    return (PerceptorStack.seeded(seed, "lcp", c, LCP_KERNEL),
            PerceptorStack.seeded(seed, "mcp", c, MCP_KERNEL))


def test_zero_image_zero_bias_gives_zero():
    lcp, mcp = seeded_pair()
    lcp = PerceptorStack(tuple(ConvSpec(s.weight, np.zeros(3), padding=s.padding) for s in lcp.layers))
    mcp = PerceptorStack(tuple(ConvSpec(s.weight, np.zeros(3), padding=s.padding) for s in mcp.layers))
    assert np.array_equal(dpp_forward(np.zeros((3, 8, 8)), lcp, mcp), np.zeros((3, 8, 8)))


def test_annihilating_weights():
    img = np.random.default_rng(0).uniform(size=(3, 9, 7))
    out = dpp_forward(img, PerceptorStack.zeros(3, 5), PerceptorStack.zeros(3, 3))
    assert np.array_equal(out, np.zeros_like(img))


def test_matches_staged_recomputation():
    img = np.random.default_rng(5).standard_normal((3, 16, 16))
    lcp, mcp = seeded_pair()
    a = img
    for s in lcp.layers:
        a = np.maximum(conv2d(a, s), 0)
    b = img + a
    for s in mcp.layers:
        b = np.maximum(conv2d(b, s), 0)
    np.testing.assert_array_equal(dpp_forward(img, lcp, mcp), a + b)
    assert dpp_forward(img, lcp, mcp).shape == img.shape


def test_zero_mcp_reduces_to_lcp():
    img = np.random.default_rng(6).standard_normal((3, 10, 10))
    lcp, _ = seeded_pair()
    np.testing.assert_array_equal(dpp_forward(img, lcp, PerceptorStack.zeros(3, 3)), lcp(img))


def test_channel_mismatch_rejected():
    lcp, mcp = seeded_pair()
    with pytest.raises(ShapeError):
        dpp_forward(np.zeros((4, 8, 8)), lcp, mcp)


def test_perceptor_stack_invariants():
    good = init_conv(0, "x", 3, 3, 3)
    with pytest.raises(ValueError):
        PerceptorStack((good, good))
    with pytest.raises(ValueError):
        PerceptorStack((good, good, init_conv(0, "y", 3, 4, 3)))
    with pytest.raises(ValueError):
        PerceptorStack((good, good, init_conv(0, "z", 3, 3, 5)))
    with pytest.raises(ValueError):
        PerceptorStack((good, good, init_conv(0, "w", 3, 3, 3, padding=0)))
    assert PerceptorStack.seeded(0, "p", 3, 5).kernel_size == 5


def test_fuse_embed_zero_inputs_broadcast_bias():
    embed = make_patch_embed(1, 3, 8, 16)
    z, x = fuse_embed(np.zeros((3, 128, 128)), np.zeros((3, 128, 128)),
                      np.zeros((3, 256, 256)), np.zeros((3, 256, 256)), embed)
    assert z.shape == (8, 8, 8) and x.shape == (8, 16, 16)
    np.testing.assert_array_equal(z, np.broadcast_to(embed.bias[:, None, None], z.shape))
    np.testing.assert_array_equal(x, np.broadcast_to(embed.bias[:, None, None], x.shape))


def test_single_token_when_patch_is_image():
    embed = make_patch_embed(2, 3, 4, 32)
    img = np.random.default_rng(1).standard_normal((3, 32, 32))
    out = patch_embed(img, embed)
    assert out.shape == (4, 1, 1)
    np.testing.assert_allclose(out[:, 0, 0], np.einsum("ocij,cij->o", embed.weight, img) + embed.bias)


def test_fuse_embed_matches_window_loop():
    rng = np.random.default_rng(2)
    embed = make_patch_embed(3, 3, 6, 16)
    z, mz = rng.standard_normal((2, 3, 128, 128))
    x, mx = rng.standard_normal((2, 3, 256, 256))
    zt, xt = fuse_embed(z, mz, x, mx, embed)
    assert zt.shape == (6, 8, 8) and xt.shape == (6, 16, 16)
    src = x + mx
    for i in (0, 7, 15):
        for j in (0, 9, 15):
            win = src[:, 16 * i:16 * i + 16, 16 * j:16 * j + 16]
            for o in range(6):
                ref = float((embed.weight[o] * win).sum() + embed.bias[o])
                assert abs(xt[o, i, j] - ref) < 1e-9


def test_fuse_embed_is_linear_in_image_plus_matrix():
    rng = np.random.default_rng(4)
    embed = make_patch_embed(0, 3, 5, 16)
    z, mz = rng.standard_normal((2, 3, 32, 32))
    x, mx = rng.standard_normal((2, 3, 48, 48))
    a = fuse_embed(z, mz, x, mx, embed)
    b = fuse_embed(z + mz, np.zeros_like(z), x + mx, np.zeros_like(x), embed)
    for p, q in zip(a, b):
        np.testing.assert_allclose(p, q, atol=1e-9)


def test_non_divisible_rejected():
    embed = make_patch_embed(0, 3, 4, 16)
    with pytest.raises(ShapeError):
        patch_embed(np.zeros((3, 120, 128)), embed)
    with pytest.raises(ShapeError):
        fuse_embed(np.zeros((3, 16, 16)), np.zeros((3, 16, 8)), np.zeros((3, 16, 16)),
                   np.zeros((3, 16, 16)), embed)


def test_disabled_perception_is_zero_and_enabled_is_seeded():
    img = np.random.default_rng(8).uniform(size=(3, 16, 16))
    off = DualPerception.seeded(0, enabled=False)
    assert np.array_equal(off.association(img), np.zeros_like(img))
    on1, on2 = DualPerception.seeded(0), DualPerception.seeded(0)
    np.testing.assert_array_equal(on1.association(img), on2.association(img))
    assert np.all(on1.association(img) >= 0)  # sum of ReLU outputs
