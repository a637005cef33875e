import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import oracles as O
from cinematte.backbone import (Block, TokenGrid, ViTBackbone, ViTConfig, extract_patches,
                                gram_loss, num_tokens, sincos_pos_embed)
from cinematte.errors import NumericError, ShapeError

D64 = torch.float64


def small_vit(**kw):
    cfg = dict(patch_size=4, embed_dim=8, depth=2, num_heads=2)
    cfg.update(kw)
    torch.manual_seed(0)
    return ViTBackbone(ViTConfig(**cfg)).to(D64)


def test_config_validation():
    with pytest.raises(ValueError):
        ViTConfig(embed_dim=10, num_heads=4)
    with pytest.raises(ValueError):
        ViTConfig(depth=0)
    with pytest.raises(ValueError):
        ViTConfig(patch_size=0)


@pytest.mark.parametrize("size,grid", [(16, (1, 1)), (32, (2, 2)), (768, (48, 48))])
def test_token_counts(size, grid):
    patches, gh, gw = extract_patches(torch.zeros(1, 3, size, size), 16)
    assert (gh, gw) == grid
    assert patches.shape[1] == num_tokens(size, size, 16) == size * size // 256


def test_patch_membership():
    img = torch.arange(2 * 32 * 32, dtype=D64).reshape(1, 2, 32, 32)
    patches, _, _ = extract_patches(img, 16)
    for token, (r0, c0) in enumerate([(0, 0), (0, 16), (16, 0), (16, 16)]):
        want = [img[0, ch, r0 + y, c0 + x].item()
                for y in range(16) for x in range(16) for ch in range(2)]
        assert patches[0, token].tolist() == want


@pytest.mark.parametrize("h,w,axis", [(30, 32, "height"), (32, 20, "width")])
def test_indivisible_axis_named(h, w, axis):
    with pytest.raises(ShapeError, match=axis):
        extract_patches(torch.zeros(1, 3, h, w), 16)


def test_patchify_matches_oracle():
    vit = small_vit()
    img = torch.rand(1, 3, 8, 12, dtype=D64, generator=torch.Generator().manual_seed(1))
    grid = vit.patchify(img)
    want = O.patch_tokens(O.arr(img[0]).transpose(1, 2, 0), O.arr(vit.patch_embed.weight),
                          O.arr(vit.patch_embed.bias), 4)
    assert (grid.grid_h, grid.grid_w) == (2, 3)
    np.testing.assert_allclose(O.arr(grid.tokens[0]), want, atol=1e-12)


def test_sincos_shape_and_range():
    pe = sincos_pos_embed(3, 5, 16)
    assert pe.shape == (15, 16)
    assert pe.abs().max() <= 1
    np.testing.assert_allclose(O.arr(pe[7]), O.sincos(1, 2, 16), atol=1e-14)


def test_encode_matches_blockwise_oracle():
    vit = small_vit(embed_dim=8, depth=2)
    x = torch.randn(1, 4, 8, dtype=D64, generator=torch.Generator().manual_seed(2))
    out = vit.encode(TokenGrid(x, 2, 2)).tokens[0]
    want = O.arr(x[0])
    for i in range(2):
        want = O.vit_block(want, O.params_of(vit.blocks[i]), 2)
    np.testing.assert_allclose(O.arr(out), want, atol=1e-10)


def test_zero_projections_give_identity():
    vit = small_vit()
    with torch.no_grad():
        for blk in vit.blocks:
            blk.attn.out.weight.zero_(); blk.attn.out.bias.zero_()
            blk.mlp.fc2.weight.zero_(); blk.mlp.fc2.bias.zero_()
    x = torch.randn(1, 6, 8, dtype=D64)
    assert torch.equal(vit.encode(TokenGrid(x, 2, 3)).tokens, x)


def test_single_token_attention_is_value_projection():
    blk = Block(8, 1, 4.0).to(D64)
    x = torch.randn(1, 1, 8, dtype=D64)
    w = blk.attn.weights(x)
    assert torch.equal(w, torch.ones_like(w))
    np.testing.assert_allclose(O.arr(blk.attn(x)), O.arr(blk.attn.out(blk.attn.v(x))), atol=1e-14)


def test_attention_rows_sum_to_one():
    blk = Block(16, 4, 2.0)
    x = torch.randn(2, 9, 16)
    w = blk.attn.weights(blk.norm1(x))
    assert torch.allclose(w.sum(-1), torch.ones(2, 4, 9), atol=1e-6)


def test_encode_rejects_wrong_dim_and_reports_layer():
    vit = small_vit()
    with pytest.raises(ShapeError):
        vit.encode(TokenGrid(torch.zeros(1, 4, 12, dtype=D64), 2, 2))
    with torch.no_grad():
        vit.blocks[1].mlp.fc2.bias.fill_(float("inf"))
    with pytest.raises(NumericError) as err:
        vit.encode(TokenGrid(torch.zeros(1, 4, 8, dtype=D64), 2, 2))
    assert err.value.layer == 1


def test_frozen_and_shared():
    vit = small_vit()
    assert not any(p.requires_grad for p in vit.parameters())
    img = torch.rand(1, 3, 8, 8, dtype=D64)
    assert torch.equal(vit(img).tokens, vit(img.clone()).tokens)
    unfrozen = ViTBackbone(ViTConfig(patch_size=4, embed_dim=8, depth=1, num_heads=2, frozen=False))
    assert all(p.requires_grad for p in unfrozen.parameters())


def test_seeded_init_is_deterministic():
    a, b = small_vit(), small_vit()
    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))


def test_load_pretrained(tmp_path):
    src, dst = small_vit(), ViTBackbone(ViTConfig(patch_size=4, embed_dim=8, depth=2, num_heads=2))
    torch.save(src.state_dict(), tmp_path / "w.pt")
    dst.to(D64).load_pretrained(tmp_path / "w.pt")
    assert torch.equal(dst.patch_embed.weight, src.patch_embed.weight)
    assert not any(p.requires_grad for p in dst.parameters())


def test_gram_examples():
    eye = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]])
    swap = torch.tensor([[[0.0, 1.0], [1.0, 0.0]]])
    assert gram_loss(eye, swap).item() == 0.0
    assert gram_loss(torch.tensor([[[1.0, 0.0]]]), torch.tensor([[[2.0, 0.0]]])).item() == 9.0
    with pytest.raises(ShapeError):
        gram_loss(torch.zeros(1, 2, 3), torch.zeros(1, 3, 3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 10_000))
def test_gram_properties(n, d, seed):
    g = torch.Generator().manual_seed(seed)
    xs, xt = torch.randn(1, n, d, dtype=D64, generator=g), torch.randn(1, n, d, dtype=D64, generator=g)
    assert gram_loss(xs, xs).item() == 0.0
    assert gram_loss(xs, xt).item() >= 0.0
    q, _ = torch.linalg.qr(torch.randn(d, d, dtype=D64, generator=g))
    base = gram_loss(xs, xt).item()
    assert abs(gram_loss(xs @ q, xt @ q).item() - base) <= 1e-6 * max(1.0, base)
