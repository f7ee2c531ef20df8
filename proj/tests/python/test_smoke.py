import numpy as np
import pytest

import memo


def tiny_net(seed=0x11):
    return memo.Network(channels=[8, 16], norm_groups=4, pe_dim=16, seed=seed)


def make_samples(n, seed0=100, size=16):
    samples = []
    for i in range(n):
        image, edges = memo.generate_scene(
            seed0 + i, width=size, height=size, min_shapes=1, max_shapes=2,
            min_radius=3, max_radius=6,
        )
        samples.append((image, edges))
    return samples


def test_scene_generation_shapes_and_determinism():
    image, edges = memo.generate_scene(7)
    assert image.shape == (3, 64, 64)
    assert image.dtype == np.float32
    assert edges.shape == (64, 64)
    assert edges.dtype == np.uint8
    assert 0.0 <= image.min() and image.max() <= 1.0
    assert edges.sum() > 0

    again_image, again_edges = memo.generate_scene(7)
    np.testing.assert_array_equal(image, again_image)
    np.testing.assert_array_equal(edges, again_edges)

    other_image, _ = memo.generate_scene(8)
    assert not np.array_equal(image, other_image)


def test_generated_edges_are_crisp():
    for seed in range(5):
        _, edges = memo.generate_scene(seed)
        ac = memo.average_crispness(edges.astype(np.float32))
        assert ac >= 0.95


def test_untrained_network_predicts_half():
    net = tiny_net()
    assert net.downsample_factor == 2
    image, _ = memo.generate_scene(3, width=16, height=16)
    probs = net.predict(image)
    assert probs.shape == (16, 16)
    np.testing.assert_allclose(probs, 0.5, atol=1e-6)


def test_inference_trace_monotone():
    net = tiny_net()
    image, _ = memo.generate_scene(4, width=16, height=16)
    out = net.infer(image, steps=6)
    masked = out["masked_per_step"]
    assert masked[0] == 16 * 16
    assert all(b < a for a, b in zip(masked, masked[1:]))
    assert out["forward_passes"] == len(masked)
    assert out["edges"].shape == (16, 16)
    assert out["probabilities"].shape == (16, 16)


def test_guided_matches_plain_at_scale_one():
    net = tiny_net()
    image, _ = memo.generate_scene(5, width=16, height=16)
    plain = net.predict(image, ratio=0.7)
    guided = net.predict_guided(image, ratio=0.7, scale=1.0)
    np.testing.assert_allclose(plain, guided, atol=1e-6)


def test_training_reduces_loss():
    net = tiny_net()
    report = net.train(
        make_samples(8), epochs=4, batch_size=4, lr=1e-3, seed=3, mask_ratio=1.0
    )
    losses = report["epoch_mean_losses"]
    assert report["total_steps"] == 8
    assert losses[-1] < losses[0]
    assert losses[0] == pytest.approx(np.log(2), rel=0.05)


def test_checkpoint_round_trip(tmp_path):
    net = tiny_net(seed=0x21)
    net.train(make_samples(4), epochs=1, batch_size=4, lr=1e-3, seed=9)
    path = str(tmp_path / "net.ckpt")
    net.save(path)

    other = tiny_net(seed=0x22)
    other.load(path)
    image, _ = memo.generate_scene(6, width=16, height=16)
    np.testing.assert_array_equal(net.predict(image), other.predict(image))


def test_lora_adapters():
    net = tiny_net()
    base_params = net.parameter_count
    assert not net.has_lora()
    net.lora_inject(rank=2, alpha=4.0)
    assert net.has_lora()
    assert net.lora_parameter_count() > 0
    # only adapters stay trainable, base weights frozen
    assert net.trainable_parameter_count == net.lora_parameter_count()
    assert net.parameter_count > base_params


def test_evaluation_perfect_prediction():
    gts = [edges for _, edges in make_samples(3, seed0=40)]
    preds = [g.astype(np.float32) for g in gts]
    report = memo.ods_ois(preds, gts, protocol="ceval")
    assert report["ods"] == pytest.approx(1.0)
    assert report["ois"] == pytest.approx(1.0)
    assert report["crispness"] >= 0.95


def test_match_edges_counts():
    pred = np.zeros((4, 4), dtype=np.uint8)
    gt = np.zeros((4, 4), dtype=np.uint8)
    pred[1, 1] = 1
    pred[3, 3] = 1
    gt[1, 2] = 1
    tp, fp, fn = memo.match_edges(pred, gt, 1.0)
    assert (tp, fp, fn) == (1, 1, 0)
    assert memo.edge_tolerance_px(300, 400) == pytest.approx(3.75)


def test_dataset_round_trip(tmp_path):
    out = str(tmp_path / "data")
    n = memo.build_dataset(3, out, seed=5, width=32, height=32)
    assert n == 3
    pairs = memo.load_dataset(out)
    assert len(pairs) == 3
    image, edges = pairs[0]
    assert image.shape == (3, 32, 32)
    assert edges.shape == (32, 32)
    fresh_image, fresh_edges = memo.generate_scene(
        0, width=32, height=32
    )  # different seed derivation than the dataset; just sanity-check types
    assert fresh_image.dtype == image.dtype and fresh_edges.dtype == edges.dtype


def test_invalid_arguments_raise():
    net = tiny_net()
    image, _ = memo.generate_scene(9, width=16, height=16)
    with pytest.raises(ValueError):
        net.predict(image, ratio=0.0)
    with pytest.raises(ValueError):
        net.infer(image, steps=0)
    with pytest.raises(ValueError):
        net.infer(image, strategy="best")
    with pytest.raises(ValueError):
        memo.ods_ois([], [], protocol="fancy")
