"""MCFCN builder, segmentation loss with ignore labels, and mask extraction."""

import numpy as np
import pytest

from bgfg.autodiff import Tensor, concat_channels
from bgfg.data import SpriteSpec, SyntheticSceneSpec, synth_sequence
from bgfg.errors import ConfigError, DataError, ShapeError
from bgfg.evaluation import f_measure
from bgfg.nets import Network
from bgfg.segmentation import (
    DESK_MCFCN,
    DESK_MCFCN_SINGLE,
    LabelMap,
    McfcnProfile,
    ProbabilityMap,
    build_mcfcn,
    mask_from_probs,
    segment,
    segmentation_loss,
)


class TestProfileAndBuilder:
    def test_first_conv_accepts_six_channels(self):
        net = Network(build_mcfcn(DESK_MCFCN))
        net.initialize(0)
        c1 = DESK_MCFCN.stage_channels[0]
        assert net.params["stage1.weight"].shape == (c1, 6, 3, 3)

    def test_three_channel_variant_differs_only_in_first_layer(self):
        six = Network(build_mcfcn(DESK_MCFCN))
        three = Network(build_mcfcn(DESK_MCFCN_SINGLE))
        six.initialize(0)
        three.initialize(0)
        c1 = DESK_MCFCN.stage_channels[0]
        expected_extra = c1 * 3 * 3 * 3  # three more input planes, k=3
        assert six.param_count() - three.param_count() == expected_extra

    def test_fc6_dilation_default_is_six(self):
        assert McfcnProfile().fc6_dilation == 6
        spec = build_mcfcn(DESK_MCFCN)
        head6 = next(l for l in spec.layers if getattr(l, "name", "") == "head6")
        assert head6.spec.dilation == 6
        assert head6.spec.padding == 6

    def test_first_stage_after_striding_is_dilated(self):
        spec = build_mcfcn(DESK_MCFCN)
        convs = [l for l in spec.layers if getattr(l, "name", "").startswith("stage")]
        strided = [l for l in convs if l.spec.stride == 2]
        assert len(strided) == 2  # output_stride 4
        first_unstrided = convs[len(strided)]
        assert first_unstrided.spec.dilation == 2

    def test_invalid_in_channels_rejected(self):
        with pytest.raises(ConfigError):
            McfcnProfile(in_channels=4)

    def test_output_stride_must_be_power_of_two(self):
        with pytest.raises(ConfigError):
            McfcnProfile(output_stride=3)

    def test_classifier_emits_two_channels(self):
        net = Network(build_mcfcn(DESK_MCFCN))
        net.initialize(0)
        assert net.params["classifier.weight"].shape[0] == 2


class TestConcat:
    def test_frame_then_background(self, rng):
        frame = rng.normal(size=(1, 3, 8, 8))
        background = rng.normal(size=(1, 3, 8, 8))
        out = concat_channels(Tensor(frame), Tensor(background))
        assert out.shape == (1, 6, 8, 8)
        np.testing.assert_array_equal(out.data[:, :3], frame)
        np.testing.assert_array_equal(out.data[:, 3:], background)

    def test_duplicated_input_duplicates_channels(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 4, 4)))
        out = concat_channels(x, x)
        np.testing.assert_array_equal(out.data[:, 0], out.data[:, 3])

    def test_spatial_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            concat_channels(Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((1, 3, 4, 4))))


class TestSegment:
    def test_output_is_full_resolution_probability_map(self, rng):
        net = Network(build_mcfcn(DESK_MCFCN))
        net.initialize(0, init_std=0.1)
        pmap = segment(net, Tensor(rng.normal(size=(2, 6, 64, 64))))
        assert isinstance(pmap, ProbabilityMap)
        assert pmap.probs.shape == (2, 2, 64, 64)
        np.testing.assert_allclose(pmap.probs.data.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_network_gives_uniform_half(self, rng):
        net = Network(build_mcfcn(DESK_MCFCN))
        net.initialize(0)
        net.load_params({k: np.zeros_like(v) for k, v in net.param_arrays().items()})
        pmap = segment(net, Tensor(rng.normal(size=(1, 6, 32, 32))))
        np.testing.assert_array_equal(pmap.probs.data, np.full((1, 2, 32, 32), 0.5))

    def test_channel_mismatch_rejected(self, rng):
        net = Network(build_mcfcn(DESK_MCFCN))
        net.initialize(0)
        with pytest.raises(ShapeError):
            segment(net, Tensor(rng.normal(size=(1, 3, 32, 32))))

    def test_odd_input_size_still_restores_resolution(self, rng):
        net = Network(build_mcfcn(DESK_MCFCN))
        net.initialize(0, init_std=0.1)
        pmap = segment(net, Tensor(rng.normal(size=(1, 6, 50, 50))))
        assert pmap.probs.shape == (1, 2, 50, 50)


class TestSegmentationLoss:
    def test_probability_one_gives_zero_loss(self):
        probs = np.zeros((1, 2, 2, 2))
        probs[:, 1] = 1.0
        labels = LabelMap(np.ones((2, 2), dtype=np.int64))
        loss = segmentation_loss(ProbabilityMap(Tensor(probs)), labels)
        assert loss.item() == 0.0

    def test_single_pixel_half_probability_is_ln_two(self):
        probs = np.full((1, 2, 1, 1), 0.5)
        labels = LabelMap(np.array([[1]], dtype=np.int64))
        loss = segmentation_loss(ProbabilityMap(Tensor(probs)), labels)
        assert abs(loss.item() - np.log(2.0)) < 1e-12

    def test_all_ignored_gives_zero_loss_and_bitwise_zero_grads(self, rng):
        probs = Tensor(rng.uniform(0.1, 0.9, size=(1, 2, 3, 3)), requires_grad=True)
        labels = LabelMap(np.full((3, 3), -1, dtype=np.int64))
        loss = segmentation_loss(ProbabilityMap(probs), labels)
        assert loss.item() == 0.0
        loss.backward()
        assert np.all(probs.grad == 0.0)
        assert probs.grad.dtype == probs.data.dtype

    def test_invalid_label_values_rejected(self):
        with pytest.raises(DataError):
            LabelMap(np.array([[2]], dtype=np.int64))
        with pytest.raises(DataError):
            LabelMap(np.array([[-3]], dtype=np.int64))

    def test_mean_normalization_over_scored_pixels(self):
        # two scored pixels at p=0.5 and p=1.0 -> loss = ln(2)/2
        probs = np.zeros((1, 2, 1, 3))
        probs[0, :, 0, 0] = (0.5, 0.5)
        probs[0, :, 0, 1] = (0.0, 1.0)
        probs[0, :, 0, 2] = (0.3, 0.7)
        labels = LabelMap(np.array([[1, 1, -1]], dtype=np.int64))
        loss = segmentation_loss(ProbabilityMap(Tensor(probs)), labels)
        assert abs(loss.item() - np.log(2.0) / 2.0) < 1e-12


class TestMaskFromProbs:
    def _pmap(self, fg):
        fg = np.asarray(fg, dtype=np.float64)[None, None]
        probs = np.concatenate([1.0 - fg, fg], axis=1)
        return ProbabilityMap(Tensor(probs))

    def test_argmax_foreground_wins_above_half(self):
        mask = mask_from_probs(self._pmap([[0.6, 0.4]]))
        np.testing.assert_array_equal(mask, [[1, 0]])

    def test_argmax_tie_goes_to_background(self):
        mask = mask_from_probs(self._pmap([[0.5]]))
        np.testing.assert_array_equal(mask, [[0]])

    def test_threshold_is_strict(self):
        pmap = self._pmap([[0.5, 0.500001]])
        mask = mask_from_probs(pmap, mode="threshold", threshold=0.5)
        np.testing.assert_array_equal(mask, [[0, 1]])

    def test_threshold_range_validated(self):
        with pytest.raises(ConfigError):
            mask_from_probs(self._pmap([[0.5]]), mode="threshold", threshold=1.0)
        with pytest.raises(ConfigError):
            mask_from_probs(self._pmap([[0.5]]), mode="threshold", threshold=0.0)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            mask_from_probs(self._pmap([[0.5]]), mode="otsu")

    def test_batch_output_keeps_batch_axis(self, rng):
        fg = rng.uniform(size=(3, 1, 4, 4))
        probs = np.concatenate([1.0 - fg, fg], axis=1)
        mask = mask_from_probs(ProbabilityMap(Tensor(probs)))
        assert mask.shape == (3, 4, 4)


class TestOverfitMovingSquare:
    def test_single_image_net_reaches_f_095_on_training_frames(self):
        # bright sprite on a smooth background: the appearance cue suffices
        from bgfg.autodiff import SgdState, masked_nll_mean, sgd_step, softmax_channels

        scene = SyntheticSceneSpec(
            canvas=32,
            background="static",
            frames=10,
            seed=21,
            noise_sigma=0.01,
            sprites=(SpriteSpec(shape="square", size=8, velocity=(2, 3), color=(0.95, 0.1, 0.1)),),
        )
        frames = synth_sequence(scene)
        x = np.stack([f.image for f in frames]).astype(np.float32)
        labels = np.stack([f.labels.values for f in frames])

        net = Network(build_mcfcn(DESK_MCFCN_SINGLE), dtype=np.float32)
        net.initialize(0, init_std=0.1)
        state = SgdState(learning_rate=0.2, momentum=0.9)
        rng = np.random.default_rng(0)
        for _ in range(400):
            idx = rng.integers(0, len(frames), size=4)
            net.zero_grad()
            probs = softmax_channels(net.forward(Tensor(x[idx])))
            masked_nll_mean(probs, labels[idx]).backward()
            sgd_step(state, net.params)

        masks = [mask_from_probs(segment(net, Tensor(x[i : i + 1]))) for i in range(len(frames))]
        report = f_measure(masks, [f.labels for f in frames])
        assert report.f_measure >= 0.95, f"train F {report.f_measure:.4f}"
