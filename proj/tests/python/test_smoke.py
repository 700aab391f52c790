import numpy as np
import pytest

import dimwm


def small_model(**kw):
    args = dict(frames=2, height=16, width=16, message_length=8, seed=1)
    args.update(kw)
    return dimwm.Model.create(**args)


def test_embed_identities():
    model = small_model()
    clip = dimwm.synthetic_clip(2, 16, 16, seed=3)
    msg = dimwm.sample_message(8, seed=4)
    wm = model.embed(clip, msg)
    assert wm.shape == clip.shape
    assert wm.dtype == np.float32
    assert 0.0 <= wm.min() and wm.max() <= 1.0
    assert np.array_equal(dimwm.fuse(wm, clip, np.ones((2, 16, 16), np.uint8)), wm)
    assert np.array_equal(dimwm.fuse(wm, clip, np.zeros((2, 16, 16), np.uint8)), clip)
    model.mu = 0.0
    assert np.array_equal(model.embed(clip, msg), clip)


def test_decode_and_localize_shapes():
    model = small_model(mask_channels=2)
    clip = dimwm.synthetic_clip(2, 16, 16)
    probs = model.decode(clip)
    assert probs.shape == (8,)
    assert set(np.unique(model.extract(clip))) <= {0, 1}
    assert model.predict_mask(clip).shape == (2, 16, 16, 2)
    assert model.localize(clip).dtype == np.uint8
    assert len(model.recover_order(clip)) == 2


def test_hex_messages_and_errors():
    model = small_model()
    clip = dimwm.synthetic_clip(2, 16, 16)
    assert np.array_equal(model.embed(clip, "a5"), model.embed(clip, dimwm.message_from_hex("a5", 8)))
    assert dimwm.message_to_hex(dimwm.message_from_hex("a5", 8)) == "a5"
    with pytest.raises(ValueError):
        model.embed(clip, "zz")
    with pytest.raises(dimwm.CapacityExceeded):
        dimwm.build_codebook(16, 4)
    m13 = small_model(d_e=1)
    with pytest.raises(ValueError):
        m13.embed(clip, "a5", mask=np.ones((2, 16, 16), np.uint8))


def test_masks_and_metrics():
    mask = dimwm.generate_mask("rectangular", 16, 16, seed=2)
    assert mask.shape == (16, 16, 1)
    seq = dimwm.generate_mask_sequence(mask, 4, 2, seed=3)
    assert seq.shape == (4, 16, 16, 1)
    assert all(seq[t].sum() > 0 for t in range(4))
    shifted = dimwm.shift_mask(mask, 1, 0)
    assert shifted[:, 1:].sum() == mask[:, :-1].sum()
    coded = dimwm.encode_multichannel(seq, 3)
    assert coded.shape == (4, 16, 16, 3)
    assert dimwm.build_codebook(3, 2) == [[1, 0], [0, 1], [1, 1]]
    assert dimwm.iou(seq.astype(np.float32), seq) == 1.0
    assert dimwm.bit_accuracy(np.array([1, 0, 1], np.float32), np.array([1, 0, 0], np.uint8)) == pytest.approx(2 / 3)
    clip = dimwm.synthetic_clip(2, 16, 16)
    assert dimwm.ssim(clip, clip) == pytest.approx(1.0)
    assert dimwm.psnr(clip, np.clip(clip + 0.01, 0, 1)) > 30


def test_attacks():
    clip = dimwm.synthetic_clip(3, 16, 16)
    assert "hflip" in dimwm.presets("evaluation")
    flipped = dimwm.attack(clip, "hflip")
    assert np.array_equal(dimwm.attack(flipped, "hflip"), clip)
    mask = np.zeros((3, 16, 16), np.uint8)
    mask[:, :, :4] = 1
    out, moved = dimwm.attack(clip, "hflip", mask=mask)
    assert moved[:, :, -4:].all() and moved[:, :, :-4].sum() == 0
    if not dimwm.codec_available():
        with pytest.raises(dimwm.EnvironmentError):
            dimwm.attack(clip, "h264_crf20")


def test_evaluate_and_cli(tmp_path):
    model = small_model()
    clips = [dimwm.synthetic_clip(2, 16, 16, seed=s) for s in range(2)]
    report = dimwm.evaluate(model, clips, presets=["hflip", "jpeg"])
    assert "distortion,category" in report["distortions_csv"]
    assert 0.0 <= report["clean_bit_accuracy"] <= 1.0

    path = tmp_path / "model.dimc"
    model.save(path)
    dimwm.save_clip(tmp_path / "clip.dimt", clips[0])
    code, out, _ = dimwm.run_cli(["embed", "-k", str(path), "-i", str(tmp_path / "clip.dimt"),
                                  "-o", str(tmp_path / "wm.dimt"), "-m", "a5"])
    assert code == 0 and "psnr" in out
    loaded = dimwm.Model.load(path)
    assert np.array_equal(dimwm.load_clip(tmp_path / "wm.dimt"), loaded.embed(clips[0], "a5"))
    assert dimwm.run_cli(["frobnicate"])[0] == 2
