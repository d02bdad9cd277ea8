import dataclasses
import hashlib

import numpy as np
import pytest

from fsasd import datasets as ds
from fsasd import synthgen as sg
from fsasd.errors import InvalidSpec

SPEC = sg.CATALOGUE["ToyCar"]


def seq(i=0, condition="normal", domain="source"):
    return sg.substream(11, SPEC.name, "test", domain, condition, i)


def with_gain(spec, gain):
    return dataclasses.replace(spec, anomaly_spec=dataclasses.replace(spec.anomaly_spec, burst_gain_db=gain))


def test_clip_length_and_peak():
    for seconds in (6.0, 7.5, 18.0):
        w = sg.synth_clip(dataclasses.replace(SPEC, clip_seconds=seconds), "source", "normal", seq())
        assert len(w) == int(seconds * 16000)
        assert np.abs(w).max() <= sg.PEAK_LIMIT
    loud = with_gain(SPEC, 40.0)
    assert np.abs(sg.synth_clip(loud, "target", "anomaly", seq())).max() == pytest.approx(sg.PEAK_LIMIT)


def test_invalid_spec():
    for bad in (dataclasses.replace(SPEC, clip_seconds=5.0), dataclasses.replace(SPEC, fundamental_hz=8000.0),
                dataclasses.replace(SPEC, noise_band=(3000.0, 2000.0)), dataclasses.replace(SPEC, n_harmonics=0)):
        with pytest.raises(InvalidSpec):
            sg.synth_clip(bad, "source", "normal", seq())


def test_anomaly_energy_exceeds_paired_normal():
    spec = with_gain(SPEC, 12.0)
    for i in range(5):
        s = seq(i)
        normal = sg.synth_clip(spec, "source", "normal", s)
        anomaly = sg.synth_clip(spec, "source", "anomaly", s)
        assert np.mean(anomaly ** 2) > np.mean(normal ** 2)


def test_anomaly_converges_to_normal_without_bursts():
    s = seq(3)
    normal = sg.synth_clip(SPEC, "target", "normal", s)
    for gain in (0.0, -20.0):
        anomaly = sg.synth_clip(with_gain(SPEC, gain), "target", "anomaly", s)
        np.testing.assert_array_equal(anomaly, normal)
    faint = sg.synth_clip(with_gain(SPEC, 0.01), "target", "anomaly", s)
    assert 0 < np.abs(faint - normal).max() < 0.05


def test_target_shift_moves_peak():
    spec = dataclasses.replace(SPEC, target_shift=sg.TargetShift(1.1, 0.0))
    s = seq(4)
    peaks = []
    for domain in ("source", "target"):
        w = sg.synth_clip(spec, domain, "normal", s)
        # direct periodogram peak over the whole clip
        power = np.abs(np.fft.rfft(w)) ** 2
        peaks.append(int(power.argmax()))
    assert abs(peaks[1] - round(1.1 * peaks[0])) <= 1


def test_determinism_and_substreams():
    a = sg.synth_clip(SPEC, "source", "normal", seq(1))
    b = sg.synth_clip(SPEC, "source", "normal", seq(1))
    c = sg.synth_clip(SPEC, "source", "normal", seq(2))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    d = sg.synth_clip(SPEC, "source", "normal", sg.substream(11, SPEC.name, "train", "source", "normal", 1))
    assert not np.array_equal(a, d)


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.wav")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def mini_cfg(seed=5):
    machines = tuple(dataclasses.replace(sg.CATALOGUE[n]) for n in ("ToyCar", "fan"))
    return sg.SynthConfig(seed, machines, sg.SynthCounts(20, 2, 5, 5))


def test_corpus_counts_and_determinism(tmp_path):
    manifest = sg.synth_corpus(mini_cfg(), tmp_path / "a")
    files = list((tmp_path / "a").rglob("*.wav"))
    assert len(files) == 2 * (20 + 2 + 2 * 5 + 2 * 5) == 84
    for p in files:
        ds.parse_filename(p.name)
    assert manifest.train_counts(("fan", 0)) == {"source": 20, "target": 2}
    sg.synth_corpus(mini_cfg(), tmp_path / "b", workers=4)
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    sg.synth_corpus(mini_cfg(6), tmp_path / "c")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_default_counts_follow_dev_set_layout():
    cfg = sg.SynthConfig(0, (SPEC,))
    plan = sg.corpus_plan(cfg)
    count = lambda **kw: sum(all(getattr(m, k) == v for k, v in kw.items()) for _, m in plan)
    assert count(split="train", domain="source") == 990
    assert count(split="train", domain="target") == 10
    assert count(split="test") == 200
    assert count(split="test", label="anomaly") == 100
    assert count(split="test", domain="target", label="normal") == 50


@pytest.mark.slow
def test_default_corpus_on_disk(tmp_path):
    cfg = sg.SynthConfig(0, (SPEC,))
    manifest = sg.synth_corpus(cfg, tmp_path, workers=4)
    assert manifest.train_counts(("ToyCar", 0)) == {"source": 990, "target": 10}
    assert len(manifest.clips("ToyCar", 0, split="test")) == 200
    assert manifest.warnings == []


def test_config_validation():
    with pytest.raises(InvalidSpec):
        sg.SynthConfig(0, (SPEC, SPEC)).validate()
    with pytest.raises(InvalidSpec):
        sg.SynthCounts(0, 1, 1, 1)
