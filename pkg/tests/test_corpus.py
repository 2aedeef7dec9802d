import numpy as np
import pytest

from enhasr.corpus import (
    OVERLAP,
    SEGMENT,
    CorpusSpec,
    Manifest,
    build_corpus,
    char_fundamental,
    load_utterance,
    measure_snr_db,
    mix_noise,
    read_wav,
    synth_utterance,
    utterance_length,
    write_wav,
)
from enhasr.dsp import WaveformBuffer


def test_synth_length_formula():
    w = synth_utterance("abc", seed=0)
    assert len(w) == utterance_length(3) == 3 * (SEGMENT - OVERLAP) + OVERLAP


def test_synth_deterministic_bitwise():
    a = synth_utterance("bead", seed=42)
    b = synth_utterance("bead", seed=42)
    assert a.samples.tobytes() == b.samples.tobytes()
    c = synth_utterance("bead", seed=43)
    assert a.samples.tobytes() != c.samples.tobytes()


def test_synth_rejects_out_of_alphabet():
    with pytest.raises(ValueError, match="alphabet"):
        synth_utterance("axz", seed=0, alphabet="abc")


def test_characters_have_distinct_dominant_bins():
    # DFT-peak oracle over the character table
    wa = synth_utterance("a", seed=1)
    wb = synth_utterance("b", seed=1)
    n = len(wa)
    bins_a = np.argsort(np.abs(np.fft.rfft(wa.samples)))[-2:]
    bins_b = np.argsort(np.abs(np.fft.rfft(wb.samples)))[-2:]
    assert set(bins_a).isdisjoint(set(bins_b))
    # the dominant bin tracks the per-character fundamental
    fa = char_fundamental("a", "abcdef")
    assert abs(bins_a.min() * 16000 / n - fa) < 20


# ---------------------------------------------------------------------------
# noise mixing


def test_equal_power_zero_db_scale_is_one():
    t = np.arange(16000) / 16000.0
    clean = WaveformBuffer(np.sin(2 * np.pi * 440 * t))
    # build a "noise" of exactly equal power by shifting the same tone
    noisy = mix_noise(clean, "white", 0.0, seed=5)
    residual = noisy.samples - clean.samples
    ratio = np.mean(clean.samples ** 2) / np.mean(residual ** 2)
    assert abs(ratio - 1.0) < 1e-9


def test_six_db_target_halves_amplitude():
    t = np.arange(8000) / 16000.0
    clean = WaveformBuffer(np.sin(2 * np.pi * 300 * t))
    noisy = mix_noise(clean, "hum", 6.0205999132796239, seed=9)
    residual = noisy.samples - clean.samples
    scale = np.sqrt(np.mean(residual ** 2) / np.mean(clean.samples ** 2))
    assert abs(scale - 0.5) < 1e-6


@pytest.mark.parametrize("kind", ["white", "babble-like", "hum"])
@pytest.mark.parametrize("snr", [-3.0, 0.0, 7.5])
def test_measured_snr_matches_request(kind, snr):
    w = synth_utterance("cafe", seed=11)
    noisy = mix_noise(w, kind, snr, seed=12)
    assert abs(measure_snr_db(noisy, w) - snr) < 0.01


def test_silent_clean_rejected():
    with pytest.raises(ValueError, match="silent"):
        mix_noise(WaveformBuffer(np.zeros(100) + 0.0 * np.ones(100) + 1e-300), "white", 0.0, 1)


def test_nonfinite_snr_rejected():
    w = synth_utterance("a", seed=0)
    with pytest.raises(ValueError, match="finite"):
        mix_noise(w, "white", float("inf"), 1)


# ---------------------------------------------------------------------------
# wav io


def test_wav_round_trip_quantization_bound(tmp_path):
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=5000)
    p = tmp_path / "x.wav"
    write_wav(p, WaveformBuffer(x))
    y = read_wav(p)
    assert np.max(np.abs(y.samples - x)) <= 2.0 ** -15


def test_wav_write_clips_with_warning(tmp_path):
    x = np.array([0.0, 1.5, -2.0] + [0.1] * 100)
    p = tmp_path / "c.wav"
    with pytest.warns(UserWarning, match="clipping"):
        write_wav(p, WaveformBuffer(x))
    y = read_wav(p)
    assert abs(y.samples[1] - 1.0) <= 2.0 ** -15


def test_wav_rejects_stereo(tmp_path):
    import wave as wavmod
    p = tmp_path / "st.wav"
    with wavmod.open(str(p), "wb") as f:
        f.setnchannels(2)
        f.setsampwidth(2)
        f.setframerate(16000)
        f.writeframes(b"\x00\x00" * 200)
    with pytest.raises(ValueError, match="mono"):
        read_wav(p)


def test_wav_rejects_wrong_rate(tmp_path):
    import wave as wavmod
    p = tmp_path / "sr.wav"
    with wavmod.open(str(p), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(44100)
        f.writeframes(b"\x00\x00" * 100)
    with pytest.raises(ValueError, match="sample_rate"):
        read_wav(p)


# ---------------------------------------------------------------------------
# corpus build


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corp")
    spec = CorpusSpec(n_train=12, n_dev=4, n_test=4, text_len_min=2, text_len_max=4)
    return build_corpus(spec, seed=123, out_dir=out), out, spec


def test_build_unique_ids_and_counts(small_corpus):
    manifest, _, spec = small_corpus
    ids = [r.id for r in manifest.records]
    assert len(ids) == len(set(ids)) == spec.n_train + spec.n_dev + spec.n_test


def test_build_splits_disjoint(small_corpus):
    manifest, _, _ = small_corpus
    tr = {r.id for r in manifest.split("train")}
    dv = {r.id for r in manifest.split("dev")}
    te = {r.id for r in manifest.split("test")}
    assert tr.isdisjoint(dv) and tr.isdisjoint(te) and dv.isdisjoint(te)


def test_build_deterministic_bytes(tmp_path):
    spec = CorpusSpec(n_train=4, n_dev=2, n_test=2)
    m1 = build_corpus(spec, seed=7, out_dir=tmp_path / "a")
    m2 = build_corpus(spec, seed=7, out_dir=tmp_path / "b")
    for r1, r2 in zip(m1.records, m2.records):
        assert r1.text == r2.text and r1.snr_db == r2.snr_db
        b1 = (tmp_path / "a" / r1.noisy_path).read_bytes()
        b2 = (tmp_path / "b" / r2.noisy_path).read_bytes()
        assert b1 == b2
    j1 = (tmp_path / "a" / "manifest.jsonl").read_text()
    j2 = (tmp_path / "b" / "manifest.jsonl").read_text()
    assert j1 == j2


def test_simulated_records_snr_re_measurement(small_corpus):
    manifest, _, _ = small_corpus
    sims = [r for r in manifest.records if r.kind == "simulated"]
    assert sims, "expected at least one simulated record"
    for r in sims:
        noisy, clean = load_utterance(manifest, r)
        assert len(noisy) == len(clean)
        assert abs(measure_snr_db(noisy, clean) - r.snr_db) < 0.01


def test_test_split_fixed_snr(small_corpus):
    manifest, _, spec = small_corpus
    for r in manifest.split("test"):
        assert r.snr_db == spec.test_snr_db


def test_manifest_round_trip(small_corpus, tmp_path):
    manifest, out, _ = small_corpus
    loaded = Manifest.load(out / "manifest.jsonl")
    assert len(loaded.records) == len(manifest.records)
    assert [r.id for r in loaded.records] == [r.id for r in manifest.records]


def test_spec_validation():
    with pytest.raises(ValueError, match="alphabet"):
        CorpusSpec(alphabet="ab").validate()
    with pytest.raises(ValueError, match="snr range"):
        CorpusSpec(snr_min_db=-20).validate()
    with pytest.raises(ValueError, match="split sizes"):
        CorpusSpec(n_train=0).validate()
