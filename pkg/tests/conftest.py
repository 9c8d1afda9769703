import pytest

from awelab.synthdata import SynthConfig, gen_corpus


TINY_SYNTH = SynthConfig(
    n_classes=10, n_oov_classes=2, instances_per_class=8, n_speakers=3,
    feat_dim=6, proto_len_range=(20, 30), noise_sigma=0.8, speaker_sigma=1.5,
    phoneme_vocab_size=36, n_utterances=25, words_per_utterance=(2, 3), seed=77,
)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A small deterministic corpus shared by training/eval/CLI tests."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    train_records, test_records = gen_corpus(TINY_SYNTH, root)
    return root, train_records, test_records
