import numpy as np
import pytest

from household.core import (
    ADAPT_FILE,
    ENROLL_FILE,
    TRIALS_FILE,
    Embedding,
    FormatError,
    Household,
    HouseholdProtocol,
    ProtocolError,
    Trial,
    TrialScore,
    read_embeddings,
    read_protocol,
    read_scores,
    write_embeddings,
    write_protocol,
    write_scores,
)
from household.simulate import SimConfig, generate_protocol


def test_parse_short_header_and_row(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("d=2\nu1 spkA 0.0 1.0\n")
    (e,) = read_embeddings(p)
    assert e == Embedding("u1", "spkA", np.array([0.0, 1.0]))


def test_unlabeled_sentinel(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("#dim=2\nu1\t?\t0.5\t-1\n")
    assert read_embeddings(p)[0].speaker_id is None


def test_dimension_mismatch_names_line(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("#dim=2\nu1 a 0 0\nu2 a 1 2 3\n")
    with pytest.raises(FormatError, match=":3:"):
        read_embeddings(p)


def test_non_numeric_field(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("#dim=2\nu1 a 0 x\n")
    with pytest.raises(FormatError, match="parse"):
        read_embeddings(p)


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    embs = [
        Embedding(f"u{i}", None if i % 7 == 0 else f"s{i % 5}", rng.standard_normal(13) * 10.0 ** rng.integers(-8, 8))
        for i in range(100)
    ]
    write_embeddings(embs, tmp_path / "e.tsv")
    assert read_embeddings(tmp_path / "e.tsv") == embs


def test_write_empty_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_embeddings([], tmp_path / "e.tsv")


def test_write_mixed_dimensions_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_embeddings([Embedding("a", None, [1.0]), Embedding("b", None, [1.0, 2.0])], tmp_path / "e.tsv")


def test_write_failure_names_path(tmp_path):
    target = tmp_path / "missing" / "e.tsv"
    with pytest.raises(OSError, match="missing"):
        write_embeddings([Embedding("a", None, [1.0])], target)


def test_embedding_rejects_nan():
    with pytest.raises(ValueError):
        Embedding("a", None, [np.nan])


@pytest.fixture
def small_protocol():
    cfg = SimConfig(seed=3, d=4, n_households=3, household_sizes=(2, 3), n_enroll=2,
                    n_adapt_per_member=3, n_test_per_member=2, n_test_per_guest=1)
    return generate_protocol(cfg)


def test_protocol_round_trip_preserves_stream_order(tmp_path, small_protocol):
    embs, prots = small_protocol
    write_embeddings(embs, tmp_path / "embeddings.tsv")
    write_protocol(prots, tmp_path)
    assert read_protocol(tmp_path) == prots


def test_trial_with_unenrolled_model(tmp_path, small_protocol):
    embs, prots = small_protocol
    write_protocol(prots, tmp_path)
    with open(tmp_path / TRIALS_FILE, "a") as f:
        f.write(f"{prots[0].household_id}\tghost\t{prots[0].trials[0].test_utt_id}\ttarget\n")
    with pytest.raises(ProtocolError, match="absent from enroll"):
        read_protocol(tmp_path)


def test_trial_with_unknown_utterance(tmp_path, small_protocol):
    embs, prots = small_protocol
    write_protocol(prots, tmp_path)
    write_embeddings(embs, tmp_path / "embeddings.tsv")
    t = prots[0].trials[0]
    with open(tmp_path / TRIALS_FILE, "a") as f:
        f.write(f"{prots[0].household_id}\t{t.model_id}\tnope\ttarget\n")
    with pytest.raises(ProtocolError, match="unknown utterance"):
        read_protocol(tmp_path)


def test_inconsistent_trial_label_detected(tmp_path, small_protocol):
    embs, prots = small_protocol
    write_protocol(prots, tmp_path)
    write_embeddings(embs, tmp_path / "embeddings.tsv")
    t = next(t for t in prots[0].trials if t.label == "target")
    with open(tmp_path / TRIALS_FILE, "a") as f:
        f.write(f"{prots[0].household_id}\t{t.model_id}\t{t.test_utt_id}\tunknown_nontarget\n")
    with pytest.raises(ProtocolError, match="expected target"):
        read_protocol(tmp_path)


def test_enroll_utterance_of_wrong_speaker(tmp_path, small_protocol):
    embs, prots = small_protocol
    write_protocol(prots, tmp_path)
    write_embeddings(embs, tmp_path / "embeddings.tsv")
    p = prots[0]
    a, b = p.household.member_ids[:2]
    with open(tmp_path / ENROLL_FILE, "a") as f:
        f.write(f"{p.household_id}\t{a}\t{p.enroll[b][0]}\n")
    with pytest.raises(ProtocolError, match="belongs to"):
        read_protocol(tmp_path)


def test_empty_adaptation_stream_accepted(tmp_path, small_protocol):
    _, prots = small_protocol
    p = prots[0]
    bare = HouseholdProtocol(p.household, p.enroll, (), p.trials)
    write_protocol([bare], tmp_path)
    assert (tmp_path / ADAPT_FILE).read_text() == ""
    assert read_protocol(tmp_path)[0].adaptation_stream == ()


def test_household_invariants():
    with pytest.raises(ProtocolError):
        Household("h", ("a",))
    with pytest.raises(ProtocolError):
        Household("h", ("a", "b"), ("b",))


def test_trial_label_vocabulary():
    with pytest.raises(ProtocolError):
        Trial("a", "u", "impostor")


def test_scores_round_trip(tmp_path):
    rows = [TrialScore("h", "m", f"u{i}", "target", float(i) / 3) for i in range(5)]
    write_scores(rows, tmp_path / "s.tsv")
    assert read_scores(tmp_path / "s.tsv") == rows
