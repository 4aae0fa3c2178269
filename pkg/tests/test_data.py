import json

import pytest
from hypothesis import given, strategies as st

from dimasr.data import (
    DataError,
    VAPair,
    count_aspect_duplicates,
    dataset_stats,
    expand_instances,
    format_va_string,
    merge_and_hold_out,
    parse_dataset,
    parse_va_string,
    read_instances,
    split_dev_protocol,
    write_instances,
)
from .conftest import FIXTURES, make_instances


class TestParseVaString:
    def test_basic(self):
        assert parse_va_string("7.50#6.80") == VAPair(7.50, 6.80)

    def test_midpoint(self):
        assert parse_va_string("5.00#5.00") == VAPair(5.00, 5.00)

    def test_missing_separator(self):
        with pytest.raises(DataError, match="#"):
            parse_va_string("7.5")

    def test_too_many_fields(self):
        with pytest.raises(DataError):
            parse_va_string("1.0#2.0#3.0")

    def test_non_numeric(self):
        with pytest.raises(DataError, match="non-numeric"):
            parse_va_string("abc#5.0")

    def test_out_of_range(self):
        with pytest.raises(DataError, match="out of range"):
            parse_va_string("10.0#4.0")

    @given(
        st.integers(100, 900).map(lambda x: x / 100.0),
        st.integers(100, 900).map(lambda x: x / 100.0),
    )
    def test_round_trip(self, v, a):
        s = f"{v:.2f}#{a:.2f}"
        assert format_va_string(parse_va_string(s)) == s


class TestVAPair:
    def test_bounds_enforced(self):
        with pytest.raises(DataError):
            VAPair(0.5, 5.0)
        with pytest.raises(DataError):
            VAPair(5.0, 9.01)

    def test_nan_rejected(self):
        with pytest.raises(DataError):
            VAPair(float("nan"), 5.0)


class TestParseDataset:
    def test_simple_jsonl(self):
        records = parse_dataset(FIXTURES / "tiny_dataset.jsonl", "simple_jsonl")
        assert [r.id for r in records][:3] == ["s1", "s2", "s3"]
        assert records[0].aspects[0] == ("food", VAPair(8.50, 8.25))
        assert records[3].aspects[0][0] == "NULL"

    def test_task_json(self):
        records = parse_dataset(FIXTURES / "tiny_dataset_task.json", "task_json")
        assert len(records) == 3
        assert records[1].aspects[1] == ("battery", VAPair(2.80, 6.20))
        # alternate aspect-list key is tolerated
        assert records[2].aspects[0][0] == "NULL"

    def test_malformed_line_names_line_number(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": "a", "text": "t", "aspects": [{"aspect": "x"}]}\nnot json\n')
        with pytest.raises(DataError, match=":2"):
            parse_dataset(p, "simple_jsonl")

    def test_empty_aspect_list(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": "a", "text": "t", "aspects": []}\n')
        with pytest.raises(DataError, match="empty aspect list"):
            parse_dataset(p, "simple_jsonl")

    def test_out_of_range_names_record(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": "r9", "text": "t", "aspects": [{"aspect": "x", "va": "10.0#4.0"}]}\n')
        with pytest.raises(DataError, match="r9"):
            parse_dataset(p, "simple_jsonl")

    def test_duplicate_id(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        line = '{"id": "a", "text": "t", "aspects": [{"aspect": "x"}]}\n'
        p.write_text(line + line)
        with pytest.raises(DataError, match="duplicate"):
            parse_dataset(p, "simple_jsonl")

    def test_unknown_format(self):
        with pytest.raises(DataError, match="unknown format"):
            parse_dataset(FIXTURES / "tiny_dataset.jsonl", "csv")


class TestExpandInstances:
    def test_counts(self):
        records = parse_dataset(FIXTURES / "tiny_dataset.jsonl")
        instances = expand_instances(records)
        assert len(instances) == sum(len(r.aspects) for r in records) == 13

    def test_shared_text(self):
        records = parse_dataset(FIXTURES / "tiny_dataset.jsonl")
        instances = [i for i in expand_instances(records) if i.sentence_id == "s3"]
        assert len(instances) == 2  # s3 has 2 aspects
        assert instances[0].text == instances[1].text
        assert (instances[0].aspect_index, instances[1].aspect_index) == (0, 1)

    def test_empty(self):
        assert expand_instances([]) == []

    def test_preserves_pair_multiset(self):
        records = parse_dataset(FIXTURES / "tiny_dataset.jsonl")
        instances = expand_instances(records)
        expected = sorted((r.text, a) for r in records for a, _ in r.aspects)
        assert sorted((i.text, i.aspect) for i in instances) == expected


class TestSplitDevProtocol:
    def test_counts_80_20(self):
        instances = make_instances(10)
        split = split_dev_protocol(instances, ratio=0.8, seed=42)
        assert len({i.sentence_id for i in split.train}) == 8
        assert len({i.sentence_id for i in split.eval}) == 2

    def test_deterministic(self):
        instances = make_instances(50)
        a = split_dev_protocol(instances, seed=42)
        b = split_dev_protocol(instances, seed=42)
        assert a.train == b.train and a.eval == b.eval

    def test_seed_changes_membership(self):
        instances = make_instances(100)
        a = {i.sentence_id for i in split_dev_protocol(instances, seed=1).eval}
        b = {i.sentence_id for i in split_dev_protocol(instances, seed=2).eval}
        assert a != b

    def test_sentence_level_no_leak(self):
        # every sentence has 2 instances; both must land on the same side
        doubled = []
        for inst in make_instances(20):
            doubled.append(inst)
            doubled.append(
                type(inst)(inst.sentence_id, 1, inst.text, inst.aspect + "2", inst.gold)
            )
        split = split_dev_protocol(doubled, seed=3)
        train_ids = {i.sentence_id for i in split.train}
        eval_ids = {i.sentence_id for i in split.eval}
        assert not train_ids & eval_ids
        assert len(split.train) + len(split.eval) == len(doubled)
        assert all(len([i for i in split.train if i.sentence_id == s]) in (0, 2) for s in train_ids)

    def test_too_few_sentences(self):
        with pytest.raises(DataError, match="at least 2"):
            split_dev_protocol(make_instances(1))

    def test_bad_ratio(self):
        with pytest.raises(DataError):
            split_dev_protocol(make_instances(10), ratio=1.0)


class TestMergeAndHoldOut:
    def test_sizes(self):
        train = make_instances(90, prefix="tr")
        dev = make_instances(10, prefix="de")
        split = merge_and_hold_out(train, dev, holdout_fraction=0.1, seed=42)
        assert len({i.sentence_id for i in split.eval}) == 10
        assert len({i.sentence_id for i in split.train}) == 90

    def test_zero_holdout_rejected(self):
        with pytest.raises(DataError, match="validation"):
            merge_and_hold_out(make_instances(9, prefix="a"), make_instances(1, prefix="b"),
                               holdout_fraction=0.0)

    def test_overlap_rejected(self):
        train = make_instances(5)
        with pytest.raises(DataError, match="overlap"):
            merge_and_hold_out(train, train[:1])

    def test_deterministic(self):
        train = make_instances(30, prefix="tr")
        dev = make_instances(5, prefix="de")
        a = merge_and_hold_out(train, dev, seed=7)
        b = merge_and_hold_out(train, dev, seed=7)
        assert a.eval == b.eval


class TestDatasetStats:
    def test_empty(self):
        assert dataset_stats({}) == []

    def test_counts(self):
        records = parse_dataset(FIXTURES / "tiny_dataset_task.json", "task_json")
        rows = dataset_stats({("eng", "laptop", "train"): records})
        assert rows == [
            {"language": "eng", "domain": "laptop", "split": "train",
             "sentences": 3, "instances": 4}
        ]


class TestInstanceIo:
    def test_round_trip(self, tmp_path):
        records = parse_dataset(FIXTURES / "tiny_dataset.jsonl")
        instances = expand_instances(records)
        path = tmp_path / "inst.jsonl"
        write_instances(instances, path)
        assert read_instances(path) == instances


def test_count_aspect_duplicates():
    records = parse_dataset(FIXTURES / "tiny_dataset.jsonl")
    assert not count_aspect_duplicates(records)
