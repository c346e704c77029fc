"""Tests for runio.py and config.py (header-first output files, run headers)."""

import argparse
from pathlib import Path

import pytest

from sdmnav import __version__
from sdmnav.config import RunConfig
from sdmnav.errors import DatasetFormatError
from sdmnav.runio import dump_csv, dump_jsonl, parse_jsonl, read_jsonl, write_csv, write_jsonl

HEADER = {"tool": "sdmnav", "seed": 7}


class TestJsonl:
    def test_header_comes_first(self):
        text = dump_jsonl([{"a": 1}, {"a": 2}], HEADER)
        assert text.splitlines()[0] == '# {"seed": 7, "tool": "sdmnav"}'
        assert parse_jsonl(text) == (HEADER, [{"a": 1}, {"a": 2}])

    def test_without_header(self):
        assert parse_jsonl(dump_jsonl([{"a": 1}])) == (None, [{"a": 1}])

    def test_blank_lines_and_later_comments_are_skipped(self):
        assert parse_jsonl('{"a": 1}\n\n# note\n{"a": 2}\n') == (None, [{"a": 1}, {"a": 2}])

    def test_malformed_line(self):
        with pytest.raises(DatasetFormatError, match="line 2"):
            parse_jsonl('{"a": 1}\n{"a": \n')

    def test_not_an_object(self):
        with pytest.raises(DatasetFormatError, match="JSON object"):
            parse_jsonl("[1, 2]\n")

    def test_malformed_header(self):
        with pytest.raises(DatasetFormatError, match="header"):
            parse_jsonl("# {nope\n")

    def test_file_not_utf8(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_bytes(b"\xff\xfe\n")
        with pytest.raises(DatasetFormatError, match="UTF-8"):
            read_jsonl(path)

    def test_file(self, tmp_path):
        path = write_jsonl(tmp_path / "deep" / "log.jsonl", [{"t": 1}], HEADER)
        assert read_jsonl(path) == (HEADER, [{"t": 1}])


class TestCsv:
    def test_layout(self):
        text = dump_csv(["method", "spl"], [["random", "0.1"]], HEADER)
        assert text.splitlines()[1:] == ["method,spl", "random,0.1"]

    def test_file(self, tmp_path):
        path = write_csv(tmp_path / "deep" / "metrics.csv", ["method", "spl"], [["random", "0.1"]], HEADER)
        assert path.read_text(encoding="utf-8") == '# {"seed": 7, "tool": "sdmnav"}\nmethod,spl\nrandom,0.1\n'

    def test_quoting(self):
        assert dump_csv(["a"], [["x,y"]]) == 'a\n"x,y"\n'


class TestRunConfig:
    def namespace(self, **kwargs):
        base = {"command": "run", "seed": 3, "agent": "random", "out": Path("/tmp/a"), "workers": 4, "func": print}
        return argparse.Namespace(**{**base, **kwargs})

    def test_header(self):
        header = RunConfig.from_args(self.namespace(episodes=Path("eps.jsonl"))).as_header()
        assert header == {
            "tool": "sdmnav",
            "version": __version__,
            "command": "run",
            "config": {"agent": "random", "episodes": "eps.jsonl"},
            "seed": 3,
        }

    def test_output_location_is_not_recorded(self):
        a = RunConfig.from_args(self.namespace(out=Path("/tmp/a"), workers=1))
        b = RunConfig.from_args(self.namespace(out=Path("/elsewhere"), workers=8))
        assert a == b

    def test_sequences_are_recorded_as_lists(self):
        header = RunConfig.from_args(self.namespace(sets=("loud", "quiet"))).as_header()
        assert header["config"]["sets"] == ["loud", "quiet"]
