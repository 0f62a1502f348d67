"""
This tests the diagnostics logic itself, and the table rendering it uses.
"""

from concurrent.futures import ThreadPoolExecutor

import incentfl
from incentfl import _diagnostics
from incentfl._diagnostics import (
    DiagnosticsRoot,
    DiagnosticsBase,
    PhaseTimer,
    dict_to_text,
    format_value,
)

from testutils import run_tests
from pytest import raises


def dedent(text, n):
    return "\n".join(line[n:] for line in text.split("\n"))


class CustomDiagnosticsRoot(DiagnosticsRoot):
    def __enter__(self):
        _diagnostics.diagnostics = self
        return self

    def __exit__(self, *args):
        _diagnostics.diagnostics = incentfl.diagnostics


class CustomDiagnostics(DiagnosticsBase):
    def __init__(self, name):
        super().__init__(name)
        self.timer = PhaseTimer()

    def get_dict(self):
        return {k: {"calls": v} for k, v in self.timer.counts.items()}


def test_diagnostics_meta():
    assert isinstance(incentfl.diagnostics, DiagnosticsRoot)
    assert incentfl.diagnostics is _diagnostics.diagnostics

    with CustomDiagnosticsRoot() as custom:
        assert custom is _diagnostics.diagnostics

    assert incentfl.diagnostics is _diagnostics.diagnostics


def test_builtin_topics():
    text = repr(incentfl.diagnostics)
    for topic in ["system", "versions", "timings"]:
        assert topic in text
    assert "numpy" in incentfl.diagnostics.versions.get_dict()
    assert "██ timings:" in incentfl.diagnostics.get_report()


def test_diagnostics_main():
    with CustomDiagnosticsRoot() as custom:
        d1 = CustomDiagnostics("rounds")
        d2 = CustomDiagnostics("server")

        assert "rounds" in repr(custom)
        assert "server" in repr(custom)
        assert "spam" not in repr(custom)
        assert "rounds" in repr(d1)

        with d1.timer.phase("train"):
            pass

        reference1 = """
            ██ rounds:

                    calls

            train:      1

            ██ server:

            No data
        """
        assert custom.get_report() == dedent(reference1, 12)

        with d2.timer.phase("aggregate"):
            pass
        with d2.timer.phase("aggregate"):
            pass
        with d2.timer.phase("rank"):
            pass

        reference2 = """
            ██ server:

                        calls

            aggregate:      2
                 rank:      1
        """
        assert d2.get_report() == dedent(reference2, 12)

        # A dict of dicts of dicts
        big_dict = custom.get_dict()
        assert set(big_dict) == {"rounds", "server"}
        for val in big_dict.values():
            for v in val.values():
                assert isinstance(v, dict)

    # The custom topics did not end up in the global root
    assert "rounds" not in repr(incentfl.diagnostics)


def test_diagnostics_name():
    with CustomDiagnosticsRoot():
        with raises(ValueError):
            CustomDiagnostics("not valid")


def test_phase_timer():
    timer = PhaseTimer()
    with timer.phase("a"):
        pass
    with raises(ZeroDivisionError):
        with timer.phase("a"):
            1 / 0
    assert timer.counts == {"a": 2}
    assert timer.seconds["a"] >= 0

    timer.reset()
    assert timer.counts == {}
    assert timer.seconds == {}


def test_phase_timer_counts_every_thread():
    timer = PhaseTimer()

    def work(i):
        for _ in range(200):
            with timer.phase("shared"):
                pass
            with timer.phase(f"own{i % 2}"):
                pass

    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(work, range(16)))

    assert timer.counts == {"shared": 3200, "own0": 1600, "own1": 1600}
    snapshot = timer.snapshot()
    assert snapshot["shared"][0] == 3200
    assert snapshot["shared"][1] >= 0


def test_format_value():
    assert format_value(None) == ""
    assert format_value(True) == "✓"
    assert format_value(False) == "-"
    assert format_value(12) == "12"
    assert format_value(0.1234567) == "0.123457"
    assert format_value("x") == "x"
    with raises(TypeError):
        format_value([1])


def test_dict_to_text_simple():
    # Note the right justification of the keys

    d = {"foo": 123456, "bar": "hi", "spam": 4.12345678}

    reference = """
         foo:  123456
         bar:  hi
        spam:  4.12346
    """
    assert dict_to_text(d) == dedent(reference[1:], 8)

    d = {"ok": True, "bad": False, "none": None}
    reference = """
          ok:  ✓
         bad:  -
        none:
    """
    assert dict_to_text(d) == dedent(reference[1:], 8)

    assert dict_to_text({}) == "No data\n"


def test_dict_to_text_table():
    d = {
        "foo": {"a": 1, "b": 2, "c": 3.1000000},
        "bar": {"a": 4, "b": 5, "c": 6.123456789123},
    }

    reference = """
              a  b        c

        foo:  1  2      3.1
        bar:  4  5  6.12346
    """
    assert dict_to_text(d) == dedent(reference[1:], 8)

    reference = """
        title  b  a

         foo:  2  1
         bar:  5  4
    """
    assert dict_to_text(d, ["title", "b", "a"]) == dedent(reference[1:], 8)


def test_dict_to_text_justification():
    d = {
        "foobarspameggs": {"aprettylongtitle": 1, "b": "cyan", "c": 3},
        "yo": {"aprettylongtitle": 4, "b": "blueberrycake", "c": None},
    }
    header = ["title", "aprettylongtitle", "b", "c"]
    lines = dict_to_text(d, header).splitlines()

    assert len(lines) == 4
    assert lines[1] == ""
    assert lines[0].endswith("aprettylongtitle              b  c")
    assert lines[2].startswith("foobarspameggs:")
    assert lines[3].strip().startswith("yo:")
    # Empty trailing cells are stripped, the rest is aligned on the right
    assert len(lines[0]) == len(lines[2]) == len(lines[3]) + 3
    assert lines[0].index("b  c") + 1 == lines[2].index("cyan") + 4
    assert lines[2].index("cyan") + 4 == lines[3].index("blueberrycake") + 13


def test_dict_to_text_missing_cells():
    d = {
        "foo": {"a": 1, "b": 2},
        "bar": {"b": 4, "z": 42},
    }
    reference = """
              a  b   z

        foo:  1  2
        bar:     4  42
    """
    assert dict_to_text(d) == dedent(reference[1:], 8)


if __name__ == "__main__":
    run_tests(globals())
