"""
Diagnostics on incentfl runs, and the text-table rendering used for reports.
"""

import sys
import time
import platform
import threading
from contextlib import contextmanager


class DiagnosticsRoot:
    """Root object to access diagnostics (i.e. ``incentfl.diagnostics``).

    Per-topic diagnostics are attributes on this object: ``system``,
    ``versions`` and ``timings``.
    """

    def __init__(self):
        self._diagnostics_instances = {}

    def __repr__(self):
        topics = ", ".join(self._diagnostics_instances.keys())
        return f"<DiagnosticsRoot with topics: {topics}>"

    def _register_diagnostics(self, name, ob):
        self._diagnostics_instances[name] = ob
        setattr(self, name, ob)

    def get_dict(self):
        """Get a dict mapping topic names to the topic dicts."""
        return {name: ob.get_dict() for name, ob in self._diagnostics_instances.items()}

    def get_report(self):
        """Get the full textual diagnostic report (as a str)."""
        return "".join(ob.get_report() for ob in self._diagnostics_instances.values())


class DiagnosticsBase:
    """Diagnostics on a specific topic.

    Subclasses implement ``get_dict()``. Instantiating the class registers
    it with the root diagnostics object.
    """

    def __init__(self, name):
        if not (isinstance(name, str) and name.isidentifier()):
            raise ValueError("Diagnostics name must be an identifier.")
        self.name = name
        diagnostics._register_diagnostics(name, self)

    def __repr__(self):
        return f"<Diagnostics for '{self.name}'>"

    def get_dict(self):
        """Get the diagnostics for this topic as a dict.

        Values are either scalars (str, int, float, bool), giving a
        two-column listing, or dicts, giving a table where the subdict
        keys form the header.
        """
        raise NotImplementedError()

    def get_report(self):
        """Get the textual report for this topic."""
        return f"\n██ {self.name}:\n\n" + dict_to_text(self.get_dict())


class PhaseTimer:
    """Accumulates wall-clock time and call counts per named phase.

    Phases may run on several threads at once.
    """

    def __init__(self):
        self.counts = {}
        self.seconds = {}
        self._lock = threading.Lock()

    def reset(self):
        with self._lock:
            self.counts.clear()
            self.seconds.clear()

    def snapshot(self):
        """Get a consistent ``{name: (calls, seconds)}`` copy."""
        with self._lock:
            return {name: (self.counts[name], self.seconds[name]) for name in self.counts}

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - t0
            with self._lock:
                self.counts[name] = self.counts.get(name, 0) + 1
                self.seconds[name] = self.seconds.get(name, 0.0) + elapsed


def derive_header(d):
    """Derive a table header from a dict of dicts."""
    header = [""]
    for key, val in d.items():
        if not isinstance(val, dict):  # no-cover
            raise TypeError(f"Element not a dict: {val}")
        for k in val:
            if k not in header:
                header.append(k)
    return header


def format_value(val):
    """Format a single table cell."""
    if val is None:
        return ""
    elif isinstance(val, str):
        return val
    elif isinstance(val, bool):
        return "✓" if val else "-"
    elif isinstance(val, int):
        return str(val)
    elif isinstance(val, float):
        return f"{val:.6g}"
    raise TypeError(f"Unexpected table value: {val!r}")


def dict_to_text(d, header=None):
    """Convert a dict to an aligned textual table.

    A dict of scalars gives a ``key: value`` listing; a dict of dicts
    gives a table with a header row.
    """
    if not d:
        return "No data\n"

    if not any(isinstance(val, dict) for val in d.values()):
        width = max(len(str(key)) for key in d) + 1
        lines = [f"{(str(key) + ':').rjust(width)}  {format_value(val)}" for key, val in d.items()]
        return "\n".join(line.rstrip() for line in lines) + "\n"

    header = header or derive_header(d)
    rows = [list(header), [""] * len(header)]
    for title, values in d.items():
        row = [f"{title}:"]
        row += [format_value(values.get(key, None)) for key in header[1:]]
        rows.append(row)

    ncols = len(header)
    widths = [max(len(row[i]) for row in rows) for i in range(ncols)]
    lines = []
    for row in rows:
        cells = [row[i].rjust(widths[i]) for i in range(ncols)]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


# %% global diagnostics object, and builtin diagnostics


diagnostics = DiagnosticsRoot()


class SystemDiagnostics(DiagnosticsBase):
    """Provides basic system info."""

    def get_dict(self):
        return {
            "platform": platform.platform(),
            "python_implementation": platform.python_implementation(),
            "python": platform.python_version(),
        }


class VersionDiagnostics(DiagnosticsBase):
    """Provides version numbers of the libraries that affect results."""

    def get_dict(self):
        info = {}
        for libname in ["incentfl", "numpy", "scipy"]:
            try:
                ver = sys.modules[libname].__version__
            except (KeyError, AttributeError):
                pass
            else:
                info[libname] = str(ver)
        return info


class TimingDiagnostics(DiagnosticsBase):
    """Provides per-phase timings, fed by the simulation and analysis code."""

    def __init__(self, name):
        super().__init__(name)
        self.timer = PhaseTimer()

    def get_dict(self):
        snapshot = self.timer.snapshot()
        return {
            name: {"calls": calls, "seconds": seconds}
            for name, (calls, seconds) in sorted(snapshot.items())
        }


SystemDiagnostics("system")
VersionDiagnostics("versions")
TimingDiagnostics("timings")
