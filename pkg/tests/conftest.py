import struct

import numpy as np
import pytest


def _pad(text, width):
    raw = str(text).encode("ascii")
    assert len(raw) <= width, text
    return raw.ljust(width, b" ")


def edf_bytes(signals, n_records, record_duration, reserved="", annotation_tal=None):
    """Minimal EDF writer, independent of the package.

    ``signals`` is a list of dicts with label, pmin, pmax, dmin, dmax, spr and
    ``digital`` (int array of n_records * spr samples).
    """
    sigs = list(signals)
    if annotation_tal is not None:
        spr = (len(annotation_tal) + 1) // 2
        blob = annotation_tal.ljust(2 * spr, b"\x00")
        sigs.append(dict(label="EDF Annotations", pmin=-1, pmax=1, dmin=-32768, dmax=32767,
                         spr=spr, raw=[blob] * n_records))
    ns = len(sigs)
    head = (_pad("0", 8) + _pad("X", 80) + _pad("Startdate X", 80) + _pad("01.02.03", 8)
            + _pad("04.05.06", 8) + _pad(256 * (ns + 1), 8) + _pad(reserved, 44)
            + _pad(n_records, 8) + _pad(record_duration, 8) + _pad(ns, 4))
    for key, width in (("label", 16), ("transducer", 80), ("dim", 8), ("pmin", 8), ("pmax", 8),
                       ("dmin", 8), ("dmax", 8), ("prefilter", 80), ("spr", 8), ("reserved", 32)):
        for s in sigs:
            head += _pad(s.get(key, "uV" if key == "dim" else ""), width)
    body = b""
    for r in range(n_records):
        for s in sigs:
            if "raw" in s:
                body += s["raw"][r]
            else:
                chunk = s["digital"][r * s["spr"] : (r + 1) * s["spr"]]
                body += struct.pack(f"<{len(chunk)}h", *[int(v) for v in chunk])
    return head + body


@pytest.fixture
def make_edf():
    return edf_bytes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# settings that keep the synthetic corpus connected and the run short
SYNTH_INI = """[paths]
manifest = manifest.csv
output_dir = out
[signal]
channels = Fpz-Cz, Pz-Oz
[sst]
hop = 50
[geometry]
eps_quantile = 0.2
[hmm]
codebook_size = 16
[evaluation]
k_hat = 5
"""


@pytest.fixture(scope="session")
def synthetic_corpus(tmp_path_factory):
    from sleepgeom import synthetic

    d = tmp_path_factory.mktemp("corpus")
    manifest = synthetic.write_corpus(synthetic.generate_subjects(6, 100, seed=0), d)
    (d / "synth.ini").write_text(SYNTH_INI)
    return manifest


ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion, shown in the summary."""
    state = {"detail": ""}

    def note(number, title):
        state["key"] = (number, title)

    yield state, note
    number, title = state["key"]
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    ACCEPTANCE_LINES[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} {state['detail']}".rstrip()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        ACCEPTANCE_LINES.setdefault(
            8, "criterion 8 SKIP: optional Sleep-EDF reproduction (set SLEEPGEOM_SLEEP_EDF_MANIFEST)")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
