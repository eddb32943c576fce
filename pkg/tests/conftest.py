import numpy as np
import pytest

from mentalsim import mpong, neuralbench as nb, synth


@pytest.fixture(scope="session")
def conds79():
    return mpong.generate_conditions(mpong.BoardSpec(), 79, 0)


@pytest.fixture(scope="session")
def conds30():
    return mpong.generate_conditions(mpong.BoardSpec(), 30, 3)


def two_animals(conds, kind="position+velocity", noise=0.5, n_units=20, n_trials=12, readout_seed=0):
    spec = synth.SynthNeuralSpec(n_units=n_units, kind=kind, noise=noise, n_trials=n_trials,
                                 readout_seed=readout_seed)
    P = synth.make_synth_dmfc(conds, spec, 1, "P")
    M = synth.make_synth_dmfc(conds, spec, 2, "M")
    return synth.merge_animals(P, M)


@pytest.fixture(scope="session")
def small_bench(conds30):
    ds = two_animals(conds30)
    aligned = nb.interpolate_bins(ds, conds30)
    splits = nb.make_splits(len(conds30), 5, 0)
    return conds30, aligned, splits


# acceptance criteria report: one pass/fail line per criterion in the terminal summary

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _ACCEPTANCE[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        line = f"criterion {number:>2} {title}: {'PASS' if ok else 'FAIL'}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
