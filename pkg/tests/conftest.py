import functools
import itertools

import pytest
import torch

from semistyle.textcore import Sentence, StyleLabel, build_vocab, encode_sentence

torch.set_num_threads(1)


def edit_distance_oracle(a, b):
    """Plain recursive definition of edit distance (memoized)."""
    a, b = tuple(a), tuple(b)

    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def all_sequences(alphabet, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


@pytest.fixture
def tiny_vocab():
    return build_vocab(["the food was awful", "the food was great", "very bad service", "good staff here"])


def make_sentences(vocab, lines, style):
    return [encode_sentence(ln, vocab, style) for ln in lines]


# one verdict line per acceptance criterion, printed after the run
_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (report.when == "call" or report.failed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    previous = _CRITERIA.get(number)
    ok = report.passed and (previous is None or previous[1])
    _CRITERIA[number] = [title, ok, detail or (previous[2] if previous else "")]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip())
