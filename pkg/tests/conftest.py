import pytest

from splade_lab.corpus import token_frequencies, train_tokenizer
from splade_lab.synthetic import make_toy_task, pseudo_words
from splade_lab.vocab import ControllerSpec, build_controller, default_stoplist

# one spec per controller kind, sized for the small base vocabulary below
ALL_KIND_SPECS = [
    ("full", None),
    ("no_stop", None),
    ("stop_only", 150),
    ("random_k", 150),
    ("lowfreq_k", 150),
    ("latent_only_k", 150),
    ("added_latent_k", 150),
]


@pytest.fixture(scope="session")
def small_texts():
    words = pseudo_words(400)
    texts = [" ".join(default_stoplist())]
    texts += [" ".join(words[i : i + 8]) + " , the of ." for i in range(0, 400, 8)]
    return texts


@pytest.fixture(scope="session")
def small_base(small_texts):
    vocab = train_tokenizer(small_texts, 5000)
    return vocab, token_frequencies(small_texts, vocab)


@pytest.fixture(scope="session")
def controllers(small_base):
    vocab, freq = small_base
    return {
        f"{kind}:{k}" if k else kind: build_controller(ControllerSpec(kind, k, 1), vocab, freq)
        for kind, k in ALL_KIND_SPECS
    }


@pytest.fixture(scope="session")
def tiny_task():
    return make_toy_task(n_docs=300, n_train=60, n_test=20, n_words=600, seed=3)


# -- acceptance reporting -------------------------------------------------------------
# Tests marked ``criterion(n)`` get one PASS/FAIL line in the terminal summary.
# A test may attach a short detail string with ``record_property("detail", ...)``.

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    n = marker.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if report.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0][:120] if call.excinfo else report.when
    status = "PASS" if report.passed else "FAIL"
    if n not in _CRITERIA or status == "FAIL":
        _CRITERIA[n] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}".rstrip())
