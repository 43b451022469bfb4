from __future__ import annotations

import numpy as np
import pytest

from touchid.ingest import Action, Stroke, TouchRecord


def make_record(
    user_id=1, action=Action.MOVE, timestamp=0.0, x=0.0, y=0.0, pressure=0.5, area=0.1,
    phone_id=1, doc_id=1, phone_orientation=0, finger_orientation=0.0,
) -> TouchRecord:
    return TouchRecord(
        phone_id=phone_id, user_id=user_id, doc_id=doc_id, timestamp=float(timestamp),
        action=Action(action), phone_orientation=phone_orientation, x=float(x), y=float(y),
        pressure=float(pressure), area=float(area), finger_orientation=float(finger_orientation),
    )


def make_stroke(length: int, user_id: int = 1, stroke_id: int = 0, rng=None) -> Stroke:
    """Well-formed Down, Move..., Up stroke with random attribute values."""
    rng = rng if rng is not None else np.random.default_rng(stroke_id)
    recs = []
    for t in range(length):
        action = Action.DOWN if t == 0 else Action.UP if t == length - 1 else Action.MOVE
        recs.append(
            make_record(
                user_id=user_id, action=action, timestamp=10 * t,
                x=rng.uniform(0, 1080), y=rng.uniform(0, 1920), pressure=rng.uniform(0, 1),
                area=rng.uniform(0, 0.2), finger_orientation=rng.normal(),
                phone_orientation=int(rng.integers(0, 2)),
            )
        )
    return Stroke(stroke_id, user_id, 1, 1, tuple(recs))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ------------------------------------------------------

_ACCEPTANCE: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.skipped):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
    _ACCEPTANCE.append((props["criterion"], outcome, props.get("detail", "")))


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("criterion", marker.args[0]))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion label")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split()[0])):
        line = f"[{outcome}] criterion {label}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
