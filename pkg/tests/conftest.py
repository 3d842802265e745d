"""Shared simulated runs; each is built once per test session."""

import time

import pytest

from helpers import ACCEPTANCE, TIMINGS, world_profiles
from fishmap.mesher import triangulate_stream
from fishmap.pipeline import PipelineConfig, run_pipeline, write_run
from fishmap.scene_sim import RunSpec, default_street, simulate_run


def _timed(name, fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    TIMINGS[name] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def street():
    return default_street()


@pytest.fixture(scope="session")
def run_10hz(street):
    """10 s straight run with one image at every profile time."""
    return _timed("run_10hz", simulate_run, street, RunSpec(image_rate=10.0))


@pytest.fixture(scope="session")
def run_30hz(street):
    """30 Hz camera whose frames trail the nearest profile by 8 ms."""
    return _timed("run_30hz", simulate_run, street, RunSpec(image_rate=30.0, image_offset=0.008, duration=3.0))


@pytest.fixture(scope="session")
def run_arc_1hz(street):
    """Curved run with 1 Hz images between pose samples."""
    return _timed("run_arc_1hz", simulate_run, street, RunSpec(shape="arc", image_rate=1.0, image_offset=0.05))


@pytest.fixture(scope="session")
def street_mesh(run_10hz):
    return triangulate_stream(world_profiles(run_10hz))


@pytest.fixture(scope="session")
def pipeline_inputs(run_10hz, tmp_path_factory):
    return write_run(run_10hz, str(tmp_path_factory.mktemp("street")))


@pytest.fixture(scope="session")
def pipeline_result(pipeline_inputs, tmp_path_factory):
    cfg = PipelineConfig.from_ini(pipeline_inputs)
    cfg.output_dir = str(tmp_path_factory.mktemp("out_a"))
    return run_pipeline(cfg)


@pytest.fixture(scope="session")
def pipeline_result_again(pipeline_inputs, tmp_path_factory):
    cfg = PipelineConfig.from_ini(pipeline_inputs)
    cfg.output_dir = str(tmp_path_factory.mktemp("out_b"))
    return run_pipeline(cfg)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
