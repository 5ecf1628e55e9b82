import sys
import textwrap

import pytest

from durability.external import ExternalSession, ExternalSimulatorError, external_step
from durability.models import ExternalBlackBox, StepBudget
from durability.quality import QualityTarget
from durability.query import DurabilityQuery, LevelPartition
from durability.samplers import SamplerConfig, run_query

PY = sys.executable


def sim(*module_args, **kw):
    return ExternalBlackBox((PY, "-m", *module_args), **kw)


def scripted(tmp_path, body, **kw):
    """A simulator whose step reply is produced by ``body`` (a Python expression or statement)."""
    src = tmp_path / "sim.py"
    src.write_text(textwrap.dedent(f"""
        import json, sys, time
        for line in sys.stdin:
            msg = json.loads(line)
            if msg["cmd"] in ("init", "reset"):
                print(json.dumps({{"ok": True}}), flush=True)
            else:
                {body}
    """))
    return ExternalBlackBox((PY, str(src)), **kw)


def test_echo_reports_constant_score():
    budget = StepBudget()
    with ExternalSession(sim("durability.sims.echo"), budget) as s:
        s.reset()
        states = [external_step(s, t) for t in range(1, 6)]
    assert [st.z for st in states] == [7.0] * 5 and [st.t for st in states] == [1, 2, 3, 4, 5]
    assert budget.consumed == 5


def test_response_passes_through(tmp_path):
    spec = scripted(tmp_path, 'print(json.dumps({"z": 1500.2}), flush=True)')
    with ExternalSession(spec) as s:
        st = external_step(s, 1)
    assert st.t == 1 and st.z == 1500.2


@pytest.mark.parametrize("body", [
    'print(json.dumps({"value": 3}), flush=True)',
    'print(json.dumps({"z": "high"}), flush=True)',
    'print(json.dumps({"z": 1.0, "extra": 2}), flush=True)',
    'print("not json", flush=True)',
])
def test_protocol_errors_carry_payload(tmp_path, body):
    with ExternalSession(scripted(tmp_path, body)) as s:
        with pytest.raises(ExternalSimulatorError) as exc:
            s.step_z(1)
    assert exc.value.payload is not None


def test_process_exit_is_reported(tmp_path):
    with ExternalSession(scripted(tmp_path, "sys.exit(3)")) as s:
        with pytest.raises(ExternalSimulatorError, match="exited"):
            s.step_z(1)


def test_timeout_is_reported(tmp_path):
    with ExternalSession(scripted(tmp_path, "time.sleep(5)", timeout=0.3)) as s:
        with pytest.raises(ExternalSimulatorError, match="did not answer"):
            s.step_z(1)


def test_missing_executable():
    with pytest.raises(ExternalSimulatorError):
        ExternalSession(ExternalBlackBox(("/nonexistent/simulator",))).open()


def test_splitting_on_echo_simulator():
    # z = 7 crosses the only interior boundary at the first step and never reaches the target
    q = DurabilityQuery(4, 10.0)
    cfg = SamplerConfig("GMLSS", 3, LevelPartition((0.0, 0.5, 1.0)), seed=1,
                        stop=QualityTarget("budget", budget=40), min_roots=2)
    with ExternalSession(sim("durability.sims.echo")) as s:
        rep = run_query(sim("durability.sims.echo"), q, cfg, session=s)
    assert rep.estimate == 0.0
    # each root: one step to land, then three offspring of three steps each
    assert rep.records.steps[0] == 10 and rep.records.H[0, 1] == 1


@pytest.mark.slow
def test_surrogate_is_reproducible_and_consistent():
    model = sim("durability.sims.surrogate")
    q = DurabilityQuery(50, 112.0)
    reports = {}
    for method, plan in (("SRS", LevelPartition.trivial()), ("GMLSS", LevelPartition((0.0, 0.95, 1.0)))):
        cfg = SamplerConfig(method, 3, plan, seed=2, stop=QualityTarget("budget", budget=20_000))
        runs = []
        for _ in range(2):
            with ExternalSession(model) as s:
                runs.append(run_query(model, q, cfg, session=s))
        assert runs[0].estimate == runs[1].estimate and runs[0].steps_total == runs[1].steps_total
        reports[method] = runs[0]
    a, b = reports["SRS"], reports["GMLSS"]
    assert 0 < a.estimate < 1 and 0 < b.estimate < 1
    assert abs(a.estimate - b.estimate) < 4 * (a.variance + b.variance) ** 0.5
