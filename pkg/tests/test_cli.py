import json
import time

import pytest

from syncrec import cli
from syncrec.hub import Hub, HubServer, attach_recorder
from syncrec.orchestrator import CaseTwoConfig, run_case2
from syncrec.streams import MarkerOrigin


@pytest.fixture(autouse=True)
def fixed_columns(monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    monkeypatch.delenv("SYNCREC_HUB", raising=False)


@pytest.fixture
def served_hub(tmp_path):
    hub = Hub(ping_interval=3600.0)
    srv = HubServer(hub)
    path = tmp_path / "run.srec"
    fh = open(path, "wb")
    sub, bridge = attach_recorder(hub, fh)
    yield srv, path

    def finalize():
        srv.close()
        hub.unsubscribe(sub)
        bridge.finalize()
        fh.close()
        hub.close()
    finalize()


def finalize_recording(srv, parts):
    hub, sub, bridge, fh = parts
    srv.close()
    hub.unsubscribe(sub)
    bridge.finalize()
    fh.close()
    hub.close()


def make_case2_recording(tmp_path, script="crossing"):
    hub = Hub(ping_interval=3600.0)
    srv = HubServer(hub)
    path = tmp_path / "case2.srec"
    fh = open(path, "wb")
    sub, bridge = attach_recorder(hub, fh)
    run_case2(CaseTwoConfig(product_count=2, human_script=script),
              f"127.0.0.1:{srv.port}")
    finalize_recording(srv, (hub, sub, bridge, fh))
    return path


# -- help and usage ----------------------------------------------------------------

HELP_SYNOPSES = {
    (): "usage: syncrec [-h] COMMAND ...",
    ("sim",): "usage: syncrec sim [-h] [--hub HOST:PORT] [--seed SEED] "
              "[--rate RATE] [--duration DURATION] [--accelerate] "
              "[--sim-offset SIM_OFFSET] {gsr,ppg,ecg,mocap,robot}",
    ("epoch",): "usage: syncrec epoch [-h] --in INFILE --marker MARKER --pre "
                "PRE --post POST --out OUT [--glob]",
    ("inspect",): "usage: syncrec inspect [-h] --in INFILE",
}


@pytest.mark.parametrize("path", sorted(HELP_SYNOPSES), ids="/".join)
def test_help_synopsis_golden(path, capsys):
    with pytest.raises(SystemExit) as exit_info:
        cli.main([*path, "--help"])
    assert exit_info.value.code == 0
    out = capsys.readouterr().out
    usage = " ".join(
        line.strip() for line in
        out[:out.index("\n\n")].splitlines())
    assert usage == HELP_SYNOPSES[path]


def test_every_subcommand_is_self_describing(capsys):
    for path in ([], ["hub"], ["hub", "serve"], ["sim"], ["experiment"],
                 ["experiment", "case1"], ["experiment", "case2"], ["epoch"],
                 ["inspect"], ["marker"], ["marker", "inject"]):
        with pytest.raises(SystemExit) as exit_info:
            cli.main([*path, "--help"])
        assert exit_info.value.code == 0
        out = capsys.readouterr().out
        assert out.startswith("usage: syncrec")


def test_unknown_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as exit_info:
        cli.main(["inspect", "--frobnicate"])
    assert exit_info.value.code == 1


def test_no_command_prints_help_and_exits_one(capsys):
    assert cli.main([]) == 1
    assert "usage: syncrec" in capsys.readouterr().out


def test_task_out_of_range_exits_one(capsys):
    code = cli.main(["experiment", "case1", "--task", "5", "--subject", "X"])
    assert code == 1
    assert "task must be 1..4" in capsys.readouterr().err


def test_missing_hub_is_runtime_error(capsys):
    code = cli.main(["marker", "inject", "--label", "x"])
    assert code == 2


# -- end-to-end commands ---------------------------------------------------------------

def test_epoch_command_end_to_end(tmp_path, capsys):
    rec_path = make_case2_recording(tmp_path, script="far")
    out = tmp_path / "epochs.jsonl"
    code = cli.main(["epoch", "--in", str(rec_path),
                     "--marker", "Experiment start",
                     "--pre", "1", "--post", "5", "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1
    doc = json.loads(lines[0])
    assert doc["label"] == "Experiment start"
    assert "gsr" in doc["streams"]


def test_epoch_glob_matching(tmp_path):
    rec_path = make_case2_recording(tmp_path, script="crossing")
    out = tmp_path / "epochs.jsonl"
    code = cli.main(["epoch", "--in", str(rec_path), "--glob",
                     "--marker", "Robot is *",
                     "--pre", "0.5", "--post", "0.5", "--out", str(out)])
    assert code == 0
    labels = {json.loads(l)["label"] for l in out.read_text().splitlines()}
    assert "Robot is stopping" in labels


def test_epoch_missing_file_exits_two(tmp_path, capsys):
    code = cli.main(["epoch", "--in", str(tmp_path / "nope.srec"),
                     "--marker", "x", "--pre", "1", "--post", "1",
                     "--out", str(tmp_path / "o.jsonl")])
    assert code == 2


def test_inspect_case2_fixture_shows_state_changes(tmp_path, capsys):
    rec_path = make_case2_recording(tmp_path, script="crossing")
    assert cli.main(["inspect", "--in", str(rec_path)]) == 0
    out = capsys.readouterr().out
    assert "Robot state change" in out
    assert "gsr" in out and "mocap" in out and "robot" in out
    assert "markers" in out


def test_inspect_is_deterministic(tmp_path, capsys):
    rec_path = make_case2_recording(tmp_path, script="far")
    assert cli.main(["inspect", "--in", str(rec_path)]) == 0
    first = capsys.readouterr().out
    assert cli.main(["inspect", "--in", str(rec_path)]) == 0
    second = capsys.readouterr().out
    assert first == second


def test_marker_inject_command(served_hub, capsys):
    srv, _ = served_hub
    code = cli.main(["marker", "inject", "--hub", f"127.0.0.1:{srv.port}",
                     "--label", "subject waved"])
    assert code == 0
    deadline = time.monotonic() + 5.0
    while not srv.hub.marker_log() and time.monotonic() < deadline:
        time.sleep(0.01)
    markers = srv.hub.marker_log()
    assert markers[0].label == "subject waved"
    assert markers[0].origin is MarkerOrigin.INVESTIGATOR


def test_sim_accelerated_pushes_expected_count(served_hub, capsys):
    srv, _ = served_hub
    code = cli.main(["sim", "gsr", "--hub", f"127.0.0.1:{srv.port}",
                     "--accelerate", "--duration", "5", "--seed", "3"])
    assert code == 0
    assert "pushed 161 samples" in capsys.readouterr().out  # 5 s at 32 Hz, k=0..160


@pytest.mark.parametrize("kind", ["gsr", "ppg", "ecg", "mocap", "robot"])
def test_sim_accelerated_all_kinds(served_hub, capsys, kind):
    srv, _ = served_hub
    code = cli.main(["sim", kind, "--hub", f"127.0.0.1:{srv.port}",
                     "--accelerate", "--duration", "2"])
    assert code == 0
    assert "pushed" in capsys.readouterr().out
    # the session already said BYE; the stream (id 1) keeps its counts
    assert srv.hub.pushed_count(1) > 0


def test_sim_respects_env_hub(served_hub, monkeypatch, capsys):
    srv, _ = served_hub
    monkeypatch.setenv("SYNCREC_HUB", f"127.0.0.1:{srv.port}")
    code = cli.main(["sim", "ppg", "--accelerate", "--duration", "2"])
    assert code == 0
    assert "pushed" in capsys.readouterr().out


def test_hub_serve_names_recording_by_convention(tmp_path, monkeypatch):
    """--record DIR picks <experiment>_<subject>_<ISO8601>.srec from the
    run metadata once the hub shuts down."""
    import threading

    rec_dir = tmp_path / "recordings"
    rec_dir.mkdir()
    # run the serve command in a thread and stop it via its signal handler
    saved = {}

    def fake_signal(sig, handler):
        saved[sig] = handler

    monkeypatch.setattr(cli.signal, "signal", fake_signal)
    args = cli.build_parser().parse_args(
        ["hub", "serve", "--port", "0", "--record", str(rec_dir)])
    codes = []
    thread = threading.Thread(target=lambda: codes.append(cli.cmd_hub_serve(args)))
    thread.start()
    deadline = time.monotonic() + 10.0
    while not saved and time.monotonic() < deadline:
        time.sleep(0.02)
    assert list(rec_dir.glob(".recording-*.part"))  # temp file while serving
    next(iter(saved.values()))(None, None)          # deliver the stop signal
    thread.join(timeout=15.0)
    assert codes == [0]
    files = list(rec_dir.glob("*.srec"))
    assert len(files) == 1
    # no experiment connected, so the fallback identity applies
    assert files[0].name.startswith("session_anon_")
