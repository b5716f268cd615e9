import json

import pytest

from xmssca.cli import EXIT_ERROR, EXIT_FAILED, EXIT_OK, main
from xmssca.config import DECISIONS_FILE, LEAF_CERT_FILE

from conftest import T0


@pytest.fixture
def toy_config(tmp_path):
    path = tmp_path / "toy.json"
    path.write_text(json.dumps({"tree_height": 4, "allow_toy_params": True, "ntp_servers": []}))
    return path


@pytest.fixture
def home(tmp_path, toy_config, capsys):
    home = tmp_path / "ca"
    assert main(["-q", "-c", str(toy_config), "setup", "--home", str(home)]) == EXIT_OK
    capsys.readouterr()
    return home


def test_keygen_needs_allow_toy(tmp_path, capsys):
    out = tmp_path / "toy.xks"
    assert main(["-q", "keygen", "--height", "4", "--out", str(out)]) == EXIT_ERROR
    assert not out.exists()
    assert main(["-q", "keygen", "--height", "4", "--allow-toy", "--out", str(out)]) == EXIT_OK
    assert "XMSS-SHA2_4_256: 16 signatures of 2308 B" in capsys.readouterr().out
    assert out.exists()


def test_setup_prints_the_artifacts(tmp_path, toy_config, capsys):
    assert main(["-q", "-c", str(toy_config), "setup", "--home", str(tmp_path / "ca")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "CN=ExampleCA" in out
    assert "start_index        2" in out
    assert main(["-q", "-c", str(toy_config), "setup", "--home", str(tmp_path / "ca")]) == EXIT_ERROR


def test_schedule_show(home, capsys):
    assert main(["-q", "--format", "json", "schedule", "show", "--home", str(home)]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["signing_index"] == 1
    assert data["start_index"] == 2
    assert data["max_index"] == 16


def test_issue_and_alerts(home, capsys):
    assert main(["-q", "issue", "--home", str(home)]) == EXIT_OK
    assert main(["-q", "admin", "alerts", "--home", str(home)]) == EXIT_OK
    assert "(no events)" in capsys.readouterr().out


def test_queued_decision(home, capsys):
    assert main(["-q", "admin", "decide", "accept_time", "--home", str(home)]) == EXIT_OK
    assert "queued accept_time" in capsys.readouterr().out
    assert (home / DECISIONS_FILE).exists()
    # a running CA refuses the decision but keeps going
    assert main(["-q", "issue", "--home", str(home)]) == EXIT_OK


def test_admin_decide_needs_a_decision(home):
    with pytest.raises(SystemExit):
        main(["admin", "decide", "--home", str(home)])


def test_export_verify_and_handshake(home, tmp_path, capsys):
    bundle = tmp_path / "peer"
    assert main(["-q", "export", "bundle", "--home", str(home), "--dest", str(bundle)]) == EXIT_OK
    leaf = str(home / LEAF_CERT_FILE)
    assert main(["-q", "verify", "--trust", str(bundle), "--leaf", leaf]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[-1] == "accept"

    assert main(["-q", "verify", "--trust", str(bundle), "--leaf", leaf, "--at", str(T0)]) == EXIT_FAILED
    assert capsys.readouterr().out.startswith("reject not-yet-valid")

    assert main(["-q", "handshake", "--initiator", str(home), "--responder", str(bundle),
                 "--rounds", "3"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("accepted 3/3")


def test_virtual_run(tmp_path, toy_config, capsys):
    argv = ["-q", "-c", str(toy_config), "run", "--virtual", "--home", str(tmp_path / "ca"),
            "--duration", "4h", "--start", str(T0)]
    assert main(argv) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert "setup_complete" in lines[0]
    assert any("issued" in line and "index=3" in line for line in lines)


def test_scenario_list_and_missing_name(capsys):
    assert main(["-q", "scenario", "list"]) == EXIT_OK
    assert "nominal" in capsys.readouterr().out.split()
    assert main(["-q", "scenario", "run"]) == EXIT_ERROR
