import csv
import io
import json

import pytest

from oeiattest.cli import BLOB_MAGIC, main

BAD = "func main {\nentry:\n  jump nowhere\n}\n"


@pytest.fixture()
def keys(tmp_path):
    priv = tmp_path / "dev.key"
    assert main(["keygen", "-o", str(priv)]) == 0
    return priv, tmp_path / "dev.key.pub"


def test_check_and_analyze(tmp_path, capsys):
    assert main(["check", "corpus:rover"]) == 0
    assert "1 operation" in capsys.readouterr().out
    out = tmp_path / "b.json"
    assert main(["analyze", "corpus:light", "-o", str(out)]) == 0
    assert json.loads(out.read_text())["format"] == "oei-cfg-bundle/1"


def test_validation_and_usage_codes(tmp_path):
    bad = tmp_path / "bad.mir"
    bad.write_text(BAD)
    assert main(["check", str(bad)]) == 3
    assert main(["check", str(tmp_path / "missing.mir")]) == 5
    assert main(["check", "corpus:nope"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["attest", "corpus:rover"]) == 2        # no key


def test_attest_then_verify(tmp_path, keys, capsys):
    priv, pub = keys
    blob = tmp_path / "r.blob"
    nonce = "00" * 15 + "01"
    assert main(["attest", "corpus:rover", "--key", str(priv), "--nonce", nonce,
                 "-o", str(blob)]) == 0
    data = blob.read_bytes()
    assert data.startswith(BLOB_MAGIC)
    capsys.readouterr()
    assert main(["verify", str(blob), "--program", "corpus:rover", "--pubkey", str(pub),
                 "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["verdict"] == "pass"
    # byte-for-byte reproducible for a fixed nonce
    again = tmp_path / "r2.blob"
    main(["attest", "corpus:rover", "--key", str(priv), "--nonce", nonce, "-o", str(again)])
    assert again.read_bytes() == data


def test_verify_failures(tmp_path, keys, capsys):
    priv, pub = keys
    blob = tmp_path / "r.blob"
    faults = tmp_path / "f.json"
    faults.write_text(json.dumps([{"trigger": "clamp/ok/term", "action": "overwrite_return",
                                   "value": "drive/entry"}]))
    assert main(["attest", "corpus:rover", "--key", str(priv), "--faults", str(faults),
                 "-o", str(blob)]) == 0
    assert main(["verify", str(blob), "--program", "corpus:rover", "--pubkey", str(pub)]) == 4
    # damaged evidence
    data = bytearray(blob.read_bytes())
    data[-70] ^= 0xFF
    blob.write_bytes(bytes(data))
    assert main(["verify", str(blob), "--program", "corpus:rover", "--pubkey", str(pub)]) == 4
    # not a blob file at all
    blob.write_bytes(b"garbage")
    assert main(["verify", str(blob), "--program", "corpus:rover", "--pubkey", str(pub)]) == 5


def test_env_keys(tmp_path, keys, monkeypatch):
    priv, pub = keys
    monkeypatch.setenv("OEI_KEY", str(priv))
    monkeypatch.setenv("OEI_PUBKEY", str(pub))
    blob = tmp_path / "s.blob"
    assert main(["attest", "corpus:syringe", "-o", str(blob)]) == 0
    assert main(["verify", str(blob), "--program", "corpus:syringe"]) == 0


def test_inputs_descriptor(tmp_path, keys):
    priv, pub = keys
    inputs = tmp_path / "in.json"
    inputs.write_text(json.dumps({"inputs": [0]}))
    blob = tmp_path / "l.blob"
    assert main(["attest", "corpus:light", "--key", str(priv), "--inputs", str(inputs),
                 "-o", str(blob)]) == 0
    assert main(["verify", str(blob), "--program", "corpus:light", "--pubkey", str(pub)]) == 0
    inputs.write_text("[1, 2")
    assert main(["attest", "corpus:light", "--key", str(priv), "--inputs", str(inputs),
                 "-o", str(blob)]) == 3


def test_compare_csv(capsys):
    assert main(["compare", "corpus:remote_move"]) == 0
    (row,) = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert float(row["site_ratio"]) < 1
    assert float(row["size_ratio"]) < 0.5


def test_attack_command(capsys):
    assert main(["attack"]) == 0
    out = capsys.readouterr().out
    assert "MISSED" not in out and "14/14" in out


ONE_OP = """func main {
  local int x
entry:
  x = input
  attest_begin 1
  branch x > 3 big small
big:
  jump done
small:
  jump done
done:
  attest_end 1
  halt
}
"""


def test_single_operation_is_the_default(tmp_path, keys, capsys):
    priv, pub = keys
    src = tmp_path / "one.mir"
    src.write_text(ONE_OP)
    blob = tmp_path / "one.blob"
    assert main(["attest", str(src), "--key", str(priv), "--input", "5", "-o", str(blob)]) == 0
    assert main(["verify", str(blob), "--program", str(src), "--pubkey", str(pub)]) == 0
    assert "operation 1: PASS" in capsys.readouterr().out
    two = tmp_path / "two.mir"
    two.write_text(ONE_OP.replace("  attest_end 1\n", "  attest_end 1\n  attest_begin 2\n"
                                                     "  attest_end 2\n"))
    assert main(["check", str(two)]) == 0
    assert main(["attest", str(two), "--key", str(priv), "-o", str(blob)]) == 2
