import pytest

from rpahbf.channel import ConfigError
from rpahbf.config import desk_config, dump_config, load_config, parse_config


def test_round_trip_defaults():
    run = desk_config()
    assert parse_config(dump_config(run)) == run


def test_round_trip_overrides(tmp_path):
    text = ("[system]\nnum_users = 3\ntransmit_power_dbm = 35.5\n"
            "[prn]\ndepth = 1\n[training]\nphase_reference = false\nepochs = 4\n")
    path = tmp_path / "c.ini"
    path.write_text(text)
    run = load_config(path)
    assert run.system.num_users == 3
    assert run.system.transmit_power_dbm == 35.5
    assert run.network.prn.depth == 1
    assert run.network.analog.depth == desk_config().network.analog.depth
    assert run.network.phase_reference is False and run.network.epochs == 4
    assert parse_config(dump_config(run)) == run


def test_empty_text_is_desk_defaults():
    assert parse_config("") == desk_config()


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="unknown key 'bogus' in section \\[system\\]"):
        parse_config("[system]\nbogus = 1\n")


def test_unknown_section():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[optimizer]\nlr = 1\n")


@pytest.mark.parametrize("text", ["[system]\nnum_users = two\n", "[training]\nphase_reference = maybe\n",
                                  "[system]\nnum_users = 8\n", "not an ini file"])
def test_bad_values_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)
