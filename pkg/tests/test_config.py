import pytest

from rulespace.config import ConfigError, RunConfig, load_config, parse_config, parse_value
from rulespace.model import ModelKind


class TestParseValue:
    @pytest.mark.parametrize("text, expected", [
        ("16", 16), ("0.01", 0.01), ("1e-3", 1e-3), ("true", True), ("off", False),
        ("data/train.txt", "data/train.txt"), ("'quoted # not'", "quoted # not"),
        ("[0.01, 0.001]", [0.01, 0.001]), ("[]", []), ("[G, NG]", ["G", "NG"]),
    ])
    def test_examples(self, text, expected):
        assert parse_value(text) == expected


class TestParseConfig:
    def test_comments_and_blanks(self):
        text = "# run\ntrain = t.txt  # trailing\n\nd = 8\neta = [0.01, 0.1]\n"
        assert parse_config(text) == {"train": "t.txt", "d": 8, "eta": [0.01, 0.1]}

    @pytest.mark.parametrize("text, message", [("d 8", "key = value"), ("d = 1\nd = 2", "duplicate"),
                                               (" = 3", "empty key")])
    def test_errors_carry_line(self, text, message):
        with pytest.raises(ConfigError, match=message):
            parse_config(text, "run.cfg")

    def test_load(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("gamma = 2\n", encoding="utf-8")
        assert load_config(path) == {"gamma": 2}


class TestRunConfig:
    def test_base_settings(self):
        run = RunConfig.from_dict({"train": "t.txt", "d": 8, "model": "transh", "corrupt": [0.4, 0.4, 0.2],
                                   "grounding": "g", "hits": [1, 10]})
        assert run.paths["train"] == "t.txt" and run.paths["rules"] is None
        assert run.train.d == 8 and run.train.model is ModelKind.TRANSH and run.train.grounding == "G"
        assert run.train.corrupt == (0.4, 0.4, 0.2) and run.hits == (1, 10)
        assert run.grid_points() == [run.train]

    def test_grid(self):
        run = RunConfig.from_dict({"eta": [0.01, 0.1], "gamma": [1, 2, 4], "d": 8})
        points = run.grid_points()
        assert len(points) == 6
        assert {(p.eta, p.gamma) for p in points} == {(e, g) for e in (0.01, 0.1) for g in (1, 2, 4)}
        assert all(p.d == 8 for p in points)

    @pytest.mark.parametrize("values, message", [({"epochz": 3}, "epochz"), ({"eta": []}, "empty"),
                                                 ({"eta": -1}, "eta")])
    def test_invalid(self, values, message):
        with pytest.raises(ConfigError, match=message):
            RunConfig.from_dict(values)
