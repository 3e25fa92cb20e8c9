"""Run configuration: JSON parsing, defaults, validation with line numbers.

Every key is optional.  Unknown keys are rejected, and each error names the
dotted path of the offending entry and the line it appears on.
"""
import copy
import json
from dataclasses import dataclass

from .errors import ConfigurationError

COMMANDS = ("forward", "bounds", "carleman", "klibanov", "stability-sweep", "reconstruct")
PRESETS = ("sine", "bump")

DEFAULTS = {
    "command": None,
    "seed": 0,
    "output_dir": "maglab_out",
    "noise": 0.0,
    "workers": 1,
    "grid": {"dim": 1, "N": 65, "L": 1.0},
    "time": {"T": 1.0, "N_t": 128},
    "potential": {"seed": None, "delta": 0.1, "M": 2.0, "collar": None,
                  "amplitude": 0.5, "modes": 4},
    "weights": {"x0": None, "m": 2.0, "lam": [0.1, 0.2], "s": [1.0, 2.0, 4.0, 8.0]},
    "family": {"n": None, "preset": None},
    "forward": {"potential": "random", "initial": "eigenmode", "mode": 1},
    "bounds": {"samples": 50, "ensemble": 20},
    "carleman": {"samples": 10, "modes": 4},
    "klibanov": {"samples": 10, "s": [1, 2, 4, 8, 16, 32, 64]},
    "sweep": {"n_seeds": 10, "deltas": [0.1]},
    "reconstruct": {"iterations": 200, "alpha": None, "metric_length": 0.05, "gtol": 1e-6},
}


@dataclass
class RunConfig:
    """Validated configuration; ``data`` mirrors :data:`DEFAULTS` with every key filled."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def command(self):
        return self.data["command"]

    @property
    def seed(self):
        return self.data["seed"]

    @property
    def potential_seed(self):
        s = self.data["potential"]["seed"]
        return self.seed if s is None else s

    def replace(self, **top):
        data = copy.deepcopy(self.data)
        data.update(top)
        return validate(data, {})

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


# ------------------------------------------------------------- key positions

def _key_lines(text):
    """Map dotted key paths to 1-based line numbers by walking the document."""
    dec = json.JSONDecoder()
    lines = {}

    def line_of(i):
        return text.count("\n", 0, i) + 1

    def skip(i):
        while i < len(text) and text[i] in " \t\r\n":
            i += 1
        return i

    def walk(i, prefix):
        i = skip(i)
        if i >= len(text) or text[i] != "{":
            _, end = dec.raw_decode(text, i)
            return end
        i = skip(i + 1)
        if text[i] == "}":
            return i + 1
        while True:
            key, kend = json.decoder.scanstring(text, i + 1)
            path = f"{prefix}.{key}" if prefix else key
            lines.setdefault(path, line_of(i))
            i = skip(kend)
            i = walk(i + 1, path)  # past ':'
            i = skip(i)
            if text[i] == "}":
                return i + 1
            i = skip(i + 1)  # past ','

    walk(0, "")
    return lines


def _err(msg, path, lines):
    line = lines.get(path)
    where = f"{path} (line {line})" if line is not None else path
    return ConfigurationError(f"{where}: {msg}")


# ---------------------------------------------------------------- validation

def _merge(defaults, given, prefix, lines):
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in defaults:
            raise _err("unknown key", path, lines)
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise _err("expected an object", path, lines)
            out[key] = _merge(defaults[key], val, path, lines)
        else:
            out[key] = val
    return out


def _number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _integer(x):
    return isinstance(x, int) and not isinstance(x, bool)


def validate(data, lines):
    """Fill defaults and check every invariant; returns a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ConfigurationError("top level: expected a JSON object")
    d = _merge(DEFAULTS, data, "", lines)

    def need(cond, msg, path):
        if not cond:
            raise _err(msg, path, lines)

    need(d["command"] is None or d["command"] in COMMANDS,
         f"must be one of {', '.join(COMMANDS)}", "command")
    need(_integer(d["seed"]) and 0 <= d["seed"] < 2**64, "must be an unsigned 64-bit integer", "seed")
    need(isinstance(d["output_dir"], str) and d["output_dir"], "must be a non-empty string",
         "output_dir")
    need(_number(d["noise"]) and d["noise"] >= 0, "noise level must be nonnegative", "noise")
    need(_integer(d["workers"]) and d["workers"] >= 1, "must be a positive integer", "workers")

    gr = d["grid"]
    need(gr["dim"] in (1, 2) and _integer(gr["dim"]), "must be 1 or 2", "grid.dim")
    need(_integer(gr["N"]) and gr["N"] >= 8, "must be an integer >= 8", "grid.N")
    need(_number(gr["L"]) and gr["L"] > 0, "must be positive", "grid.L")

    tm = d["time"]
    need(_number(tm["T"]) and tm["T"] > 0, "must be positive", "time.T")
    need(_integer(tm["N_t"]) and tm["N_t"] >= 2, "must be an integer >= 2", "time.N_t")

    po = d["potential"]
    need(po["seed"] is None or (_integer(po["seed"]) and 0 <= po["seed"] < 2**64),
         "must be null or an unsigned 64-bit integer", "potential.seed")
    need(_number(po["delta"]) and po["delta"] >= 0, "perturbation scale must be nonnegative",
         "potential.delta")
    need(_number(po["M"]) and po["M"] > 0, "must be positive", "potential.M")
    h = gr["L"] / (gr["N"] - 1)
    need(po["collar"] is None or (_number(po["collar"]) and po["collar"] >= 2 * h - 1e-12
                                  and po["collar"] < 0.25 * gr["L"]),
         "collar must be null or in [2h, L/4)", "potential.collar")
    need(_number(po["amplitude"]) and po["amplitude"] >= 0, "must be nonnegative",
         "potential.amplitude")
    need(_integer(po["modes"]) and po["modes"] >= 1, "must be a positive integer",
         "potential.modes")

    we = d["weights"]
    if we["x0"] is not None:
        need(isinstance(we["x0"], list) and len(we["x0"]) == gr["dim"]
             and all(_number(v) for v in we["x0"]),
             "must be null or a list of dim numbers", "weights.x0")
        inside = all(0.0 <= v <= gr["L"] for v in we["x0"])
        need(not inside, "must lie outside the closed domain", "weights.x0")
    need(_number(we["m"]) and we["m"] > 1, "must be > 1", "weights.m")
    for key in ("lam", "s"):
        need(isinstance(we[key], list) and we[key] and all(_number(v) and v > 0 for v in we[key]),
             "must be a non-empty list of positive numbers", f"weights.{key}")

    fa = d["family"]
    need(fa["n"] is None or fa["n"] == gr["dim"], "must be null or equal to grid.dim", "family.n")
    need(fa["preset"] is None or fa["preset"] in PRESETS,
         f"must be null or one of {', '.join(PRESETS)}", "family.preset")

    fw = d["forward"]
    need(fw["potential"] in ("random", "zero"), "must be 'random' or 'zero'", "forward.potential")
    need(fw["initial"] in ("eigenmode", "random"), "must be 'eigenmode' or 'random'",
         "forward.initial")
    need(_integer(fw["mode"]) and fw["mode"] >= 1, "must be a positive integer", "forward.mode")

    for block, keys in (("bounds", ("samples", "ensemble")), ("carleman", ("samples", "modes")),
                        ("klibanov", ("samples",))):
        for key in keys:
            need(_integer(d[block][key]) and d[block][key] >= 1, "must be a positive integer",
                 f"{block}.{key}")
    ks = d["klibanov"]["s"]
    need(isinstance(ks, list) and ks and all(_number(v) and v > 0 for v in ks),
         "must be a non-empty list of positive numbers", "klibanov.s")

    sw = d["sweep"]
    need(_integer(sw["n_seeds"]) and sw["n_seeds"] >= 0, "must be a nonnegative integer",
         "sweep.n_seeds")
    need(isinstance(sw["deltas"], list) and sw["deltas"]
         and all(_number(v) and v >= 0 for v in sw["deltas"]),
         "must be a non-empty list of nonnegative numbers", "sweep.deltas")

    rc = d["reconstruct"]
    need(_integer(rc["iterations"]) and rc["iterations"] >= 0, "must be a nonnegative integer",
         "reconstruct.iterations")
    need(rc["alpha"] is None or (_number(rc["alpha"]) and rc["alpha"] >= 0),
         "must be null or nonnegative", "reconstruct.alpha")
    need(_number(rc["metric_length"]) and rc["metric_length"] >= 0, "must be nonnegative",
         "reconstruct.metric_length")
    need(_number(rc["gtol"]) and rc["gtol"] >= 0, "must be nonnegative", "reconstruct.gtol")
    return RunConfig(d)


def parse_config(text):
    """Parse a UTF-8 JSON document into a validated :class:`RunConfig`."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigurationError(f"not valid UTF-8: {exc}") from exc
    if not text.strip():
        return validate({}, {})
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"syntax error at line {exc.lineno}, column {exc.colno}: "
                                 f"{exc.msg}") from exc
    return validate(data, _key_lines(text) if isinstance(data, dict) else {})


def load_config(path):
    with open(path, "rb") as fh:
        return parse_config(fh.read())


def default_config():
    return validate({}, {})
