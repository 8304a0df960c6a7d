"""Command-line entry point: ``saltgalerkin <subcommand> --config FILE --out DIR``.

Exit status is 0 on success, 1 on a configuration or usage error and 2 on a
runtime failure. Sample paths that end with a non-finite state are data, not
failures.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assumptions import KWeights, check_all, correction_ordering_gap, write_reports
from .galerkin import GalerkinConfig, auto_R, galerkin_system, run
from .noise import BrownianPath, build_xi_family, load_xi_family
from .operators import OperatorBundle
from .studies import Study, StudySpec, initial_coefficients, run_study

__all__ = ["ConfigError", "ParsedConfig", "parse_config", "RunManifest", "dispatch", "main", "DEFAULTS"]

SUBCOMMANDS = {
    "simulate": None,
    "cauchy-study": Study.CAUCHY_DECAY,
    "uniform-bound": Study.UNIFORM_BOUND,
    "hitting-times": Study.SMALL_TIME_HITTING,
    "uniqueness": Study.PATHWISE_UNIQUENESS,
    "rough-data": Study.ROUGH_DATA_CONVERGENCE,
    "blowup-watch": Study.BLOWUP_WATCH,
    "verify-assumptions": None,
}

# section -> key -> (type, default)
DEFAULTS = {
    "galerkin": {
        "cutoff_n": (int, 16),
        "R": (str, "auto"),
        "M": (float, 10.0),
        "horizon_t": (float, 0.5),
        "dt": (float, 1e-3),
        "scheme": (str, "euler_maruyama"),
        "ito_correction": (str, "projected"),
    },
    "operators": {
        "form": (str, "velocity"),
        "dim": (int, 2),
        "viscosity": (float, 1.0),
        "nonlinear": (bool, True),
        "square": (str, "project_each"),
    },
    "noise": {
        "kind": (str, "shear"),
        "count": (int, 4),
        "decay": (float, 1.0),
        "amplitude": (float, 1.0),
        "seed": (int, 0),
        "file": (str, ""),
    },
    "study": {
        "n_values": (list, [4, 8, 16]),
        "sample_count": (int, 100),
        "seed": (int, 0),
        "initial": (str, "smooth"),
        "initial_norm": (float, 1.0),
        "initial_seed": (int, 0),
        "S_values": (list, [0.01, 0.04, 0.16]),
        "deltas": (list, [1e-2, 1e-3, 1e-4]),
    },
    "assumptions": {
        "n_values": (list, [4, 8, 16]),
        "samples": (int, 60),
        "p": (float, 4.0),
        "q": (float, 4.0),
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ParsedConfig:
    cfg: GalerkinConfig
    bundle: OperatorBundle
    study: dict
    assumptions: dict
    raw: dict = field(repr=False)
    auto_R: bool = True


def _key_lines(text: str) -> dict:
    """``(section, key) -> line number`` for error messages."""
    lines, section = {}, None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = i
        elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, 1)[0].strip()
            lines[(section, key)] = i
    return lines


def _convert(kind, text):
    if kind is bool:
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is list:
        return [float(v) if any(c in v for c in ".eE") else int(v)
                for v in re.split(r"[,\s]+", text.strip()) if v]
    return kind(text.strip())


def parse_config(path) -> ParsedConfig:
    """Read and validate an INI config; errors name the file, line and key."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    lines = _key_lines(text)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    def where(section, key=None):
        ln = lines.get((section, key)) or lines.get((section, None))
        return f"{path}:{ln}" if ln else f"{path}"

    raw = {}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{where(section)}: unknown section [{section}]")
        for key in parser[section]:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{where(section, key)}: unknown key '{key}' in [{section}]")
    for section, keys in DEFAULTS.items():
        raw[section] = {}
        for key, (kind, default) in keys.items():
            if parser.has_option(section, key):
                try:
                    raw[section][key] = _convert(kind, parser[section][key])
                except ValueError as exc:
                    raise ConfigError(f"{where(section, key)}: [{section}] {key}: {exc}") from exc
            else:
                raw[section][key] = default

    g, o, nz = raw["galerkin"], raw["operators"], raw["noise"]

    def check(section, key, fn):
        try:
            return fn()
        except (ValueError, TypeError, OSError) as exc:
            raise ConfigError(f"{where(section, key)}: [{section}] {key}: {exc}") from exc

    auto = str(g["R"]).strip().lower() == "auto"
    R = 1.0 if auto else check("galerkin", "R", lambda: float(g["R"]))
    for key, test, msg in (("M", g["M"] > 1, "M must exceed 1"),
                           ("dt", g["dt"] > 0, "dt must be positive"),
                           ("horizon_t", g["horizon_t"] >= g["dt"], "horizon_t must be >= dt"),
                           ("cutoff_n", g["cutoff_n"] >= 1, "cutoff_n must be >= 1"),
                           ("R", R > 0, "R must be positive")):
        if not test:
            raise ConfigError(f"{where('galerkin', key)}: [galerkin] {key}: {msg} (got {g[key]})")
    cfg = check("galerkin", "scheme", lambda: GalerkinConfig(
        g["cutoff_n"], R, g["M"], g["horizon_t"], g["dt"], g["scheme"], g["ito_correction"]))

    planar = o["form"] == "vorticity" and o["dim"] == 2
    field_dim = 3 if planar else o["dim"]
    if nz["file"]:
        noise = check("noise", "file", lambda: load_xi_family(path.parent / nz["file"]))
    else:
        noise = check("noise", "decay", lambda: build_xi_family(
            nz["kind"], nz["count"], nz["decay"], field_dim, planar, nz["seed"],
            amplitude=nz["amplitude"]))
    bundle = check("operators", "form", lambda: OperatorBundle(
        o["form"], o["dim"], o["viscosity"], noise if noise.count else None, o["square"],
        nonlinear=o["nonlinear"]))

    st = raw["study"]
    check("study", "n_values", lambda: StudySpec(Study.UNIFORM_BOUND, cfg, bundle,
                                                 st["n_values"], st["sample_count"], st["seed"]))
    if raw["assumptions"]["samples"] < 1:
        raise ConfigError(f"{where('assumptions', 'samples')}: [assumptions] samples must be >= 1")
    return ParsedConfig(cfg, bundle, st, raw["assumptions"], raw, auto)


@dataclass
class RunManifest:
    config_path: Path
    output_dir: Path
    seed_override: int = None
    study: str = "simulate"
    threads: int = 1

    def config_hash(self) -> str:
        h = hashlib.sha256(Path(self.config_path).read_bytes())
        h.update(f"|seed={self.seed_override}".encode())
        return h.hexdigest()

    def claim(self) -> None:
        """Create the output directory, echo the config and record the manifest.

        Raises FileExistsError when the directory already holds a manifest for
        a different config.
        """
        out = Path(self.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = out / "manifest.txt"
        digest = self.config_hash()
        if manifest.exists():
            fields = dict(line.split(" = ", 1) for line in manifest.read_text().splitlines() if " = " in line)
            if fields.get("config_sha256") != digest:
                raise FileExistsError(f"{manifest} belongs to a different config; refusing to overwrite")
        (out / "config.ini").write_bytes(Path(self.config_path).read_bytes())
        manifest.write_text(f"config_path = {self.config_path}\nconfig_sha256 = {digest}\n"
                            f"seed_override = {self.seed_override}\n")


def _study_spec(parsed: ParsedConfig, study: Study, seed: int, threads: int) -> StudySpec:
    st = parsed.study
    params = {"initial": st["initial"], "initial_norm": st["initial_norm"],
              "initial_seed": st["initial_seed"], "S_values": st["S_values"],
              "deltas": st["deltas"], "auto_R": parsed.auto_R, "threads": threads}
    if study is Study.ROUGH_DATA_CONVERGENCE and st["initial"] == "smooth":
        params["initial"] = "rough"
    return StudySpec(study, parsed.cfg, parsed.bundle, st["n_values"], st["sample_count"], seed, params)


def _simulate(parsed: ParsedConfig, seed: int, out: Path) -> Path:
    cfg, bundle = parsed.cfg, parsed.bundle
    st = parsed.study
    system = galerkin_system(bundle, cfg.cutoff_n)
    x0 = initial_coefficients(bundle, cfg.cutoff_n, st["initial"], st["initial_norm"], st["initial_seed"])
    if parsed.auto_R:
        cfg = cfg.replace(R=auto_R(cfg, float(system.norm2(x0, "H")), bundle))
    rec = run(system.basis.to_field(x0), cfg, bundle, BrownianPath(seed, cfg.dt, bundle.noise_count))
    path = out / f"trajectory_seed{seed}.csv"
    rec.to_csv(path)
    (out / f"trajectory_seed{seed}.meta.txt").write_text(
        f"tau = {rec.tau!r}\ncause = {rec.cause.value}\nR = {cfg.R!r}\n")
    return path


def _verify(parsed: ParsedConfig, seed: int, out: Path) -> Path:
    a = parsed.assumptions
    weights = KWeights(p=a["p"], q=a["q"])
    reports = []
    for n in a["n_values"]:
        reports += check_all(parsed.bundle, int(n), a["samples"], weights, seed)
    path = out / f"assumptions_seed{seed}.csv"
    write_reports(reports, path)
    gap = correction_ordering_gap(parsed.bundle, int(a["n_values"][-1]), a["samples"], seed)
    (out / f"assumptions_seed{seed}.meta.txt").write_text(f"ito_ordering_gap = {gap!r}\n")
    return path


def dispatch(command: str, manifest: RunManifest) -> int:
    """Run one subcommand; returns the process exit status."""
    try:
        parsed = parse_config(manifest.config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    seed = manifest.seed_override if manifest.seed_override is not None else parsed.study["seed"]
    try:
        manifest.claim()
        out = Path(manifest.output_dir)
        if command == "simulate":
            path = _simulate(parsed, seed, out)
        elif command == "verify-assumptions":
            path = _verify(parsed, seed, out)
        else:
            spec = _study_spec(parsed, SUBCOMMANDS[command], seed, manifest.threads)
            path, _ = run_study(spec).write(out)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="saltgalerkin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 1
    manifest = RunManifest(args.config, args.out, args.seed, args.command, args.threads)
    return dispatch(args.command, manifest)


if __name__ == "__main__":
    sys.exit(main())
