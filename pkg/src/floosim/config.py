"""Experiment configuration: INI-style config files, CLI flag overrides, and
validation.  An empty (or absent) file yields the default 8x4 system with
RoB-less ordering and a 4-channel DMA per tile."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import Optional

from .endpoints import DmaConfig, MemoryEndpointConfig, PATTERNS
from .fabric import MeshConfig
from .ni import NiConfig
from .protocol import LinkClass, TxnOp
from .router import RouterConfig


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass
class WorkloadConfig:
    pattern: str = "neighbor"
    op: TxnOp = TxnOp.WRITE
    sizes_kib: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    start_cycle: int = 0
    probe_period: int = 64
    hbm_txns: int = 32  # per-tile 4 KiB transactions in the hbm-load preset
    file: Optional[str] = None
    matmul_write_ratio: int = 8  # read:write bytes


@dataclass
class ExperimentConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    ni: NiConfig = field(default_factory=NiConfig)
    dma: DmaConfig = field(default_factory=DmaConfig)
    spm: MemoryEndpointConfig = field(default_factory=MemoryEndpointConfig)
    hbm: MemoryEndpointConfig = field(default_factory=MemoryEndpointConfig.hbm)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    link_bits: dict = field(
        default_factory=lambda: {LinkClass.REQ: 119, LinkClass.RSP: 103, LinkClass.WIDE: 603}
    )
    seed: int = 1
    max_cycles: int = 2_000_000
    deadlock_window: int = 10_000
    warmup_frac: float = 0.05
    clock_ghz: float = 1.26

    def validate(self) -> None:
        try:
            self.mesh.validate()
            self.ni.validate()
            self.dma.validate()
        except ValueError as e:
            raise ValidationError(str(e)) from None
        if self.router.in_buf_depth < 1 or self.router.out_buf_depth < 1:
            raise ValidationError("router buffer depths must be >= 1")
        if not 0.0 < self.spm.accept_rate <= 1.0 or not 0.0 < self.hbm.accept_rate <= 1.0:
            raise ValidationError("accept_rate must be in (0, 1]")
        if self.workload.pattern not in PATTERNS:
            raise ValidationError(f"unknown workload pattern {self.workload.pattern!r}")
        if self.max_cycles < 1:
            raise ValidationError("max_cycles must be >= 1")
        if any(k <= 0 for k in self.workload.sizes_kib):
            raise ValidationError("workload sizes must be positive")


def _parse_bool(text: str, key: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"{key}: expected a boolean, got {text!r}")


def _parse_sizes(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(",", " ").split())


# section -> key -> setter(cfg, value_string)
_SCHEMA = {
    "mesh": {
        "x": lambda c, v: setattr(c.mesh, "x_tiles", int(v)),
        "y": lambda c, v: setattr(c.mesh, "y_tiles", int(v)),
        "hbm": lambda c, v: setattr(c.mesh, "hbm_rows", _parse_bool(v, "mesh.hbm")),
        "routing": lambda c, v: setattr(c.mesh, "routing", v.strip()),
    },
    "router": {
        "in_buf_depth": lambda c, v: setattr(c.router, "in_buf_depth", int(v)),
        "out_buf_depth": lambda c, v: setattr(c.router, "out_buf_depth", int(v)),
        "disable_loopback": lambda c, v: setattr(
            c.router, "disable_loopback", _parse_bool(v, "router.disable_loopback")
        ),
        "xy_turn_pruning": lambda c, v: setattr(
            c.router, "xy_turn_pruning", _parse_bool(v, "router.xy_turn_pruning")
        ),
    },
    "ni": {
        "ordering": lambda c, v: setattr(c.ni, "ordering", v.strip()),
        "rob_capacity_bytes": lambda c, v: setattr(c.ni, "rob_capacity_bytes", int(v)),
        "ni_crossing_latency": lambda c, v: setattr(c.ni, "ni_crossing_latency", int(v)),
        "atop_buffer_depth": lambda c, v: setattr(c.ni, "atop_buffer_depth", int(v)),
        "meta_depth": lambda c, v: setattr(c.ni, "meta_depth", int(v)),
    },
    "dma": {
        "num_channels": lambda c, v: setattr(c.dma, "num_channels", int(v)),
        "max_outstanding_per_channel": lambda c, v: setattr(
            c.dma, "max_outstanding_per_channel", int(v)
        ),
        "burst_bytes": lambda c, v: setattr(c.dma, "burst_bytes", int(v)),
    },
    "spm": {
        "access_latency": lambda c, v: setattr(c.spm, "access_latency", int(v)),
        "accept_rate": lambda c, v: setattr(c.spm, "accept_rate", float(v)),
    },
    "hbm": {
        "access_latency": lambda c, v: setattr(c.hbm, "access_latency", int(v)),
        "accept_rate": lambda c, v: setattr(c.hbm, "accept_rate", float(v)),
    },
    "link": {
        "req_bits": lambda c, v: c.link_bits.__setitem__(LinkClass.REQ, int(v)),
        "rsp_bits": lambda c, v: c.link_bits.__setitem__(LinkClass.RSP, int(v)),
        "wide_bits": lambda c, v: c.link_bits.__setitem__(LinkClass.WIDE, int(v)),
    },
    "run": {
        "seed": lambda c, v: setattr(c, "seed", int(v)),
        "max_cycles": lambda c, v: setattr(c, "max_cycles", int(v)),
        "deadlock_window": lambda c, v: setattr(c, "deadlock_window", int(v)),
        "warmup_frac": lambda c, v: setattr(c, "warmup_frac", float(v)),
        "clock_ghz": lambda c, v: setattr(c, "clock_ghz", float(v)),
    },
    "workload": {
        "pattern": lambda c, v: setattr(c.workload, "pattern", v.strip()),
        "op": lambda c, v: setattr(c.workload, "op", TxnOp(v.strip())),
        "sizes_kib": lambda c, v: setattr(c.workload, "sizes_kib", _parse_sizes(v)),
        "start": lambda c, v: setattr(c.workload, "start_cycle", int(v)),
        "probe_period": lambda c, v: setattr(c.workload, "probe_period", int(v)),
        "hbm_txns": lambda c, v: setattr(c.workload, "hbm_txns", int(v)),
        "file": lambda c, v: setattr(c.workload, "file", v.strip()),
        "matmul_write_ratio": lambda c, v: setattr(c.workload, "matmul_write_ratio", int(v)),
    },
}


def _apply(cfg: ExperimentConfig, section: str, key: str, value: str, where: str) -> None:
    sect = _SCHEMA.get(section)
    if sect is None:
        raise ValidationError(f"{where}: unknown section [{section}]")
    setter = sect.get(key)
    if setter is None:
        raise ValidationError(f"{where}: unknown key {section}.{key}")
    try:
        setter(cfg, value)
    except ValidationError:
        raise
    except (TypeError, ValueError) as e:
        raise ValidationError(f"{where}: bad value for {section}.{key}: {e}") from None


def parse_config(
    path: Optional[str] = None, overrides: Optional[list[str]] = None
) -> ExperimentConfig:
    """Build an ExperimentConfig from an INI file plus `section.key=value`
    override strings (CLI flags win over file values).  The FLOOSIM_SEED
    environment variable, when set, overrides the seed last."""
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as f:
                parser.read_file(f, source=path)
        except OSError as e:
            raise ParseError(f"{path}: {e.strerror}") from None
        except configparser.Error as e:
            raise ParseError(str(e)) from None
        for section in parser.sections():
            for key, value in parser.items(section):
                _apply(cfg, section, key, value, where=path)
    for ov in overrides or []:
        if "=" not in ov:
            raise ParseError(f"override {ov!r} is not of the form section.key=value")
        dotted, value = ov.split("=", 1)
        if "." not in dotted:
            raise ParseError(f"override {ov!r} is not of the form section.key=value")
        section, key = dotted.split(".", 1)
        _apply(cfg, section, key, value, where=f"--{ov}")
    env_seed = os.environ.get("FLOOSIM_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ParseError(f"FLOOSIM_SEED={env_seed!r} is not an integer") from None
    cfg.validate()
    return cfg
