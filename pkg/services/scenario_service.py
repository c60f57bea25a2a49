import copy
import logging
import math
import os
from typing import Any, Dict, List, Optional

import numpy as np
import yaml
from pydantic import ValidationError

from services.errors import ConfigError
from services.experiment_service import LinkScenario, LinkSchemeKind
from services.signal_core import transfer
from services.tx_modem import occupied_bandwidth

logger = logging.getLogger(__name__)

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "scenarios")

# Bias transmissivity below this is reported as a warning by validate
MIN_BIAS_TRANSMISSIVITY_DB = -20.0


def resolve_scenario_path(name_or_path: str) -> str:
    """Accept a file path or a bare scenario name from scenarios/"""
    if os.path.exists(name_or_path):
        return name_or_path
    candidate = os.path.join(SCENARIO_DIR, name_or_path)
    for path in (candidate, candidate + ".yaml"):
        if os.path.exists(path):
            return path
    raise ConfigError(f"Scenario file not found: {name_or_path}")


def read_scenario_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        logger.error(f"Could not parse {path}: {str(e)}")
        raise ConfigError(f"Invalid YAML in {path}: {str(e)}")
    except OSError as e:
        raise ConfigError(f"Cannot read scenario {path}: {str(e)}")
    if not isinstance(data, dict):
        raise ConfigError(f"Scenario {path} must be a mapping, got {type(data).__name__}")
    data.setdefault("name", os.path.splitext(os.path.basename(path))[0])
    return data


def apply_overrides(data: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """
    Apply ``a.b=value`` overrides. Values go through yaml.safe_load so numbers, lists and booleans
    keep their types; integer path parts index into lists (``spans.0.length_km=80``).
    """
    out = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse override value {raw!r}: {str(e)}")
        parts = key.strip().split(".")
        target: Any = out
        for part in parts[:-1]:
            if isinstance(target, list):
                target = target[_list_index(target, part, key)]
            else:
                target = target.setdefault(part, {})
        last = parts[-1]
        if isinstance(target, list):
            target[_list_index(target, last, key)] = value
        else:
            target[last] = value
        logger.debug(f"Override {key} = {value!r}")
    return out


def _list_index(target: list, part: str, key: str) -> int:
    if not part.isdigit() or int(part) >= len(target):
        raise ConfigError(f"Override {key}: {part!r} is not a valid index into a list of {len(target)}")
    return int(part)


def build_scenario(data: Dict[str, Any]) -> LinkScenario:
    try:
        return LinkScenario(**data)
    except ValidationError as e:
        logger.error(f"Invalid scenario {data.get('name', '?')}: {str(e)}")
        raise ConfigError(f"Invalid scenario {data.get('name', '?')}: {str(e)}")


def load_scenario(name_or_path: str, overrides: Optional[List[str]] = None,
                  seed: Optional[int] = None, n_symbols: Optional[int] = None) -> LinkScenario:
    """Read, override and validate a scenario; CLI flags win over file values"""
    path = resolve_scenario_path(name_or_path)
    data = apply_overrides(read_scenario_file(path), overrides or [])
    if seed is not None:
        data["base_seed"] = seed
    if n_symbols is not None:
        data["n_symbols"] = n_symbols
    scenario = build_scenario(data)
    logger.info(f"Loaded scenario {scenario.name} from {path}")
    return scenario


def job_count(sc: LinkScenario) -> int:
    if sc.scheme == LinkSchemeKind.KK_PAM_SSB:
        return len(sc.bias_or_lo_ratio) * sc.n_runs
    return sc.n_runs


def validate_report(sc: LinkScenario) -> Dict[str, Any]:
    """Derived link quantities, computed without running anything"""
    pulse = sc.pulse()
    span = sc.spans[0] if sc.spans else None
    gap = sc.gap_hz if sc.scheme == LinkSchemeKind.TWO_SIDED_POL_MUX else 0.0
    bandwidth = occupied_bandwidth(pulse, gap)
    report: Dict[str, Any] = {
        "name": sc.name,
        "scheme": sc.scheme.value,
        "axis": sc.axis_name,
        "axis_points": len(sc.axis_values),
        "sample_rate_ghz": sc.sample_rate_hz / 1e9,
        "beta2_ps2_per_km": span.beta2_s2_per_m * 1e27 if span else 0.0,
        "total_cd_ps_nm": sc.total_cd_ps_nm,
        "occupied_bandwidth_ghz": bandwidth["nominal_hz"] / 1e9,
        "occupied_bandwidth_rolloff_ghz": bandwidth["rolloff_inclusive_hz"] / 1e9,
        "spectral_efficiency_loss": bandwidth["efficiency_loss"],
        "jobs": job_count(sc),
        "warnings": [],
    }
    if sc.scheme != LinkSchemeKind.COHERENT_QAM16:
        report["adc_rate_ghz"] = sc.resolved_adc_rate_hz() / 1e9
    if sc.scheme == LinkSchemeKind.KK_PAM_SSB and sc.rx_filter is not None:
        h0 = float(transfer(sc.rx_filter, np.array([0.0]))[0])
        transmissivity_db = 20 * math.log10(h0) if h0 > 0 else -math.inf
        report["bias_transmissivity_db"] = transmissivity_db
        if transmissivity_db < MIN_BIAS_TRANSMISSIVITY_DB:
            message = (
                f"Receiver filter passes the bias at {transmissivity_db:.1f} dB; "
                f"centring it on the signal band at {sc.pulse().bandwidth_hz / 4e9:.1f} GHz keeps it"
            )
            logger.warning(message)
            report["warnings"].append(message)
    return report


def format_report(report: Dict[str, Any]) -> str:
    lines = [f"Scenario {report['name']} ({report['scheme']})", "=" * 50]
    for key, value in report.items():
        if key in ("name", "scheme", "warnings"):
            continue
        if isinstance(value, float):
            lines.append(f"{key:32s} {value:12.4f}")
        else:
            lines.append(f"{key:32s} {value!s:>12}")
    for warning in report["warnings"]:
        lines.append(f"WARNING: {warning}")
    return "\n".join(lines)
