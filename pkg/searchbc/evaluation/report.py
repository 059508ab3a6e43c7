import json
import math
from pathlib import Path
from typing import Any

REPORT_VERSION = 1


def _round(value: Any) -> Any:
    """Floats to 6 significant digits, recursively; keeps reports stable."""
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            return None
        return float(f'{value:.6g}')
    if isinstance(value, dict):
        return {str(k): _round(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round(v) for v in value]
    if hasattr(value, 'item'):
        # numpy scalars
        return _round(value.item())
    return value


def render(kind: str, body: dict[str, Any], params: dict[str, Any]) -> str:
    report = {'report': kind, 'version': REPORT_VERSION, 'params': params, **body}
    return json.dumps(_round(report), sort_keys=True, indent=2, ensure_ascii=False) + '\n'


def write(path: Path, kind: str, body: dict[str, Any], params: dict[str, Any]) -> str:
    text = render(kind, body, params)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)
    return text
