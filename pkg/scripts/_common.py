"""Argument helpers shared by the study scripts."""

import argparse
import json
from dataclasses import asdict, fields
from pathlib import Path

from oded import SearchSettings


def search_arguments(parser: argparse.ArgumentParser, **defaults):
    """Add one ``--<field>`` option per SearchSettings field."""
    base = SearchSettings(**defaults)
    for f in fields(SearchSettings):
        value = getattr(base, f.name)
        parser.add_argument(f"--{f.name.replace('_', '-')}", type=type(value), default=value)


def search_settings(args) -> SearchSettings:
    return SearchSettings(**{f.name: getattr(args, f.name) for f in fields(SearchSettings)})


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=str) + "\n")
    print(f"wrote {path}")


def settings_dict(settings: SearchSettings) -> dict:
    return asdict(settings)
