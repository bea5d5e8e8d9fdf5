"""Tiny helper: expose every field of a config dataclass as a ``--flag``."""

import argparse
from dataclasses import fields


def parse_config(cls, argv=None):
    parser = argparse.ArgumentParser(description=cls.__doc__)
    for f in fields(cls):
        kind = type(f.default)
        if kind is tuple:
            parser.add_argument(f"--{f.name.replace('_', '-')}", type=float, nargs="+", default=f.default)
        else:
            parser.add_argument(f"--{f.name.replace('_', '-')}", type=kind, default=f.default)
    args = vars(parser.parse_args(argv))
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in args.items()})
