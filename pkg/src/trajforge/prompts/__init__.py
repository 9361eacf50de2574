"""Prompt template loading and placeholder rendering.

Templates are plain text files with {name} placeholders. Rendering
replaces only the names the caller supplies, so literal braces in JSON
examples inside the templates survive untouched.
"""

from __future__ import annotations

from importlib import resources


def load_template(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render(template: str, **values: str) -> str:
    out = template
    for key, val in values.items():
        out = out.replace("{" + key + "}", val)
    return out
