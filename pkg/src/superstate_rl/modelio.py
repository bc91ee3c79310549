"""JSON model files.

A model file is a JSON object with ``n_states``, ``n_actions``, ``n_obs``,
``gamma``, ``init_dist``, ``transition`` ([a][s][s']), ``obs_kernel``
([s][y]) and ``reward`` ([s][a]); ``labels`` and ``superstate_prior`` are
optional.  Lines starting with ``#`` before the JSON body (a run manifest)
are ignored.  Problems are reported as ``path:line: message``.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .errors import ModelFormatError
from .pomdp import PomdpModel, validate
from .superstates import SuperstateMdp

REQUIRED = ("n_states", "n_actions", "n_obs", "gamma", "init_dist", "transition", "obs_kernel", "reward")


def strip_comments(text: str) -> str:
    """Blank out leading ``#`` lines, keeping line numbers intact."""
    lines = text.split("\n")
    for k, line in enumerate(lines):
        if line.lstrip().startswith("#"):
            lines[k] = ""
        elif line.strip():
            break
    return "\n".join(lines)


def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def array_lines(text: str, key: str) -> dict:
    """Map index paths of the nested lists under ``key`` to their line numbers.

    ``{(): 3, (0,): 4, (0, 1): 5, ...}`` where the empty path is the outer list.
    """
    m = re.search(r'"%s"\s*:\s*\[' % re.escape(key), text)
    if not m:
        return {}
    out = {}
    stack = []  # child position inside every open list
    pos = m.end() - 1
    while pos < len(text):
        ch = text[pos]
        if ch == "[":
            out[tuple(stack)] = _line_of(text, pos)
            stack.append(0)
        elif ch == "]":
            stack.pop()
            if not stack:
                break
        elif ch == ",":
            stack[-1] += 1
        pos += 1
    return out


def _where(path, text, field, index=()) -> str:
    lines = array_lines(text, field) if index else {}
    line = lines.get(tuple(index))
    if line is None:
        m = re.search(r'"%s"\s*:' % re.escape(field), text)
        line = _line_of(text, m.start()) if m else 1
    return f"{path}:{line}"


_PROBLEM = re.compile(r"^(transition|obs_kernel|init_dist|superstate_prior)((?:\[\d+\])*)")


def _locate(problem: str, path, text) -> str:
    m = _PROBLEM.match(problem)
    if not m:
        g = re.search(r'"gamma"\s*:', text) if problem.startswith("gamma") else None
        if g is None and "reward" in problem:
            g = re.search(r'"reward"\s*:', text)
        line = _line_of(text, g.start()) if g else 1
        return f"{path}:{line}"
    field, idx = m.group(1), [int(v) for v in re.findall(r"\d+", m.group(2))]
    return _where(path, text, field, idx)


def model_from_dict(d: dict, path: str = "<model>", text: str = "") -> PomdpModel:
    missing = [k for k in REQUIRED if k not in d]
    if missing:
        raise ModelFormatError(f"{path}:1: missing field(s) {', '.join(missing)}")
    try:
        model = PomdpModel(
            transition=np.asarray(d["transition"], dtype=float),
            obs_kernel=np.asarray(d["obs_kernel"], dtype=float),
            reward=np.asarray(d["reward"], dtype=float),
            init_dist=np.asarray(d["init_dist"], dtype=float),
            gamma=float(d["gamma"]),
            labels=d.get("labels") or {},
            superstate_prior=None if d.get("superstate_prior") is None else np.asarray(d["superstate_prior"], float),
        )
    except (ValueError, TypeError) as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
    declared = (int(d["n_states"]), int(d["n_actions"]), int(d["n_obs"]))
    actual = (model.n_states, model.n_actions, model.n_obs)
    if declared != actual:
        raise ModelFormatError(
            f"{_where(path, text, 'n_states')}: declared (n_states, n_actions, n_obs) = {declared}, arrays give {actual}"
        )
    return model


def load_model(path) -> PomdpModel:
    """Parse and validate a model file.

    Raises
    ------
    ModelFormatError
        On malformed JSON, missing fields, shape mismatches or any violated
        invariant; the message names the file and line.
    """
    path = str(path)
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ModelFormatError(f"{path}: {exc.strerror}") from None
    text = strip_comments(raw)
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ModelFormatError(f"{path}:1: top level must be an object")
    model = model_from_dict(d, path, text)
    problems = validate(model)
    if problems:
        raise ModelFormatError("\n".join(f"{_locate(p, path, text)}: {p}" for p in problems))
    return model


def load_model_unchecked(path):
    """Parse a model file and return ``(model or None, problems)`` without raising on invariants."""
    path = str(path)
    text = strip_comments(Path(path).read_text())
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        return None, [f"{path}:{exc.lineno}: {exc.msg}"]
    if not isinstance(d, dict):
        return None, [f"{path}:1: top level must be an object"]
    try:
        model = model_from_dict(d, path, text)
    except ModelFormatError as exc:
        return None, [str(exc)]
    return model, [f"{_locate(p, path, text)}: {p}" for p in validate(model)]


def dumps_model(model: PomdpModel) -> str:
    return json.dumps(model.to_dict(), indent=1) + "\n"


def save_model(model: PomdpModel, path, header: str = "") -> None:
    Path(path).write_text(header + dumps_model(model))


def load_smdp(path) -> SuperstateMdp:
    text = strip_comments(Path(path).read_text())
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if d.get("kind") != "superstate_mdp":
        raise ModelFormatError(f"{path}:1: not a superstate MDP file (missing kind=superstate_mdp)")
    return SuperstateMdp.from_dict(d)


def save_smdp(smdp: SuperstateMdp, path, header: str = "") -> None:
    Path(path).write_text(header + json.dumps(smdp.to_dict()) + "\n")
