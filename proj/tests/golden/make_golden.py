#!/usr/bin/env python3
"""Regenerates tests/golden/prompts/*.txt from fixtures.json."""
import json
import pathlib

HERE = pathlib.Path(__file__).resolve().parent


def line(name, text):
    return f"{name}: {text}"


def render(fx):
    src = line("English", fx["source"])
    if fx["kind"] == "prompt":
        names = {code: (name, text) for code, name, text in fx["translations"]}
        return "\n".join([src] + [line(*names[c]) for c in fx["order"]])
    if fx["kind"] == "reduplication":
        return "\n".join([src] * (fx["n"] + 1))
    if fx["kind"] == "paraphrase":
        return "\n".join([src] + [line("English", p) for p in fx["paraphrases"]])
    raise ValueError(fx["kind"])


def main():
    out = HERE / "prompts"
    out.mkdir(exist_ok=True)
    for fx in json.loads((HERE / "fixtures.json").read_text(encoding="utf-8")):
        (out / f"{fx['name']}.txt").write_bytes(render(fx).encode("utf-8"))


if __name__ == "__main__":
    main()
