import os
from typing import Any

import ujson

from vamce.errors import FormatError
from vamce.utils.io import ensure_parent_dir


def save_as_json(data: Any, filename: str):
    ensure_parent_dir(filename)
    with open(filename, "w", encoding="utf-8") as fp:
        ujson.dump(data, fp, indent=4)


def load_json(filename: str) -> Any:
    if not os.path.exists(filename):
        raise FileNotFoundError(f"Could not find json file: {filename}")
    with open(filename, encoding="utf-8") as json_file:
        try:
            return ujson.load(json_file)
        except ValueError as e:
            raise FormatError(f"{filename} is not valid JSON: {e}") from e
