import os
from typing import Dict, List, Sequence

import pandas as pd


def ensure_parent_dir(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_csv(rows: List[Dict], path: str, columns: Sequence[str]) -> pd.DataFrame:
    """UTF-8, comma separated, header row always present (even for zero rows)."""
    df = pd.DataFrame(rows, columns=list(columns))
    ensure_parent_dir(path)
    df.to_csv(path, index=False, encoding="utf-8", float_format="%.10g")
    return df


def read_csv(path: str, required_columns: Sequence[str] = ()) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Could not find csv file: {path}")
    df = pd.read_csv(path, keep_default_na=False)
    missing = [c for c in required_columns if c not in df.columns]
    if missing:
        raise ValueError(f"{path} is missing columns {missing}")
    return df
