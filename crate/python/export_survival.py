"""Export the survival-package datasets as numeric CSVs plus schema files.

Reads the Rdatasets CSVs bundled with `pydataset` (or any directory holding
colon.csv, kidney.csv, lung.csv, pbc.csv and veteran.csv) and writes one
`<name>.csv` / `<name>.toml` pair per dataset. Missing values are kept as NA;
the loader drops those rows.

    python python/export_survival.py SRC_DIR OUT_DIR
"""

import sys
from pathlib import Path

import pandas as pd

# name -> (row filter, features, survival-time threshold for the label)
DATASETS = {
    "colon": (lambda d: d[d.etype == 1],
              ["rx_obs", "rx_lev", "rx_lev5fu", "sex", "age", "obstruct", "perfor",
               "adhere", "nodes", "differ", "extent", "surg", "node4"], 1500),
    "kidney": (None, ["age", "sex", "frail", "disease_gn", "disease_an", "disease_pkd"], 100),
    "lung": (None, ["age", "sex", "ph.ecog", "ph.karno", "pat.karno", "meal.cal", "wt.loss"], 400),
    "pbc": (None, ["trt", "age", "sex", "ascites", "hepato", "spiders", "edema", "bili", "chol",
                   "albumin", "copper", "alk.phos", "ast", "trig", "platelet", "protime", "stage"], 2000),
    "veteran": (None, ["karno", "diagtime", "age", "prior"], 100),
}


def derive(name, df):
    if name == "colon":
        for col, level in [("rx_obs", "Obs"), ("rx_lev", "Lev"), ("rx_lev5fu", "Lev+5FU")]:
            df[col] = (df.rx == level).astype(int)
    if name == "kidney":
        for level in ["GN", "AN", "PKD"]:
            df[f"disease_{level.lower()}"] = (df.disease == level).astype(int)
    if name == "pbc":
        df["sex"] = df.sex.map({"f": 0, "m": 1})
    return df


def main(src, out):
    out.mkdir(parents=True, exist_ok=True)
    for name, (keep, features, threshold) in DATASETS.items():
        df = pd.read_csv(src / f"{name}.csv", index_col=0)
        if keep is not None:
            df = keep(df)
        df = derive(name, df.copy())
        df[features + ["time"]].to_csv(out / f"{name}.csv", index=False, na_rep="NA")
        listed = ", ".join(f'"{f}"' for f in features)
        (out / f"{name}.toml").write_text(
            f'features = [{listed}]\nlabel = "time"\nlabel_threshold = {threshold}\n'
        )
        print(f"{name}: {len(df)} rows, {len(features)} features")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(Path(sys.argv[1]), Path(sys.argv[2]))
