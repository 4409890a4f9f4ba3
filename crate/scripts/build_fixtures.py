#!/usr/bin/env python3
"""Regenerate the bundled molecule corpus and the property oracle fixtures.

Requires RDKit. Sources are the NCI and ChEMBL sample sets distributed with
the RDKit wheel. Output files are written to ../data and are checked in; the
Rust code never calls this script.
"""
import json
import os
import random
import sys

from rdkit import Chem, RDLogger
from rdkit.Chem import QED, Crippen, Descriptors, rdMolDescriptors

RDLogger.DisableLog("rdApp.*")

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "data")
RD = os.path.dirname(Chem.__file__).rsplit("/", 1)[0]
SOURCES = [
    os.path.join(RD, "Data", "NCI", "first_5K.smi"),
    os.path.join(RD, "Contrib", "FreeWilson", "data", "CHEMBL2321810.smi"),
]
ALLOWED = {"B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I"}
CORPUS_SIZE = 5000


def usable(m):
    if m is None or len(Chem.GetMolFrags(m)) != 1:
        return False
    if not 3 <= m.GetNumHeavyAtoms() <= 40:
        return False
    for a in m.GetAtoms():
        if a.GetSymbol() not in ALLOWED or a.GetIsotope() or a.GetNumRadicalElectrons():
            return False
        if abs(a.GetFormalCharge()) > 1:
            return False
    return True


def props(m):
    return {
        "mw": round(Descriptors.MolWt(m), 6),
        "logp": round(Crippen.MolLogP(m), 6),
        "tpsa": round(rdMolDescriptors.CalcTPSA(m), 6),
        "hbd": Descriptors.NumHDonors(m),
        "hba": Descriptors.NumHAcceptors(m),
        "rb": Descriptors.NumRotatableBonds(m),
        "qed": round(QED.qed(m), 6),
        "alerts": QED.properties(m).ALERTS,
    }


def main():
    seen = set()
    corpus = []
    for path in SOURCES:
        for line in open(path):
            parts = line.split()
            if not parts:
                continue
            m = Chem.MolFromSmiles(parts[0])
            if not usable(m):
                continue
            smi = Chem.MolToSmiles(m)
            if smi in seen:
                continue
            seen.add(smi)
            corpus.append(smi)
    if len(corpus) < CORPUS_SIZE:
        sys.exit(f"only {len(corpus)} usable molecules")
    corpus = corpus[:CORPUS_SIZE]

    with open(os.path.join(OUT, "corpus_5k.smi"), "w") as f:
        f.write("# Bundled desk corpus: NCI and ChEMBL sample molecules, one SMILES per line.\n")
        for smi in corpus:
            f.write(smi + "\n")

    with open(os.path.join(OUT, "parse_oracle.jsonl"), "w") as f:
        for smi in corpus:
            m = Chem.MolFromSmiles(smi)
            rec = {
                "smiles": smi,
                "heavy": m.GetNumHeavyAtoms(),
                "hydrogens": sum(a.GetTotalNumHs() for a in m.GetAtoms()),
                "rings": len(Chem.GetSSSR(m)),
                "aromatic": sum(1 for a in m.GetAtoms() if a.GetIsAromatic()),
                "bonds": m.GetNumBonds(),
            }
            f.write(json.dumps(rec) + "\n")

    rng = random.Random(42)
    picks = ["CCO", "c1ccccc1", "CC(=O)Oc1ccccc1C(=O)O", "CN1CCC[C@H]1c1cccnc1",
             "CC(C)Cc1ccc(C(C)C(=O)O)cc1", "Cn1c(=O)c2c(ncn2C)n(C)c1=O",
             "CC(=O)Nc1ccc(O)cc1", "O=C(O)c1ccccc1O"]
    with_alerts = [s for s in corpus if QED.properties(Chem.MolFromSmiles(s)).ALERTS > 0]
    without = [s for s in corpus if s not in set(with_alerts)]
    picks += rng.sample(without, 30)
    picks += rng.sample(with_alerts, 50 - len(picks))
    with open(os.path.join(OUT, "props_oracle.jsonl"), "w") as f:
        for smi in picks:
            m = Chem.MolFromSmiles(smi)
            rec = {"smiles": Chem.MolToSmiles(m)}
            rec.update(props(m))
            f.write(json.dumps(rec) + "\n")

    # Larger regression set: every corpus molecule, used by the slow agreement test.
    with open(os.path.join(OUT, "props_corpus.jsonl"), "w") as f:
        for smi in corpus:
            rec = {"smiles": smi}
            rec.update(props(Chem.MolFromSmiles(smi)))
            f.write(json.dumps(rec) + "\n")

    pt = Chem.GetPeriodicTable()
    with open(os.path.join(OUT, "..", "crates", "chem", "data", "atomic_weights.tsv"), "w") as f:
        f.write("# symbol\tatomic_number\taverage_weight\n")
        for sym in ["H", "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Se", "Br", "I"]:
            f.write(f"{sym}\t{pt.GetAtomicNumber(sym)}\t{pt.GetAtomicWeight(sym)}\n")
    print(f"corpus {len(corpus)}; oracle {len(picks)}")


if __name__ == "__main__":
    main()
