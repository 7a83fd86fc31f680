"""Regenerates the golden prompt corpus.

Written independently of the Rust renderer; run from this directory:
    python3 gen_golden.py
"""
import os

QUESTION = "What is shown in the image?"
OPTIONS = ["a red bus", "a bicycle", "a sailing boat", "a horse", "a train"]

SEPARATORS = [("comma", ", "), ("line_break", "\n"), ("semicolon", "; ")]
DELIMITERS = [
    ("dot", "{}."),
    ("colon", "{}:"),
    ("bracket", "{})"),
    ("double_brackets", "({})"),
]
ROMAN = ["I", "II", "III", "IV", "V"]
ID_SETS = [
    ("uppercase", "letter", list("ABCDE")),
    ("lowercase", "letter", list("abcde")),
    ("numbers", "number", list("12345")),
    ("roman", "roman number", ROMAN),
]


def instruction(noun, ids):
    if len(ids) == 2:
        eg = f"{ids[0]}, or {ids[1]}"
    else:
        eg = ", ".join(ids[:-1]) + " or " + ids[-1]
    return (
        "Select the best answer to the above multiple-choice question based on the image. "
        f"Respond with only the {noun} (e.g., {eg}) of the correct option and no bracket, colon, or dot."
    )


def main():
    out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden")
    os.makedirs(out, exist_ok=True)
    for sep_name, sep in SEPARATORS:
        for delim_name, pattern in DELIMITERS:
            for set_name, noun, all_ids in ID_SETS:
                for k in (2, 3, 4, 5):
                    ids = all_ids[:k]
                    block = sep.join(pattern.format(i) + " " + o for i, o in zip(ids, OPTIONS[:k]))
                    text = QUESTION + "\n" + block + "\n" + instruction(noun, ids)
                    name = f"{sep_name}__{delim_name}__{set_name}__{k}.txt"
                    with open(os.path.join(out, name), "w", newline="") as f:
                        f.write(text)


if __name__ == "__main__":
    main()
