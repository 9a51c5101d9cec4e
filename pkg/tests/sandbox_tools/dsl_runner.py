"""Well-behaved external command: runs a formula program over the input CSV.

Usage: dsl_runner.py PROGRAM_PATH INPUT_CSV OUTPUT_CSV
"""

import sys

from tabmend.dsl import impute_column, parse_program
from tabmend.tabular import parse_csv, write_csv


def main() -> int:
    program_path, input_csv, output_csv = sys.argv[1:4]
    with open(program_path, encoding="utf-8") as fh:
        program = parse_program(fh.read())
    with open(input_csv, encoding="utf-8") as fh:
        table = parse_csv(fh.read())
    filled, _ = impute_column(program, table)
    with open(output_csv, "w", encoding="utf-8") as fh:
        fh.write(write_csv(filled))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
