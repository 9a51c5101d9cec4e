"""tabmend: formula-discovery imputation for derived missing values."""

from .tabular import (  # noqa: F401
    Cell,
    CellLocation,
    ColumnSchema,
    Table,
    missing_locations,
    parse_csv,
    slice_rows,
    write_csv,
)
from .dsl import (  # noqa: F401
    FormulaProgram,
    evaluate_cell,
    format_program,
    impute_column,
    parse_program,
)

__version__ = "0.1.0"
