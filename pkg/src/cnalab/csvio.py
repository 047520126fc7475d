"""CSV emission and parsing with a schema header comment.

Every file starts with "# schema=<name> v<version>" followed by a normal
header row. Floats are written with repr so a round trip through the
module's own reader loses nothing. Empty cells encode None (used for
undefined correlation values).
"""

import csv

from .errors import FormatError

SCHEMA_VERSION = 1


def _format(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, schema, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema={schema} v{SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(v) for v in row])


def read_csv(path):
    """Returns (schema_name, columns, rows-of-strings)."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# schema="):
            raise FormatError(f"{path}: missing schema header line")
        schema = first[len("# schema="):].strip()
        name = schema.split(" ")[0]
        reader = csv.reader(fh)
        try:
            columns = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: missing column header") from None
        rows = [row for row in reader if row]
    return name, columns, rows
