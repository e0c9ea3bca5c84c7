"""Registry of acceptance outcomes, printed at the end of the pytest run."""

RESULTS = {}


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
    RESULTS[number] = line
    print(line)
    return ok
