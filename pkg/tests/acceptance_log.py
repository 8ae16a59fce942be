"""Per-criterion outcomes collected by the acceptance suite and printed at the end of the run."""

RESULTS: dict[int, tuple[str, str, str]] = {}


def record(number: int, name: str, ok: bool | None, detail: str) -> bool | None:
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    RESULTS[number] = (name, status, detail)
    return ok
