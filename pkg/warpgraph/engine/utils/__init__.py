def parse_seed_range(spec: str) -> list:
    """Parses "0..4" (inclusive), "3" or "1,5,7" into a list of ints."""
    spec = spec.strip()
    if ".." in spec:
        start, stop = spec.split("..", 1)
        return list(range(int(start), int(stop) + 1))
    return [int(part) for part in spec.split(",") if part.strip()]
