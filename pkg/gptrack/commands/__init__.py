"""Click commands split by concerns."""
