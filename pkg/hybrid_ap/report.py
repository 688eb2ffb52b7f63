import logging
from collections import Counter
from typing import List, Optional, Sequence

from markdown import markdown

from hybrid_ap.errors import ConfigError
from hybrid_ap.results import SolveResult

logger = logging.getLogger(__name__)


def _name(index: int, names: Optional[Sequence[str]]) -> str:
    if names and index < len(names) and names[index]:
        return f"{names[index]} ({index})"
    return str(index)


def _exemplar_table(
    title: str,
    exemplars: List[int],
    assignment: List[int],
    names: Optional[Sequence[str]],
) -> List[str]:
    members = Counter(assignment)
    lines = [f"## {title}", ""]
    if not exemplars:
        return lines + ["None.", ""]
    lines += ["| Exemplar | Members |", "| --- | ---: |"]
    # Largest clusters first, then by index
    for k in sorted(exemplars, key=lambda k: (-members[k], k)):
        lines.append(f"| {_name(k, names)} | {members[k]} |")
    return lines + [""]


def _metric(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.6g}"


def render_report(
    result: SolveResult,
    algorithm: str,
    image_names: Optional[Sequence[str]] = None,
    tag_names: Optional[Sequence[str]] = None,
    verification: Optional[str] = None,
) -> str:
    """Summarize a run as Markdown: the image exemplars that stand for the
    collection and the tag exemplars that describe it in words"""
    objective = result.objective
    lines = [
        f"# Exemplar summary ({algorithm})",
        "",
        f"- Iterations: {result.iterations}"
        + ("" if result.converged else " (did not converge)"),
        f"- Objective: {objective.total:.12g}",
        f"- Image fit: {objective.fit_image:.12g}, tag fit: {objective.fit_tag:.12g}, "
        f"coupling: {objective.hetero:.12g}",
        f"- Visual exemplarness: {_metric(result.visual_exemplarness)}",
        f"- Semantic exemplarness: {_metric(result.semantic_exemplarness)}",
        "",
    ]
    if result.tag_exemplars:
        words = ", ".join(_name(j, tag_names) for j in result.tag_exemplars)
        lines += [f"**In words:** {words}", ""]

    lines += _exemplar_table(
        "Image exemplars", result.image_exemplars, result.image_assignment, image_names
    )
    if algorithm != "ap" or result.tag_assignment:
        lines += _exemplar_table(
            "Tag exemplars", result.tag_exemplars, result.tag_assignment, tag_names
        )
    if verification:
        lines += ["## Oracle check", "", verification, ""]
    return "\n".join(lines)


def write_report(path: str, text: str):
    """Write a Markdown report, converted to HTML when the path ends in .html"""
    if path.lower().endswith((".html", ".htm")):
        text = markdown(text, extensions=["tables"])
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise ConfigError(f"Cannot write report to {path}: {e.strerror}")
    logger.info(f"Wrote report to {path}")
