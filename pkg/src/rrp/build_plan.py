"""Translate an environment definition into an ordered build plan and a
byte-deterministic container recipe.

Plans are pure data derived solely from the EnvironmentSpec; rendering the
same plan twice yields identical recipe bytes, which is what makes image
references content-addressed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .config import BASE_IMAGES, DEFAULT_BASE_IMAGE, DEFAULT_START_COMMAND, SESSION_PORT
from .errors import ConflictingInputs, EmptyName, UnsupportedRuntime
from .project_spec import EnvironmentSpec

RECIPE_DIGEST_HEADER = "# rrp-spec-digest:"
IMAGE_TAG_LENGTH = 12


class StepKind(Enum):
    BASE_IMAGE = "BaseImage"
    SYSTEM_PACKAGES = "SystemPackages"
    RUNTIME_INSTALL = "RuntimeInstall"
    PACKAGE_INSTALL = "PackageInstall"
    COPY_PROJECT = "CopyProject"
    POST_BUILD = "PostBuild"
    ENTRYPOINT = "Entrypoint"


_KIND_ORDER = {kind: i for i, kind in enumerate(StepKind)}

# PackageInstall sub-order is fixed: pip, conda, R, julia.
_PACKAGE_MANAGERS = ("pip", "conda", "r", "julia")


@dataclass(frozen=True)
class BuildStep:
    kind: StepKind
    payload: str
    # Distinguishes multiple PackageInstall steps; empty elsewhere.
    manager: str = ""


@dataclass(frozen=True)
class BuildPlan:
    steps: tuple[BuildStep, ...]
    spec_digest: str
    base_image: str


@dataclass(frozen=True)
class ImageRef:
    repository: str
    tag: str

    def __str__(self) -> str:
        return f"{self.repository}:{self.tag}"


def _normalize_text(text: str) -> str:
    lines = [line.rstrip() for line in text.splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    return "\n".join(lines)


def runtime_ecosystem(runtime: str) -> str:
    """`<ecosystem>-<version>` grammar; unknown ecosystems are rejected here,
    at plan time, not at parse time."""
    eco = runtime.split("-", 1)[0].strip().lower()
    if eco not in BASE_IMAGES:
        raise UnsupportedRuntime(f"unsupported runtime {runtime!r} (supported ecosystems: {', '.join(sorted(BASE_IMAGES))})")
    return eco


def plan_build(environment: EnvironmentSpec, spec_digest: str = "") -> BuildPlan:
    """Derive steps from populated inputs only; order follows StepKind."""
    if environment.pip_requirements and environment.conda_environment:
        raise ConflictingInputs("both requirements.txt and environment.yml are populated; keep exactly one")

    base_image = DEFAULT_BASE_IMAGE
    if environment.runtime:
        base_image = BASE_IMAGES[runtime_ecosystem(environment.runtime)]

    steps: list[BuildStep] = [BuildStep(StepKind.BASE_IMAGE, base_image)]
    if environment.apt_packages:
        steps.append(BuildStep(StepKind.SYSTEM_PACKAGES, " ".join(environment.apt_packages)))
    if environment.runtime:
        steps.append(BuildStep(StepKind.RUNTIME_INSTALL, environment.runtime.strip()))

    package_sources = {
        "pip": environment.pip_requirements,
        "conda": environment.conda_environment,
        "r": environment.r_install_script,
        "julia": environment.julia_project,
    }
    for manager in _PACKAGE_MANAGERS:
        text = package_sources[manager]
        if text:
            steps.append(BuildStep(StepKind.PACKAGE_INSTALL, _normalize_text(text), manager=manager))

    steps.append(BuildStep(StepKind.COPY_PROJECT, "/project"))
    if environment.post_build:
        steps.append(BuildStep(StepKind.POST_BUILD, _normalize_text(environment.post_build)))

    start = _normalize_text(environment.start_command) if environment.start_command else DEFAULT_START_COMMAND
    steps.append(BuildStep(StepKind.ENTRYPOINT, start))

    assert all(_KIND_ORDER[a.kind] <= _KIND_ORDER[b.kind] for a, b in zip(steps, steps[1:]))
    return BuildPlan(steps=tuple(steps), spec_digest=spec_digest, base_image=base_image)


def _sh_quote(text: str) -> str:
    return "'" + text.replace("'", "'\"'\"'") + "'"


def _printf_file(text: str, dest: str) -> str:
    """A RUN line that writes `text` to `dest` byte-for-byte (plus trailing
    newline), without heredocs so classic builders accept it."""
    lines = text.split("\n")
    quoted = " ".join(_sh_quote(line) for line in lines)
    return f"RUN mkdir -p $(dirname {dest}) && printf '%s\\n' {quoted} > {dest}"


def _render_step(step: BuildStep) -> list[str]:
    if step.kind is StepKind.BASE_IMAGE:
        return [f"FROM {step.payload}"]
    if step.kind is StepKind.SYSTEM_PACKAGES:
        return [
            "RUN apt-get update && "
            f"apt-get install -y --no-install-recommends {step.payload} && "
            "rm -rf /var/lib/apt/lists/*"
        ]
    if step.kind is StepKind.RUNTIME_INSTALL:
        # Interpreter granularity is the pinned base-image table; the
        # requested runtime is recorded inside the image for provenance.
        return [f"RUN printf '%s\\n' {_sh_quote(step.payload)} > /etc/rrp-runtime"]
    if step.kind is StepKind.PACKAGE_INSTALL:
        manager = step.manager
        if manager == "pip":
            return [
                _printf_file(step.payload, "/tmp/rrp/requirements.txt"),
                "RUN python3 -m pip install --no-cache-dir -r /tmp/rrp/requirements.txt",
            ]
        if manager == "conda":
            return [
                _printf_file(step.payload, "/tmp/rrp/environment.yml"),
                "RUN conda env update --name base --file /tmp/rrp/environment.yml",
            ]
        if manager == "r":
            return [
                _printf_file(step.payload, "/tmp/rrp/install.R"),
                "RUN Rscript /tmp/rrp/install.R",
            ]
        if manager == "julia":
            return [
                _printf_file(step.payload, "/tmp/rrp/Project.toml"),
                "RUN julia --project=/tmp/rrp -e 'import Pkg; Pkg.instantiate()'",
            ]
        raise AssertionError(f"unknown package manager {manager!r}")
    if step.kind is StepKind.COPY_PROJECT:
        return [f"COPY . {step.payload}", f"WORKDIR {step.payload}"]
    if step.kind is StepKind.POST_BUILD:
        return [
            _printf_file(step.payload, "/tmp/rrp/postBuild"),
            "RUN cd /project && sh /tmp/rrp/postBuild",
        ]
    if step.kind is StepKind.ENTRYPOINT:
        return [
            _printf_file(step.payload, "/usr/local/bin/rrp-start"),
            f"EXPOSE {SESSION_PORT}",
            'CMD ["/bin/sh", "/usr/local/bin/rrp-start"]',
        ]
    raise AssertionError(f"unknown step kind {step.kind}")


def render_recipe(plan: BuildPlan) -> str:
    """Container build recipe text: one instruction block per step, each
    preceded by a `# step:` marker, plus the machine-readable digest header."""
    out = [f"{RECIPE_DIGEST_HEADER} {plan.spec_digest}"]
    for step in plan.steps:
        out.append(f"# step: {step.kind.value}" + (f" {step.manager}" if step.manager else ""))
        out.extend(_render_step(step))
    return "\n".join(out) + "\n"


def recipe_step_count(recipe: str) -> int:
    return sum(1 for line in recipe.splitlines() if line.startswith("# step: "))


def recipe_spec_digest(recipe: str) -> str:
    for line in recipe.splitlines():
        if line.startswith(RECIPE_DIGEST_HEADER):
            return line[len(RECIPE_DIGEST_HEADER):].strip()
    return ""


def slugify(name: str) -> str:
    """Lowercase, map non-alphanumerics to hyphens, collapse runs."""
    slug = re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")
    return slug


def image_reference(project_name: str, spec_digest: str) -> ImageRef:
    if not project_name:
        raise EmptyName("project name must be non-empty")
    slug = slugify(project_name)
    if not slug:
        raise EmptyName(f"project name {project_name!r} has no usable characters")
    return ImageRef(repository=f"rrp/{slug}", tag=spec_digest[:IMAGE_TAG_LENGTH])


def plan_diff(a: BuildPlan, b: BuildPlan) -> list[tuple[StepKind, str]]:
    """Structural diff by (kind, manager) slot: changed / added / removed.

    Empty iff the plans are structurally equal.
    """
    def slots(plan: BuildPlan) -> dict[tuple[StepKind, str], str]:
        return {(s.kind, s.manager): s.payload for s in plan.steps}

    sa, sb = slots(a), slots(b)
    changes: list[tuple[StepKind, str]] = []
    for kind in StepKind:
        keys = sorted(
            (k for k in set(sa) | set(sb) if k[0] is kind),
            key=lambda k: k[1],
        )
        for key in keys:
            if key not in sb:
                changes.append((kind, "removed"))
            elif key not in sa:
                changes.append((kind, "added"))
            elif sa[key] != sb[key]:
                changes.append((kind, "changed"))
    return changes
