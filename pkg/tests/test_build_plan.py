"""Build planning, recipe rendering, image references."""

from __future__ import annotations

import random
import re
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rrp import gitio
from rrp.build_plan import (
    BuildPlan,
    StepKind,
    image_reference,
    plan_build,
    plan_diff,
    recipe_spec_digest,
    recipe_step_count,
    render_recipe,
    slugify,
)
from rrp.demo import create_demo_repo
from rrp.errors import ConflictingInputs, EmptyName, UnsupportedRuntime
from rrp.project_spec import EnvironmentSpec, WorkingTree, parse_environment, spec_digest

GOLDEN = Path(__file__).parent / "data" / "demo_recipe.golden"


def kinds(plan: BuildPlan) -> list[StepKind]:
    return [s.kind for s in plan.steps]


# -- plan_build ---------------------------------------------------------------


def test_runtime_only_plan():
    plan = plan_build(EnvironmentSpec(runtime="python-3.10", source_files=()))
    assert kinds(plan) == [StepKind.BASE_IMAGE, StepKind.RUNTIME_INSTALL, StepKind.COPY_PROJECT, StepKind.ENTRYPOINT]


def test_apt_payload_sorted_deduped():
    env = EnvironmentSpec(apt_packages=("git", "zlib1g"))
    plan = plan_build(env)
    step = next(s for s in plan.steps if s.kind is StepKind.SYSTEM_PACKAGES)
    assert step.payload == "git zlib1g"


def test_unsupported_runtime():
    with pytest.raises(UnsupportedRuntime):
        plan_build(EnvironmentSpec(runtime="fortran-77"))


def test_conflicting_package_inputs():
    env = EnvironmentSpec(pip_requirements="six\n", conda_environment="dependencies: [six]\n")
    with pytest.raises(ConflictingInputs):
        plan_build(env)


def test_package_install_fixed_order():
    env = EnvironmentSpec(
        pip_requirements="six\n",
        r_install_script="install.packages('arrow')\n",
        julia_project="[deps]\n",
    )
    plan = plan_build(env)
    managers = [s.manager for s in plan.steps if s.kind is StepKind.PACKAGE_INSTALL]
    assert managers == ["pip", "r", "julia"]


def test_every_populated_input_has_exactly_one_step():
    env = EnvironmentSpec(
        runtime="python-3.11",
        apt_packages=("git",),
        pip_requirements="six\n",
        r_install_script="x\n",
        julia_project="y\n",
        post_build="echo hi\n",
        start_command="run\n",
    )
    plan = plan_build(env)
    counted = {
        StepKind.RUNTIME_INSTALL: 1,
        StepKind.SYSTEM_PACKAGES: 1,
        StepKind.POST_BUILD: 1,
        StepKind.BASE_IMAGE: 1,
        StepKind.COPY_PROJECT: 1,
        StepKind.ENTRYPOINT: 1,
        StepKind.PACKAGE_INSTALL: 3,
    }
    for kind, expected in counted.items():
        assert sum(1 for s in plan.steps if s.kind is kind) == expected
    order = [StepKind(k) for k in StepKind]
    positions = [order.index(s.kind) for s in plan.steps]
    assert positions == sorted(positions)


# -- render_recipe ---------------------------------------------------------------


def test_render_deterministic():
    env = EnvironmentSpec(runtime="python-3.11", apt_packages=("git",), pip_requirements="six\n")
    plan = plan_build(env, "a" * 64)
    assert render_recipe(plan) == render_recipe(plan)


def test_render_header_is_machine_readable():
    plan = plan_build(EnvironmentSpec(runtime="python-3.11"), "b" * 64)
    recipe = render_recipe(plan)
    first = recipe.splitlines()[0]
    assert re.fullmatch(r"# rrp-spec-digest: [0-9a-f]{64}", first)
    assert recipe_spec_digest(recipe) == "b" * 64
    assert recipe_step_count(recipe) == len(plan.steps)


def test_render_differs_only_in_changed_block():
    base = dict(runtime="python-3.11", pip_requirements="six\n")
    r1 = render_recipe(plan_build(EnvironmentSpec(apt_packages=("git",), **base), "c" * 64))
    r2 = render_recipe(plan_build(EnvironmentSpec(apt_packages=("curl", "git"), **base), "c" * 64))
    diff = [ (a, b) for a, b in zip(r1.splitlines(), r2.splitlines()) if a != b ]
    assert len(diff) == 1
    assert "apt-get install" in diff[0][0] and "apt-get install" in diff[0][1]


def test_golden_demo_recipe(tmp_path):
    repo = create_demo_repo(tmp_path / "repo", "http://rdms.invalid", "PERM-1")
    tree = WorkingTree(root_path=repo, commit_id=gitio.head_commit(repo), dirty=False)
    env = parse_environment(tree)
    plan = plan_build(env, spec_digest(env, "0" * 40))
    assert render_recipe(plan) == GOLDEN.read_text()


def test_render_quotes_shell_metacharacters():
    env = EnvironmentSpec(post_build="echo 'it''s done' && touch /tmp/x\n")
    recipe = render_recipe(plan_build(env))
    # the payload must survive a round trip through printf quoting
    assert "'\"'\"'" in recipe


# -- image_reference ---------------------------------------------------------------


def test_image_reference_slug():
    ref = image_reference("Demo Project", "d" * 64)
    assert ref.repository == "rrp/demo-project"
    assert ref.tag == "d" * 12


def test_image_reference_distinct_tags():
    r1 = image_reference("demo", "1" * 64)
    r2 = image_reference("demo", "2" * 64)
    assert r1.repository == r2.repository and r1.tag != r2.tag


def test_image_reference_empty_name():
    with pytest.raises(EmptyName):
        image_reference("", "d" * 64)
    with pytest.raises(EmptyName):
        image_reference("###", "d" * 64)


@given(st.text(min_size=1, max_size=40))
@settings(max_examples=200, deadline=None)
def test_slug_charset(name):
    slug = slugify(name)
    assert re.fullmatch(r"[a-z0-9]+(-[a-z0-9]+)*", slug) or slug == ""
    assert slugify(slug) == slug


def test_tag_truncation_no_collisions_in_sample():
    rng = random.Random(42)
    digests = {f"{rng.getrandbits(256):064x}" for _ in range(10_000)}
    tags = {image_reference("p", d).tag for d in digests}
    # uniqueness within this sample only; 12 hex chars keep collisions
    # vanishingly rare at this scale
    assert len(tags) == len(digests)


# -- plan_diff ----------------------------------------------------------------------


def test_plan_diff_identity():
    plan = plan_build(EnvironmentSpec(runtime="python-3.11", pip_requirements="six\n"))
    assert plan_diff(plan, plan) == []


def test_plan_diff_changed_added_removed():
    a = plan_build(EnvironmentSpec(apt_packages=("git",), post_build="echo a\n"))
    b = plan_build(EnvironmentSpec(apt_packages=("curl", "git")))
    changes = plan_diff(a, b)
    assert (StepKind.SYSTEM_PACKAGES, "changed") in changes
    assert (StepKind.POST_BUILD, "removed") in changes
    back = plan_diff(b, a)
    assert (StepKind.POST_BUILD, "added") in back


def test_apt_example_end_to_end(tmp_path):
    from .conftest import make_repo, tree_of

    repo = make_repo(tmp_path / "r", {".binder/apt.txt": "zlib1g\ngit\ngit\n"})
    plan = plan_build(parse_environment(tree_of(repo)))
    step = next(s for s in plan.steps if s.kind is StepKind.SYSTEM_PACKAGES)
    assert step.payload == "git zlib1g"
