"""Acceptance gate: ten end-to-end criteria.

Each test records one `[criterion N] ...: PASS/FAIL` line; conftest
prints the scoreboard in the terminal summary of every pytest run.
"""

import filecmp
import itertools
import time
from contextlib import contextmanager

import numpy as np

import acceptance_report
import oracles
from semmap import synth
from semmap.changes import ChangeMask, detect_changes, extract_regions, filter_regions
from semmap.cli import EXIT_OK, EXIT_STAGE, main
from semmap.geometry import (
    CameraIntrinsics,
    DatumSpec,
    GeoPose,
    GridPoint,
    PoseState,
    backproject_pixel,
    geodetic_to_grid,
    grid_to_geodetic,
    pose_to_transform,
    project_point,
)
from semmap.scene import SemanticClass, load_store
from semmap.sensors import SegmentedImage, render_class_image
from semmap.update import (
    VERDICT_SKIP,
    VERDICT_UPDATE,
    CornerQuad,
    check_update_requirements,
    quad_area,
)
from semmap.vps import CandidateGrid, estimate_pose, generate_candidates, score_candidate

from test_update import _gate_case, _mask_for


@contextmanager
def criterion(n, name):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        acceptance_report.RESULTS.append(
            f"[criterion {n:2d}] {name}: FAIL ({time.perf_counter() - t0:.1f}s)")
        raise
    acceptance_report.RESULTS.append(
        f"[criterion {n:2d}] {name}: PASS ({time.perf_counter() - t0:.1f}s)")


def test_01_renderer_oracle_equality():
    with criterion(1, "renderer matches brute-force oracle on 20 scenes"):
        t0 = time.perf_counter()
        for seed in range(20):
            scn = synth.street_scene(seed)
            assert scn.world_mesh.num_faces <= 10_000
            img = render_class_image(scn.world_mesh, scn.state, scn.datum)
            oracle, _ = oracles.brute_force_render(scn.world_mesh, scn.state,
                                                   scn.datum)
            np.testing.assert_array_equal(img.data, oracle)
        assert time.perf_counter() - t0 <= 60.0


def test_02_geometry_property_suite():
    with criterion(2, "geometry invariants over 10^4 random cases each"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(11)
        datum = DatumSpec.hk1980()
        k = CameraIntrinsics(346.4101615137755, (480.0, 360.0), 960, 720)

        # isometry: pose transforms preserve pairwise distance
        n = 10_000
        poses = np.column_stack([rng.uniform(-180, 180, n),
                                 rng.uniform(-89, 89, n),
                                 rng.uniform(-180, 180, n)])
        pts = rng.uniform(-100, 100, (n, 2, 3))
        offs = rng.uniform(-500, 500, (n, 2))
        for i in range(n):
            t = pose_to_transform(
                GeoPose(22.3 + offs[i, 0] * 1e-5, 114.17 + offs[i, 1] * 1e-5,
                        float(rng.uniform(0, 50)), *poses[i]),
                datum)
            a, b = t.apply(pts[i])
            d0 = np.linalg.norm(pts[i, 0] - pts[i, 1])
            d1 = np.linalg.norm(a - b)
            assert abs(d1 - d0) <= 1e-9 * max(1.0, d0)

        # projection round trip: pixel -> local point -> pixel
        us = rng.uniform(0, 960, n)
        vs = rng.uniform(0, 720, n)
        zs = rng.uniform(0.011, 500.0, n)
        for i in range(n):
            p = backproject_pixel((us[i], vs[i]), zs[i], k)
            uv = project_point(p, k)
            assert uv is not None
            assert abs(uv[0] - us[i]) <= 1e-9 and abs(uv[1] - vs[i]) <= 1e-9

        # geodetic round trip on the projected grid
        lats = rng.uniform(22.15, 22.55, n)
        lons = rng.uniform(113.85, 114.4, n)
        for i in range(n):
            g = geodetic_to_grid(GeoPose(lats[i], lons[i], 5.0), datum)
            back = grid_to_geodetic(GridPoint(g.easting, g.northing, g.up), datum)
            assert abs(back.lat - lats[i]) <= 1e-9
            assert abs(back.lon - lons[i]) <= 1e-9

        # composition: (T1 o T2) p == T1 (T2 p)
        poses2 = np.stack([
            np.column_stack([rng.uniform(-180, 180, n), rng.uniform(-89, 89, n),
                             rng.uniform(-180, 180, n)])
            for _ in range(2)], axis=1)
        pts2 = rng.uniform(-100, 100, (n, 3))
        ident = DatumSpec.identity_local()
        for i in range(n):
            t1 = pose_to_transform(
                GeoPose(*rng.uniform(-50, 50, 3), *poses2[i, 0]), ident)
            t2 = pose_to_transform(
                GeoPose(*rng.uniform(-50, 50, 3), *poses2[i, 1]), ident)
            lhs = t1.compose(t2).apply(pts2[i])
            rhs = t1.apply(t2.apply(pts2[i]))
            assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(1.0, np.linalg.norm(lhs))

        assert time.perf_counter() - t0 <= 30.0


def test_03_quad_area_formula():
    with criterion(3, "quad areas: exact rectangles and shoelace oracle"):
        def area_of(corners):
            return quad_area(CornerQuad(np.zeros((4, 2), dtype=int),
                                        np.asarray(corners, dtype=float)))

        assert abs(area_of([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]) - 1.0) <= 1e-12
        assert abs(area_of([[0, 0, 0], [2, 0, 0], [2, 3, 0], [0, 3, 0]]) - 6.0) <= 1e-12

        rng = np.random.default_rng(29)
        checked = 0
        while checked < 1000:
            nrm = rng.normal(size=3)
            nrm /= np.linalg.norm(nrm)
            u = np.cross(nrm, [1.0, 0.0, 0.0])
            if np.linalg.norm(u) < 1e-6:
                u = np.cross(nrm, [0.0, 1.0, 0.0])
            u /= np.linalg.norm(u)
            w = np.cross(nrm, u)
            origin = rng.uniform(-50, 50, 3)
            ang = np.sort(rng.uniform(0, 2 * np.pi, 4))
            r1, r2 = rng.uniform(0.5, 10, 2)
            corners = np.array([
                origin + r1 * np.cos(t) * u + r2 * np.sin(t) * w for t in ang])
            expect = oracles.shoelace_quad_area(corners)
            if expect < 1e-6:
                continue
            assert abs(area_of(corners) - expect) / expect <= 1e-9
            checked += 1


def test_04_gate_matrix():
    with criterion(4, "16-case update-gate matrix, earliest gate wins"):
        from semmap.update import (
            GATE_BEYOND_RANGE,
            GATE_NON_COPLANAR,
            GATE_NON_RECTANGULAR,
            GATE_NOT_FULLY_CAPTURED,
        )

        order = [GATE_NOT_FULLY_CAPTURED, GATE_BEYOND_RANGE,
                 GATE_NON_COPLANAR, GATE_NON_RECTANGULAR]
        for flags in itertools.product([False, True], repeat=4):
            region, quad = _gate_case(*flags)
            decision = check_update_requirements(
                region, quad, GridPoint(0.0, 0.0, 0.0), _mask_for(region))
            failed = [g for f, g in zip(flags, order) if f]
            if failed:
                assert decision.verdict == VERDICT_SKIP
                assert decision.failed_gate == failed[0]
            else:
                assert decision.verdict == VERDICT_UPDATE


def test_05_self_localization_exactness():
    with criterion(5, "self-render localization is exact for 50 grid poses"):
        scn = synth.street_scene(1)
        mesh, state, datum = scn.world_mesh, scn.state, scn.datum
        grid = CandidateGrid(4.0, 1.0, 6.0, 1.0)
        candidates = generate_candidates(state, grid, datum)
        rng = np.random.default_rng(31)
        picks = rng.choice(len(candidates), size=50, replace=False)
        for i in picks:
            truth = candidates[i]
            cam = render_class_image(mesh, PoseState(truth, state.intrinsics), datum)
            refined, _ = estimate_pose(cam, mesh, state, grid, datum)
            assert refined.pose == truth
            rerender = render_class_image(mesh, refined, datum)
            assert score_candidate(cam, rerender) == (1.0, 1.0)


def test_06_localization_accuracy_50_trials():
    with criterion(6, "noisy localization within sqrt(2) m / 1 deg, >=45/50"):
        t0 = time.perf_counter()
        scn = synth.street_scene(1)
        mesh, state, datum = scn.world_mesh, scn.state, scn.datum
        cam = render_class_image(mesh, state, datum)
        grid = CandidateGrid(20.0, 1.0, 40.0, 1.0)
        truth = state.pose
        truth_grid = geodetic_to_grid(truth, datum)
        rng = np.random.default_rng(17)
        cache = {}
        ok = 0
        for _ in range(50):
            while True:
                de, dn = (int(v) for v in rng.integers(-10, 11, 2))
                if de * de + dn * dn <= 100:
                    break
            dy = int(rng.integers(-10, 11))
            noisy = PoseState(
                GeoPose(truth.lat + dn, truth.lon + de, truth.alt,
                        truth.yaw + dy, truth.pitch, truth.roll),
                state.intrinsics)
            refined, _ = estimate_pose(cam, mesh, noisy, grid, datum,
                                       score_cache=cache)
            g = geodetic_to_grid(refined.pose, datum)
            pos_err = np.hypot(g.easting - truth_grid.easting,
                               g.northing - truth_grid.northing)
            yaw_err = abs((refined.pose.yaw - truth.yaw + 180.0) % 360.0 - 180.0)
            if pos_err <= np.sqrt(2.0) and yaw_err <= 1.0:
                ok += 1
        assert ok >= 45
        assert time.perf_counter() - t0 <= 600.0


def test_07_end_to_end_update_20_seeds(tmp_path):
    with criterion(7, "descriptor accuracy and removal over 20 seeds"):
        from semmap.pipeline import run_update

        for seed in range(20):
            # added banner + added chair
            scn = synth.wall_scene(seed, ("add_banner", "add_chair"))
            paths = synth.write_scenario(scn, tmp_path / f"add{seed}")
            cfg = synth.scenario_config(scn)
            cfg.out_dir = str(tmp_path / f"add{seed}" / "run")
            result = run_update(cfg, paths["map_mesh"], paths["camera_image"],
                                paths["store"], scn.state.pose, localize=False)
            by_class = {d.class_id: d for d in result.inserted.values()}
            for truth in scn.truths:
                d = by_class[SemanticClass(truth["class"])]
                err = np.linalg.norm(d.position.as_array() - truth["position"])
                assert err <= 0.3, f"seed {seed}: position error {err:.3f}"
                dims_truth = truth.get("dim2d") or truth["dim3d"]
                dims_got = d.dim2d if "dim2d" in truth else d.dim3d
                for got, want in zip(dims_got, dims_truth):
                    assert abs(got - want) <= 0.10 * want, f"seed {seed}"

            # removed chair resolves to the manifest-designated descriptor
            scn = synth.wall_scene(seed, ("remove_chair",))
            paths = synth.write_scenario(scn, tmp_path / f"rm{seed}")
            cfg = synth.scenario_config(scn)
            cfg.out_dir = str(tmp_path / f"rm{seed}" / "run")
            result = run_update(cfg, paths["map_mesh"], paths["camera_image"],
                                paths["store"], scn.state.pose, localize=False)
            want_id = scn.truths[0]["removed_descriptor_id"]
            assert list(result.removed.values()) == [want_id], f"seed {seed}"
            assert want_id not in load_store(paths["store"]).descriptors


def test_08_error_sweep_trend(tmp_path):
    with criterion(8, "sweep 0-5 m: monotone errors, slope in [0.5, 1.5]"):
        from semmap.pipeline import eval_sweep

        t0 = time.perf_counter()
        scn = synth.wall_scene(1, ("add_banner",))
        paths = synth.write_scenario(scn, tmp_path / "s")
        cfg = synth.scenario_config(scn)
        cfg.out_dir = str(tmp_path / "s" / "run")
        errors = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
        rows, _ = eval_sweep(cfg, paths["map_mesh"], paths["camera_image"],
                             paths["store"], scn.state.pose,
                             scn.sweep_direction, errors)
        pos = [r[1] for r in rows]
        area = [r[2] for r in rows]
        assert all(np.isfinite(pos)) and all(np.isfinite(area))
        assert pos == sorted(pos)
        assert area == sorted(area)
        slope = float(np.polyfit(errors, pos, 1)[0])
        assert 0.5 <= slope <= 1.5, f"slope {slope:.3f}"
        assert time.perf_counter() - t0 <= 120.0


def test_09_change_detection_exactness():
    with criterion(9, "masks, 5% boundary, and flood-fill labeling exact"):
        rng = np.random.default_rng(41)

        # Eq.-style inequality masks
        for _ in range(1000):
            a = rng.integers(0, 9, (16, 24), dtype=np.uint8)
            b = rng.integers(0, 9, (16, 24), dtype=np.uint8)
            mask = detect_changes(SegmentedImage(a), SegmentedImage(b))
            np.testing.assert_array_equal(mask.data, (a != b).astype(np.uint8))

        # 5% boundary at 100x100: 500 kept, 499 dropped (strict less)
        for n, kept in ((500, 1), (499, 0)):
            m = np.zeros((100, 100), dtype=np.uint8)
            m.flat[:n] = 1  # 100x100 keeps these 4-connected
            out = filter_regions(ChangeMask(m), 0.05)
            assert int(out.data.sum()) == n * kept

        # flood-fill labeling oracle
        for _ in range(1000):
            m = (rng.random((10, 14)) < 0.35).astype(np.uint8)
            cam = SegmentedImage(rng.integers(0, 9, (10, 14), dtype=np.uint8))
            ref = SegmentedImage(rng.integers(0, 9, (10, 14), dtype=np.uint8))
            regions = extract_regions(ChangeMask(m), cam, ref)
            labels, count = oracles.flood_fill_label(m)
            assert len(regions) == count
            seen = np.zeros_like(m)
            for reg in regions:
                assert len({labels[r, c] for r, c in reg.pixels}) == 1
                seen[reg.pixels[:, 0], reg.pixels[:, 1]] = 1
            np.testing.assert_array_equal(seen, m)


def test_10_determinism_and_atomicity(tmp_path, monkeypatch, capsys):
    with criterion(10, "byte-identical reruns; failed update changes nothing"):
        scn = synth.wall_scene(3, ("add_banner", "add_chair"))
        outs = []
        for run in ("a", "b"):
            paths = synth.write_scenario(scn, tmp_path / run)
            rc = main(["update", "--no-localize",
                       "--config", str(tmp_path / run / "scenario.cfg"),
                       "--mesh", paths["map_mesh"],
                       "--image", paths["camera_image"],
                       "--store", paths["store"],
                       "--pose", ",".join(str(v) for v in [
                           scn.state.pose.lat, scn.state.pose.lon,
                           scn.state.pose.alt, scn.state.pose.yaw,
                           scn.state.pose.pitch, scn.state.pose.roll]),
                       "--out", str(tmp_path / run / "out")])
            assert rc == EXIT_OK
            outs.append(paths)
        for key in ("map_mesh", "store"):
            assert filecmp.cmp(outs[0][key], outs[1][key], shallow=False)
        for name in ("audit.txt", "change_mask.png", "refined_pose.txt",
                     "regions.txt"):
            assert filecmp.cmp(tmp_path / "a" / "out" / name,
                               tmp_path / "b" / "out" / name, shallow=False)

        # injected mid-pipeline failure: store and mesh stay untouched
        paths = synth.write_scenario(scn, tmp_path / "c")
        before = {k: open(paths[k], "rb").read() for k in ("map_mesh", "store")}
        import semmap.pipeline as pipeline

        def boom(*args, **kwargs):
            raise RuntimeError("injected failure")

        monkeypatch.setattr(pipeline, "estimate_material_descriptor", boom)
        rc = main(["update", "--no-localize",
                   "--config", str(tmp_path / "c" / "scenario.cfg"),
                   "--mesh", paths["map_mesh"],
                   "--image", paths["camera_image"],
                   "--store", paths["store"],
                   "--pose", ",".join(str(v) for v in [
                       scn.state.pose.lat, scn.state.pose.lon,
                       scn.state.pose.alt, scn.state.pose.yaw,
                       scn.state.pose.pitch, scn.state.pose.roll]),
                   "--out", str(tmp_path / "c" / "out")])
        assert rc == EXIT_STAGE
        after = {k: open(paths[k], "rb").read() for k in ("map_mesh", "store")}
        assert after == before
