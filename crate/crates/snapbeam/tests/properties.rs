//! Randomized properties: serialization exactness, frame invariance of the
//! element, and order/threshold laws of the sensing pipeline.

use std::collections::BTreeMap;

use proptest::prelude::*;

use snapbeam::corotational::{internal_force, local_kinematics, strain_energy, ElementVector};
use snapbeam::model::{
    dof_index, load_scenario, scenario_to_json, BoundaryConditions, DofKind, Element, ElementDef,
    LoadCase, Material, Model, NodeGeom, PointForce, Scenario,
};
use snapbeam::sensing::{
    detect_peaks, parse_trace_csv, run_controller, GraspControllerConfig, GraspMode,
    PressureSample,
};
use snapbeam::solver::{ContinuationMethod, ContinuationSettings};

fn material_strategy() -> impl Strategy<Value = Material> {
    (1e5..1e9f64, 1e-6..1e-2f64, 1e-12..1e-6f64, 0.0..5e3f64).prop_map(
        |(youngs_modulus, area, second_moment, density)| Material {
            youngs_modulus,
            area,
            second_moment,
            density,
        },
    )
}

fn element_strategy() -> impl Strategy<Value = (Element, Material, [f64; 4])> {
    (
        -1.0..1.0f64,
        -1.0..1.0f64,
        -std::f64::consts::PI..std::f64::consts::PI,
        0.2..2.0f64,
        material_strategy(),
    )
        .prop_map(|(xa, ya, angle, length, material)| {
            let element = Element {
                node_a: 0,
                node_b: 1,
                material: 0,
                length0: length,
                angle0: angle,
            };
            let coords = [xa, ya, xa + length * angle.cos(), ya + length * angle.sin()];
            (element, material, coords)
        })
}

/// Cantilevered chain of beam elements with mild geometry noise: always a
/// valid, well-constrained scenario.
fn scenario_strategy() -> impl Strategy<Value = Scenario> {
    (
        2..6usize,
        proptest::collection::vec((-0.2..0.2f64, -0.2..0.2f64), 6),
        material_strategy(),
        -10.0..10.0f64,
        any::<bool>(),
        1e-4..1e-2f64,
        prop_oneof![Just(None), (0.1..2.0f64).prop_map(Some)],
    )
        .prop_map(|(n, jitter, material, force, gravity, step, target_lambda)| {
            let nodes = (0..=n)
                .map(|i| NodeGeom {
                    id: i,
                    x: i as f64 * 0.1 + if i > 0 { jitter[i].0 * 0.04 } else { 0.0 },
                    y: if i > 0 { jitter[i].1 * 0.04 } else { 0.0 },
                })
                .collect();
            let connectivity = (0..n)
                .map(|i| ElementDef {
                    node_a: i,
                    node_b: i + 1,
                    material: "section".into(),
                })
                .collect();
            let mut materials = BTreeMap::new();
            materials.insert("section".to_string(), material);
            let model = Model::new(
                nodes,
                connectivity,
                materials,
                BoundaryConditions {
                    fixed: vec![(0, DofKind::U), (0, DofKind::W), (0, DofKind::Theta)],
                    prescribed: vec![],
                },
                LoadCase {
                    forces: vec![PointForce {
                        node: n,
                        dof: DofKind::W,
                        value: if force == 0.0 { 1.0 } else { force },
                    }],
                    gravity_enabled: gravity,
                    ..LoadCase::default()
                },
            )
            .unwrap();
            let solver = ContinuationSettings {
                method: ContinuationMethod::ArcLength,
                control_dof: Some(dof_index(n, DofKind::W)),
                initial_step: step,
                min_step: step * 1e-6,
                max_step: step * 4.0,
                target_lambda,
                ..ContinuationSettings::default()
            };
            Scenario { model, solver }
        })
}

fn trace_strategy() -> impl Strategy<Value = Vec<PressureSample>> {
    proptest::collection::vec((1e-3..1.0f64, -5.0..25.0f64), 1..80).prop_map(|steps| {
        let mut t = 0.0;
        steps
            .into_iter()
            .map(|(dt, p)| {
                t += dt;
                PressureSample { t, p }
            })
            .collect()
    })
}

proptest! {
    /// The scenario document format loses nothing: write, re-read, compare.
    #[test]
    fn scenario_json_round_trip(scenario in scenario_strategy()) {
        let json = scenario_to_json(&scenario);
        let loaded = load_scenario(&json).expect("generated scenario is valid");
        prop_assert_eq!(loaded.model, scenario.model);
        prop_assert_eq!(loaded.solver, scenario.solver);
    }

    /// Rigid motions of an element produce no local deformation, no force,
    /// and no strain energy.
    #[test]
    fn rigid_motion_leaves_element_unloaded(
        (element, material, [xa, ya, xb, yb]) in element_strategy(),
        alpha in -std::f64::consts::PI..std::f64::consts::PI,
        tx in -5.0..5.0f64,
        ty in -5.0..5.0f64,
    ) {
        let (c, s) = (alpha.cos(), alpha.sin());
        let q = ElementVector::new(
            c * xa - s * ya + tx - xa,
            s * xa + c * ya + ty - ya,
            alpha,
            c * xb - s * yb + tx - xb,
            s * xb + c * yb + ty - yb,
            alpha,
        );
        let d = local_kinematics(&element, &q).unwrap();
        prop_assert!(d.axial.abs() < 1e-12);
        prop_assert!(d.rot_a.abs() < 1e-12);
        prop_assert!(d.rot_b.abs() < 1e-12);
        let scale = material.youngs_modulus * material.area;
        prop_assert!(internal_force(&element, &material, &q).unwrap().norm() < 1e-10 * scale);
        prop_assert!(strain_energy(&element, &material, &q).unwrap() < 1e-12 * scale);
    }

    /// Strain energy is a nonnegative quadratic form of the local measures.
    /// Displacements are scaled to the element length so the chord cannot
    /// fold back through the rotation-range guard.
    #[test]
    fn strain_energy_is_nonnegative(
        (element, material, _) in element_strategy(),
        dx1 in -0.3..0.3f64, dy1 in -0.3..0.3f64, r1 in -0.5..0.5f64,
        dx2 in -0.3..0.3f64, dy2 in -0.3..0.3f64, r2 in -0.5..0.5f64,
    ) {
        let l = element.length0;
        let q = ElementVector::new(dx1 * l, dy1 * l, r1, dx2 * l, dy2 * l, r2);
        prop_assert!(strain_energy(&element, &material, &q).unwrap() >= 0.0);
    }

    /// Peak detection cares only about the ordering of samples: any affine
    /// re-indexing of time maps the peaks exactly.
    #[test]
    fn peaks_invariant_under_time_reindexing(
        trace in trace_strategy(),
        a in 0.1..10.0f64,
        b in -100.0..100.0f64,
        prominence in 0.0..5.0f64,
    ) {
        let mapped: Vec<PressureSample> = trace
            .iter()
            .map(|s| PressureSample { t: a * s.t + b, p: s.p })
            .collect();
        let original = detect_peaks(&trace, prominence);
        let transformed = detect_peaks(&mapped, prominence);
        prop_assert_eq!(original.len(), transformed.len());
        for (o, m) in original.iter().zip(&transformed) {
            prop_assert_eq!(o.p, m.p);
            prop_assert_eq!(a * o.t + b, m.t);
        }
    }

    /// The trace format round-trips bitwise through its own CSV encoding.
    #[test]
    fn trace_csv_round_trip(trace in trace_strategy()) {
        let csv: String = std::iter::once("t,p".to_string())
            .chain(trace.iter().map(|s| format!("{},{}", s.t, s.p)))
            .collect::<Vec<_>>()
            .join("\n");
        let parsed = parse_trace_csv(&csv).unwrap();
        prop_assert_eq!(parsed, trace);
    }

    /// Raising the vacuum threshold can only delay (or suppress) closing.
    #[test]
    fn raising_threshold_never_closes_earlier(
        trace in trace_strategy(),
        threshold in 3.0..17.0f64,
        raise in 0.1..5.0f64,
        debounce in 1..4usize,
    ) {
        let config = GraspControllerConfig {
            mode: GraspMode::Active,
            vacuum_threshold: threshold,
            hysteresis_band: 1.0,
            debounce,
            trigger_force_threshold: 1.0,
        };
        let raised = GraspControllerConfig {
            vacuum_threshold: threshold + raise,
            ..config
        };
        let closing_index = |cfg: &GraspControllerConfig| {
            run_controller(&trace, cfg)
                .unwrap()
                .events
                .iter()
                .find(|e| e.event == "open_to_closing")
                .map(|e| trace.iter().position(|s| s.t == e.t).unwrap())
                .unwrap_or(usize::MAX)
        };
        prop_assert!(closing_index(&config) <= closing_index(&raised));
    }

    /// Events are strictly ordered in time and never closer than the
    /// debounce window in active mode.
    #[test]
    fn active_events_respect_debounce_spacing(
        trace in trace_strategy(),
        threshold in 3.0..17.0f64,
        debounce in 1..5usize,
    ) {
        let config = GraspControllerConfig {
            mode: GraspMode::Active,
            vacuum_threshold: threshold,
            hysteresis_band: 1.5,
            debounce,
            trigger_force_threshold: 1.0,
        };
        let events = run_controller(&trace, &config).unwrap().events;
        let index_of = |t: f64| trace.iter().position(|s| s.t == t).unwrap();
        for pair in events.windows(2) {
            prop_assert!(pair[0].t < pair[1].t);
            prop_assert!(index_of(pair[1].t) - index_of(pair[0].t) >= debounce);
        }
    }
}
