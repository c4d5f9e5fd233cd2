//! Parametric model generators: shallow arches (the 2D reduction of a
//! snap-through palm), vertical beams loaded in two steps, and the two-bar
//! truss used as an analytic cross-check. Each generator pairs the model
//! with continuation settings scaled to the geometry, ready to trace.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{
    dof_index, BoundaryConditions, DofKind, ElementDef, LoadCase, Material, Model, NodeGeom,
    PointForce, Scenario,
};
use crate::solver::{ContinuationMethod, ContinuationSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchProfile {
    HalfSine,
    Circular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchEnds {
    Clamped,
    Pinned,
}

#[derive(Debug, Clone)]
pub struct ArchSpec {
    pub span: f64,
    pub rise: f64,
    pub profile: ArchProfile,
    pub n_elements: usize,
    pub material: Material,
    pub ends: ArchEnds,
}

#[derive(Debug, Error)]
#[error("invalid {parameter}: {message}")]
pub struct GeneratorError {
    pub parameter: &'static str,
    pub message: String,
}

fn invalid(parameter: &'static str, message: impl Into<String>) -> GeneratorError {
    GeneratorError {
        parameter,
        message: message.into(),
    }
}

fn check_material(material: &Material) -> Result<(), GeneratorError> {
    for (parameter, value) in [
        ("material.E", material.youngs_modulus),
        ("material.A", material.area),
        ("material.I", material.second_moment),
    ] {
        if !(value.is_finite() && value > 0.0) {
            return Err(invalid(parameter, "must be finite and positive"));
        }
    }
    if !(material.density.is_finite() && material.density >= 0.0) {
        return Err(invalid("material.rho", "must be finite and non-negative"));
    }
    Ok(())
}

/// Soft-silicone-like demo section: E = 1.3 MPa, 20 mm x 4 mm rectangle.
/// Representative values chosen for demonstration, not measured properties.
pub fn default_arch_material() -> Material {
    Material {
        youngs_modulus: 1.3e6,
        area: 8e-5,
        second_moment: 1.0667e-10,
        density: 1070.0,
    }
}

/// The demo arch: 100 mm span, 6 mm rise (1.5x the section thickness),
/// half-sine profile, pinned ends. A rise of one to one-and-a-half
/// thicknesses keeps pinned arches in the clean bistable window: the
/// symmetric snap path connects directly to the inverted well, and no
/// asymmetric branch intrudes before the limit load.
pub fn default_arch_spec() -> ArchSpec {
    ArchSpec {
        span: 0.1,
        rise: 0.006,
        profile: ArchProfile::HalfSine,
        n_elements: 32,
        material: default_arch_material(),
        ends: ArchEnds::Pinned,
    }
}

/// Displacement scale of a snap event: the rise, floored at two section
/// thicknesses so zero-rise (straight) cases still get sensible steps.
fn snap_scale(rise: f64, material: &Material) -> f64 {
    let thickness = (12.0 * material.second_moment / material.area).sqrt();
    rise.max(2.0 * thickness)
}

fn arch_settings(spec: &ArchSpec) -> ContinuationSettings {
    let h = snap_scale(spec.rise, &spec.material);
    ContinuationSettings {
        method: ContinuationMethod::ArcLength,
        control_dof: Some(dof_index(spec.n_elements / 2, DofKind::W)),
        initial_step: h / 8.0,
        min_step: 1e-8 * h,
        max_step: h / 2.0,
        max_steps: 2000,
        newton_tol: 1e-8,
        max_newton_iters: 30,
        target_lambda: None,
        // Past the inverted configuration (which sits near -2x rise).
        target_displacement: Some(-2.5 * h),
    }
}

/// Arch of `n_elements+1` nodes on the chosen profile, stress-free in its
/// curved reference shape, with a unit downward reference force at the apex.
pub fn make_shallow_arch(spec: &ArchSpec) -> Result<Scenario, GeneratorError> {
    if !(spec.span.is_finite() && spec.span > 0.0) {
        return Err(invalid("span", "must be finite and positive"));
    }
    if !(spec.rise.is_finite() && spec.rise >= 0.0) {
        return Err(invalid("rise", "must be finite and non-negative"));
    }
    if spec.n_elements < 4 {
        return Err(invalid("n_elements", "must be at least 4"));
    }
    if spec.n_elements % 2 != 0 {
        return Err(invalid("n_elements", "must be even so an apex node exists"));
    }
    check_material(&spec.material)?;

    let n = spec.n_elements;
    let profile_y = |x: f64| -> f64 {
        if spec.rise == 0.0 {
            return 0.0;
        }
        match spec.profile {
            ArchProfile::HalfSine => spec.rise * (std::f64::consts::PI * x / spec.span).sin(),
            ArchProfile::Circular => {
                let half = spec.span / 2.0;
                let radius = (half * half + spec.rise * spec.rise) / (2.0 * spec.rise);
                let center_y = spec.rise - radius;
                center_y + (radius * radius - (x - half) * (x - half)).max(0.0).sqrt()
            }
        }
    };
    let nodes = (0..=n)
        .map(|i| {
            let x = spec.span * i as f64 / n as f64;
            let y = if i == n / 2 { spec.rise } else { profile_y(x) };
            NodeGeom { id: i, x, y }
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
    materials.insert("section".to_string(), spec.material.clone());

    let end_dofs: &[DofKind] = match spec.ends {
        ArchEnds::Clamped => &[DofKind::U, DofKind::W, DofKind::Theta],
        ArchEnds::Pinned => &[DofKind::U, DofKind::W],
    };
    let bcs = BoundaryConditions {
        fixed: [0, n]
            .iter()
            .flat_map(|&node| end_dofs.iter().map(move |&dof| (node, dof)))
            .collect(),
        prescribed: vec![],
    };
    let load = LoadCase {
        forces: vec![PointForce {
            node: n / 2,
            dof: DofKind::W,
            value: -1.0,
        }],
        ..LoadCase::default()
    };
    let model = Model::new(nodes, connectivity, materials, bcs, load)
        .map_err(|e| invalid("spec", e.to_string()))?;
    Ok(Scenario {
        model,
        solver: arch_settings(spec),
    })
}

/// Upright cantilever: base clamped, gravity enabled, transverse reference
/// force at the tip. Meant for the gravity-then-force two-step protocol,
/// so the settings ramp the load factor to 1.
pub fn make_vertical_beam(
    length: f64,
    n_elements: usize,
    material: &Material,
    tip_force: f64,
) -> Result<Scenario, GeneratorError> {
    if !(length.is_finite() && length > 0.0) {
        return Err(invalid("length", "must be finite and positive"));
    }
    if n_elements < 4 {
        return Err(invalid("n_elements", "must be at least 4"));
    }
    if !(tip_force.is_finite() && tip_force != 0.0) {
        return Err(invalid("tip_force", "must be finite and non-zero"));
    }
    check_material(material)?;

    let n = n_elements;
    let nodes = (0..=n)
        .map(|i| NodeGeom {
            id: i,
            x: 0.0,
            y: length * i as f64 / n as f64,
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
    materials.insert("section".to_string(), material.clone());
    let bcs = BoundaryConditions {
        fixed: vec![(0, DofKind::U), (0, DofKind::W), (0, DofKind::Theta)],
        prescribed: vec![],
    };
    let load = LoadCase {
        forces: vec![PointForce {
            node: n,
            dof: DofKind::U,
            value: tip_force,
        }],
        gravity_enabled: true,
        ..LoadCase::default()
    };
    let model = Model::new(nodes, connectivity, materials, bcs, load)
        .map_err(|e| invalid("parameters", e.to_string()))?;
    let solver = ContinuationSettings {
        method: ContinuationMethod::LoadControl,
        control_dof: Some(dof_index(n, DofKind::U)),
        initial_step: 0.05,
        min_step: 1e-8,
        max_step: 0.1,
        max_steps: 500,
        newton_tol: 1e-8,
        max_newton_iters: 30,
        target_lambda: Some(1.0),
        target_displacement: None,
    };
    Ok(Scenario { model, solver })
}

/// Classic two-bar snap structure: two elements meeting at a loaded apex,
/// outer ends pinned. The section's bending stiffness is overridden to a
/// negligible 1e-8 * A * half_span^2 so axial action dominates.
pub fn make_von_mises_truss(
    half_span: f64,
    rise: f64,
    material: &Material,
) -> Result<Scenario, GeneratorError> {
    if !(half_span.is_finite() && half_span > 0.0) {
        return Err(invalid("half_span", "must be finite and positive"));
    }
    if !(rise.is_finite() && rise > 0.0) {
        return Err(invalid("rise", "must be finite and positive"));
    }
    check_material(material)?;
    let material = Material {
        second_moment: 1e-8 * material.area * half_span * half_span,
        ..material.clone()
    };

    let nodes = vec![
        NodeGeom {
            id: 0,
            x: -half_span,
            y: 0.0,
        },
        NodeGeom {
            id: 1,
            x: 0.0,
            y: rise,
        },
        NodeGeom {
            id: 2,
            x: half_span,
            y: 0.0,
        },
    ];
    let connectivity = vec![
        ElementDef {
            node_a: 0,
            node_b: 1,
            material: "bar".into(),
        },
        ElementDef {
            node_a: 1,
            node_b: 2,
            material: "bar".into(),
        },
    ];
    let mut materials = BTreeMap::new();
    materials.insert("bar".to_string(), material);
    let bcs = BoundaryConditions {
        fixed: vec![
            (0, DofKind::U),
            (0, DofKind::W),
            (2, DofKind::U),
            (2, DofKind::W),
        ],
        prescribed: vec![],
    };
    let load = LoadCase {
        forces: vec![PointForce {
            node: 1,
            dof: DofKind::W,
            value: -1.0,
        }],
        ..LoadCase::default()
    };
    let model = Model::new(nodes, connectivity, materials, bcs, load)
        .map_err(|e| invalid("parameters", e.to_string()))?;
    let solver = ContinuationSettings {
        method: ContinuationMethod::ArcLength,
        control_dof: Some(dof_index(1, DofKind::W)),
        initial_step: rise / 8.0,
        min_step: 1e-8 * rise,
        max_step: rise / 2.0,
        max_steps: 2000,
        newton_tol: 1e-8,
        max_newton_iters: 30,
        target_lambda: None,
        target_displacement: Some(-2.5 * rise),
    };
    Ok(Scenario { model, solver })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn arch_apex_is_exact_and_validation_is_clean() {
        let scenario = make_shallow_arch(&default_arch_spec()).unwrap();
        let model = &scenario.model;
        assert_eq!(model.nodes.len(), 33);
        assert_eq!(model.nodes[16].y, 0.006);
        assert!(model.validate().is_empty());
        assert_eq!(
            scenario.solver.control_dof,
            Some(dof_index(16, DofKind::W))
        );

        let circular = make_shallow_arch(&ArchSpec {
            profile: ArchProfile::Circular,
            ..default_arch_spec()
        })
        .unwrap();
        assert_eq!(circular.model.nodes[16].y, 0.006);
        assert!(circular.model.validate().is_empty());
    }

    #[test]
    fn generators_reject_bad_parameters_by_name() {
        let spec = ArchSpec {
            rise: -1.0,
            ..default_arch_spec()
        };
        let err = make_shallow_arch(&spec).unwrap_err();
        assert_eq!(err.parameter, "rise");

        let spec = ArchSpec {
            n_elements: 7,
            ..default_arch_spec()
        };
        assert_eq!(make_shallow_arch(&spec).unwrap_err().parameter, "n_elements");

        let err =
            make_vertical_beam(0.0, 8, &default_arch_material(), 1.0).unwrap_err();
        assert_eq!(err.parameter, "length");

        let err = make_von_mises_truss(0.05, 0.0, &default_arch_material()).unwrap_err();
        assert_eq!(err.parameter, "rise");
    }

    fn simpson_arc_length(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        // Simpson on sqrt(1 + f'(x)^2) with a central-difference slope fine
        // enough to be exact at this tolerance.
        let slope = |x: f64| {
            let h = 1e-6 * (b - a);
            (f(x + h) - f(x - h)) / (2.0 * h)
        };
        let g = |x: f64| (1.0 + slope(x) * slope(x)).sqrt();
        let h = (b - a) / panels as f64;
        let mut sum = g(a + 1e-9 * (b - a)) + g(b - 1e-9 * (b - a));
        for k in 1..panels {
            let w = if k % 2 == 0 { 2.0 } else { 4.0 };
            sum += w * g(a + h * k as f64);
        }
        sum * h / 3.0
    }

    #[test]
    fn element_lengths_sum_to_profile_arc_length() {
        for profile in [ArchProfile::HalfSine, ArchProfile::Circular] {
            let spec = ArchSpec {
                profile,
                ..default_arch_spec()
            };
            let scenario = make_shallow_arch(&spec).unwrap();
            let total: f64 = scenario.model.elements.iter().map(|e| e.length0).sum();
            let span = spec.span;
            let rise = spec.rise;
            let expected = match profile {
                ArchProfile::HalfSine => simpson_arc_length(
                    |x| rise * (std::f64::consts::PI * x / span).sin(),
                    0.0,
                    span,
                    2000,
                ),
                ArchProfile::Circular => {
                    let half = span / 2.0;
                    let radius = (half * half + rise * rise) / (2.0 * rise);
                    2.0 * radius * (half / radius).asin()
                }
            };
            assert_relative_eq!(total, expected, max_relative = 1e-3);
        }
    }

    #[test]
    fn vertical_beam_has_gravity_and_truss_bending_is_negligible() {
        let beam = make_vertical_beam(0.05, 8, &default_arch_material(), 0.01).unwrap();
        assert!(beam.model.load.gravity_enabled);
        assert!(beam.model.validate().is_empty());
        assert_eq!(beam.solver.target_lambda, Some(1.0));

        let truss = make_von_mises_truss(0.05, 0.01, &default_arch_material()).unwrap();
        assert!(truss.model.validate().is_empty());
        let bar = &truss.model.materials[0].1;
        assert_relative_eq!(bar.second_moment, 1e-8 * bar.area * 0.05 * 0.05);
    }
}
