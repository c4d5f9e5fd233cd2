//! Co-rotational 2D beam element.
//!
//! Each element separates rigid motion from local deformation: the chord
//! between the displaced nodes defines a rotating frame, and only the axial
//! stretch and the two end rotations relative to the chord enter the strain
//! energy. Local bending uses the classical cubic (Euler-Bernoulli) end
//! rotation stiffness, so the formulation linearizes to the standard frame
//! element at rest while remaining exact for arbitrarily large rigid motion.
//!
//! The internal force is the exact gradient of the strain energy and the
//! tangent is its exact, symmetric Hessian (material + geometric parts).

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use thiserror::Error;

use crate::model::{dof_index, DofKind, DofMap, Element, Material, Model};

pub type ElementVector = SVector<f64, 6>;
pub type ElementMatrix = SMatrix<f64, 6, 6>;

/// Current chord length below this fraction of the reference length means
/// the element has degenerated and the kinematics are meaningless.
pub const COLLAPSE_RATIO: f64 = 1e-9;

/// Local end rotations beyond this bound indicate the mesh is too coarse for
/// the deformation; the cubic local bending model is no longer trustworthy.
pub const MAX_LOCAL_ROTATION: f64 = std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ElementError {
    #[error("element collapsed: chord length {length:.3e} is below 1e-9 of reference")]
    Collapsed { length: f64 },
    #[error("local rotation out of range: {rotation:.4} rad exceeds pi/2")]
    RotationOutOfRange { rotation: f64 },
}

/// Deformation measures in the element frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDeformation {
    /// Axial stretch of the chord (m).
    pub axial: f64,
    /// End rotation at node a relative to the rotated chord (rad).
    pub rot_a: f64,
    /// End rotation at node b relative to the rotated chord (rad).
    pub rot_b: f64,
    /// Current chord angle in global coordinates (rad).
    pub chord_angle: f64,
    /// Current chord length (m).
    pub chord_length: f64,
}

/// Work conjugates of [`LocalDeformation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalForces {
    /// Axial normal force (N), positive in tension.
    pub normal: f64,
    /// End moment at node a (N m).
    pub moment_a: f64,
    /// End moment at node b (N m).
    pub moment_b: f64,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Computes the local deformation of an element under the global displacement
/// 6-vector `q = (u1, w1, th1, u2, w2, th2)` of its two nodes.
pub fn local_kinematics(element: &Element, q: &ElementVector) -> Result<LocalDeformation, ElementError> {
    let l0 = element.length0;
    let (s0, c0) = element.angle0.sin_cos();
    // Displaced chord vector; the reference chord is reconstructed from the
    // stored length and angle so only relative node motion matters.
    let dx = l0 * c0 + q[3] - q[0];
    let dy = l0 * s0 + q[4] - q[1];
    let length = dx.hypot(dy);
    if !(length > COLLAPSE_RATIO * l0) {
        return Err(ElementError::Collapsed { length });
    }
    // (L - L0) evaluated as (L^2 - L0^2)/(L + L0): no cancellation for the
    // near-inextensible motions that dominate snap-through paths.
    let axial = (length * length - l0 * l0) / (length + l0);
    let chord_angle = dy.atan2(dx);
    let rot_a = wrap_angle(q[2] + element.angle0 - chord_angle);
    let rot_b = wrap_angle(q[5] + element.angle0 - chord_angle);
    for rot in [rot_a, rot_b] {
        if rot.abs() > MAX_LOCAL_ROTATION {
            return Err(ElementError::RotationOutOfRange { rotation: rot });
        }
    }
    Ok(LocalDeformation {
        axial,
        rot_a,
        rot_b,
        chord_angle,
        chord_length: length,
    })
}

/// Local constitutive law: normal force from the stretch, end moments from
/// the symmetric 2x2 bending stiffness (2EI/L0) [[2, 1], [1, 2]].
pub fn local_forces(element: &Element, material: &Material, d: &LocalDeformation) -> LocalForces {
    let ea = material.youngs_modulus * material.area;
    let ei2 = 2.0 * material.youngs_modulus * material.second_moment / element.length0;
    LocalForces {
        normal: ea * d.axial / element.length0,
        moment_a: ei2 * (2.0 * d.rot_a + d.rot_b),
        moment_b: ei2 * (d.rot_a + 2.0 * d.rot_b),
    }
}

/// Strain energy of one element at displacement `q`.
pub fn strain_energy(element: &Element, material: &Material, q: &ElementVector) -> Result<f64, ElementError> {
    let d = local_kinematics(element, q)?;
    let ea = material.youngs_modulus * material.area;
    let ei = material.youngs_modulus * material.second_moment;
    let axial = 0.5 * ea / element.length0 * d.axial * d.axial;
    let bending = ei / element.length0
        * (2.0 * d.rot_a * d.rot_a + 2.0 * d.rot_a * d.rot_b + 2.0 * d.rot_b * d.rot_b);
    Ok(axial + bending)
}

/// Compatibility gradients at the current state:
/// `r = d(axial)/dq` and `z/L = d(chord_angle)/dq`.
fn gradients(d: &LocalDeformation) -> (ElementVector, ElementVector) {
    let (s, c) = d.chord_angle.sin_cos();
    let r = ElementVector::from_column_slice(&[-c, -s, 0.0, c, s, 0.0]);
    let z = ElementVector::from_column_slice(&[s, -c, 0.0, -s, c, 0.0]);
    (r, z)
}

/// Internal force of one element: the exact gradient of [`strain_energy`].
pub fn internal_force(element: &Element, material: &Material, q: &ElementVector) -> Result<ElementVector, ElementError> {
    let d = local_kinematics(element, q)?;
    let f = local_forces(element, material, &d);
    let (r, z) = gradients(&d);
    let b = z / d.chord_length; // gradient of the chord angle
    let mut p = f.normal * r - (f.moment_a + f.moment_b) * b;
    p[2] += f.moment_a;
    p[5] += f.moment_b;
    Ok(p)
}

/// Tangent stiffness of one element: the exact Hessian of [`strain_energy`],
/// symmetric by construction.
pub fn tangent_stiffness(element: &Element, material: &Material, q: &ElementVector) -> Result<ElementMatrix, ElementError> {
    let d = local_kinematics(element, q)?;
    let f = local_forces(element, material, &d);
    let (r, z) = gradients(&d);
    let l = d.chord_length;
    let inv_l = 1.0 / l;

    // Gradients of the two local rotations: e3 - z/L and e6 - z/L.
    let mut g1 = -z * inv_l;
    g1[2] += 1.0;
    let mut g2 = -z * inv_l;
    g2[5] += 1.0;

    let ea_l0 = material.youngs_modulus * material.area / element.length0;
    let ei2_l0 = 2.0 * material.youngs_modulus * material.second_moment / element.length0;
    let m_sum = f.moment_a + f.moment_b;

    // Entry-wise construction keeps the matrix bitwise symmetric: every term
    // is invariant under i <-> j because float multiply and add commute.
    Ok(ElementMatrix::from_fn(|i, j| {
        let material_part = ea_l0 * r[i] * r[j]
            + ei2_l0 * (2.0 * g1[i] * g1[j] + (g1[i] * g2[j] + g2[i] * g1[j]) + 2.0 * g2[i] * g2[j]);
        let geometric_part =
            f.normal * inv_l * z[i] * z[j] + m_sum * inv_l * inv_l * (r[i] * z[j] + z[i] * r[j]);
        material_part + geometric_part
    }))
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Error)]
#[error("element {element}: {source}")]
pub struct AssembleError {
    pub element: usize,
    pub source: ElementError,
}

/// Residual and tangent of the constrained system at `(q, lambda)`:
/// `residual = f_int - lambda * f_ref - f_gravity` on the free dofs.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub residual: DVector<f64>,
    pub tangent: DMatrix<f64>,
}

/// Gathers an element's displacement 6-vector from the global state.
pub fn element_displacements(element: &Element, q: &DVector<f64>) -> ElementVector {
    let dofs = element.dofs();
    ElementVector::from_fn(|i, _| q[dofs[i]])
}

/// Assembled reference load vector (unit load pattern scaled by lambda
/// during solves).
pub fn reference_force(model: &Model) -> DVector<f64> {
    let mut f = DVector::zeros(model.dof_count());
    for force in &model.load.forces {
        f[dof_index(force.node, force.dof)] += force.value;
    }
    f
}

/// Lumped self-weight: each element contributes rho*A*L0/2 to the (u, w)
/// dofs of both its nodes. Zero when gravity is disabled.
pub fn gravity_force(model: &Model) -> DVector<f64> {
    let mut f = DVector::zeros(model.dof_count());
    if !model.load.gravity_enabled {
        return f;
    }
    let [gx, gy] = model.load.gravity;
    for el in &model.elements {
        let mat = &model.materials[el.material].1;
        let half_mass = 0.5 * mat.density * mat.area * el.length0;
        for node in [el.node_a, el.node_b] {
            f[dof_index(node, DofKind::U)] += half_mass * gx;
            f[dof_index(node, DofKind::W)] += half_mass * gy;
        }
    }
    f
}

/// Total internal force vector over all dofs (no loads subtracted); the
/// entries at constrained dofs are the support reactions when the state is
/// an equilibrium.
pub fn internal_forces_full(model: &Model, q: &DVector<f64>) -> Result<DVector<f64>, AssembleError> {
    let mut f = DVector::zeros(model.dof_count());
    for (e, el) in model.elements.iter().enumerate() {
        let mat = &model.materials[el.material].1;
        let qe = element_displacements(el, q);
        let pe = internal_force(el, mat, &qe).map_err(|source| AssembleError { element: e, source })?;
        for (i, &dof) in el.dofs().iter().enumerate() {
            f[dof] += pe[i];
        }
    }
    Ok(f)
}

/// Total strain energy over all elements.
pub fn total_strain_energy(model: &Model, q: &DVector<f64>) -> Result<f64, AssembleError> {
    let mut u = 0.0;
    for (e, el) in model.elements.iter().enumerate() {
        let mat = &model.materials[el.material].1;
        let qe = element_displacements(el, q);
        u += strain_energy(el, mat, &qe).map_err(|source| AssembleError { element: e, source })?;
    }
    Ok(u)
}

/// Assembles the reduced residual and tangent at `(q, lambda)`. Elements are
/// visited in a fixed order, so identical inputs produce bitwise identical
/// output.
pub fn assemble(
    model: &Model,
    map: &DofMap,
    q: &DVector<f64>,
    lambda: f64,
) -> Result<AssembledSystem, AssembleError> {
    let n = map.free_count();
    let mut residual = DVector::zeros(n);
    let mut tangent = DMatrix::zeros(n, n);

    for (e, el) in model.elements.iter().enumerate() {
        let mat = &model.materials[el.material].1;
        let qe = element_displacements(el, q);
        let pe = internal_force(el, mat, &qe).map_err(|source| AssembleError { element: e, source })?;
        let ke = tangent_stiffness(el, mat, &qe).map_err(|source| AssembleError { element: e, source })?;
        let dofs = el.dofs();
        let reduced: [Option<usize>; 6] = std::array::from_fn(|i| map.free_index(dofs[i]));
        for i in 0..6 {
            let Some(ri) = reduced[i] else { continue };
            residual[ri] += pe[i];
            for j in 0..6 {
                if let Some(rj) = reduced[j] {
                    tangent[(ri, rj)] += ke[(i, j)];
                }
            }
        }
    }

    let f_ref = reference_force(model);
    let f_grav = gravity_force(model);
    for free in 0..n {
        let dof = map.global_of_free(free);
        residual[free] -= lambda * f_ref[dof] + f_grav[dof];
    }
    Ok(AssembledSystem { residual, tangent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundaryConditions, ElementDef, LoadCase, NodeGeom, PointForce};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use std::collections::BTreeMap;

    fn unit_material() -> Material {
        Material {
            youngs_modulus: 1.0,
            area: 1.0,
            second_moment: 1.0,
            density: 0.0,
        }
    }

    fn unit_element(angle0: f64) -> Element {
        Element {
            node_a: 0,
            node_b: 1,
            material: 0,
            length0: 1.0,
            angle0,
        }
    }

    #[test]
    fn undeformed_element_is_strain_free() {
        let el = unit_element(0.3);
        let d = local_kinematics(&el, &ElementVector::zeros()).unwrap();
        assert_eq!(d.axial, 0.0);
        assert_eq!(d.rot_a, 0.0);
        assert_eq!(d.rot_b, 0.0);
        assert_eq!(d.chord_length, 1.0);
    }

    #[test]
    fn pure_stretch() {
        // unit horizontal element, node b moved +0.1 along the axis
        let el = unit_element(0.0);
        let q = ElementVector::from_column_slice(&[0.0, 0.0, 0.0, 0.1, 0.0, 0.0]);
        let d = local_kinematics(&el, &q).unwrap();
        assert_relative_eq!(d.chord_length, 1.1, max_relative = 1e-15);
        assert_relative_eq!(d.axial, 0.1, max_relative = 1e-14);
        assert_eq!(d.chord_angle, 0.0);
        // stretch identity holds exactly: axial * (L + L0) == L^2 - L0^2
        let lhs = d.axial * (d.chord_length + el.length0);
        let rhs = d.chord_length * d.chord_length - el.length0 * el.length0;
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-16);
    }

    #[test]
    fn rigid_rotation_produces_no_deformation() {
        // rotate the element by 30 degrees about node a, rotations follow
        let alpha = 30f64.to_radians();
        let el = unit_element(0.2);
        let (s0, c0) = el.angle0.sin_cos();
        let (s, c) = (el.angle0 + alpha).sin_cos();
        let q = ElementVector::from_column_slice(&[0.0, 0.0, alpha, c - c0, s - s0, alpha]);
        let d = local_kinematics(&el, &q).unwrap();
        assert_abs_diff_eq!(d.axial, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.rot_a, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.rot_b, 0.0, epsilon = 1e-15);
        assert_relative_eq!(d.chord_angle, el.angle0 + alpha, max_relative = 1e-14);
    }

    #[test]
    fn local_force_examples() {
        let el = unit_element(0.0);
        let mat = unit_material();
        let d = LocalDeformation {
            axial: 0.001,
            rot_a: 0.0,
            rot_b: 0.0,
            chord_angle: 0.0,
            chord_length: 1.001,
        };
        assert_relative_eq!(local_forces(&el, &mat, &d).normal, 0.001, max_relative = 1e-15);

        let d = LocalDeformation {
            axial: 0.0,
            rot_a: 0.01,
            rot_b: 0.01,
            chord_angle: 0.0,
            chord_length: 1.0,
        };
        let f = local_forces(&el, &mat, &d);
        assert_relative_eq!(f.moment_a, 0.06, max_relative = 1e-15);
        assert_relative_eq!(f.moment_b, 0.06, max_relative = 1e-15);
    }

    #[test]
    fn strain_energy_example_and_positivity() {
        let el = unit_element(0.0);
        let mat = unit_material();
        // pure stretch by 0.1: U = 0.5 * EA/L0 * 0.1^2 = 0.005
        let q = ElementVector::from_column_slice(&[0.0, 0.0, 0.0, 0.1, 0.0, 0.0]);
        let u = strain_energy(&el, &mat, &q).unwrap();
        assert_relative_eq!(u, 0.005, max_relative = 1e-13);
        assert_eq!(strain_energy(&el, &mat, &ElementVector::zeros()).unwrap(), 0.0);
    }

    #[test]
    fn rest_tangent_matches_linear_frame_element() {
        let el = unit_element(0.0);
        let mat = unit_material();
        let k = tangent_stiffness(&el, &mat, &ElementVector::zeros()).unwrap();
        // classical pattern for E = A = I = L0 = 1
        assert_relative_eq!(k[(0, 0)], 1.0, max_relative = 1e-14);
        assert_relative_eq!(k[(0, 3)], -1.0, max_relative = 1e-14);
        assert_relative_eq!(k[(1, 1)], 12.0, max_relative = 1e-14);
        assert_relative_eq!(k[(1, 2)], 6.0, max_relative = 1e-14);
        assert_relative_eq!(k[(2, 2)], 4.0, max_relative = 1e-14);
        assert_relative_eq!(k[(2, 5)], 2.0, max_relative = 1e-14);
        assert_relative_eq!(k[(1, 4)], -12.0, max_relative = 1e-14);
        assert_relative_eq!(k[(4, 5)], -6.0, max_relative = 1e-14);
    }

    #[test]
    fn tangent_is_bitwise_symmetric() {
        let el = unit_element(0.7);
        let mat = Material {
            youngs_modulus: 2.3e6,
            area: 1.4e-4,
            second_moment: 6e-9,
            density: 0.0,
        };
        let q = ElementVector::from_column_slice(&[0.01, -0.02, 0.2, -0.03, 0.05, -0.1]);
        let k = tangent_stiffness(&el, &mat, &q).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(k[(i, j)].to_bits(), k[(j, i)].to_bits());
            }
        }
    }

    #[test]
    fn force_and_tangent_match_finite_differences() {
        let el = unit_element(0.4);
        let mat = Material {
            youngs_modulus: 1.7e6,
            area: 3e-5,
            second_moment: 2e-9,
            density: 0.0,
        };
        let q = ElementVector::from_column_slice(&[0.02, -0.05, 0.25, -0.04, 0.08, -0.15]);
        let p = internal_force(&el, &mat, &q).unwrap();
        let k = tangent_stiffness(&el, &mat, &q).unwrap();
        let h = 1e-7 * el.length0;
        for i in 0..6 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd_force = (strain_energy(&el, &mat, &qp).unwrap()
                - strain_energy(&el, &mat, &qm).unwrap())
                / (2.0 * h);
            assert_relative_eq!(p[i], fd_force, max_relative = 1e-6, epsilon = 1e-9);
            let fp = internal_force(&el, &mat, &qp).unwrap();
            let fm = internal_force(&el, &mat, &qm).unwrap();
            for j in 0..6 {
                let fd_k = (fp[j] - fm[j]) / (2.0 * h);
                assert_relative_eq!(k[(j, i)], fd_k, max_relative = 1e-5, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn collapse_and_rotation_guards() {
        let el = unit_element(0.0);
        let q = ElementVector::from_column_slice(&[0.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert!(matches!(
            local_kinematics(&el, &q),
            Err(ElementError::Collapsed { .. })
        ));
        let q = ElementVector::from_column_slice(&[0.0, 0.0, 1.8, 0.0, 0.0, 0.0]);
        assert!(matches!(
            local_kinematics(&el, &q),
            Err(ElementError::RotationOutOfRange { .. })
        ));
    }

    fn two_element_bar() -> Model {
        let nodes = vec![
            NodeGeom { id: 0, x: 0.0, y: 0.0 },
            NodeGeom { id: 1, x: 0.5, y: 0.0 },
            NodeGeom { id: 2, x: 1.0, y: 0.0 },
        ];
        let connectivity = vec![
            ElementDef { node_a: 0, node_b: 1, material: "m".into() },
            ElementDef { node_a: 1, node_b: 2, material: "m".into() },
        ];
        let mut materials = BTreeMap::new();
        materials.insert(
            "m".to_string(),
            Material {
                youngs_modulus: 1e6,
                area: 1e-4,
                second_moment: 1e-8,
                density: 0.0,
            },
        );
        let bcs = BoundaryConditions {
            fixed: vec![(0, DofKind::U), (0, DofKind::W), (0, DofKind::Theta)],
            prescribed: vec![],
        };
        let load = LoadCase {
            forces: vec![PointForce { node: 2, dof: DofKind::U, value: 1.0 }],
            ..LoadCase::default()
        };
        Model::new(nodes, connectivity, materials, bcs, load).unwrap()
    }

    #[test]
    fn axial_force_constant_along_solved_bar() {
        // equilibrium of a two-element bar under end load P: N = P everywhere
        let model = two_element_bar();
        let settings = crate::solver::ContinuationSettings::default();
        let (state, _) = crate::solver::solve_at_load(
            &model,
            2.5,
            &DVector::zeros(model.dof_count()),
            &settings,
        )
        .unwrap();
        for el in &model.elements {
            let mat = &model.materials[el.material].1;
            let qe = element_displacements(el, &state.q);
            let d = local_kinematics(el, &qe).unwrap();
            let f = local_forces(el, mat, &d);
            assert_relative_eq!(f.normal, 2.5, max_relative = 1e-8);
        }
    }

    #[test]
    fn rest_tangent_positive_definite_and_gravity_lumping() {
        let mut model = two_element_bar();
        let map = DofMap::new(&model).unwrap();
        let q = DVector::zeros(model.dof_count());
        let sys = assemble(&model, &map, &q, 0.0).unwrap();
        assert!(sys.tangent.cholesky().is_some());
        assert_eq!(sys.residual.norm(), 0.0);

        model.load.gravity_enabled = true;
        model.materials[0].1.density = 2000.0;
        let g = gravity_force(&model);
        // rho * A * L0 / 2 = 2000 * 1e-4 * 0.5 / 2 = 0.05 per element end
        let w = -0.05 * 9.81;
        assert_relative_eq!(g[dof_index(0, DofKind::W)], w, max_relative = 1e-14);
        assert_relative_eq!(g[dof_index(1, DofKind::W)], 2.0 * w, max_relative = 1e-14);
        assert_relative_eq!(g[dof_index(2, DofKind::W)], w, max_relative = 1e-14);
        assert_eq!(g[dof_index(1, DofKind::U)], 0.0);
        let _ = map;
    }
}
