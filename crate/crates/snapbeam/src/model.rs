//! Problem data model: nodes, elements, materials, boundary conditions and
//! loads, plus scenario-file ingestion, validation and the free/constrained
//! dof bookkeeping used by every solve.
//!
//! Conventions: each node carries three dofs (u, w, theta) at global indices
//! `3 * node + k`, rotations are counterclockwise-positive and radians are
//! used throughout. Constraints are handled by elimination, so prescribed
//! nonzero displacements are supported directly.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::ContinuationSettings;

pub const DOFS_PER_NODE: usize = 3;

/// Per-node dof kinds in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DofKind {
    U,
    W,
    Theta,
}

impl DofKind {
    pub fn offset(self) -> usize {
        match self {
            DofKind::U => 0,
            DofKind::W => 1,
            DofKind::Theta => 2,
        }
    }
}

/// Global dof index of `(node, kind)`.
pub fn dof_index(node: usize, kind: DofKind) -> usize {
    DOFS_PER_NODE * node + kind.offset()
}

/// Linear elastic section properties. Field names match the scenario schema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// Young's modulus (Pa).
    #[serde(rename = "E")]
    pub youngs_modulus: f64,
    /// Cross-section area (m^2).
    #[serde(rename = "A")]
    pub area: f64,
    /// Second moment of area (m^4).
    #[serde(rename = "I")]
    pub second_moment: f64,
    /// Mass density (kg/m^3), only used for gravity loading.
    #[serde(rename = "rho", default)]
    pub density: f64,
}

/// Reference (undeformed) node position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeGeom {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// Two-node beam element. `length0` and `angle0` are derived from the node
/// positions when the model is built and define the stress-free reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub node_a: usize,
    pub node_b: usize,
    /// Index into `Model::materials`.
    pub material: usize,
    pub length0: f64,
    pub angle0: f64,
}

impl Element {
    /// Global dof indices of the element's six dofs, node-major.
    pub fn dofs(&self) -> [usize; 6] {
        [
            DOFS_PER_NODE * self.node_a,
            DOFS_PER_NODE * self.node_a + 1,
            DOFS_PER_NODE * self.node_a + 2,
            DOFS_PER_NODE * self.node_b,
            DOFS_PER_NODE * self.node_b + 1,
            DOFS_PER_NODE * self.node_b + 2,
        ]
    }
}

/// Element connectivity as it appears in a scenario document.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementDef {
    pub node_a: usize,
    pub node_b: usize,
    pub material: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryConditions {
    pub fixed: Vec<(usize, DofKind)>,
    pub prescribed: Vec<(usize, DofKind, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointForce {
    pub node: usize,
    pub dof: DofKind,
    pub value: f64,
}

pub const STANDARD_GRAVITY: [f64; 2] = [0.0, -9.81];

/// Reference load pattern plus optional self-weight. The applied load during
/// continuation is `lambda * forces`; gravity, when enabled, is always held
/// at full value independent of lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadCase {
    pub forces: Vec<PointForce>,
    pub gravity_enabled: bool,
    pub gravity: [f64; 2],
}

impl Default for LoadCase {
    fn default() -> Self {
        LoadCase {
            forces: Vec::new(),
            gravity_enabled: false,
            gravity: STANDARD_GRAVITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub nodes: Vec<NodeGeom>,
    pub elements: Vec<Element>,
    /// Materials sorted by name; elements store indices into this list.
    pub materials: Vec<(String, Material)>,
    pub bcs: BoundaryConditions,
    pub load: LoadCase,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("scenario schema violation: {0}")]
    Schema(String),
    #[error("duplicate node id {0}")]
    DuplicateNodeId(usize),
    #[error("node ids must be contiguous from 0, id {0} is missing")]
    MissingNodeId(usize),
    #[error("element {element} references unknown material `{material}`")]
    UnknownMaterial { element: usize, material: String },
    #[error("element {element} references missing node {node}")]
    MissingNode { element: usize, node: usize },
    #[error("element {element} joins node {node} to itself")]
    SelfLoop { element: usize, node: usize },
    #[error("dof ({node}, {dof:?}) is constrained twice with conflicting values")]
    ConflictingConstraint { node: usize, dof: DofKind },
    #[error("dof {dof} is not free and cannot be prescribed for a sweep")]
    NotFree { dof: usize },
    #[error("dof index {dof} out of range for {ndof} dofs")]
    DofOutOfRange { dof: usize, ndof: usize },
    #[error("model validation failed: {}", format_diagnostics(.0))]
    Validation(Vec<Diagnostic>),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Non-fatal findings from `Model::validate`. `load_scenario` treats any of
/// these as a rejection so downstream solves start from a sound model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Diagnostic {
    #[error("element {element} has zero length (coincident nodes)")]
    ZeroLengthElement { element: usize },
    #[error("material `{name}` has non-positive {field}")]
    NonPositiveMaterial { name: String, field: &'static str },
    #[error("material `{name}` has negative density")]
    NegativeDensity { name: String },
    #[error("mesh is disconnected: node {node} is unreachable from node 0")]
    Disconnected { node: usize },
    #[error("boundary condition references missing node {node}")]
    BcMissingNode { node: usize },
    #[error("dof ({node}, {dof:?}) is both fixed and prescribed")]
    FixedAndPrescribed { node: usize, dof: DofKind },
    #[error("force entry references missing node {node}")]
    ForceMissingNode { node: usize },
    #[error("non-finite value in {place}")]
    NonFinite { place: &'static str },
    #[error("rest stiffness singular (insufficient supports or degenerate mesh)")]
    SingularRestStiffness,
}

impl Model {
    /// Builds a model from raw parts, resolving material names and deriving
    /// element reference lengths and angles. Structural defects (bad ids,
    /// unknown materials) are hard errors; everything else is left to
    /// [`Model::validate`].
    pub fn new(
        mut nodes: Vec<NodeGeom>,
        connectivity: Vec<ElementDef>,
        materials: BTreeMap<String, Material>,
        bcs: BoundaryConditions,
        load: LoadCase,
    ) -> Result<Model, ModelError> {
        nodes.sort_by_key(|n| n.id);
        for (i, node) in nodes.iter().enumerate() {
            if node.id < i {
                return Err(ModelError::DuplicateNodeId(node.id));
            }
            if node.id > i {
                return Err(ModelError::MissingNodeId(i));
            }
        }

        let materials: Vec<(String, Material)> = materials.into_iter().collect();
        let index_of = |name: &str| materials.iter().position(|(n, _)| n == name);

        let mut elements = Vec::with_capacity(connectivity.len());
        for (e, def) in connectivity.into_iter().enumerate() {
            for node in [def.node_a, def.node_b] {
                if node >= nodes.len() {
                    return Err(ModelError::MissingNode { element: e, node });
                }
            }
            if def.node_a == def.node_b {
                return Err(ModelError::SelfLoop {
                    element: e,
                    node: def.node_a,
                });
            }
            let material = index_of(&def.material).ok_or_else(|| ModelError::UnknownMaterial {
                element: e,
                material: def.material.clone(),
            })?;
            let dx = nodes[def.node_b].x - nodes[def.node_a].x;
            let dy = nodes[def.node_b].y - nodes[def.node_a].y;
            elements.push(Element {
                node_a: def.node_a,
                node_b: def.node_b,
                material,
                length0: dx.hypot(dy),
                angle0: dy.atan2(dx),
            });
        }

        Ok(Model {
            nodes,
            elements,
            materials,
            bcs,
            load,
        })
    }

    pub fn dof_count(&self) -> usize {
        DOFS_PER_NODE * self.nodes.len()
    }

    /// Largest geometric extent of the reference configuration; used as the
    /// length scale for state-distance comparisons.
    pub fn geometry_scale(&self) -> f64 {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for n in &self.nodes {
            min[0] = min[0].min(n.x);
            min[1] = min[1].min(n.y);
            max[0] = max[0].max(n.x);
            max[1] = max[1].max(n.y);
        }
        let diag = (max[0] - min[0]).hypot(max[1] - min[1]);
        if diag.is_finite() && diag > 0.0 {
            diag
        } else {
            1.0
        }
    }

    /// Checks the model for defects a structurally well-formed document can
    /// still contain. Returns all findings rather than failing on the first.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        let n_nodes = self.nodes.len();

        for node in &self.nodes {
            if !(node.x.is_finite() && node.y.is_finite()) {
                diags.push(Diagnostic::NonFinite {
                    place: "node coordinates",
                });
                break;
            }
        }

        for (name, m) in &self.materials {
            for (field, value) in [
                ("E", m.youngs_modulus),
                ("A", m.area),
                ("I", m.second_moment),
            ] {
                if !(value.is_finite() && value > 0.0) {
                    diags.push(Diagnostic::NonPositiveMaterial {
                        name: name.clone(),
                        field,
                    });
                }
            }
            if !(m.density.is_finite() && m.density >= 0.0) {
                diags.push(Diagnostic::NegativeDensity { name: name.clone() });
            }
        }

        for (e, el) in self.elements.iter().enumerate() {
            if el.length0 == 0.0 || !el.length0.is_finite() {
                diags.push(Diagnostic::ZeroLengthElement { element: e });
            }
        }

        // Connectivity: every node reachable from node 0 through elements.
        if n_nodes > 0 {
            let mut seen = vec![false; n_nodes];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(node) = stack.pop() {
                for el in &self.elements {
                    for (a, b) in [(el.node_a, el.node_b), (el.node_b, el.node_a)] {
                        if a == node && !seen[b] {
                            seen[b] = true;
                            stack.push(b);
                        }
                    }
                }
            }
            if let Some(node) = seen.iter().position(|s| !s) {
                diags.push(Diagnostic::Disconnected { node });
            }
        }

        for &(node, _) in &self.bcs.fixed {
            if node >= n_nodes {
                diags.push(Diagnostic::BcMissingNode { node });
            }
        }
        for &(node, dof, value) in &self.bcs.prescribed {
            if node >= n_nodes {
                diags.push(Diagnostic::BcMissingNode { node });
            }
            if !value.is_finite() {
                diags.push(Diagnostic::NonFinite {
                    place: "prescribed displacement",
                });
            }
            if self.bcs.fixed.contains(&(node, dof)) {
                diags.push(Diagnostic::FixedAndPrescribed { node, dof });
            }
        }
        for force in &self.load.forces {
            if force.node >= n_nodes {
                diags.push(Diagnostic::ForceMissingNode { node: force.node });
            }
            if !force.value.is_finite() {
                diags.push(Diagnostic::NonFinite {
                    place: "force value",
                });
            }
        }
        if !(self.load.gravity[0].is_finite() && self.load.gravity[1].is_finite()) {
            diags.push(Diagnostic::NonFinite {
                place: "gravity vector",
            });
        }

        // Rest tangent must be positive definite once rigid-body modes are
        // constrained; only meaningful if everything above is sound.
        if diags.is_empty() {
            let singular = match DofMap::new(self) {
                Ok(map) => {
                    let mut q = DVector::zeros(self.dof_count());
                    map.apply(&mut q);
                    match crate::corotational::assemble(self, &map, &q, 0.0) {
                        Ok(sys) => sys.tangent.cholesky().is_none(),
                        Err(_) => true,
                    }
                }
                Err(_) => true,
            };
            if singular {
                diags.push(Diagnostic::SingularRestStiffness);
            }
        }

        diags
    }
}

// ---------------------------------------------------------------------------
// Scenario document (the on-disk JSON schema)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: Model,
    pub solver: ContinuationSettings,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementDoc {
    a: usize,
    b: usize,
    material: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixedDoc {
    node: usize,
    dof: DofKind,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrescribedDoc {
    node: usize,
    dof: DofKind,
    value: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BcsDoc {
    #[serde(default)]
    fixed: Vec<FixedDoc>,
    #[serde(default)]
    prescribed: Vec<PrescribedDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadDoc {
    #[serde(default)]
    forces: Vec<PointForce>,
    #[serde(default)]
    gravity: bool,
    #[serde(default = "default_gravity")]
    gravity_vector: [f64; 2],
}

fn default_gravity() -> [f64; 2] {
    STANDARD_GRAVITY
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    nodes: Vec<NodeGeom>,
    elements: Vec<ElementDoc>,
    materials: BTreeMap<String, Material>,
    bcs: BcsDoc,
    load: LoadDoc,
    #[serde(default)]
    solver: ContinuationSettings,
}

/// Parses and fully validates a scenario document. Unknown keys, duplicate
/// ids and any validation diagnostic are rejected.
pub fn load_scenario(json: &str) -> Result<Scenario, ModelError> {
    let doc: ScenarioDoc =
        serde_json::from_str(json).map_err(|e| ModelError::Schema(e.to_string()))?;
    let connectivity = doc
        .elements
        .into_iter()
        .map(|e| ElementDef {
            node_a: e.a,
            node_b: e.b,
            material: e.material,
        })
        .collect();
    let bcs = BoundaryConditions {
        fixed: doc.bcs.fixed.into_iter().map(|f| (f.node, f.dof)).collect(),
        prescribed: doc
            .bcs
            .prescribed
            .into_iter()
            .map(|p| (p.node, p.dof, p.value))
            .collect(),
    };
    let load = LoadCase {
        forces: doc.load.forces,
        gravity_enabled: doc.load.gravity,
        gravity: doc.load.gravity_vector,
    };
    let model = Model::new(doc.nodes, connectivity, doc.materials, bcs, load)?;
    let diags = model.validate();
    if !diags.is_empty() {
        return Err(ModelError::Validation(diags));
    }
    doc.solver
        .check()
        .map_err(|e| ModelError::Schema(e.to_string()))?;
    Ok(Scenario {
        model,
        solver: doc.solver,
    })
}

/// Serializes a scenario to the document format accepted by `load_scenario`.
pub fn scenario_to_json(scenario: &Scenario) -> String {
    let model = &scenario.model;
    let doc = ScenarioDoc {
        nodes: model.nodes.clone(),
        elements: model
            .elements
            .iter()
            .map(|el| ElementDoc {
                a: el.node_a,
                b: el.node_b,
                material: model.materials[el.material].0.clone(),
            })
            .collect(),
        materials: model.materials.iter().cloned().collect(),
        bcs: BcsDoc {
            fixed: model
                .bcs
                .fixed
                .iter()
                .map(|&(node, dof)| FixedDoc { node, dof })
                .collect(),
            prescribed: model
                .bcs
                .prescribed
                .iter()
                .map(|&(node, dof, value)| PrescribedDoc { node, dof, value })
                .collect(),
        },
        load: LoadDoc {
            forces: model.load.forces.clone(),
            gravity: model.load.gravity_enabled,
            gravity_vector: model.load.gravity,
        },
        solver: scenario.solver.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("scenario serialization");
    text.push('\n');
    text
}

// ---------------------------------------------------------------------------
// Dof map: constraint elimination
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum DofState {
    Free(usize),
    Prescribed(f64),
}

/// Maps global dofs to the reduced (free) vector, carrying prescribed values
/// for the eliminated ones.
#[derive(Debug, Clone)]
pub struct DofMap {
    states: Vec<DofState>,
    free_to_global: Vec<usize>,
}

impl DofMap {
    pub fn new(model: &Model) -> Result<DofMap, ModelError> {
        DofMap::with_prescribed(model, &[])
    }

    /// Builds the map from the model's boundary conditions plus extra
    /// prescribed dofs (used for landscape sweeps). Extra entries must not
    /// collide with existing constraints.
    pub fn with_prescribed(model: &Model, extra: &[(usize, f64)]) -> Result<DofMap, ModelError> {
        let ndof = model.dof_count();
        let mut values: Vec<Option<f64>> = vec![None; ndof];
        let mut constrain = |dof: usize, value: f64| -> Result<(), ModelError> {
            if dof >= ndof {
                return Err(ModelError::DofOutOfRange { dof, ndof });
            }
            match values[dof] {
                Some(old) if old != value => Err(ModelError::ConflictingConstraint {
                    node: dof / DOFS_PER_NODE,
                    dof: match dof % DOFS_PER_NODE {
                        0 => DofKind::U,
                        1 => DofKind::W,
                        _ => DofKind::Theta,
                    },
                }),
                _ => {
                    values[dof] = Some(value);
                    Ok(())
                }
            }
        };
        for &(node, dof) in &model.bcs.fixed {
            constrain(dof_index(node, dof), 0.0)?;
        }
        for &(node, dof, value) in &model.bcs.prescribed {
            constrain(dof_index(node, dof), value)?;
        }
        for &(dof, value) in extra {
            if dof >= ndof {
                return Err(ModelError::DofOutOfRange { dof, ndof });
            }
            if values[dof].is_some() {
                return Err(ModelError::NotFree { dof });
            }
            values[dof] = Some(value);
        }

        let mut states = Vec::with_capacity(ndof);
        let mut free_to_global = Vec::new();
        for (dof, value) in values.into_iter().enumerate() {
            match value {
                Some(v) => states.push(DofState::Prescribed(v)),
                None => {
                    states.push(DofState::Free(free_to_global.len()));
                    free_to_global.push(dof);
                }
            }
        }
        Ok(DofMap {
            states,
            free_to_global,
        })
    }

    pub fn dof_count(&self) -> usize {
        self.states.len()
    }

    pub fn free_count(&self) -> usize {
        self.free_to_global.len()
    }

    pub fn free_index(&self, dof: usize) -> Option<usize> {
        match self.states.get(dof) {
            Some(DofState::Free(i)) => Some(*i),
            _ => None,
        }
    }

    pub fn global_of_free(&self, free: usize) -> usize {
        self.free_to_global[free]
    }

    /// Writes the prescribed values into a full-length state vector.
    pub fn apply(&self, q: &mut DVector<f64>) {
        for (dof, state) in self.states.iter().enumerate() {
            if let DofState::Prescribed(v) = state {
                q[dof] = *v;
            }
        }
    }

    /// Extracts the free entries of a full-length vector.
    pub fn reduce(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.free_count(), |i, _| full[self.free_to_global[i]])
    }

    /// Adds a reduced-vector increment into the free entries of `q`.
    pub fn add_free(&self, q: &mut DVector<f64>, delta: &DVector<f64>) {
        for (i, &dof) in self.free_to_global.iter().enumerate() {
            q[dof] += delta[i];
        }
    }
}
