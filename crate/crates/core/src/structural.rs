//! Lumped-parameter tiered tower and its frequency response function.
//!
//! Each tier is a layer of point masses. Springs act identically on every
//! axis of the two nodes they join (optionally scaled per axis), and a spring
//! with no second node ties its node to ground. The system matrix follows
//! `K - j*omega*C + omega^2*M`, and the FRF is `-omega^2 Q H(omega) P`.

use std::collections::HashSet;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, OedError, Result};
use crate::linalg::{numerical_rank, DEFAULT_RANK_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    #[default]
    RealPart,
    ImaginaryPart,
    Magnitude,
    StackedRealImag,
}

impl ExtractionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractionMode::RealPart => "real_part",
            ExtractionMode::ImaginaryPart => "imaginary_part",
            ExtractionMode::Magnitude => "magnitude",
            ExtractionMode::StackedRealImag => "stacked_real_imag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierConfig {
    pub nodes: usize,
    /// Lumped mass of each node in the tier.
    pub mass: f64,
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpringConfig {
    pub i: usize,
    /// Second node; `None` grounds node `i`.
    #[serde(default)]
    pub j: Option<usize>,
    pub stiffness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RayleighConfig {
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
}

fn default_dofs_per_node() -> usize {
    3
}

/// JSON model config. DoF indices are global: `node * dofs_per_node + axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieredTowerConfig {
    #[serde(default = "default_dofs_per_node")]
    pub dofs_per_node: usize,
    pub tiers: Vec<TierConfig>,
    pub springs: Vec<SpringConfig>,
    /// Per-axis multiplier on every spring; length `dofs_per_node`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_scale: Option<Vec<f64>>,
    #[serde(default)]
    pub rayleigh: RayleighConfig,
    /// Observed DoFs; omitted means every DoF is a candidate sensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_dofs: Option<Vec<usize>>,
    pub loaded_dofs: Vec<usize>,
    pub frequency: f64,
    #[serde(default)]
    pub extraction_mode: ExtractionMode,
}

impl TieredTowerConfig {
    pub fn n_nodes(&self) -> usize {
        self.tiers.iter().map(|t| t.nodes).sum()
    }

    /// The demonstration tower: 89 nodes on four levels (267 sensor DoFs),
    /// six loads on the top tier.
    pub fn demo() -> Self {
        const COUNTS: [usize; 4] = [32, 27, 18, 12];
        const MASSES: [f64; 4] = [4.0, 2.0, 1.0, 0.5];
        const RING_K: [f64; 4] = [2.0e3, 8.0e2, 4.0e2, 2.0e3];
        const LINK_K: [f64; 3] = [1.5e2, 6.0e1, 4.0e2];
        const GROUND_K: f64 = 3.0e3;

        let tiers: Vec<TierConfig> = COUNTS
            .iter()
            .zip(MASSES)
            .enumerate()
            .map(|(level, (&nodes, mass))| TierConfig {
                nodes,
                mass,
                level: level as u32,
            })
            .collect();

        let mut offsets = vec![0usize];
        for c in COUNTS {
            offsets.push(offsets.last().unwrap() + c);
        }

        let mut springs = Vec::new();
        for (tier, &n) in COUNTS.iter().enumerate() {
            let base = offsets[tier];
            for k in 0..n {
                springs.push(SpringConfig {
                    i: base + k,
                    j: Some(base + (k + 1) % n),
                    stiffness: RING_K[tier],
                });
            }
            if tier == 0 {
                for k in 0..n {
                    springs.push(SpringConfig {
                        i: base + k,
                        j: None,
                        stiffness: GROUND_K,
                    });
                }
            } else {
                let below = offsets[tier - 1];
                let nb = COUNTS[tier - 1];
                for k in 0..n {
                    let anchor = k * nb / n;
                    for a in [anchor, (anchor + 1) % nb] {
                        springs.push(SpringConfig {
                            i: below + a,
                            j: Some(base + k),
                            stiffness: LINK_K[tier - 1],
                        });
                    }
                }
            }
        }

        let top = offsets[3];
        let loaded_dofs = [top, top + 6]
            .iter()
            .flat_map(|&node| (0..3).map(move |ax| node * 3 + ax))
            .collect();

        TieredTowerConfig {
            dofs_per_node: 3,
            tiers,
            springs,
            axis_scale: Some(vec![1.0, 1.3, 4.0]),
            rayleigh: RayleighConfig::default(),
            observed_dofs: None,
            loaded_dofs,
            frequency: 20.0,
            extraction_mode: ExtractionMode::RealPart,
        }
    }
}

/// Assembled mass/damping/stiffness plus observation and load selectors.
/// Selectors are stored as DoF index lists, one per row of `Q` / column of `P`.
#[derive(Debug, Clone)]
pub struct StructuralModel {
    mass: DMatrix<f64>,
    damping: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    observed_dofs: Vec<usize>,
    loaded_dofs: Vec<usize>,
    dofs_per_node: usize,
    node_level: Vec<u32>,
}

impl StructuralModel {
    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }
    pub fn damping(&self) -> &DMatrix<f64> {
        &self.damping
    }
    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }
    pub fn observed_dofs(&self) -> &[usize] {
        &self.observed_dofs
    }
    pub fn loaded_dofs(&self) -> &[usize] {
        &self.loaded_dofs
    }
    pub fn dofs_per_node(&self) -> usize {
        self.dofs_per_node
    }
    pub fn node_level(&self) -> &[u32] {
        &self.node_level
    }
    pub fn n_dofs(&self) -> usize {
        self.mass.nrows()
    }

    /// Level of the node carrying each observed DoF, in sensor order.
    pub fn sensor_levels(&self) -> Vec<u32> {
        self.observed_dofs
            .iter()
            .map(|&d| self.node_level[d / self.dofs_per_node])
            .collect()
    }

    /// `Q`: `n_obs x N` 0/1 matrix.
    pub fn obs_selector(&self) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.observed_dofs.len(), self.n_dofs());
        for (r, &d) in self.observed_dofs.iter().enumerate() {
            q[(r, d)] = 1.0;
        }
        q
    }

    /// `P`: `N x n_theta` 0/1 matrix.
    pub fn load_selector(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n_dofs(), self.loaded_dofs.len());
        for (c, &d) in self.loaded_dofs.iter().enumerate() {
            p[(d, c)] = 1.0;
        }
        p
    }

    /// Builds a model from explicit matrices (used by tests and the FFI).
    pub fn from_matrices(
        mass: DMatrix<f64>,
        damping: DMatrix<f64>,
        stiffness: DMatrix<f64>,
        observed_dofs: Vec<usize>,
        loaded_dofs: Vec<usize>,
        dofs_per_node: usize,
        node_level: Vec<u32>,
    ) -> Result<Self> {
        let n = mass.nrows();
        for (name, m) in [
            ("mass", &mass),
            ("damping", &damping),
            ("stiffness", &stiffness),
        ] {
            if m.nrows() != n || m.ncols() != n {
                return Err(OedError::InvalidConfig(format!(
                    "{name} matrix must be {n}x{n}"
                )));
            }
            let scale = m.abs().max().max(f64::MIN_POSITIVE);
            if (m - m.transpose()).abs().max() > 1e-12 * scale {
                return Err(OedError::InvalidConfig(format!(
                    "{name} matrix is not symmetric"
                )));
            }
        }
        if dofs_per_node == 0 || !n.is_multiple_of(dofs_per_node) {
            return Err(OedError::InvalidConfig(format!(
                "{n} DoFs is not a multiple of dofs_per_node = {dofs_per_node}"
            )));
        }
        check_len("node_level", n / dofs_per_node, node_level.len())?;
        for (name, m) in [("mass", &mass), ("stiffness", &stiffness)] {
            let min_eig = m.clone().symmetric_eigenvalues().min();
            if !(min_eig > 0.0) {
                return Err(OedError::InvalidConfig(format!(
                    "{name} matrix is not positive definite (smallest eigenvalue {min_eig:e})"
                )));
            }
        }
        let min_damp = damping.clone().symmetric_eigenvalues().min();
        if min_damp < -1e-12 * damping.abs().max() {
            return Err(OedError::InvalidConfig(
                "damping matrix is not positive-semidefinite".into(),
            ));
        }
        validate_dof_list("observed_dofs", &observed_dofs, n)?;
        validate_dof_list("loaded_dofs", &loaded_dofs, n)?;
        Ok(Self {
            mass,
            damping,
            stiffness,
            observed_dofs,
            loaded_dofs,
            dofs_per_node,
            node_level,
        })
    }
}

fn validate_dof_list(name: &str, dofs: &[usize], n: usize) -> Result<()> {
    if dofs.is_empty() {
        return Err(OedError::InvalidConfig(format!("{name} is empty")));
    }
    let mut seen = HashSet::with_capacity(dofs.len());
    for &d in dofs {
        if d >= n {
            return Err(OedError::InvalidConfig(format!(
                "{name}: DoF {d} out of range (N = {n})"
            )));
        }
        if !seen.insert(d) {
            return Err(OedError::InvalidConfig(format!(
                "{name}: duplicate DoF {d}"
            )));
        }
    }
    Ok(())
}

pub fn assemble_tiered_model(config: &TieredTowerConfig) -> Result<StructuralModel> {
    let d = config.dofs_per_node;
    if d == 0 {
        return Err(OedError::InvalidConfig(
            "dofs_per_node must be positive".into(),
        ));
    }
    if config.tiers.is_empty() {
        return Err(OedError::InvalidConfig("no tiers".into()));
    }
    let axis_scale = match &config.axis_scale {
        Some(s) => {
            check_len("axis_scale", d, s.len())?;
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(OedError::InvalidConfig(
                    "axis_scale entries must be positive".into(),
                ));
            }
            s.clone()
        }
        None => vec![1.0; d],
    };
    let RayleighConfig { alpha, beta } = config.rayleigh;
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(OedError::InvalidConfig(
            "Rayleigh coefficients must be >= 0".into(),
        ));
    }
    if !config.frequency.is_finite() || config.frequency < 0.0 {
        return Err(OedError::InvalidConfig(
            "frequency must be finite and >= 0".into(),
        ));
    }

    let n_nodes = config.n_nodes();
    let n = n_nodes * d;
    let mut node_level = Vec::with_capacity(n_nodes);
    let mut mass = DMatrix::zeros(n, n);
    let mut node = 0;
    for (t, tier) in config.tiers.iter().enumerate() {
        if tier.nodes == 0 {
            return Err(OedError::InvalidConfig(format!("tier {t} has no nodes")));
        }
        if !(tier.mass > 0.0) || !tier.mass.is_finite() {
            return Err(OedError::InvalidConfig(format!(
                "tier {t}: mass must be positive, got {}",
                tier.mass
            )));
        }
        for _ in 0..tier.nodes {
            for ax in 0..d {
                mass[(node * d + ax, node * d + ax)] = tier.mass;
            }
            node_level.push(tier.level);
            node += 1;
        }
    }

    let mut stiffness = DMatrix::zeros(n, n);
    for (s, spring) in config.springs.iter().enumerate() {
        if !(spring.stiffness > 0.0) || !spring.stiffness.is_finite() {
            return Err(OedError::InvalidConfig(format!(
                "spring {s}: stiffness must be positive, got {}",
                spring.stiffness
            )));
        }
        let check_node = |id: usize| {
            if id >= n_nodes {
                Err(OedError::InvalidConfig(format!(
                    "spring {s}: node {id} does not exist ({n_nodes} nodes)"
                )))
            } else {
                Ok(())
            }
        };
        check_node(spring.i)?;
        if let Some(j) = spring.j {
            check_node(j)?;
            if j == spring.i {
                return Err(OedError::InvalidConfig(format!(
                    "spring {s} connects node {j} to itself"
                )));
            }
        }
        for (ax, scale) in axis_scale.iter().enumerate() {
            let k = spring.stiffness * scale;
            let a = spring.i * d + ax;
            stiffness[(a, a)] += k;
            if let Some(j) = spring.j {
                let b = j * d + ax;
                stiffness[(b, b)] += k;
                stiffness[(a, b)] -= k;
                stiffness[(b, a)] -= k;
            }
        }
    }

    let damping = &mass * alpha + &stiffness * beta;
    let observed = config
        .observed_dofs
        .clone()
        .unwrap_or_else(|| (0..n).collect());

    StructuralModel::from_matrices(
        mass,
        damping,
        stiffness,
        observed,
        config.loaded_dofs.clone(),
        d,
        node_level,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorLabel {
    pub node: usize,
    pub axis: String,
}

/// Real parameter-to-observable map with its provenance.
#[derive(Debug, Clone)]
pub struct FrfMatrix {
    entries: DMatrix<f64>,
    frequency: f64,
    mode: ExtractionMode,
    labels: Vec<SensorLabel>,
}

impl FrfMatrix {
    /// Wraps an explicit matrix; rejects column-rank deficiency.
    pub fn new(
        entries: DMatrix<f64>,
        frequency: f64,
        mode: ExtractionMode,
        labels: Vec<SensorLabel>,
    ) -> Result<Self> {
        check_len("sensor labels", entries.nrows(), labels.len())?;
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(OedError::InvalidConfig(
                "FRF contains non-finite entries".into(),
            ));
        }
        let p = entries.ncols();
        if p == 0 {
            return Err(OedError::InvalidConfig(
                "FRF has no parameter columns".into(),
            ));
        }
        let rank = numerical_rank(&entries, DEFAULT_RANK_EPS);
        if rank < p {
            return Err(OedError::RankDeficient { rank, required: p });
        }
        Ok(Self {
            entries,
            frequency,
            mode,
            labels,
        })
    }

    /// Plain matrix with one synthetic label per row.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        let labels = (0..entries.nrows())
            .map(|i| SensorLabel {
                node: i,
                axis: "0".into(),
            })
            .collect();
        Self::new(entries, 0.0, ExtractionMode::RealPart, labels)
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
    pub fn frequency(&self) -> f64 {
        self.frequency
    }
    pub fn mode(&self) -> ExtractionMode {
        self.mode
    }
    pub fn labels(&self) -> &[SensorLabel] {
        &self.labels
    }
    pub fn n_sensors(&self) -> usize {
        self.entries.nrows()
    }
    pub fn n_params(&self) -> usize {
        self.entries.ncols()
    }
}

fn axis_name(axis: usize, d: usize) -> String {
    if d == 3 {
        ["x", "y", "z"][axis].to_string()
    } else {
        axis.to_string()
    }
}

/// Complex observed-by-loaded block `-omega^2 Q H(omega) P`, one LU factor
/// reused across all load columns.
pub fn complex_frf(model: &StructuralModel, frequency: f64) -> Result<DMatrix<Complex<f64>>> {
    let n = model.n_dofs();
    let w = frequency;
    let mut system = DMatrix::<Complex<f64>>::zeros(n, n);
    for c in 0..n {
        for r in 0..n {
            system[(r, c)] = Complex::new(
                model.stiffness[(r, c)] + w * w * model.mass[(r, c)],
                -w * model.damping[(r, c)],
            );
        }
    }
    let scale = system.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    let lu = system.lu();
    let min_pivot = lu
        .u()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, z| m.min(z.norm()));
    if !(min_pivot > 1e-13 * scale) {
        return Err(OedError::Resonance { frequency });
    }
    let mut rhs = DMatrix::<Complex<f64>>::zeros(n, model.loaded_dofs.len());
    for (c, &dof) in model.loaded_dofs.iter().enumerate() {
        rhs[(dof, c)] = Complex::new(1.0, 0.0);
    }
    let h_p = lu.solve(&rhs).ok_or(OedError::Resonance { frequency })?;
    let factor = -w * w;
    Ok(DMatrix::from_fn(
        model.observed_dofs.len(),
        model.loaded_dofs.len(),
        |r, c| h_p[(model.observed_dofs[r], c)] * factor,
    ))
}

pub fn compute_frf(
    model: &StructuralModel,
    frequency: f64,
    mode: ExtractionMode,
) -> Result<FrfMatrix> {
    let z = complex_frf(model, frequency)?;
    let d = model.dofs_per_node;
    let base_labels: Vec<SensorLabel> = model
        .observed_dofs
        .iter()
        .map(|&dof| SensorLabel {
            node: dof / d,
            axis: axis_name(dof % d, d),
        })
        .collect();
    let (entries, labels) = match mode {
        ExtractionMode::RealPart => (z.map(|v| v.re), base_labels),
        ExtractionMode::ImaginaryPart => (z.map(|v| v.im), base_labels),
        ExtractionMode::Magnitude => (z.map(|v| v.norm()), base_labels),
        ExtractionMode::StackedRealImag => {
            let rows = z.nrows();
            let entries = DMatrix::from_fn(2 * rows, z.ncols(), |r, c| {
                if r < rows {
                    z[(r, c)].re
                } else {
                    z[(r - rows, c)].im
                }
            });
            let labels = base_labels
                .iter()
                .map(|l| SensorLabel {
                    node: l.node,
                    axis: format!("{}_re", l.axis),
                })
                .chain(base_labels.iter().map(|l| SensorLabel {
                    node: l.node,
                    axis: format!("{}_im", l.axis),
                }))
                .collect();
            (entries, labels)
        }
    };
    FrfMatrix::new(entries, frequency, mode, labels)
}

pub fn predict_response(frf: &FrfMatrix, theta: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("theta", frf.n_params(), theta.len())?;
    Ok(&frf.entries * theta)
}
