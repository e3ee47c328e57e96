//! On-disk artifact formats: the self-describing controller file, the
//! synthesis summary, and the simulation table.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sosgrad::optimize::IterationRecord;
use sosgrad::polyalg::MonomialBasis;
use sosgrad::simulate::{ExpectedCostReport, TrajectoryStatus};
use sosgrad::{Error, Real, Result};

pub const CONTROLLER_FORMAT: &str = "sosgrad-controller-v1";

/// Self-contained description of û(x) = Z(x)·W·z(x): basis exponent
/// lists plus the gain matrix W, with the stability certificate attached
/// when the synthesis mode produced one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerFile {
    pub format: String,
    pub mode: String,
    pub state_dim: usize,
    pub input_dim: usize,
    /// Exponent vectors of z, in basis order.
    pub z_exponents: Vec<Vec<u32>>,
    /// Exponent vectors of Z, in basis order.
    pub z_cap_exponents: Vec<Vec<u32>>,
    /// Gain matrix W (d_Z × d_z), row-major.
    pub w: Vec<Vec<Real>>,
    pub certificate: Option<CertificateRecord>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateRecord {
    /// Lyapunov coefficient matrix P (d_z × d_z), row-major.
    pub p: Vec<Vec<Real>>,
    /// Free Gram coordinates r (d_r × vertices), row-major.
    pub r: Vec<Vec<Real>>,
    pub p_min_eig: Real,
    pub t_min_eigs: Vec<Real>,
    pub eps1: Real,
    pub eps2: Real,
}

fn to_rows(m: &DMatrix<Real>) -> Vec<Vec<Real>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<Real>]) -> Result<DMatrix<Real>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::BadConfig("ragged matrix in artifact".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ControllerFile {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: &str,
        z: &MonomialBasis,
        z_cap: &MonomialBasis,
        input_dim: usize,
        w_matrix: &DMatrix<Real>,
        certificate: Option<CertificateRecord>,
        seed: u64,
    ) -> Self {
        Self {
            format: CONTROLLER_FORMAT.into(),
            mode: mode.into(),
            state_dim: z.nvars(),
            input_dim,
            z_exponents: z.entries().iter().map(|m| m.exponents().to_vec()).collect(),
            z_cap_exponents: z_cap
                .entries()
                .iter()
                .map(|m| m.exponents().to_vec())
                .collect(),
            w: to_rows(w_matrix),
            certificate,
            seed,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingArtifact(format!("controller file {path:?}: {e}")))?;
        let file: Self = serde_json::from_str(&text)?;
        if file.format != CONTROLLER_FORMAT {
            return Err(Error::BadConfig(format!(
                "unsupported controller format {:?}",
                file.format
            )));
        }
        Ok(file)
    }

    fn bases(&self) -> Result<(MonomialBasis, MonomialBasis)> {
        let to_basis = |name: &str, exps: &[Vec<u32>]| {
            MonomialBasis::new(
                name,
                exps.iter().map(|e| sosgrad::polyalg::Monomial::new(e.clone())).collect(),
            )
        };
        Ok((
            to_basis("z", &self.z_exponents)?,
            to_basis("Z", &self.z_cap_exponents)?,
        ))
    }

    /// The controller as a closure for the simulation harness.
    pub fn closure(&self) -> Result<impl Fn(&[Real]) -> DVector<Real> + Send + Sync> {
        if self.input_dim != 1 {
            return Err(Error::BadConfig(
                "controller files carry a single input".into(),
            ));
        }
        let (z, z_cap) = self.bases()?;
        let w = from_rows(&self.w)?;
        if w.nrows() != z_cap.len() || w.ncols() != z.len() {
            return Err(Error::BadConfig(
                "gain matrix shape disagrees with the basis lists".into(),
            ));
        }
        Ok(move |x: &[Real]| {
            let zx = z.eval(x).expect("state dimension fixed by the file");
            let cx = z_cap.eval(x).expect("state dimension fixed by the file");
            DVector::from_vec(vec![(cx.transpose() * &w * zx)[(0, 0)]])
        })
    }
}

/// Synthesis run summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub system: String,
    pub iterations_run: usize,
    pub step_underflow: bool,
    pub early_stop: bool,
    pub final_objective: Real,
    pub final_cost: Real,
    pub final_penalty: Real,
    pub eps1: Real,
    pub eps2: Real,
    /// Every accepted iteration satisfied the decrease inequality.
    pub all_wolfe_ok: bool,
    /// Both positive-definiteness flags held at every iteration.
    pub all_pd_ok: bool,
    pub moment_cache_key: String,
    pub wall_time_s: Real,
}

impl Summary {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

pub fn write_iteration_csv(path: &Path, history: &[IterationRecord]) -> Result<()> {
    let mut text = String::from(IterationRecord::CSV_HEADER);
    text.push('\n');
    for rec in history {
        text.push_str(&rec.to_csv_row());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn status_str(s: TrajectoryStatus) -> &'static str {
    match s {
        TrajectoryStatus::Converged => "converged",
        TrajectoryStatus::Bounded => "bounded",
        TrajectoryStatus::Diverged => "diverged",
    }
}

/// Simulation table (expected cost + per-cell rows). Diverged costs are
/// carried as nulls so the file stays valid JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTable {
    pub controller_mode: String,
    /// Probability-weighted expected cost; null when any cell diverged.
    pub expected_cost: Option<Real>,
    pub diverged: bool,
    pub all_converged: bool,
    pub lyapunov_max_increase: Option<Real>,
    pub cells: Vec<CellRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRow {
    pub theta_index: usize,
    pub x0_index: usize,
    pub prob: Real,
    /// Truncated-horizon cost; null for diverged cells.
    pub cost: Option<Real>,
    pub status: String,
    pub final_norm: Real,
    pub lyapunov_max_increase: Option<Real>,
}

impl SimTable {
    pub fn from_report(mode: &str, report: &ExpectedCostReport, eps_conv: Real) -> Self {
        Self {
            controller_mode: mode.into(),
            expected_cost: report.aggregate.as_finite(),
            diverged: report.any_diverged(),
            all_converged: report.all_converged(eps_conv),
            lyapunov_max_increase: report.lyapunov_max_increase(),
            cells: report
                .cells
                .iter()
                .map(|c| CellRow {
                    theta_index: c.theta_index,
                    x0_index: c.x0_index,
                    prob: c.prob,
                    cost: c.cost.is_finite().then_some(c.cost),
                    status: status_str(c.status).into(),
                    final_norm: c.final_norm,
                    lyapunov_max_increase: c.lyapunov_max_increase,
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn write_cells_csv(&self, path: &Path) -> Result<()> {
        let mut text =
            String::from("theta_index,x0_index,prob,cost,status,final_norm,lyapunov_max_increase\n");
        for c in &self.cells {
            let cost = c.cost.map_or("inf".into(), |v| format!("{v:.9e}"));
            let lyap = c
                .lyapunov_max_increase
                .map_or(String::new(), |v| format!("{v:.3e}"));
            text.push_str(&format!(
                "{},{},{:.6e},{cost},{},{:.6e},{lyap}\n",
                c.theta_index, c.x0_index, c.prob, c.status, c.final_norm
            ));
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}
