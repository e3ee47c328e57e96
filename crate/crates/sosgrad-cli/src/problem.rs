//! Problem assembly: the built-in benchmark or a plant loaded from a
//! config file, with the cost model, SOS bases, and fit measure derived
//! from command-line parameters.

use std::path::Path;

use sosgrad::costfit::{CostModel, WeightMeasure};
use sosgrad::polyalg::{Monomial, MonomialBasis, PolyMatrix};
use sosgrad::soscert::SosBases;
use sosgrad::sysmodel::{PolytopicSystem, SystemConfig};
use sosgrad::{benchmark, Error, Poly, Real, Result};

/// Everything the synthesis and simulation pipelines need about one plant.
pub struct Problem {
    pub sys: PolytopicSystem,
    pub bases: SosBases,
    pub model: CostModel,
    pub measure: WeightMeasure,
    /// Controller structure basis Z as monomials (also embedded in the
    /// cost model and SOS bases).
    pub z_cap: MonomialBasis,
}

/// Parameters shaping the derived cost model and bases for plants loaded
/// from a config file (the built-in benchmark carries its own values).
#[derive(Debug, Clone, clap::Args)]
pub struct ProblemArgs {
    /// Plant source: `benchmark` or a path to a system config JSON.
    #[arg(long, default_value = "benchmark")]
    pub system: String,
    /// Highest degree of the value features φ.
    #[arg(long, default_value_t = 6)]
    pub phi_degree: u32,
    /// Highest degree of the SOS multiplier basis ζ.
    #[arg(long, default_value_t = 1)]
    pub zeta_degree: u32,
    /// Highest degree of the controller structure basis Z.
    #[arg(long, default_value_t = 2)]
    pub z_cap_degree: u32,
    /// Constant input weight R of the quadratic running cost.
    #[arg(long, default_value_t = 10.0)]
    pub r_weight: Real,
    /// Lower corner of the fit grid (all coordinates).
    #[arg(long, default_value_t = -3.0)]
    pub grid_lo: Real,
    /// Upper corner of the fit grid (all coordinates).
    #[arg(long, default_value_t = 3.0)]
    pub grid_hi: Real,
    /// Fit grid spacing.
    #[arg(long, default_value_t = 0.1)]
    pub grid_step: Real,
}

impl ProblemArgs {
    pub fn build(&self) -> Result<Problem> {
        if self.system == "benchmark" {
            return Ok(Problem {
                sys: benchmark::system(),
                bases: benchmark::sos_bases(),
                model: benchmark::cost_model(),
                measure: WeightMeasure::box_grid(self.grid_lo, self.grid_hi, self.grid_step, 2)?,
                z_cap: benchmark::z_cap_basis(),
            });
        }
        let text = std::fs::read_to_string(Path::new(&self.system)).map_err(|e| {
            Error::BadConfig(format!("cannot read system config {}: {e}", self.system))
        })?;
        let cfg: SystemConfig = serde_json::from_str(&text)?;
        let sys = cfg.build()?;
        if sys.input_dim() != 1 {
            return Err(Error::BadConfig(
                "config-file plants are limited to a single input; use the library API for multi-input synthesis".into(),
            ));
        }
        let n = sys.state_dim();
        let z = sys.z_basis().clone();
        let zeta = MonomialBasis::all_monomials("zeta", n, 0, self.zeta_degree)?;
        let z_cap = MonomialBasis::all_monomials("Z", n, 0, self.z_cap_degree)?;
        let phi = MonomialBasis::all_monomials("phi", n, 1, self.phi_degree)?;
        // q(x) = xᵀx.
        let mut q = Poly::zero(n);
        for i in 0..n {
            let mut e = vec![0u32; n];
            e[i] = 2;
            q.add_term(Monomial::new(e), 1.0);
        }
        let model = CostModel::single_input(q, self.r_weight, phi, z.clone(), &z_cap, 0.0)?;
        let bases = SosBases::new(z, zeta, PolyMatrix::row_from_basis(&z_cap))?;
        let measure = WeightMeasure::box_grid(self.grid_lo, self.grid_hi, self.grid_step, n)?;
        Ok(Problem {
            sys,
            bases,
            model,
            measure,
            z_cap,
        })
    }
}
