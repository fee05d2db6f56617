//! Condensed linear MPC and the linearized cart-pole.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{instance_rng, label_instance, LabeledQp, RejectionReport};
use crate::error::{Error, Result};
use crate::linalg::cholesky_upper;
use crate::qp::{matrix_to_rows, rows_to_matrix, QuadraticProgram};
use crate::solver::SolverOptions;

/// `lo ≤ z·z_k + u·u_k ≤ hi`, imposed at every step of the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcSpec {
    #[serde(rename = "Np")]
    pub np: usize,
    #[serde(rename = "Nc")]
    pub nc: usize,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "R_r")]
    pub r_rate: Vec<Vec<f64>>,
    pub constraints: Vec<BoundRow>,
    /// Sampling interval per state entry for `ẑ`.
    pub state_range: Vec<[f64; 2]>,
    /// Sampling interval per output entry for `r`.
    pub reference_range: Vec<[f64; 2]>,
    #[serde(default)]
    pub seed: u64,
}

/// Dense model matrices of an [`MpcSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct MpcMatrices {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub r_rate: DMatrix<f64>,
    pub az: DMatrix<f64>,
    pub au: DMatrix<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl MpcMatrices {
    pub fn nz(&self) -> usize {
        self.f.nrows()
    }

    pub fn nu(&self) -> usize {
        self.g.ncols()
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }
}

fn square(rows: &[Vec<f64>], k: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != k {
        return Err(Error::field(name, format!("{} rows, expected {k}", rows.len())));
    }
    rows_to_matrix(rows, k, name)
}

fn symmetric_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::field(name, "must be symmetric"));
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-12 * (1.0 + m.amax()) {
        return Err(Error::field(name, "must be positive semidefinite"));
    }
    Ok(())
}

impl MpcSpec {
    /// Checks shapes and definiteness, then converts to dense matrices.
    pub fn matrices(&self) -> Result<MpcMatrices> {
        if self.nc == 0 || self.nc > self.np {
            return Err(Error::field("Nc", format!("must satisfy 1 ≤ Nc ≤ Np = {}", self.np)));
        }
        let nz = self.f.len();
        if nz == 0 {
            return Err(Error::field("F", "empty state matrix"));
        }
        let f = square(&self.f, nz, "F")?;
        if self.g.len() != nz {
            return Err(Error::field("G", format!("{} rows, expected {nz}", self.g.len())));
        }
        let nu = self.g[0].len();
        if nu == 0 {
            return Err(Error::field("G", "no input columns"));
        }
        let g = rows_to_matrix(&self.g, nu, "G")?;
        let ny = self.c.len();
        if ny == 0 {
            return Err(Error::field("C", "no output rows"));
        }
        let c = rows_to_matrix(&self.c, nz, "C")?;
        let q = square(&self.q, ny, "Q")?;
        let r = square(&self.r, nu, "R")?;
        let r_rate = square(&self.r_rate, nu, "R_r")?;
        symmetric_psd(&q, "Q")?;
        symmetric_psd(&r, "R")?;
        symmetric_psd(&r_rate, "R_r")?;
        let nb = self.constraints.len();
        let mut az = DMatrix::zeros(nb, nz);
        let mut au = DMatrix::zeros(nb, nu);
        let mut lo = DVector::zeros(nb);
        let mut hi = DVector::zeros(nb);
        for (i, row) in self.constraints.iter().enumerate() {
            if row.z.len() != nz || row.u.len() != nu {
                return Err(Error::field(
                    format!("constraints[{i}]"),
                    format!("needs {nz} state and {nu} input coefficients"),
                ));
            }
            if !(row.lo <= row.hi) || !row.lo.is_finite() || !row.hi.is_finite() {
                return Err(Error::field(format!("constraints[{i}]"), "bounds must be finite with lo ≤ hi"));
            }
            az.row_mut(i).copy_from_slice(&row.z);
            au.row_mut(i).copy_from_slice(&row.u);
            lo[i] = row.lo;
            hi[i] = row.hi;
        }
        check_ranges(&self.state_range, nz, "state_range")?;
        check_ranges(&self.reference_range, ny, "reference_range")?;
        Ok(MpcMatrices { f, g, c, q, r, r_rate, az, au, lo, hi })
    }

    /// Draws `η = (ẑ, r)` uniformly from the sampling box.
    pub fn sample_parameter(&self, rng: &mut impl Rng) -> DVector<f64> {
        let ranges = self.state_range.iter().chain(&self.reference_range);
        DVector::from_iterator(
            self.state_range.len() + self.reference_range.len(),
            ranges.map(|&[lo, hi]| if lo == hi { lo } else { rng.random_range(lo..hi) }),
        )
    }
}

fn check_ranges(ranges: &[[f64; 2]], len: usize, name: &str) -> Result<()> {
    if ranges.len() != len {
        return Err(Error::field(name, format!("{} entries, expected {len}", ranges.len())));
    }
    if ranges.iter().any(|&[lo, hi]| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::field(name, "each interval needs finite lo ≤ hi"));
    }
    Ok(())
}

/// Where a condensed constraint row comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowOrigin {
    pub bound: usize,
    pub step: usize,
    pub upper: bool,
}

/// Condensed problem in `U = (u₀, …, u_{Nc−1})` with `f = F_η η` and `b = b̂ + B η`,
/// `η = (ẑ, r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CondensedMpc {
    pub h: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub f_mat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub b_mat: DMatrix<f64>,
    pub rows: Vec<RowOrigin>,
    pub nz: usize,
}

impl CondensedMpc {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.f_mat.ncols()
    }

    pub fn instantiate(&self, eta: &DVector<f64>) -> Result<QuadraticProgram> {
        if eta.len() != self.p() {
            return Err(Error::Dimension(format!(
                "eta has length {}, expected {}",
                eta.len(),
                self.p()
            )));
        }
        QuadraticProgram::new(
            self.h.clone(),
            &self.f_mat * eta,
            self.a.clone(),
            &self.b_hat + &self.b_mat * eta,
        )
    }
}

/// Selector of the input applied at step `k`: `u_k = u_{min(k, Nc−1)}`.
fn input_selector(k: usize, nc: usize, nu: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(nu, nc * nu);
    let blk = k.min(nc - 1);
    for i in 0..nu {
        s[(i, blk * nu + i)] = 1.0;
    }
    s
}

/// Eliminates the states: `z_k = Φ_k ẑ + Γ_k U` with the input held after `Nc − 1`.
/// Rows whose value cannot depend on `U` (state-only rows at `k = 0`) and rows repeating an
/// earlier one (input-only rows at `k ≥ Nc`) are left out; the rest are stacked by step, then
/// by bound, upper side first.
pub fn condense_mpc(spec: &MpcSpec) -> Result<CondensedMpc> {
    let mm = spec.matrices()?;
    let (nz, nu, ny) = (mm.nz(), mm.nu(), mm.ny());
    let (np, nc) = (spec.np, spec.nc);
    let n = nc * nu;
    let p = nz + ny;
    let cqc = mm.c.transpose() * &mm.q * &mm.c;
    let cq = mm.c.transpose() * &mm.q;

    let mut h = DMatrix::zeros(n, n);
    let mut f_mat = DMatrix::zeros(n, p);
    let mut a_rows: Vec<DVector<f64>> = Vec::new();
    let mut b_hat = Vec::new();
    let mut b_rows: Vec<DVector<f64>> = Vec::new();
    let mut rows = Vec::new();

    let mut phi = DMatrix::identity(nz, nz);
    let mut gamma = DMatrix::zeros(nz, n);
    let mut prev_sel = DMatrix::zeros(nu, n);
    for k in 0..np {
        let sel = input_selector(k, nc, nu);
        h += gamma.transpose() * &cqc * &gamma;
        h += sel.transpose() * &mm.r * &sel;
        if k < nc {
            let delta = &sel - &prev_sel;
            h += delta.transpose() * &mm.r_rate * &delta;
        }
        let gt = gamma.transpose();
        let mut fz = f_mat.columns_mut(0, nz);
        fz += &gt * &cqc * &phi;
        let mut fr = f_mat.columns_mut(nz, ny);
        fr -= &gt * &cq;

        for bound in 0..mm.az.nrows() {
            let az = mm.az.row(bound);
            let au = mm.au.row(bound);
            let has_z = az.iter().any(|&x| x != 0.0);
            let has_u = au.iter().any(|&x| x != 0.0);
            if (k == 0 && !has_u) || (k >= nc && !has_z) || (!has_z && !has_u) {
                continue;
            }
            let coeff = (az * &gamma + au * &sel).transpose();
            let mut eta_row = DVector::zeros(p);
            eta_row.rows_mut(0, nz).copy_from(&(-(az * &phi)).transpose());
            for upper in [true, false] {
                let s = if upper { 1.0 } else { -1.0 };
                a_rows.push(&coeff * s);
                b_hat.push(if upper { mm.hi[bound] } else { -mm.lo[bound] });
                b_rows.push(&eta_row * s);
                rows.push(RowOrigin { bound, step: k, upper });
            }
        }

        gamma = &mm.f * &gamma + &mm.g * &sel;
        phi = &mm.f * &phi;
        prev_sel = sel;
    }
    // Symmetrize against rounding before the definiteness check.
    let h = (&h + h.transpose()) * 0.5;
    cholesky_upper(&h)?;
    let m = a_rows.len();
    let a = DMatrix::from_fn(m, n, |i, j| a_rows[i][j]);
    let b_mat = DMatrix::from_fn(m, p, |i, j| b_rows[i][j]);
    Ok(CondensedMpc {
        h,
        a,
        f_mat,
        b_hat: DVector::from_vec(b_hat),
        b_mat,
        rows,
        nz,
    })
}

/// The horizon objective of the original problem for an input sequence `U`, by simulation.
pub fn horizon_cost(
    mm: &MpcMatrices,
    np: usize,
    nc: usize,
    z0: &DVector<f64>,
    reference: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let nu = mm.nu();
    let mut z = z0.clone();
    let mut prev = DVector::zeros(nu);
    let mut cost = 0.0;
    for k in 0..np {
        let uk = u.rows(k.min(nc - 1) * nu, nu).clone_owned();
        let e = &mm.c * &z - reference;
        let du = &uk - &prev;
        cost += 0.5 * e.dot(&(&mm.q * &e)) + 0.5 * uk.dot(&(&mm.r * &uk));
        if k < nc {
            cost += 0.5 * du.dot(&(&mm.r_rate * &du));
        }
        z = &mm.f * &z + &mm.g * &uk;
        prev = uk;
    }
    cost
}

/// Physical constants of the cart-pole; the pole is a point mass at distance `pole_length`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub sample_time: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.81,
            sample_time: 0.01,
        }
    }
}

/// Zero-order-hold discretization of `ż = A z + B u` via the exponential of `[[A, B], [0, 0]]·h`.
pub fn zero_order_hold(a: &DMatrix<f64>, b: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nz, nu) = (a.nrows(), b.ncols());
    let mut aug = DMatrix::zeros(nz + nu, nz + nu);
    aug.view_mut((0, 0), (nz, nz)).copy_from(&(a * h));
    aug.view_mut((0, nz), (nz, nu)).copy_from(&(b * h));
    let e = aug.exp();
    (
        e.view((0, 0), (nz, nz)).clone_owned(),
        e.view((0, nz), (nz, nu)).clone_owned(),
    )
}

/// Cart-pole linearized about the upright position, state `(p, ṗ, φ, φ̇)`, input cart force.
pub fn pendulum_model(params: &PendulumParams) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let PendulumParams { cart_mass: mc, pole_mass: mp, pole_length: l, gravity: g, sample_time: h } =
        *params;
    for (name, v) in [("cart_mass", mc), ("pole_mass", mp), ("pole_length", l), ("sample_time", h)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::field(name, "must be positive"));
        }
    }
    if !(g >= 0.0) {
        return Err(Error::field("gravity", "must be non-negative"));
    }
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, -mp * g / mc, 0.0,
        0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, (mc + mp) * g / (mc * l), 0.0,
    ]);
    let b = DMatrix::from_column_slice(4, 1, &[0.0, 1.0 / mc, 0.0, -1.0 / (mc * l)]);
    Ok(zero_order_hold(&a, &b, h))
}

/// Pendulum settings that are turned into a full [`MpcSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumSpec {
    #[serde(rename = "Np")]
    pub np: usize,
    #[serde(rename = "Nc")]
    pub nc: usize,
    pub physical: PendulumParams,
    /// Weights on the outputs `(p, φ)`.
    pub output_weights: [f64; 2],
    pub input_weight: f64,
    pub rate_weight: f64,
    pub input_bound: f64,
    pub position_bound: f64,
    pub angle_bound: f64,
    /// Fraction of the position and angle bounds used when sampling `ẑ` and the position reference.
    pub sample_scale: f64,
    /// Half-widths for sampling the two velocities.
    pub velocity_range: [f64; 2],
    pub seed: u64,
}

impl Default for PendulumSpec {
    fn default() -> Self {
        PendulumSpec {
            np: 50,
            nc: 5,
            physical: PendulumParams::default(),
            output_weights: [1.0, 1.0],
            input_weight: 0.1,
            rate_weight: 0.1,
            input_bound: 1.0,
            position_bound: 10.0,
            angle_bound: std::f64::consts::FRAC_PI_4,
            sample_scale: 0.8,
            velocity_range: [0.5, 0.5],
            seed: 0,
        }
    }
}

impl PendulumSpec {
    pub fn to_mpc(&self) -> Result<MpcSpec> {
        let (f, g) = pendulum_model(&self.physical)?;
        let [wp, wa] = self.output_weights;
        let unit = |i: usize| -> Vec<f64> { (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect() };
        let (sp, sa) = (self.sample_scale * self.position_bound, self.sample_scale * self.angle_bound);
        let [vp, va] = self.velocity_range;
        Ok(MpcSpec {
            np: self.np,
            nc: self.nc,
            f: matrix_to_rows(&f),
            g: matrix_to_rows(&g),
            c: vec![unit(0), unit(2)],
            q: vec![vec![wp, 0.0], vec![0.0, wa]],
            r: vec![vec![self.input_weight]],
            r_rate: vec![vec![self.rate_weight]],
            constraints: vec![
                BoundRow { z: unit(0), u: vec![0.0], lo: -self.position_bound, hi: self.position_bound },
                BoundRow { z: unit(2), u: vec![0.0], lo: -self.angle_bound, hi: self.angle_bound },
                BoundRow { z: vec![0.0; 4], u: vec![1.0], lo: -self.input_bound, hi: self.input_bound },
            ],
            state_range: vec![[-sp, sp], [-vp, vp], [-sa, sa], [-va, va]],
            reference_range: vec![[-sp, sp], [0.0, 0.0]],
            seed: self.seed,
        })
    }
}

/// A spec file holds either the full matrices or the pendulum shorthand under `"pendulum"`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum MpcSpecFile {
    Pendulum { pendulum: PendulumSpec },
    Full(MpcSpec),
}

// Chosen by the `pendulum` key so that errors come from the intended form.
impl<'de> Deserialize<'de> for MpcSpecFile {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut value = serde_json::Value::deserialize(de)?;
        match value.as_object_mut().and_then(|o| o.remove("pendulum")) {
            Some(inner) => {
                if !value.as_object().is_some_and(|o| o.is_empty()) {
                    return Err(D::Error::custom("`pendulum` must be the only key"));
                }
                let pendulum = PendulumSpec::deserialize(inner).map_err(D::Error::custom)?;
                Ok(MpcSpecFile::Pendulum { pendulum })
            }
            None => MpcSpec::deserialize(value).map(MpcSpecFile::Full).map_err(D::Error::custom),
        }
    }
}

impl MpcSpecFile {
    pub fn resolve(&self) -> Result<MpcSpec> {
        match self {
            MpcSpecFile::Pendulum { pendulum } => pendulum.to_mpc(),
            MpcSpecFile::Full(spec) => Ok(spec.clone()),
        }
    }
}

/// Samples parameters until `count` instances solve to optimality. Candidate `i` uses
/// [`instance_rng`]`(seed, i)`; infeasible candidates are reported and skipped. Gives up after
/// `max_attempts` candidates.
pub fn mpc_dataset(
    spec: &MpcSpec,
    count: usize,
    max_attempts: usize,
) -> Result<(Vec<LabeledQp>, RejectionReport)> {
    let cond = condense_mpc(spec)?;
    let opts = SolverOptions::default();
    let mut data = Vec::with_capacity(count);
    let mut report = RejectionReport::default();
    let mut i = 0;
    while data.len() < count {
        if i >= max_attempts {
            return Err(Error::field(
                "count",
                format!(
                    "only {} of {count} feasible instances after {max_attempts} draws",
                    data.len()
                ),
            ));
        }
        let mut rng = instance_rng(spec.seed, i);
        let eta = spec.sample_parameter(&mut rng);
        let qp = cond.instantiate(&eta)?;
        match label_instance(&qp, &opts) {
            Ok(active_set) => data.push(LabeledQp { qp, active_set }),
            Err(reason) => report.rejected.push((i, reason)),
        }
        i += 1;
    }
    Ok((data, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::solve_cold;

    fn scalar_spec(np: usize, nc: usize) -> MpcSpec {
        MpcSpec {
            np,
            nc,
            f: vec![vec![1.0]],
            g: vec![vec![1.0]],
            c: vec![vec![1.0]],
            q: vec![vec![1.0]],
            r: vec![vec![1.0]],
            r_rate: vec![vec![0.0]],
            constraints: vec![BoundRow { z: vec![0.0], u: vec![1.0], lo: -1.0, hi: 1.0 }],
            state_range: vec![[-1.0, 1.0]],
            reference_range: vec![[0.0, 0.0]],
            seed: 0,
        }
    }

    #[test]
    fn zoh_of_double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let h = 0.1;
        let (f, g) = zero_order_hold(&a, &b, h);
        assert!((f - DMatrix::from_row_slice(2, 2, &[1.0, h, 0.0, 1.0])).amax() < 1e-14);
        assert!((g - DMatrix::from_column_slice(2, 1, &[h * h / 2.0, h])).amax() < 1e-14);
    }

    #[test]
    fn one_step_by_hand() {
        let mut spec = scalar_spec(2, 1);
        spec.constraints[0].z = vec![1.0];
        let cond = condense_mpc(&spec).unwrap();
        // z₁ = ẑ + u₀: cost ½(ẑ−r)² + ½(ẑ+u−r)² + ½u² + ½u², so H = 3, f = ẑ − r.
        assert!((cond.h[(0, 0)] - 3.0).abs() < 1e-15);
        let qp = cond.instantiate(&DVector::from_vec(vec![0.6, 0.1])).unwrap();
        assert!((qp.f[0] - 0.5).abs() < 1e-15);
        // Rows: k = 0 (ẑ + u₀), then k = 1 (z₁ + u₀ = ẑ + 2u₀).
        assert_eq!(cond.m(), 4);
        assert_eq!(qp.a.column(0).as_slice(), &[1.0, -1.0, 2.0, -2.0]);
        assert!((&qp.b - DVector::from_vec(vec![0.4, 1.6, 0.4, 1.6])).amax() < 1e-15);
        let sol = solve_cold(&qp.to_dual().unwrap(), &SolverOptions::default()).unwrap();
        assert!((sol.x[0] + 0.5 / 3.0).abs() < 1e-12);
        let mm = spec.matrices().unwrap();
        let direct = horizon_cost(&mm, 2, 1, &DVector::from_vec(vec![0.6]), &DVector::from_vec(vec![0.1]), &sol.x);
        let u = sol.x[0];
        let by_hand = 0.5 * 0.25 + 0.5 * (0.5 + u).powi(2) + u * u;
        assert!((direct - by_hand).abs() < 1e-15);
    }

    #[test]
    fn pendulum_dimensions() {
        let spec = PendulumSpec::default().to_mpc().unwrap();
        let cond = condense_mpc(&spec).unwrap();
        assert_eq!(cond.n(), 5);
        assert_eq!(cond.m(), 4 * 49 + 2 * 5);
        assert_eq!(cond.p(), 6);
        let long = PendulumSpec { nc: 50, ..PendulumSpec::default() }.to_mpc().unwrap();
        assert_eq!(condense_mpc(&long).unwrap().m(), 296);
        let mm = spec.matrices().unwrap();
        assert_eq!((mm.nz(), mm.nu()), (4, 1));
        assert_eq!(mm.hi.as_slice(), &[10.0, std::f64::consts::FRAC_PI_4, 1.0]);
    }

    #[test]
    fn condensed_objective_matches_simulation() {
        let spec = PendulumSpec { np: 6, nc: 3, ..PendulumSpec::default() }.to_mpc().unwrap();
        let mm = spec.matrices().unwrap();
        let cond = condense_mpc(&spec).unwrap();
        let eta = DVector::from_vec(vec![0.5, -0.1, 0.05, 0.2, 1.0, 0.0]);
        let qp = cond.instantiate(&eta).unwrap();
        let z0 = eta.rows(0, 4).clone_owned();
        let r = eta.rows(4, 2).clone_owned();
        let base = horizon_cost(&mm, 6, 3, &z0, &r, &DVector::zeros(3));
        for u in [[0.3, -0.2, 0.1], [1.0, 0.5, -0.7]] {
            let u = DVector::from_row_slice(&u);
            let direct = horizon_cost(&mm, 6, 3, &z0, &r, &u);
            assert!((direct - base - qp.objective(&u)).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_file_forms() {
        let short: MpcSpecFile = serde_json::from_str(r#"{"pendulum": {"Np": 10, "Nc": 2}}"#).unwrap();
        let spec = short.resolve().unwrap();
        assert_eq!((spec.np, spec.nc), (10, 2));
        let full: MpcSpecFile = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(full.resolve().unwrap(), spec);
        let typo = serde_json::from_str::<MpcSpecFile>(r#"{"pendulum": {"np": 10}}"#).unwrap_err();
        assert!(typo.to_string().contains("np"), "{typo}");
        let mut bad = spec.clone();
        bad.nc = 11;
        assert!(condense_mpc(&bad).is_err());
        bad.nc = 2;
        bad.q = vec![vec![-1.0, 0.0], vec![0.0, 1.0]];
        assert!(bad.matrices().is_err());
    }

    #[test]
    fn dataset_is_deterministic() {
        let spec = PendulumSpec { np: 10, nc: 3, seed: 4, ..PendulumSpec::default() }.to_mpc().unwrap();
        let (a, ra) = mpc_dataset(&spec, 5, 500).unwrap();
        let (b, rb) = mpc_dataset(&spec, 5, 500).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn ill_conditioned_pendulum_labels_satisfy_kkt() {
        let spec = PendulumSpec::default().to_mpc().unwrap();
        let (data, _) = mpc_dataset(&spec, 30, 2000).unwrap();
        for item in &data {
            let qp = &item.qp;
            assert!(item.active_set.len() <= qp.n());
            let sol = solve_cold(&qp.to_dual().unwrap(), &SolverOptions::default()).unwrap();
            let scale = 1.0 + qp.b.amax();
            assert!(qp.residual(&sol.x).max() <= 1e-6 * scale);
            assert!(sol.lambda.min() >= -1e-8);
            let grad = &qp.h * &sol.x + &qp.f + qp.a.transpose() * &sol.lambda;
            assert!(grad.amax() <= 1e-6 * (1.0 + qp.f.amax()), "stationarity {}", grad.amax());
        }
    }
}
