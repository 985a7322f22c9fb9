use crate::error::{Error, Result};
use crate::inputs::FitInputs;
use crate::model::ThetaLayout;
use crate::sparse::{SparseSym, SymBuilder};

/// One training cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub unit: usize,
    /// Period index into the panel.
    pub period: usize,
    /// Time code `t` (1 for the earliest panel period).
    pub t: f64,
    pub y: f64,
}

/// Implicit design matrix for `θ = (γ, α, β)`: the row for unit `i` at time
/// `t` is `(z_i, e_i, t e_i)`. Only `XᵀX` and `Xᵀy` are stored.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    layout: ThetaLayout,
    z: Vec<Vec<f64>>,
    obs: Vec<Observation>,
    xtx: SparseSym,
    xty: Vec<f64>,
    /// Per-unit offset subtracted from `y` before fitting.
    offset: Vec<f64>,
}

impl DesignMatrix {
    /// Design over the training periods of `inputs`.
    pub fn new(inputs: &FitInputs, train: &[usize]) -> Result<Self> {
        let z = inputs.covariates.rows().to_vec();
        Self::with_offset(inputs, train, z, None)
    }

    /// Design with covariates removed and `offset[i]` subtracted from every
    /// response of unit `i`.
    pub fn without_covariates(inputs: &FitInputs, train: &[usize], offset: Vec<f64>) -> Result<Self> {
        let n = inputs.n_units();
        Self::with_offset(inputs, train, vec![Vec::new(); n], Some(offset))
    }

    fn with_offset(inputs: &FitInputs, train: &[usize], z: Vec<Vec<f64>>, offset: Option<Vec<f64>>) -> Result<Self> {
        let panel = &inputs.panel;
        let n = panel.n_units();
        if z.len() != n {
            return Err(Error::Dimension(format!("{} covariate rows for {n} units", z.len())));
        }
        let offset = offset.unwrap_or_else(|| vec![0.0; n]);
        if offset.len() != n {
            return Err(Error::Dimension("offset length differs from unit count".into()));
        }
        let mut obs = Vec::with_capacity(n * train.len());
        for i in 0..n {
            for &k in train {
                if k >= panel.n_periods() {
                    return Err(Error::Dimension(format!("period index {k} out of range")));
                }
                obs.push(Observation {
                    unit: i,
                    period: k,
                    t: panel.t_code(k),
                    y: panel.response(i, k) - offset[i],
                });
            }
        }
        Self::from_observations(z, obs, offset)
    }

    /// Builds the design from explicit observations.
    pub fn from_observations(z: Vec<Vec<f64>>, obs: Vec<Observation>, offset: Vec<f64>) -> Result<Self> {
        let n = z.len();
        let d = z.first().map_or(0, Vec::len);
        if z.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("ragged covariate rows".into()));
        }
        if let Some(o) = obs.iter().find(|o| o.unit >= n) {
            return Err(Error::Dimension(format!("observation for unit {} of {n}", o.unit)));
        }
        let layout = ThetaLayout { d, n };
        let mut b = SymBuilder::new(layout.dim());
        // per-unit sums: count, Σt, Σt²
        let mut s0 = vec![0.0; n];
        let mut s1 = vec![0.0; n];
        let mut s2 = vec![0.0; n];
        for o in &obs {
            s0[o.unit] += 1.0;
            s1[o.unit] += o.t;
            s2[o.unit] += o.t * o.t;
        }
        for i in 0..n {
            let (a, bb) = (layout.alpha(i), layout.beta(i));
            b.add(a, a, s0[i]);
            b.add(bb, a, s1[i]);
            b.add(bb, bb, s2[i]);
            let zi = &z[i];
            for j in 0..d {
                b.add(a, j, s0[i] * zi[j]);
                b.add(bb, j, s1[i] * zi[j]);
                for k in 0..=j {
                    b.add(j, k, s0[i] * zi[j] * zi[k]);
                }
            }
        }
        let xtx = b.build();
        let mut dm = DesignMatrix {
            layout,
            z,
            obs,
            xtx,
            xty: Vec::new(),
            offset,
        };
        dm.refresh_xty();
        Ok(dm)
    }

    fn refresh_xty(&mut self) {
        let l = self.layout;
        let mut xty = vec![0.0; l.dim()];
        for o in &self.obs {
            for (j, &zj) in self.z[o.unit].iter().enumerate() {
                xty[j] += zj * o.y;
            }
            xty[l.alpha(o.unit)] += o.y;
            xty[l.beta(o.unit)] += o.t * o.y;
        }
        self.xty = xty;
    }

    pub fn layout(&self) -> ThetaLayout {
        self.layout
    }

    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn xtx(&self) -> &SparseSym {
        &self.xtx
    }

    pub fn xty(&self) -> &[f64] {
        &self.xty
    }

    /// Row `k` of `X` as a dense vector. Tests and small problems only.
    pub fn row(&self, k: usize) -> Vec<f64> {
        let o = &self.obs[k];
        let l = self.layout;
        let mut r = vec![0.0; l.dim()];
        r[..l.d].copy_from_slice(&self.z[o.unit]);
        r[l.alpha(o.unit)] = 1.0;
        r[l.beta(o.unit)] = o.t;
        r
    }

    /// `x_kᵀ θ = z_iᵀγ + α_i + β_i t`.
    pub fn row_dot(&self, k: usize, theta: &[f64]) -> f64 {
        let o = &self.obs[k];
        let l = self.layout;
        let zg: f64 = self.z[o.unit].iter().zip(&theta[..l.d]).map(|(a, b)| a * b).sum();
        zg + theta[l.alpha(o.unit)] + theta[l.beta(o.unit)] * o.t
    }

    /// `Xθ` for every observation.
    pub fn fitted(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.obs.len()).map(|k| self.row_dot(k, theta)).collect()
    }

    pub fn residual_ss(&self, theta: &[f64]) -> f64 {
        (0..self.obs.len())
            .map(|k| {
                let r = self.obs[k].y - self.row_dot(k, theta);
                r * r
            })
            .sum()
    }

    pub fn response(&self) -> Vec<f64> {
        self.obs.iter().map(|o| o.y).collect()
    }

    /// Replaces the (offset-adjusted) responses, keeping the design.
    pub fn set_response(&mut self, y: &[f64]) -> Result<()> {
        if y.len() != self.obs.len() {
            return Err(Error::Dimension(format!(
                "{} responses for {} observations",
                y.len(),
                self.obs.len()
            )));
        }
        for (o, &v) in self.obs.iter_mut().zip(y) {
            o.y = v;
        }
        self.refresh_xty();
        Ok(())
    }
}
