//! Belief representations and the flat coordinate chart used by the solver.
//!
//! A [`Layout`] fixes how a belief is laid out in a flat vector: the mean
//! entries first, then the covariance parameters, and for constrained
//! beliefs the same block again for the surface component followed by the
//! mixture weight.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{check_dims, max_abs, project_psd, symmetrize};

/// Flat belief coordinates as seen by the trajectory optimizer.
pub type BeliefVector = DVector<f64>;

/// Gaussian belief `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dims("covariance rows", mean.len(), cov.nrows())?;
        check_dims("covariance columns", mean.len(), cov.ncols())?;
        Ok(Self { mean, cov })
    }

    pub fn point(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: DMatrix::zeros(n, n),
        }
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: DMatrix::identity(n, n) * variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Checks symmetry (`1e-10 · (1 + max|Σ|)`) and positive semidefiniteness
    /// (smallest eigenvalue `≥ −1e-8 · trace/n`).
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if !self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gaussian belief"));
        }
        let scale = 1.0 + max_abs(&self.cov);
        if max_abs(&(&self.cov - self.cov.transpose())) > 1e-10 * scale {
            return Err(Error::NotPsd("covariance is not symmetric"));
        }
        if n == 0 {
            return Ok(());
        }
        let floor = -1e-8 * (self.cov.trace() / n as f64).abs();
        let min_eig = SymmetricEigen::new(symmetrize(&self.cov))
            .eigenvalues
            .min();
        if min_eig < floor {
            return Err(Error::NotPsd("covariance has a negative eigenvalue"));
        }
        Ok(())
    }
}

/// Two-component belief for a domain with one unilateral constraint: `free`
/// carries the mass in the open feasible region, `surface` the mass resting
/// on the constraint manifold, and `weight` is the mass of `free`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedBelief {
    pub free: GaussianBelief,
    pub surface: GaussianBelief,
    pub weight: f64,
}

impl ConstrainedBelief {
    pub fn new(free: GaussianBelief, surface: GaussianBelief, weight: f64) -> Result<Self> {
        check_dims("surface dimension", free.dim(), surface.dim())?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidParameter(format!(
                "mixture weight {weight} outside [0, 1]"
            )));
        }
        Ok(Self {
            free,
            surface,
            weight,
        })
    }

    pub fn dim(&self) -> usize {
        self.free.dim()
    }

    /// Single moment-matched Gaussian of the mixture.
    pub fn collapse(&self) -> GaussianBelief {
        let a = self.weight;
        let d = &self.free.mean - &self.surface.mean;
        GaussianBelief {
            mean: &self.free.mean * a + &self.surface.mean * (1.0 - a),
            cov: &self.free.cov * a + &self.surface.cov * (1.0 - a) + (&d * d.transpose()) * (a * (1.0 - a)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.free.validate()?;
        self.surface.validate()?;
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::InvalidParameter("mixture weight".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Belief {
    Gaussian(GaussianBelief),
    Constrained(ConstrainedBelief),
}

impl Belief {
    pub fn dim(&self) -> usize {
        match self {
            Belief::Gaussian(g) => g.dim(),
            Belief::Constrained(c) => c.dim(),
        }
    }

    /// Mean and covariance of the (possibly mixture) belief.
    pub fn moments(&self) -> GaussianBelief {
        match self {
            Belief::Gaussian(g) => g.clone(),
            Belief::Constrained(c) => c.collapse(),
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianBelief> {
        match self {
            Belief::Gaussian(g) => Some(g),
            Belief::Constrained(_) => None,
        }
    }

    pub fn as_constrained(&self) -> Option<&ConstrainedBelief> {
        match self {
            Belief::Constrained(c) => Some(c),
            Belief::Gaussian(_) => None,
        }
    }
}

impl From<GaussianBelief> for Belief {
    fn from(g: GaussianBelief) -> Self {
        Belief::Gaussian(g)
    }
}

impl From<ConstrainedBelief> for Belief {
    fn from(c: ConstrainedBelief) -> Self {
        Belief::Constrained(c)
    }
}

/// How a covariance matrix is encoded in the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceLayout {
    /// Upper triangle, row-major: `n(n+1)/2` slots.
    Full,
    /// One variance per coordinate; off-diagonal terms are zero.
    Diagonal,
    /// One shared variance per group of coordinates. Coordinates outside
    /// every group are known exactly and carry zero variance.
    Grouped(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub dim: usize,
    pub covariance: CovarianceLayout,
    /// Two-component constrained belief instead of a single Gaussian.
    pub constrained: bool,
}

impl Layout {
    pub fn full(dim: usize) -> Self {
        Self {
            dim,
            covariance: CovarianceLayout::Full,
            constrained: false,
        }
    }

    pub fn diagonal(dim: usize) -> Self {
        Self {
            dim,
            covariance: CovarianceLayout::Diagonal,
            constrained: false,
        }
    }

    pub fn grouped(dim: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; dim];
        for &i in groups.iter().flatten() {
            if i >= dim || seen[i] {
                return Err(Error::InvalidParameter(format!(
                    "variance group index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        Ok(Self {
            dim,
            covariance: CovarianceLayout::Grouped(groups),
            constrained: false,
        })
    }

    pub fn with_constraint(mut self) -> Self {
        self.constrained = true;
        self
    }

    pub fn cov_slots(&self) -> usize {
        match &self.covariance {
            CovarianceLayout::Full => self.dim * (self.dim + 1) / 2,
            CovarianceLayout::Diagonal => self.dim,
            CovarianceLayout::Grouped(g) => g.len(),
        }
    }

    fn component_len(&self) -> usize {
        self.dim + self.cov_slots()
    }

    /// Length of the flat vector.
    pub fn len(&self) -> usize {
        if self.constrained {
            2 * self.component_len() + 1
        } else {
            self.component_len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vectorize(&self, belief: &Belief) -> Result<BeliefVector> {
        check_dims("belief dimension", self.dim, belief.dim())?;
        let mut out = Vec::with_capacity(self.len());
        match (belief, self.constrained) {
            (Belief::Gaussian(g), false) => self.encode(g, &mut out),
            (Belief::Constrained(c), true) => {
                self.encode(&c.free, &mut out);
                self.encode(&c.surface, &mut out);
                out.push(c.weight);
            }
            (Belief::Gaussian(_), true) => {
                return Err(Error::InvalidParameter(
                    "layout expects a constrained belief".into(),
                ))
            }
            (Belief::Constrained(_), false) => {
                return Err(Error::InvalidParameter(
                    "layout expects a single Gaussian belief".into(),
                ))
            }
        }
        Ok(DVector::from_vec(out))
    }

    /// Inverse of [`Layout::vectorize`]. Covariances are repaired into the PSD
    /// cone (eigenvalue clipping for `Full`, clamping otherwise) and the
    /// weight is clamped to `[0, 1]`.
    pub fn devectorize(&self, v: &[f64]) -> Result<Belief> {
        check_dims("belief vector length", self.len(), v.len())?;
        let k = self.component_len();
        if self.constrained {
            let free = self.decode(&v[..k]);
            let surface = self.decode(&v[k..2 * k]);
            let weight = v[2 * k].clamp(0.0, 1.0);
            Ok(Belief::Constrained(ConstrainedBelief {
                free,
                surface,
                weight,
            }))
        } else {
            Ok(Belief::Gaussian(self.decode(v)))
        }
    }

    fn encode(&self, g: &GaussianBelief, out: &mut Vec<f64>) {
        let n = self.dim;
        out.extend(g.mean.iter());
        match &self.covariance {
            CovarianceLayout::Full => {
                for i in 0..n {
                    for j in i..n {
                        out.push(0.5 * (g.cov[(i, j)] + g.cov[(j, i)]));
                    }
                }
            }
            CovarianceLayout::Diagonal => out.extend((0..n).map(|i| g.cov[(i, i)])),
            CovarianceLayout::Grouped(groups) => {
                for group in groups {
                    let sum: f64 = group.iter().map(|&i| g.cov[(i, i)]).sum();
                    out.push(sum / group.len().max(1) as f64);
                }
            }
        }
    }

    fn decode(&self, v: &[f64]) -> GaussianBelief {
        let n = self.dim;
        let mean = DVector::from_column_slice(&v[..n]);
        let slots = &v[n..];
        let mut cov = DMatrix::zeros(n, n);
        match &self.covariance {
            CovarianceLayout::Full => {
                let mut s = 0;
                for i in 0..n {
                    for j in i..n {
                        cov[(i, j)] = slots[s];
                        cov[(j, i)] = slots[s];
                        s += 1;
                    }
                }
                cov = project_psd(&cov);
            }
            CovarianceLayout::Diagonal => {
                for i in 0..n {
                    cov[(i, i)] = slots[i].max(0.0);
                }
            }
            CovarianceLayout::Grouped(groups) => {
                for (slot, group) in slots.iter().zip(groups) {
                    for &i in group {
                        cov[(i, i)] = slot.max(0.0);
                    }
                }
            }
        }
        GaussianBelief { mean, cov }
    }

    /// Human-readable name of every slot, in vector order.
    pub fn slot_names(&self) -> Vec<String> {
        let component = |prefix: &str| {
            let mut names: Vec<String> = (0..self.dim).map(|i| format!("{prefix}mean{i}")).collect();
            match &self.covariance {
                CovarianceLayout::Full => {
                    for i in 0..self.dim {
                        for j in i..self.dim {
                            names.push(format!("{prefix}cov{i}_{j}"));
                        }
                    }
                }
                CovarianceLayout::Diagonal => {
                    names.extend((0..self.dim).map(|i| format!("{prefix}var{i}")))
                }
                CovarianceLayout::Grouped(groups) => {
                    names.extend((0..groups.len()).map(|g| format!("{prefix}groupvar{g}")))
                }
            }
            names
        };
        if self.constrained {
            let mut names = component("free_");
            names.extend(component("surface_"));
            names.push("weight".into());
            names
        } else {
            component("")
        }
    }
}
