//! Piecewise-linear fields over a mesh.

use std::io::Write;
use std::sync::Arc;

use crate::domain::{DofClass, DofSet, Mesh};
use crate::error::Result;

/// Continuous piecewise-linear function on Ω ∪ Σ₂, constant (`exterior`) on
/// the rest of the line. Eliminated nodes hold the Dirichlet datum, which is
/// zero unless a lift was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
    exterior: f64,
}

impl Field {
    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.n_nodes();
        Self { mesh, values: vec![0.0; n], exterior: 0.0 }
    }

    /// The constant `c` on the whole line.
    pub fn constant(mesh: Arc<Mesh>, c: f64) -> Self {
        let n = mesh.n_nodes();
        Self { mesh, values: vec![c; n], exterior: c }
    }

    pub fn from_nodal(mesh: Arc<Mesh>, values: Vec<f64>, exterior: f64) -> Self {
        assert_eq!(values.len(), mesh.n_nodes(), "one value per mesh node");
        Self { mesh, values, exterior }
    }

    /// Field with the given coefficients on the active DoFs and zero elsewhere.
    pub fn from_active(mesh: Arc<Mesh>, dofs: &DofSet, coeffs: &[f64]) -> Self {
        assert_eq!(coeffs.len(), dofs.len(), "one coefficient per active DoF");
        let mut values = vec![0.0; mesh.n_nodes()];
        for (&node, &c) in dofs.nodes.iter().zip(coeffs) {
            values[node] = c;
        }
        Self { mesh, values, exterior: 0.0 }
    }

    /// Nodal interpolant of `f`, zero at eliminated nodes and outside the mesh.
    pub fn interpolate(mesh: Arc<Mesh>, f: impl Fn(f64) -> f64) -> Self {
        let values = mesh
            .nodes
            .iter()
            .zip(&mesh.classes)
            .map(|(&x, &c)| if c == DofClass::Eliminated { 0.0 } else { f(x) })
            .collect();
        Self { mesh, values, exterior: 0.0 }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn exterior(&self) -> f64 {
        self.exterior
    }

    pub fn active(&self, dofs: &DofSet) -> Vec<f64> {
        dofs.nodes.iter().map(|&i| self.values[i]).collect()
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.mesh.element_at(x) {
            Some(e) => {
                let el = &self.mesh.elements[e];
                let [l0, l1] = el.shape(x);
                l0 * self.values[el.left] + l1 * self.values[el.right]
            }
            None => self.exterior,
        }
    }

    /// `alpha * self + beta * other` on the same mesh.
    pub fn combine(&self, alpha: f64, other: &Field, beta: f64) -> Field {
        assert!(Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh);
        Field {
            mesh: self.mesh.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect(),
            exterior: alpha * self.exterior + beta * other.exterior,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Field {
        Field {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|v| alpha * v).collect(),
            exterior: alpha * self.exterior,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `x,value` rows for every mesh node.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "value"])?;
        for (x, v) in self.mesh.nodes.iter().zip(&self.values) {
            wr.write_record([format!("{x:.17e}"), format!("{v:.17e}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// A function of one variable that the pointwise operator can integrate.
pub trait Profile {
    fn value(&self, y: f64) -> f64;
    /// Points where the function may fail to be smooth. Beyond the outermost
    /// breakpoints the function equals [`Profile::exterior`].
    fn breakpoints(&self) -> Vec<f64>;
    fn exterior(&self) -> f64;
    /// Linear between consecutive breakpoints.
    fn piecewise_linear(&self) -> bool {
        false
    }
}

impl Profile for Field {
    fn value(&self, y: f64) -> f64 {
        self.eval(y)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.mesh.nodes.clone()
    }

    fn exterior(&self) -> f64 {
        self.exterior
    }

    fn piecewise_linear(&self) -> bool {
        true
    }
}

/// Closure-backed profile with explicit breakpoints.
pub struct AnalyticProfile<F: Fn(f64) -> f64> {
    pub f: F,
    pub breakpoints: Vec<f64>,
    pub exterior: f64,
}

impl<F: Fn(f64) -> f64> Profile for AnalyticProfile<F> {
    fn value(&self, y: f64) -> f64 {
        (self.f)(y)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }

    fn exterior(&self) -> f64 {
        self.exterior
    }
}

/// `(1 - x²)_+^s`, the profile with constant fractional Laplacian on (-1, 1).
pub fn torsion_profile(s: f64) -> AnalyticProfile<impl Fn(f64) -> f64> {
    AnalyticProfile {
        f: move |y: f64| if y.abs() < 1.0 { (1.0 - y * y).powf(s) } else { 0.0 },
        breakpoints: vec![-1.0, 1.0],
        exterior: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_mesh, DomainPartition, Grading, Mode};

    #[test]
    fn eval_interpolates_and_vanishes_outside() {
        let m = Arc::new(build_mesh(&DomainPartition::standard(0.5), 4, 2, Grading::Uniform).unwrap());
        let f = Field::interpolate(m.clone(), |x| 1.0 - x * x / 4.0);
        assert_eq!(f.eval(-1.0), 0.0);
        assert!((f.eval(0.25) - 0.5 * (1.0 + (1.0 - 0.0625))).abs() < 1e-15);
        assert!((f.eval(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(f.eval(5.0), 0.0);
        let d = m.dofs(Mode::Mixed);
        let back = Field::from_active(m.clone(), &d, &f.active(&d));
        assert_eq!(back, f);
    }
}
