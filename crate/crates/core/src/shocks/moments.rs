use std::path::Path;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A moment function `g(eps, W, S)` with its analytic derivative in `eps`.
pub trait MomentFunction<T: Real>: Send + Sync {
    fn eval(&self, eps: T, w: ArrayView1<T>, s: ArrayView1<T>) -> T;
    fn deval(&self, eps: T, w: ArrayView1<T>, s: ArrayView1<T>) -> T;
    fn label(&self) -> String;
}

/// `eps^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Power(pub i32);

impl<T: Real> MomentFunction<T> for Power {
    fn eval(&self, eps: T, _: ArrayView1<T>, _: ArrayView1<T>) -> T {
        eps.powi(self.0)
    }
    fn deval(&self, eps: T, _: ArrayView1<T>, _: ArrayView1<T>) -> T {
        match self.0 {
            0 => T::zero(),
            k => T::lit(k as f64) * eps.powi(k - 1),
        }
    }
    fn label(&self) -> String {
        if self.0 == 2 {
            "eps^2".into()
        } else {
            format!("eps^{}", self.0)
        }
    }
}

/// Logistic density centred at `center`: `e^u / (1 + e^u)^2`, `u = eps - center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitPdf(pub f64);

fn logit_pdf<T: Real>(u: T) -> T {
    let e = (-u.abs()).exp();
    e / ((T::one() + e) * (T::one() + e))
}

impl<T: Real> MomentFunction<T> for LogitPdf {
    fn eval(&self, eps: T, _: ArrayView1<T>, _: ArrayView1<T>) -> T {
        logit_pdf(eps - T::lit(self.0))
    }
    fn deval(&self, eps: T, _: ArrayView1<T>, _: ArrayView1<T>) -> T {
        let u = eps - T::lit(self.0);
        -logit_pdf(u) * (u / T::lit(2.0)).tanh()
    }
    fn label(&self) -> String {
        format!("logit_pdf({})", self.0)
    }
}

/// An ordered collection of moment functions.
pub struct MomentFunctionSet<T: Real> {
    functions: Vec<Box<dyn MomentFunction<T>>>,
}

impl<T: Real> std::fmt::Debug for MomentFunctionSet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.labels()).finish()
    }
}

impl<T: Real> MomentFunctionSet<T> {
    pub fn new(functions: Vec<Box<dyn MomentFunction<T>>>) -> Self {
        Self { functions }
    }

    pub fn q(&self) -> usize {
        self.functions.len()
    }

    pub fn eval(&self, j: usize, eps: T, w: ArrayView1<T>, s: ArrayView1<T>) -> T {
        self.functions[j].eval(eps, w, s)
    }

    pub fn deval(&self, j: usize, eps: T, w: ArrayView1<T>, s: ArrayView1<T>) -> T {
        self.functions[j].deval(eps, w, s)
    }

    pub fn labels(&self) -> Vec<String> {
        self.functions.iter().map(|g| g.label()).collect()
    }

    pub fn from_spec(spec: &MomentSpec) -> Result<Self> {
        if spec.moments.is_empty() {
            return Err(Error::Config("moment spec lists no moments".into()));
        }
        let mut functions: Vec<Box<dyn MomentFunction<T>>> = Vec::new();
        for m in &spec.moments {
            match *m {
                MomentKind::Square => functions.push(Box::new(Power(2))),
                MomentKind::Power { exponent } => functions.push(Box::new(Power(exponent))),
                MomentKind::LogitPdf { center } => {
                    if !center.is_finite() {
                        return Err(Error::Config("logit_pdf center must be finite".into()));
                    }
                    functions.push(Box::new(LogitPdf(center)))
                }
            }
        }
        Ok(Self::new(functions))
    }
}

/// Centres of the built-in logistic-density moments: -2.25 to 2.25 by 0.25.
pub fn logit_centers() -> Vec<f64> {
    (0..19).map(|k| -2.25 + 0.25 * k as f64).collect()
}

/// `eps^2` followed by nineteen logistic densities.
pub fn logit_moment_set<T: Real>() -> MomentFunctionSet<T> {
    let mut functions: Vec<Box<dyn MomentFunction<T>>> = vec![Box::new(Power(2))];
    for a in logit_centers() {
        functions.push(Box::new(LogitPdf(a)));
    }
    MomentFunctionSet::new(functions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentKind {
    Square,
    Power { exponent: i32 },
    LogitPdf { center: f64 },
}

/// JSON description of a custom moment set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    pub moments: Vec<MomentKind>,
}

impl MomentSpec {
    pub fn logit20() -> Self {
        let mut moments = vec![MomentKind::Square];
        moments.extend(logit_centers().into_iter().map(|center| MomentKind::LogitPdf { center }));
        Self { moments }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
