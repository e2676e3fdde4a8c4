use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifted::{canonicalize, init_random, init_scaled_identity, Hyper, ProblemSpec};
use crate::linalg::DenseMatrix;
use crate::measurement::{MeasOp, OpKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Random,
    ScaledIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

/// A count, or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Steps {
    Count(usize),
    Auto(AutoTag),
}

/// Monitoring `δ`: a value, or `"auto"` for the smallest `δ` under which the
/// warm-up items hold at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaEff {
    Value(f64),
    Auto(AutoTag),
}

/// Everything a run needs. Missing fields take the values of the identity
/// reference run (`m = n = h = 12`, `r = 2`, `κ = 2`, `ε = 1e-3`, `η = 1e-2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub h: usize,
    /// `Y = diag(κ·Y_rr, …, Y_rr, 0, …)` with `Y_rr = 1`, unless `y_file` is set.
    pub kappa: f64,
    /// JSON matrix `{"rows", "cols", "data"}` (row-major) overriding `kappa`.
    pub y_file: Option<PathBuf>,
    pub op_kind: OpKind,
    /// Measurement count; ignored by the identity operator.
    #[serde(rename = "N")]
    pub n_meas: usize,
    pub rho_target: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub alpha: f64,
    /// `None` picks the largest value the initialization assumption allows,
    /// `1/(64ακ)`.
    pub delta: Option<f64>,
    pub init: InitKind,
    /// Init scale divisor: entries of `W₀` are `Normal(0, (ε/(C√h))²)`.
    #[serde(rename = "C")]
    pub c: f64,
    pub steps: Steps,
    /// Default `max(1, steps/2000)`.
    pub log_every: Option<usize>,
    pub seed: u64,
    /// Monitoring `δ`, outside the parameter range of the convergence theory.
    pub delta_eff: Option<DeltaEff>,
    /// Evaluate the derivative-sign suite at every logged row.
    pub sign_checks: bool,
    /// Write per-row `W` snapshots.
    pub snapshots: bool,
    /// Record wall-clock time in the summary (breaks byte-identical output).
    pub timing: bool,
    /// Trials for a RIP estimate in the summary; 0 skips it.
    pub rip_trials: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            m: 12,
            n: 12,
            r: 2,
            h: 12,
            kappa: 2.0,
            y_file: None,
            op_kind: OpKind::Identity,
            n_meas: 0,
            rho_target: 0.0,
            eta: 1e-2,
            epsilon: 1e-3,
            alpha: 1.0,
            delta: None,
            init: InitKind::ScaledIdentity,
            c: 1.0,
            steps: Steps::Auto(AutoTag::Auto),
            log_every: None,
            seed: 0,
            delta_eff: None,
            sign_checks: false,
            snapshots: true,
            timing: false,
            rip_trials: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m", self.m), ("n", self.n), ("r", self.r), ("h", self.h)] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.r > self.m.min(self.n) {
            return Err(Error::InvalidConfig(format!(
                "r = {} exceeds min(m, n) = {}",
                self.r,
                self.m.min(self.n)
            )));
        }
        if self.init == InitKind::ScaledIdentity && !(self.m == self.n && self.n == self.h) {
            return Err(Error::InvalidConfig("scaled_identity init requires m = n = h".into()));
        }
        if self.op_kind == OpKind::Gaussian && self.n_meas == 0 {
            return Err(Error::InvalidConfig("gaussian operator needs N > 0".into()));
        }
        if self.log_every == Some(0) {
            return Err(Error::InvalidConfig("log_every must be positive".into()));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!("C must be positive, got {}", self.c)));
        }
        if let Some(DeltaEff::Value(d)) = self.delta_eff {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidConfig(format!("delta_eff must be positive, got {d}")));
            }
        }
        Ok(())
    }

    /// Canonical target (diagonal, decreasing). A target loaded from
    /// `y_file` is rotated into that frame; spectral norms are unchanged.
    pub fn target(&self) -> Result<DenseMatrix> {
        let Some(path) = &self.y_file else {
            return ProblemSpec::geometric_target(self.m, self.n, self.r, self.kappa, 1.0);
        };
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let raw: DenseMatrix = serde_json::from_str(&text)?;
        let raw = DenseMatrix::new(raw.rows(), raw.cols(), raw.into_vec())?;
        if raw.shape() != (self.m, self.n) {
            return Err(Error::ShapeMismatch {
                what: "y_file",
                expected: (self.m, self.n),
                found: raw.shape(),
            });
        }
        let canon = canonicalize(&raw);
        let mut y = canon.y;
        let top = y[(0, 0)];
        for i in self.r..self.m.min(self.n) {
            if y[(i, i)] <= 1e-12 * top {
                y[(i, i)] = 0.0;
            }
        }
        Ok(y)
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        self.validate()?;
        let y = self.target()?;
        let kappa = y[(0, 0)] / y[(self.r - 1, self.r - 1)];
        let hyper = Hyper {
            alpha: self.alpha,
            delta: self.delta.unwrap_or(1.0 / (64.0 * self.alpha * kappa)),
            epsilon: self.epsilon,
            eta: self.eta,
            rho_target: self.rho_target,
        };
        ProblemSpec::new(y, self.r, self.h, hyper)
    }

    pub fn operator(&self) -> Result<MeasOp> {
        match self.op_kind {
            OpKind::Identity => Ok(MeasOp::identity(self.m, self.n)),
            OpKind::Gaussian => MeasOp::gaussian(self.m, self.n, self.n_meas, self.seed),
        }
    }

    pub fn initial_w(&self, spec: &ProblemSpec) -> Result<DenseMatrix> {
        match self.init {
            InitKind::Random => Ok(init_random(spec, self.c, self.seed)),
            InitKind::ScaledIdentity => init_scaled_identity(spec),
        }
    }

    /// `ceil(T₂/η)` for `"auto"`.
    pub fn resolved_steps(&self, spec: &ProblemSpec) -> usize {
        match self.steps {
            Steps::Count(k) => k,
            Steps::Auto(_) => (spec.t2 / spec.eta).ceil() as usize,
        }
    }

    pub fn resolved_log_every(&self, steps: usize) -> usize {
        self.log_every.unwrap_or((steps / 2000).max(1))
    }
}
